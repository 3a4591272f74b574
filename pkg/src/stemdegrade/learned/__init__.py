"""Learned estimator: numpy-facing wrappers around the torch network."""
from __future__ import annotations

import numpy as np
import torch

from ..direct import Estimate
from ..errors import DimensionError, InvalidParameterError
from ..imaging import AffineParams, as_image, degrade_forward
from .checkpoint import load_model, save_model
from .network import AffineDecayNet, ModelConfig, TimeEmbedding, reconstruct_torch, warp_torch
from .training import SyntheticSource, TrainConfig, TrainResult, train

__all__ = [
    "AffineDecayNet", "ModelConfig", "TimeEmbedding", "TrainConfig", "TrainResult", "SyntheticSource",
    "forward", "reconstruct", "loss_rec", "train", "predict", "save_model", "load_model",
    "LearnedEstimator", "warp_torch", "reconstruct_torch",
]


def _model_dtype(model):
    return next(model.parameters()).dtype


@torch.no_grad()
def forward(model: AffineDecayNet, x0, xT, t, T):
    """Single-pair prediction: ``(decay map, AffineParams)`` for step ``t`` of ``T``."""
    x0 = as_image(x0, "x0")
    xT = as_image(xT, "xT")
    n = model.config.input_size
    if x0.shape != (n, n) or xT.shape != (n, n):
        raise DimensionError(f"model expects {n}x{n} inputs, got {x0.shape} and {xT.shape}")
    if T <= 0 or not (0 <= t <= T):
        raise InvalidParameterError(f"need 0 <= t <= T, got t={t}, T={T}")
    dt = _model_dtype(model)
    model.eval()
    decay, params = model(torch.as_tensor(x0[None], dtype=dt), torch.as_tensor(xT[None], dtype=dt),
                          torch.tensor([t / T], dtype=dt))
    lam = np.clip(decay[0].double().numpy(), 0.0, 1.0)
    return lam, AffineParams.from_array(params[0].double().numpy())


def reconstruct(x0, decay, affine: AffineParams) -> np.ndarray:
    """``warp(decay * x0, T(affine))``; identical to :func:`degrade_forward`."""
    return degrade_forward(x0, decay, affine)


def loss_rec(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def predict(model: AffineDecayNet, x0, xT, t, T) -> Estimate:
    lam, aff = forward(model, x0, xT, t, T)
    if t == T:
        lam_T, aff_T = lam, aff
    else:
        lam_T, aff_T = forward(model, x0, xT, T, T)
    residual = loss_rec(reconstruct(x0, lam_T, aff_T), xT)
    return Estimate(aff, lam, residual, True, 1, 1.0, extra={"t": t, "T": T})


class LearnedEstimator:
    """Callable wrapper with the common estimator signature."""

    supports_time = True

    def __init__(self, model: AffineDecayNet, total_steps: int = 10):
        self.model = model
        self.total_steps = total_steps

    def __call__(self, x0, xT, t=None, T=None) -> Estimate:
        T = self.total_steps if T is None else T
        t = T if t is None else t
        return predict(self.model, x0, xT, t, T)
