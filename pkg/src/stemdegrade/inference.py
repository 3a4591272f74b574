"""Intermediate-state synthesis, drift-aligned overlays and flow fields."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError
from .imaging import (
    AffineParams,
    as_image,
    build_affine_matrix,
    centered_grid,
    degrade_forward,
    invert_affine,
    warp,
)
from .synth import interpolate_affine, interpolate_decay


@dataclass
class InferredFrame:
    t: float
    decay: np.ndarray
    affine: AffineParams
    frame: np.ndarray


@dataclass
class InferenceResult:
    frames: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.frames)

    def __len__(self):
        return len(self.frames)

    @property
    def times(self):
        return [f.t for f in self.frames]


def infer_sequence(x0, xT, estimator, n_steps: int, T: float = 10, mode: str = "interpolate") -> InferenceResult:
    """Render ``n_steps`` intermediate states plus the final state at ``T``.

    Step ``k`` sits at ``t_k = k * T / (n_steps + 1)``.  In ``"interpolate"``
    mode the end-state estimate is interpolated linearly (decay anchored at 1,
    drift parameters scaled); in ``"query"`` mode a time-aware estimator is
    asked for every ``t_k`` directly.
    """
    x0 = as_image(x0, "x0")
    xT = as_image(xT, "xT")
    if n_steps < 1:
        raise InvalidParameterError("n_steps must be >= 1")
    if mode not in ("interpolate", "query"):
        raise InvalidParameterError(f"unknown mode {mode!r}")
    if mode == "query" and not getattr(estimator, "supports_time", False):
        raise InvalidParameterError("query mode needs a time-conditioned estimator")

    end = estimator(x0, xT, T, T)
    times = [k * T / (n_steps + 1) for k in range(1, n_steps + 1)]
    result = InferenceResult()
    for t in times:
        if mode == "interpolate":
            lam = interpolate_decay(end.decay, t, T)
            aff = interpolate_affine(end.affine, t, T)
        else:
            est = estimator(x0, xT, t, T)
            lam, aff = est.decay, est.affine
        result.frames.append(InferredFrame(t, lam, aff, degrade_forward(x0, lam, aff)))
    result.frames.append(InferredFrame(T, end.decay, end.affine, degrade_forward(x0, end.decay, end.affine)))
    return result


def align_overlay(x0, xT, affine: AffineParams) -> np.ndarray:
    """Pull ``xT`` back into the frame of ``x0`` and blend 50/50."""
    x0 = as_image(x0, "x0")
    back = warp(xT, invert_affine(build_affine_matrix(affine)), 0.0)
    return 0.5 * x0 + 0.5 * back


def flow_map(affine: AffineParams, h: int, w: int, stride: int = 1) -> np.ndarray:
    """Displacement ``T(p) - p`` sampled every ``stride`` pixels, shape (h', w', 2) as (dx, dy)."""
    if stride < 1:
        raise InvalidParameterError("stride must be >= 1")
    m = build_affine_matrix(affine)
    u, v = centered_grid(h, w)
    u = u[::stride, ::stride]
    v = v[::stride, ::stride]
    dx = (m[0, 0] - 1.0) * u + m[0, 1] * v + m[0, 2]
    dy = m[1, 0] * u + (m[1, 1] - 1.0) * v + m[1, 2]
    return np.stack([dx, dy], axis=-1)
