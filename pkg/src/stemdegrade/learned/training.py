"""Training loop: fresh synthetic batches, AdamW, cosine learning-rate decay."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
import torch

from ..errors import InvalidParameterError, TrainingDivergedError
from ..synth import SamplerRanges, draw_training_sample
from .network import AffineDecayNet, ModelConfig, loss_rec_torch, reconstruct_torch

log = logging.getLogger(__name__)

# keeps validation draws disjoint from training draws
_VALIDATION_OFFSET = 1_000_003


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    steps: int = 2000
    lr: float = 1e-4
    weight_decay: float = 1e-4
    cosine: bool = True
    seed: int = 0
    val_batches: int = 2
    val_every: int = 20
    dtype: str = "float32"
    ranges: SamplerRanges = field(default_factory=SamplerRanges)

    def __post_init__(self):
        if self.batch_size < 1 or self.steps < 0:
            raise InvalidParameterError("batch_size must be >= 1 and steps >= 0")
        if not self.lr >= 0:
            raise InvalidParameterError("lr must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise InvalidParameterError(f"unsupported dtype {self.dtype!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        return d


@dataclass
class Batch:
    x0: torch.Tensor
    xT: torch.Tensor
    xt: torch.Tensor
    tau: torch.Tensor


class SyntheticSource:
    """Deterministic stream of training batches.

    Sample ``i`` of the stream depends only on ``(seed, i)``.
    """

    def __init__(self, ranges: SamplerRanges, seed: int, dtype=torch.float32):
        self.ranges = ranges
        self.seed = seed
        self.dtype = dtype

    def batch(self, start: int, size: int) -> Batch:
        x0s, xTs, xts, taus = [], [], [], []
        for i in range(start, start + size):
            _, spec, s = draw_training_sample(self.ranges, self.seed, i)
            x0s.append(s.x0_noisy)
            xTs.append(s.xT_noisy)
            xts.append(s.xt_clean)
            taus.append(s.t / spec.total_steps)
        as_t = lambda a: torch.as_tensor(np.stack(a), dtype=self.dtype)
        return Batch(as_t(x0s), as_t(xTs), as_t(xts), torch.as_tensor(taus, dtype=self.dtype))


def batch_loss(model: AffineDecayNet, batch: Batch) -> torch.Tensor:
    decay, params = model(batch.x0, batch.xT, batch.tau)
    return loss_rec_torch(reconstruct_torch(batch.x0, decay, params), batch.xt)


def identity_loss(batch: Batch) -> float:
    """Loss of the trivial prediction ``x_t := x0``."""
    return float(loss_rec_torch(batch.x0, batch.xt))


def cosine_lr(base: float, step: int, total: int) -> float:
    if total <= 0:
        return base
    return 0.5 * base * (1.0 + math.cos(math.pi * step / total))


@dataclass
class TrainResult:
    model: AffineDecayNet
    history: list  # dicts: step, lr, loss, val_loss (nan when not evaluated)
    identity_val_loss: float

    def final_val_loss(self, window: int = 100) -> float:
        last = self.history[-1]["step"] if self.history else 0
        vals = [h["val_loss"] for h in self.history
                if h["step"] > last - window and not math.isnan(h["val_loss"])]
        return float(np.mean(vals)) if vals else math.nan


def train(train_cfg: TrainConfig = TrainConfig(), model_cfg: ModelConfig = ModelConfig(),
          source: Optional[SyntheticSource] = None,
          progress: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train from scratch; a pure function of the configs and ``train_cfg.seed``."""
    dtype = torch.float64 if train_cfg.dtype == "float64" else torch.float32
    torch.use_deterministic_algorithms(True)
    torch.manual_seed(train_cfg.seed)
    if model_cfg.input_size != train_cfg.ranges.size:
        raise InvalidParameterError(
            f"model input_size {model_cfg.input_size} != sampler size {train_cfg.ranges.size}")
    model = AffineDecayNet(model_cfg, seed=train_cfg.seed).to(dtype=dtype, memory_format=torch.channels_last)
    if source is None:
        source = SyntheticSource(train_cfg.ranges, train_cfg.seed, dtype)
    val_source = SyntheticSource(train_cfg.ranges, train_cfg.seed + _VALIDATION_OFFSET, dtype)
    val = [val_source.batch(k * train_cfg.batch_size, train_cfg.batch_size)
           for k in range(train_cfg.val_batches)]
    identity = float(np.mean([identity_loss(b) for b in val])) if val else math.nan

    opt = torch.optim.AdamW(model.parameters(), lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    history = []
    for step in range(train_cfg.steps):
        lr = cosine_lr(train_cfg.lr, step, train_cfg.steps) if train_cfg.cosine else train_cfg.lr
        for group in opt.param_groups:
            group["lr"] = lr
        batch = source.batch(step * train_cfg.batch_size, train_cfg.batch_size)
        model.train()
        loss = batch_loss(model, batch)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDivergedError(step, value)
        opt.zero_grad()
        loss.backward()
        opt.step()

        val_loss = math.nan
        if val and ((step + 1) % train_cfg.val_every == 0 or step + 1 == train_cfg.steps):
            val_loss = evaluate(model, val)
        rec = {"step": step + 1, "lr": lr, "loss": value, "val_loss": val_loss}
        history.append(rec)
        if progress is not None:
            progress(rec)
        if (step + 1) % 100 == 0:
            log.info("step %d loss %.6f val %.6f", step + 1, value, val_loss)
    return TrainResult(model, history, identity)


@torch.no_grad()
def evaluate(model: AffineDecayNet, batches) -> float:
    model.eval()
    return float(np.mean([float(batch_loss(model, b)) for b in batches]))
