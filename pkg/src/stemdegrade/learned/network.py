"""Dual-stream, time-conditioned encoder-decoder for drift and decay."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import DimensionError, InvalidParameterError


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 8
    depth: int = 2
    time_embed_dim: int = 32
    theta_max_deg: float = 10.0
    shift_max_px: float = 8.0
    input_size: int = 64
    head_hidden: int = 64

    def __post_init__(self):
        if self.depth < 1 or self.base_channels < 1:
            raise InvalidParameterError("depth and base_channels must be >= 1")
        if self.input_size % (2**self.depth):
            raise InvalidParameterError(
                f"input_size {self.input_size} not divisible by 2**depth = {2**self.depth}")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2:
            raise InvalidParameterError("time_embed_dim must be a positive even number")

    def to_dict(self) -> dict:
        return asdict(self)


class TimeEmbedding(nn.Module):
    """Sinusoidal features of ``t / T`` followed by a learned projection."""

    def __init__(self, dim: int, max_freq: float = 64.0):
        super().__init__()
        half = dim // 2
        freqs = math.pi * torch.exp(torch.linspace(0.0, math.log(max_freq), half, dtype=torch.float64))
        self.register_buffer("freqs", freqs, persistent=False)
        self.proj = nn.Linear(dim, dim)

    def features(self, tau: torch.Tensor) -> torch.Tensor:
        ang = tau[:, None] * self.freqs.to(tau.dtype)[None, :]
        return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)

    def forward(self, tau):
        return F.silu(self.proj(self.features(tau)))


def _conv(cin, cout, stride=1):
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1)


class Encoder(nn.Module):
    def __init__(self, c: int, depth: int):
        super().__init__()
        self.stem = _conv(1, c)
        self.down = nn.ModuleList()
        self.refine = nn.ModuleList()
        for i in range(depth):
            self.down.append(_conv(c * 2**i, c * 2 ** (i + 1), stride=2))
            self.refine.append(_conv(c * 2 ** (i + 1), c * 2 ** (i + 1)))

    def forward(self, x):
        h = F.silu(self.stem(x))
        feats = [h]
        for down, ref in zip(self.down, self.refine):
            h = F.silu(ref(F.silu(down(h))))
            feats.append(h)
        return feats


class AffineDecayNet(nn.Module):
    """Predicts ``(decay, affine)`` for the step ``t`` between ``x0`` and ``xT``.

    Both frames go through one shared encoder.  The bottleneck concatenates the
    two streams and is modulated by the time embedding as ``(1 + s) * h + b``.
    The affine head pools the bottleneck; the decoder upsamples with skips from
    both streams at every resolution.
    """

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        super().__init__()
        self.config = config
        self.seed = seed
        # initialization depends only on ``seed``, not on the global RNG state
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self._build(config)

    def _build(self, config: ModelConfig):
        c, d = config.base_channels, config.depth
        cb = c * 2**d
        self.encoder = Encoder(c, d)
        self.time = TimeEmbedding(config.time_embed_dim)
        self.fuse = _conv(2 * cb, cb)
        self.film = nn.Linear(config.time_embed_dim, 2 * cb)
        self.mix = _conv(cb, cb)
        self.head1 = nn.Linear(cb, config.head_hidden)
        self.head2 = nn.Linear(config.head_hidden, 3)
        self.up = nn.ModuleList()
        self.up_refine = nn.ModuleList()
        for i in reversed(range(d)):
            ci = c * 2**i
            self.up.append(_conv(2 * ci + 2 * ci, ci))
            # the finest level skips the refinement conv to keep full-resolution cost low
            self.up_refine.append(_conv(ci, ci) if i > 0 else nn.Identity())
        self.out = nn.Conv2d(c, 1, 1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)
        nn.init.zeros_(self.head2.weight)
        nn.init.zeros_(self.head2.bias)

    def forward(self, x0, xT, tau):
        """``x0``, ``xT``: (B, H, W); ``tau = t / T``: (B,).

        Returns ``(decay (B, H, W), params (B, 3))`` with params as
        ``(theta_deg, tx_px, ty_px)``.
        """
        cfg = self.config
        if x0.shape != xT.shape or x0.dim() != 3:
            raise DimensionError(f"expected matching (B, H, W) inputs, got {tuple(x0.shape)} and {tuple(xT.shape)}")
        if x0.shape[-1] % 2**cfg.depth or x0.shape[-2] % 2**cfg.depth:
            raise DimensionError(f"input size {tuple(x0.shape[-2:])} not divisible by {2**cfg.depth}")
        B = x0.shape[0]
        both = torch.cat([x0, xT], dim=0)[:, None].contiguous(memory_format=torch.channels_last)
        feats = self.encoder(both)
        fa = [f[:B] for f in feats]
        fb = [f[B:] for f in feats]

        h = F.silu(self.fuse(torch.cat([fa[-1], fb[-1]], dim=1)))
        scale, shift = self.film(self.time(tau)).chunk(2, dim=1)
        h = (1.0 + scale[:, :, None, None]) * h + shift[:, :, None, None]
        h = F.silu(self.mix(h))

        z = self.head2(F.silu(self.head1(h.mean(dim=(2, 3)))))
        limits = torch.tensor([cfg.theta_max_deg, cfg.shift_max_px, cfg.shift_max_px], dtype=z.dtype)
        params = limits * torch.tanh(z)

        for k, (up, ref) in enumerate(zip(self.up, self.up_refine)):
            lvl = cfg.depth - 1 - k
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = F.silu(up(torch.cat([h, fa[lvl], fb[lvl]], dim=1)))
            if not isinstance(ref, nn.Identity):
                h = F.silu(ref(h))
        decay = torch.sigmoid(self.out(h))[:, 0]
        return decay, params


def warp_torch(img: torch.Tensor, params: torch.Tensor, fill: float = 0.0) -> torch.Tensor:
    """Differentiable counterpart of :func:`stemdegrade.imaging.warp` for a batch.

    ``img`` is (B, H, W), ``params`` (B, 3) as ``(theta_deg, tx, ty)``.
    Gradients flow to both the intensities and the parameters; samples whose
    neighbours fall outside the image contribute ``fill`` with zero gradient.
    """
    B, H, W = img.shape
    dt = img.dtype
    cx, cy = (W - 1) / 2.0, (H - 1) / 2.0
    u = (torch.arange(W, dtype=dt) - cx)[None, None, :]
    v = (torch.arange(H, dtype=dt) - cy)[None, :, None]
    th = params[:, 0] * (math.pi / 180.0)
    c = torch.cos(th)[:, None, None]
    s = torch.sin(th)[:, None, None]
    du = u - params[:, 1][:, None, None]
    dv = v - params[:, 2][:, None, None]
    xs = c * du + s * dv + cx
    ys = -s * du + c * dv + cy

    x0 = torch.floor(xs)
    y0 = torch.floor(ys)
    fx = xs - x0
    fy = ys - y0
    x0 = x0.long()
    y0 = y0.long()

    padded = F.pad(img, (1, 0, 1, 0), value=fill).reshape(B, -1)
    Wp = W + 1

    def gather(yi, xi):
        ok = (yi >= 0) & (yi < H) & (xi >= 0) & (xi < W)
        idx = torch.where(ok, (yi + 1) * Wp + (xi + 1), torch.zeros_like(yi))
        return torch.gather(padded, 1, idx.reshape(B, -1)).reshape(B, H, W)

    v00 = gather(y0, x0)
    v01 = gather(y0, x0 + 1)
    v10 = gather(y0 + 1, x0)
    v11 = gather(y0 + 1, x0 + 1)
    gx0 = 1.0 - fx
    return (1.0 - fy) * (gx0 * v00 + fx * v01) + fy * (gx0 * v10 + fx * v11)


def reconstruct_torch(x0: torch.Tensor, decay: torch.Tensor, params: torch.Tensor) -> torch.Tensor:
    """Decay then drift, batched and differentiable."""
    return warp_torch(decay * x0, params)


def loss_rec_torch(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return torch.mean((pred - target) ** 2)
