"""Synthetic STEM data: atom maps, decay fields, drift and detector noise.

Every generator is a deterministic function of its inputs and an integer
seed.  Batch generation derives one independent stream per sample from
``(master_seed, index)`` so results do not depend on generation order.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import DimensionError, InvalidParameterError, OutOfRangeError
from .imaging import (
    AffineParams,
    as_decay,
    as_image,
    bilinear_sample,
    build_affine_matrix,
    degrade_forward,
    warp,
)

NOISE_TYPES = ("gaussian_blackhole", "perlin", "random")


def make_rng(seed, *index) -> np.random.Generator:
    """Generator for ``seed`` (optionally keyed by sample indices)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, index)]))


# --------------------------------------------------------------------------- atom maps

@dataclass(frozen=True)
class AtomMapSpec:
    """Jittered lattice of Gaussian atomic columns.

    The lattice is anchored at the image center plus ``offset``; ``a1`` and
    ``a2`` are lattice vectors in pixels as ``(dx, dy)``.
    """

    a1: tuple = (10.0, 0.0)
    a2: tuple = (5.0, 8.660254037844386)
    amplitude_range: tuple = (0.6, 1.0)
    width_range: tuple = (1.5, 2.5)
    jitter_px: float = 0.4
    offset: tuple = (0.0, 0.0)
    seed: int = 0

    def validate(self):
        lo, hi = self.amplitude_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise InvalidParameterError(f"amplitude_range must lie in [0, 1], got {self.amplitude_range}")
        wlo, whi = self.width_range
        if not (0.0 < wlo <= whi):
            raise InvalidParameterError(f"blob widths must be > 0, got {self.width_range}")
        if self.jitter_px < 0:
            raise InvalidParameterError("jitter_px must be >= 0")
        det = self.a1[0] * self.a2[1] - self.a1[1] * self.a2[0]
        if abs(det) < 1e-9:
            raise InvalidParameterError(f"degenerate lattice: {self.a1} and {self.a2} are parallel")


def gen_atom_map(spec: AtomMapSpec, h: int, w: int) -> np.ndarray:
    """Render ``spec`` on an ``h`` x ``w`` grid, clipped to [0, 1]."""
    if h < 32 or w < 32:
        raise DimensionError(f"atom maps need h, w >= 32, got {h}x{w}")
    spec.validate()
    rng = make_rng(spec.seed)
    basis = np.array([[spec.a1[0], spec.a2[0]], [spec.a1[1], spec.a2[1]]], dtype=float)
    inv = np.linalg.inv(basis)
    cx = (w - 1) / 2.0 + spec.offset[0]
    cy = (h - 1) / 2.0 + spec.offset[1]
    margin = 4.0 * spec.width_range[1] + 4.0 * spec.jitter_px
    corners = np.array([[x - cx, y - cy] for x in (-margin, w - 1 + margin)
                        for y in (-margin, h - 1 + margin)]).T
    coef = inv @ corners
    i_lo, i_hi = int(math.floor(coef[0].min())), int(math.ceil(coef[0].max()))
    j_lo, j_hi = int(math.floor(coef[1].min())), int(math.ceil(coef[1].max()))
    if (i_hi - i_lo + 1) * (j_hi - j_lo + 1) > 4_000_000:
        raise InvalidParameterError("lattice too dense for the requested image size")
    ii, jj = np.meshgrid(np.arange(i_lo, i_hi + 1), np.arange(j_lo, j_hi + 1), indexing="ij")
    pts = basis @ np.vstack([ii.ravel(), jj.ravel()]).astype(float)
    n = pts.shape[1]
    jit = rng.normal(0.0, 1.0, size=(2, n)) * spec.jitter_px
    amps = rng.uniform(spec.amplitude_range[0], spec.amplitude_range[1], size=n)
    widths = rng.uniform(spec.width_range[0], spec.width_range[1], size=n)
    xs = pts[0] + cx + jit[0]
    ys = pts[1] + cy + jit[1]

    # separable blobs: sum_k a_k gy_k(row) gx_k(col) as one matrix product
    cols = np.arange(w, dtype=float)
    rows = np.arange(h, dtype=float)
    inv2s2 = 1.0 / (2.0 * widths * widths)
    gx = np.exp(-((cols[None, :] - xs[:, None]) ** 2) * inv2s2[:, None])
    gy = np.exp(-((rows[None, :] - ys[:, None]) ** 2) * inv2s2[:, None])
    img = (gy * amps[:, None]).T @ gx
    return np.clip(img, 0.0, 1.0)


def random_atom_spec(rng: np.random.Generator, spacing=(7.0, 11.0), seed: Optional[int] = None) -> AtomMapSpec:
    """Random lattice geometry for training-set variety."""
    a = rng.uniform(*spacing)
    b = a * rng.uniform(0.85, 1.2)
    gamma = math.radians(rng.choice([60.0, 90.0, 75.0]))
    phi = rng.uniform(0.0, math.pi)
    a1 = (a * math.cos(phi), a * math.sin(phi))
    a2 = (b * math.cos(phi + gamma), b * math.sin(phi + gamma))
    lo = rng.uniform(0.4, 0.8)
    wlo = rng.uniform(1.2, 2.0)
    return AtomMapSpec(
        a1=a1, a2=a2,
        amplitude_range=(lo, 1.0),
        width_range=(wlo, wlo + 0.6),
        jitter_px=rng.uniform(0.1, 0.5),
        offset=tuple(rng.uniform(-a, a, size=2)),
        seed=int(rng.integers(0, 2**31 - 1)) if seed is None else seed,
    )


# --------------------------------------------------------------------------- decay fields

def _fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def _gradient_noise(h: int, w: int, cells: int, rng: np.random.Generator) -> np.ndarray:
    angles = rng.uniform(0.0, 2.0 * math.pi, size=(cells + 1, cells + 1))
    gx, gy = np.cos(angles), np.sin(angles)
    x = np.arange(w, dtype=float) * cells / w
    y = np.arange(h, dtype=float) * cells / h
    xi = np.floor(x).astype(int)
    yi = np.floor(y).astype(int)
    xf = (x - xi)[None, :]
    yf = (y - yi)[:, None]
    X0, Y0 = xi[None, :], yi[:, None]

    def corner(dx, dy):
        g_x = gx[Y0 + dy, X0 + dx]
        g_y = gy[Y0 + dy, X0 + dx]
        return g_x * (xf - dx) + g_y * (yf - dy)

    u, v = _fade(xf), _fade(yf)
    top = corner(0, 0) + u * (corner(1, 0) - corner(0, 0))
    bot = corner(0, 1) + u * (corner(1, 1) - corner(0, 1))
    return top + v * (bot - top)


def perlin_field(h: int, w: int, cells_per_axis: int = 3, octaves: int = 3, seed: int = 0) -> np.ndarray:
    """Multi-octave Perlin noise rescaled to span [0, 1].

    Octave ``k`` uses ``cells_per_axis * 2**k`` lattice cells and weight
    ``0.5**k``.  A constant result (possible on tiny grids) maps to zeros.
    """
    if cells_per_axis < 1 or octaves < 1:
        raise InvalidParameterError("cells_per_axis and octaves must be >= 1")
    if h < 1 or w < 1:
        raise DimensionError("field dimensions must be positive")
    rng = make_rng(seed)
    total = np.zeros((h, w))
    amp = 1.0
    for k in range(octaves):
        total += amp * _gradient_noise(h, w, cells_per_axis * 2**k, rng)
        amp *= 0.5
    lo, hi = total.min(), total.max()
    if hi - lo <= 0:
        return np.zeros((h, w))
    out = (total - lo) / (hi - lo)
    out[total == lo] = 0.0
    out[total == hi] = 1.0
    return out


def make_final_decay(fld, min_survival: float) -> np.ndarray:
    """Map a [0, 1] field onto survival values in ``[min_survival, 1]``."""
    if not (0.0 <= min_survival < 1.0):
        raise InvalidParameterError(f"min_survival must be in [0, 1), got {min_survival}")
    fld = as_decay(fld, name="field")
    return min_survival + (1.0 - min_survival) * fld


def _check_time(t, T):
    if T <= 0:
        raise InvalidParameterError(f"total steps must be positive, got {T}")
    if not (0 <= t <= T):
        raise OutOfRangeError(f"time index t={t} outside [0, {T}]")


def interpolate_decay(lambda_T, t, T) -> np.ndarray:
    """Survival at step ``t``: linear from all-ones at 0 to ``lambda_T`` at ``T``."""
    _check_time(t, T)
    lam = as_decay(lambda_T)
    if t == T:
        return lam.copy()
    return 1.0 - (t / T) * (1.0 - lam)


def interpolate_affine(affine_T: AffineParams, t, T) -> AffineParams:
    """Scale rotation angle and translation by ``t / T``."""
    _check_time(t, T)
    if t == T:
        return affine_T
    s = t / T
    return AffineParams(s * affine_T.theta_deg, s * affine_T.tx_px, s * affine_T.ty_px)


# --------------------------------------------------------------------------- noise

@dataclass(frozen=True)
class NoiseConfig:
    dose: float = 200.0
    jitter_sigma: float = 0.5
    readout_sigma: float = 0.01
    poisson: bool = True
    jitter: bool = True
    readout: bool = True

    def __post_init__(self):
        if self.poisson and not self.dose > 0:
            raise InvalidParameterError("dose must be > 0 when Poisson noise is enabled")
        if self.jitter_sigma < 0 or self.readout_sigma < 0:
            raise InvalidParameterError("noise sigmas must be >= 0")

    @classmethod
    def disabled(cls) -> "NoiseConfig":
        return cls(poisson=False, jitter=False, readout=False)

    @property
    def any_enabled(self) -> bool:
        return self.poisson or self.jitter or self.readout

    @classmethod
    def parse(cls, text: str) -> "NoiseConfig":
        """Parse ``"none"`` or ``"dose=200,jitter=0.5,readout=0.01"``.

        A zero (or missing) value disables that component.
        """
        text = text.strip()
        if text.lower() in ("", "none", "off"):
            return cls.disabled()
        vals = {"dose": 0.0, "jitter": 0.0, "readout": 0.0}
        for part in text.split(","):
            key, sep, value = part.partition("=")
            key = key.strip()
            if not sep or key not in vals:
                raise InvalidParameterError(f"bad noise component {part!r}")
            vals[key] = float(value)
        return cls(dose=vals["dose"] if vals["dose"] > 0 else 1.0,
                   jitter_sigma=vals["jitter"], readout_sigma=vals["readout"],
                   poisson=vals["dose"] > 0, jitter=vals["jitter"] > 0, readout=vals["readout"] > 0)

    def to_dict(self) -> dict:
        return asdict(self)


def shift_rows(img: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """Shift each row right by ``shifts[row]`` pixels (bilinear, zero fill)."""
    h, w = img.shape
    xs = np.arange(w, dtype=float)[None, :] - shifts[:, None]
    ys = np.broadcast_to(np.arange(h, dtype=float)[:, None], (h, w))
    return bilinear_sample(img, xs, ys, 0.0)


def add_noise(img, cfg: NoiseConfig, seed) -> np.ndarray:
    """Poisson shot noise, then scan-line jitter, then Gaussian readout noise."""
    img = as_image(img)
    if not cfg.any_enabled:
        return img.copy()
    rng = make_rng(seed)
    out = img
    if cfg.poisson:
        out = rng.poisson(cfg.dose * out).astype(np.float64) / cfg.dose
    if cfg.jitter and cfg.jitter_sigma > 0:
        out = shift_rows(out, rng.normal(0.0, cfg.jitter_sigma, size=out.shape[0]))
    if cfg.readout and cfg.readout_sigma > 0:
        out = out + rng.normal(0.0, cfg.readout_sigma, size=out.shape)
    return np.maximum(out, 0.0)


# --------------------------------------------------------------------------- sequences

@dataclass
class DegradationSpec:
    lambda_T: np.ndarray
    affine_T: AffineParams
    total_steps: int = 10
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def __post_init__(self):
        if int(self.total_steps) != self.total_steps or self.total_steps < 1:
            raise InvalidParameterError(f"total_steps must be a positive integer, got {self.total_steps}")
        self.lambda_T = as_decay(self.lambda_T, name="lambda_T")


@dataclass
class SequenceSample:
    x0_noisy: np.ndarray
    xT_noisy: np.ndarray
    xt_clean: np.ndarray
    t: float
    lambda_t: np.ndarray
    affine_t: AffineParams


def gen_sequence_sample(x0, spec: DegradationSpec, t, seed) -> SequenceSample:
    x0 = as_image(x0, "x0")
    T = spec.total_steps
    _check_time(t, T)
    lam_t = interpolate_decay(spec.lambda_T, t, T)
    aff_t = interpolate_affine(spec.affine_T, t, T)
    xt = degrade_forward(x0, lam_t, aff_t)
    xT = xt if t == T else degrade_forward(x0, spec.lambda_T, spec.affine_T)
    s0, sT = np.random.SeedSequence(int(seed)).spawn(2)
    return SequenceSample(
        x0_noisy=add_noise(x0, spec.noise, np.random.default_rng(s0)),
        xT_noisy=add_noise(xT, spec.noise, np.random.default_rng(sT)),
        xt_clean=xt,
        t=t,
        lambda_t=lam_t,
        affine_t=aff_t,
    )


@dataclass(frozen=True)
class SamplerRanges:
    """Ranges for randomly drawn training degradations."""

    size: int = 64
    total_steps: int = 10
    theta_max_deg: float = 8.0
    shift_max_px: float = 5.0
    min_survival: tuple = (0.2, 0.7)
    decay_cells: tuple = (1, 3)
    decay_octaves: int = 2
    lattice_spacing: tuple = (7.0, 11.0)
    noise: NoiseConfig = field(default_factory=NoiseConfig)


def draw_training_sample(ranges: SamplerRanges, master_seed: int, index: int, t=None):
    """Fresh (x0, spec, sample) for one training example.

    ``t`` defaults to a uniform draw from ``{1, ..., T}``.
    """
    rng = make_rng(master_seed, index)
    n = ranges.size
    x0 = gen_atom_map(random_atom_spec(rng, ranges.lattice_spacing), n, n)
    cells = int(rng.integers(ranges.decay_cells[0], ranges.decay_cells[1] + 1))
    fld = perlin_field(n, n, cells, ranges.decay_octaves, int(rng.integers(0, 2**31 - 1)))
    lam_T = make_final_decay(fld, float(rng.uniform(*ranges.min_survival)))
    aff_T = AffineParams(
        float(rng.uniform(-ranges.theta_max_deg, ranges.theta_max_deg)),
        float(rng.uniform(-ranges.shift_max_px, ranges.shift_max_px)),
        float(rng.uniform(-ranges.shift_max_px, ranges.shift_max_px)),
    )
    spec = DegradationSpec(lam_T, aff_T, ranges.total_steps, ranges.noise)
    if t is None:
        t = int(rng.integers(1, ranges.total_steps + 1))
    sample = gen_sequence_sample(x0, spec, t, int(rng.integers(0, 2**31 - 1)))
    return x0, spec, sample


# --------------------------------------------------------------------------- benchmarks

def rescale_damage(damage: np.ndarray, target: float) -> np.ndarray:
    """Return a damage field (1 - lambda) in [0, 1] whose mean is exactly ``target``.

    Below the field's own mean the pattern is scaled down; above it, every
    pixel is pushed towards full damage by the same fraction.
    """
    if target <= 0.0:
        return np.zeros_like(damage)
    mean = float(damage.mean())
    if mean <= 0.0:
        damage = np.ones_like(damage)
        mean = 1.0
    if target <= mean:
        out = damage * (target / mean)
    else:
        out = damage + (target - mean) / (1.0 - mean) * (1.0 - damage)
    return np.clip(out, 0.0, 1.0)


def _base_damage(noise_type: str, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    if noise_type == "gaussian_blackhole":
        rows, cols = np.mgrid[0:h, 0:w].astype(float)
        wells = np.zeros((h, w))
        for _ in range(int(rng.integers(1, 4))):
            amp = rng.uniform(0.5, 1.0)
            sigma = rng.uniform(8.0, 32.0)
            cy, cx = rng.uniform(0, h - 1), rng.uniform(0, w - 1)
            wells += amp * np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2.0 * sigma**2))
        lam = np.clip(1.0 - wells + rng.normal(0.0, 0.05, size=(h, w)), 0.0, 1.0)
        return 1.0 - lam
    if noise_type == "perlin":
        return perlin_field(h, w, 3, 2, int(rng.integers(0, 2**31 - 1)))
    if noise_type == "random":
        lam = ndimage.gaussian_filter(rng.uniform(0.0, 1.0, size=(h, w)), 1.0, mode="reflect")
        return 1.0 - lam
    raise InvalidParameterError(f"unknown noise type {noise_type!r}; expected one of {NOISE_TYPES}")


def gen_damage_benchmark(x0, noise_type: str, n_frames: int = 10, max_intensity: float = 0.9, seed: int = 0):
    """Decay-only sequence with linearly increasing damage intensity.

    Returns a list of ``(frame, decay_map)`` where frame ``k`` has mean damage
    ``max_intensity * k / (n_frames - 1)``.  One spatial pattern per sequence.
    """
    x0 = as_image(x0, "x0")
    if noise_type not in NOISE_TYPES:
        raise InvalidParameterError(f"unknown noise type {noise_type!r}; expected one of {NOISE_TYPES}")
    if n_frames < 2:
        raise InvalidParameterError("n_frames must be >= 2")
    if not (0.0 < max_intensity <= 1.0):
        raise InvalidParameterError("max_intensity must lie in (0, 1]")
    rng = make_rng(seed)
    base = _base_damage(noise_type, *x0.shape, rng)
    out = []
    for k in range(n_frames):
        lam = 1.0 - rescale_damage(base, max_intensity * k / (n_frames - 1))
        out.append((x0 * lam, lam))
    return out


def gen_drift_benchmark(img, rot_max_deg: float, drift_max_px: float, crop_size: int = 256, seed: int = 0):
    """Random crop ``x0`` and its rigidly drifted copy ``xT`` (no attenuation)."""
    img = as_image(img)
    h, w = img.shape
    margin = int(math.ceil(drift_max_px))
    if crop_size + 2 * margin > min(h, w) or crop_size < 1:
        raise DimensionError(
            f"cannot crop {crop_size}px with {margin}px margin from a {h}x{w} image")
    rng = make_rng(seed)
    r0 = int(rng.integers(margin, h - crop_size - margin + 1))
    c0 = int(rng.integers(margin, w - crop_size - margin + 1))
    params = AffineParams(
        float(rng.uniform(-rot_max_deg, rot_max_deg)),
        float(rng.uniform(-drift_max_px, drift_max_px)),
        float(rng.uniform(-drift_max_px, drift_max_px)),
    )
    x0 = img[r0:r0 + crop_size, c0:c0 + crop_size].copy()
    xT = warp(x0, build_affine_matrix(params), 0.0)
    return x0, xT, params
