"""Deterministic recovery of drift and decay from a frame pair.

Drift is found by maximizing normalized cross-correlation (NCC) between the
warped reference and the target, using phase-correlation initialization
over several rotation seeds followed by coarse-to-fine Gauss-Newton.  The
decay map is then read off in closed form as the per-pixel intensity ratio
after undoing the drift.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DegenerateInputError, DimensionError, InvalidParameterError
from .imaging import (
    AffineParams,
    as_image,
    bilinear_sample,
    build_affine_matrix,
    centered_grid,
    invert_affine,
    warp,
)

__all__ = [
    "DirectConfig",
    "Estimate",
    "ncc_cost",
    "grid_search_translation",
    "phase_correlation_peaks",
    "register_affine",
    "refine_affine",
    "decay_from_pair",
    "estimate_direct",
    "DirectEstimator",
]

_DEG = math.pi / 180.0


@dataclass(frozen=True)
class DirectConfig:
    pyramid_levels: int = 3
    max_gn_iters: int = 30
    param_tol_px: float = 0.01
    param_tol_deg: float = 0.01
    rotation_starts: tuple = (-15.0, -7.5, 0.0, 7.5, 15.0)
    eps_denom: float = 0.05
    lambda_smooth_sigma: float = 2.0
    smooth_decay: bool = True
    max_alternations: int = 3
    # fallback seeds spaced this far apart between the extreme rotation starts,
    # tried only when the nominal starts end above ``accept_cost`` at the coarsest level
    seed_step_deg: float = 1.0
    accept_cost: float = 0.25
    gn_starts: int = 4
    # starts surviving the coarsest level; the rest are dropped
    keep_starts: int = 2
    init_peaks: int = 4

    def __post_init__(self):
        if self.pyramid_levels < 1 or self.max_gn_iters < 1 or self.max_alternations < 1:
            raise InvalidParameterError("pyramid_levels, max_gn_iters and max_alternations must be >= 1")
        if not self.eps_denom > 0:
            raise InvalidParameterError("eps_denom must be > 0")
        if self.lambda_smooth_sigma < 0 or self.param_tol_px <= 0 or self.param_tol_deg <= 0:
            raise InvalidParameterError("tolerances must be > 0 and smoothing sigma >= 0")
        if self.accept_cost < 0:
            raise InvalidParameterError("accept_cost must be >= 0")
        if not self.rotation_starts:
            raise InvalidParameterError("need at least one rotation start")


@dataclass
class Estimate:
    """Recovered drift and decay for one frame pair."""

    affine: AffineParams
    decay: np.ndarray
    residual: float
    converged: bool
    iterations: int
    valid_fraction: float
    extra: dict = field(default_factory=dict)


# --------------------------------------------------------------------------- cost

def _check_pair(x0, xt):
    x0 = as_image(x0, "x0")
    xt = as_image(xt, "xt")
    if x0.shape != xt.shape:
        raise DimensionError(f"image shapes differ: {x0.shape} vs {xt.shape}")
    for name, img in (("x0", x0), ("xt", xt)):
        if not np.ptp(img) > 0:
            raise DegenerateInputError(f"{name} is constant; NCC is undefined")
    return x0, xt


def ncc_cost(moving, target, p, jac: bool = False):
    """``1 - NCC(warp(moving, T(p)), target)`` over pixels whose source is inside ``moving``.

    ``p`` is ``(theta_deg, tx_px, ty_px)``.  With ``jac=True`` also returns the
    gradient of the cost and the Gauss-Newton matrix ``J^T J``, where ``J`` is
    the Jacobian of the normalized warped vector; the cost equals
    ``0.5 * |w_hat - y_hat|^2``.
    """
    h, w = moving.shape
    u, v = centered_grid(h, w)
    th = p[0] * _DEG
    c, s = math.cos(th), math.sin(th)
    du = u - p[1]
    dv = v - p[2]
    sx = c * du + s * dv
    sy = -s * du + c * dv
    val, gx, gy, inside = bilinear_sample(moving, sx + (w - 1) / 2.0, sy + (h - 1) / 2.0, 0.0, grad=True)
    n = int(inside.sum())
    if n < 16:
        return (math.inf, None, None) if jac else math.inf
    wv = val[inside]
    yv = target[inside]
    wc = wv - wv.mean()
    yc = yv - yv.mean()
    nw = math.sqrt(float(wc @ wc))
    ny = math.sqrt(float(yc @ yc))
    if nw == 0.0 or ny == 0.0:
        return (math.inf, None, None) if jac else math.inf
    what = wc / nw
    yhat = yc / ny
    cost = 1.0 - float(what @ yhat)
    if not jac:
        return cost
    gxm, gym = gx[inside], gy[inside]
    sxm, sym = sx[inside], sy[inside]
    jw = np.empty((n, 3))
    jw[:, 0] = (gxm * sym - gym * sxm) * _DEG
    jw[:, 1] = -c * gxm + s * gym
    jw[:, 2] = -s * gxm - c * gym
    jw -= jw.mean(axis=0)
    jn = (jw - np.outer(what, what @ jw)) / nw
    r = what - yhat
    return cost, jn.T @ r, jn.T @ jn


# --------------------------------------------------------------------------- translation oracles

def grid_search_translation(x0, xt, radius_px: int, cost: str = "ssd"):
    """Exhaustive integer-shift search.

    ``cost="ssd"`` compares ``x0`` shifted with zero fill against all of
    ``xt``; ``cost="ncc"`` uses ``1 - NCC`` over the overlap.  Returns
    ``(tx, ty, cost)``; ties go to the smallest shift norm, then
    lexicographic ``(tx, ty)``.
    """
    x0 = np.asarray(x0, dtype=float)
    xt = np.asarray(xt, dtype=float)
    h, w = x0.shape
    radius_px = int(radius_px)
    if radius_px > min(h, w) / 4:
        raise InvalidParameterError(f"radius {radius_px} exceeds min(H, W)/4")
    if cost not in ("ssd", "ncc"):
        raise InvalidParameterError(f"unknown cost {cost!r}")
    total_t2 = float(np.sum(xt * xt))
    best = None
    for ty in range(-radius_px, radius_px + 1):
        for tx in range(-radius_px, radius_px + 1):
            src = x0[max(0, -ty):h - max(0, ty), max(0, -tx):w - max(0, tx)]
            dst = xt[max(0, ty):h - max(0, -ty), max(0, tx):w - max(0, -tx)]
            if cost == "ssd":
                val = total_t2 - float(np.sum(dst * dst)) + float(np.sum((src - dst) ** 2))
            else:
                a = src - src.mean()
                b = dst - dst.mean()
                den = math.sqrt(float(np.sum(a * a)) * float(np.sum(b * b)))
                val = 1.0 - float(np.sum(a * b)) / den if den > 0 else math.inf
            key = (val, tx * tx + ty * ty, tx, ty)
            if best is None or key < best:
                best = key
    return best[2], best[3], best[0]


def phase_correlation_peaks(a, b, k: int = 4):
    """Top-``k`` translation candidates ``s`` with ``b(x) ~ a(x - s)``.

    Integer peaks of the whitened cross-power spectrum, refined to subpixel
    precision with a 3-point parabola along each axis.
    """
    h, w = a.shape
    fa = np.fft.fft2(a - a.mean())
    fb = np.fft.fft2(b - b.mean())
    cross = fb * np.conj(fa)
    cross /= np.abs(cross) + 1e-12 * np.abs(cross).max() + 1e-300
    corr = np.real(np.fft.ifft2(cross))
    if not np.all(np.isfinite(corr)):
        return []
    order = np.argsort(corr, axis=None, kind="stable")[::-1]
    taken = []
    for flat in order:
        r, c = divmod(int(flat), w)
        if any(min(abs(r - r2), h - abs(r - r2)) <= 1 and min(abs(c - c2), w - abs(c - c2)) <= 1
               for r2, c2 in taken):
            continue
        taken.append((r, c))
        if len(taken) >= k:
            break
    out = []
    for r, c in taken:
        def _parab(m1, c0, p1):
            den = m1 - 2.0 * c0 + p1
            return 0.0 if den >= 0 else 0.5 * (m1 - p1) / den
        dy = _parab(corr[(r - 1) % h, c], corr[r, c], corr[(r + 1) % h, c])
        dx = _parab(corr[r, (c - 1) % w], corr[r, c], corr[r, (c + 1) % w])
        sy = r - h if r > h // 2 else r
        sx = c - w if c > w // 2 else c
        out.append((sx + dx, sy + dy))
    return out


# --------------------------------------------------------------------------- pyramid + Gauss-Newton

def _downsample(img):
    h, w = img.shape
    img = img[: h - h % 2, : w - w % 2]
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def _pyramid(img, levels):
    pyr = [img]
    for _ in range(levels - 1):
        pyr.append(_downsample(pyr[-1]))
    return pyr


def _effective_levels(shape, requested):
    levels = 1
    while levels < requested and min(shape) // 2**levels >= 32:
        levels += 1
    return levels


def _gauss_newton(moving, target, p, scale, cfg: DirectConfig, max_iters=None):
    """Levenberg-damped Gauss-Newton on one pyramid level.

    ``p`` is in full-resolution units; translations are divided by ``scale``
    for this level.  Returns ``(p, cost, iterations, converged)``.
    """
    max_iters = cfg.max_gn_iters if max_iters is None else max_iters
    q = np.array([p[0], p[1] / scale, p[2] / scale], dtype=float)
    cost, g, H = ncc_cost(moving, target, q, jac=True)
    if not math.isfinite(cost):
        return np.asarray(p, float), cost, 0, False
    damping = 1e-4
    converged = False
    it = 0
    while it < max_iters:
        it += 1
        A = H + damping * np.diag(np.diag(H) + 1e-12)
        try:
            step = -np.linalg.solve(A, g)
        except np.linalg.LinAlgError:
            break
        small = abs(step[0]) < cfg.param_tol_deg and math.hypot(step[1], step[2]) * scale < cfg.param_tol_px
        q_new = q + step
        if abs(q_new[0]) >= 179.0:
            new_cost = math.inf
        else:
            new_cost, g_new, H_new = ncc_cost(moving, target, q_new, jac=True)
        if new_cost <= cost:
            q, cost, g, H = q_new, new_cost, g_new, H_new
            damping = max(damping * 0.3, 1e-9)
            if small:
                converged = True
                break
        else:
            damping *= 10.0
            if small or damping > 1e6:
                converged = small
                break
    return np.array([q[0], q[1] * scale, q[2] * scale]), cost, it, converged


def _order_key(cost, p, index):
    return (cost, abs(p[0]), math.hypot(p[1], p[2]), index)


def _coarse_starts(m0, mt, seeds, scale, cfg: DirectConfig, offset: int):
    """Score each rotation seed with its best phase-correlation translation, then run
    Gauss-Newton from the ``gn_starts`` best.  Returns ``(starts, iterations)``."""
    scored = []
    for idx, theta in enumerate(seeds, start=offset):
        rotated = warp(m0, build_affine_matrix(AffineParams(theta, 0.0, 0.0)), 0.0)
        cands = phase_correlation_peaks(rotated, mt, cfg.init_peaks)
        if not cands:
            r = max(1, min(mt.shape) // 4)
            tx, ty, _ = grid_search_translation(rotated, mt, r, cost="ncc")
            cands = [(float(tx), float(ty))]
        cands.append((0.0, 0.0))
        best = None
        for sx, sy in cands:
            c = ncc_cost(m0, mt, np.array([theta, sx, sy]))
            if best is None or c < best[0]:
                best = (c, np.array([theta, sx * scale, sy * scale]))
        scored.append((best[1], best[0], idx))
    scored.sort(key=lambda s: _order_key(s[1], s[0], s[2]))
    starts = []
    iters = 0
    for q, _, idx in scored[: cfg.gn_starts]:
        p, c, it, conv = _gauss_newton(m0, mt, q, scale, cfg)
        iters += it
        starts.append((p, c, conv, idx))
    return starts, iters


def register_affine(x0, xt, cfg: DirectConfig = DirectConfig()):
    """Rigid drift mapping ``x0`` onto ``xt``.

    Returns ``(AffineParams, residual, converged)``; the full diagnostics
    (iteration count) are available through :func:`register_affine_full`.
    """
    params, cost, converged, _ = register_affine_full(x0, xt, cfg)
    return params, cost, converged


def register_affine_full(x0, xt, cfg: DirectConfig = DirectConfig()):
    x0, xt = _check_pair(x0, xt)
    levels = _effective_levels(x0.shape, cfg.pyramid_levels)
    pyr0 = _pyramid(x0, levels)
    pyrt = _pyramid(xt, levels)
    top = levels - 1
    scale = 2.0**top
    m0, mt = pyr0[top], pyrt[top]

    nominal = sorted(set(round(float(v), 9) for v in cfg.rotation_starts), key=lambda v: (abs(v), v))
    starts, iters = _coarse_starts(m0, mt, nominal, scale, cfg, 0)
    best = min((s[1] for s in starts), default=math.inf)
    if cfg.seed_step_deg > 0 and len(nominal) > 1 and not best <= cfg.accept_cost:
        lo, hi = min(nominal), max(nominal)
        n = int(math.floor((hi - lo) / cfg.seed_step_deg + 1e-9))
        dense = [round(lo + k * cfg.seed_step_deg, 9) for k in range(1, n)]
        dense = sorted(set(dense) - set(nominal), key=lambda v: (abs(v), v))
        more, it = _coarse_starts(m0, mt, dense, scale, cfg, len(nominal))
        starts += more
        iters += it

    # drop duplicates and poor starts before the expensive fine levels
    starts.sort(key=lambda s: _order_key(s[1], s[0], s[3]))
    kept = []
    for s in starts:
        if not math.isfinite(s[1]):
            continue
        if any(abs(s[0][0] - k[0][0]) < 0.5 and math.hypot(*(s[0][1:] - k[0][1:])) < scale for k in kept):
            continue
        kept.append(s)
        if len(kept) >= cfg.keep_starts:
            break
    if not kept:
        raise DegenerateInputError("registration failed for every rotation start")

    results = []
    for p, c, conv, idx in kept:
        for lvl in range(top - 1, -1, -1):
            p, c, it, conv = _gauss_newton(pyr0[lvl], pyrt[lvl], p, 2.0**lvl, cfg)
            iters += it
        results.append((p, c, conv, idx))
    results.sort(key=lambda s: _order_key(s[1], s[0], s[3]))
    p, c, conv, _ = results[0]
    return AffineParams.from_array(p), float(max(c, 0.0)), bool(conv), iters


def refine_affine(moving, target, init: AffineParams, cfg: DirectConfig = DirectConfig()):
    """Full-resolution Gauss-Newton from a known starting point."""
    p, c, it, conv = _gauss_newton(np.asarray(moving, float), np.asarray(target, float),
                                   init.as_array(), 1.0, cfg)
    return AffineParams.from_array(p), float(max(c, 0.0)), bool(conv), it


# --------------------------------------------------------------------------- decay

def decay_from_pair(x0, xt, affine: AffineParams, cfg: DirectConfig = DirectConfig()):
    """Per-pixel survival map after undoing ``affine``.

    Where ``x0 > eps_denom`` and the drifted location lies inside ``xt`` the
    ratio is taken directly; other pixels are filled by normalized Gaussian
    convolution of the valid ratios (1 where no valid pixel is within
    3 sigma).  Returns ``(decay, valid_fraction)``.
    """
    x0 = as_image(x0, "x0")
    xt = as_image(xt, "xt")
    if x0.shape != xt.shape:
        raise DimensionError(f"image shapes differ: {x0.shape} vs {xt.shape}")
    m = build_affine_matrix(affine)
    minv = invert_affine(m)
    y = warp(xt, minv, 0.0)
    h, w = x0.shape
    u, v = centered_grid(h, w)
    fx = m[0, 0] * u + m[0, 1] * v + m[0, 2] + (w - 1) / 2.0
    fy = m[1, 0] * u + m[1, 1] * v + m[1, 2] + (h - 1) / 2.0
    inside = (fx >= 0) & (fx <= w - 1) & (fy >= 0) & (fy <= h - 1)
    valid = inside & (x0 > cfg.eps_denom)
    ratio = np.zeros_like(x0)
    ratio[valid] = np.clip(y[valid] / x0[valid], 0.0, 1.0)

    sigma = cfg.lambda_smooth_sigma
    if sigma > 0:
        weights = valid.astype(float)
        num = ndimage.gaussian_filter(ratio * weights, sigma, mode="constant", truncate=3.0)
        den = ndimage.gaussian_filter(weights, sigma, mode="constant", truncate=3.0)
        filled = np.ones_like(x0)
        ok = den > 0
        filled[ok] = num[ok] / den[ok]
        lam = np.where(valid, ratio, filled)
        if cfg.smooth_decay:
            lam = ndimage.gaussian_filter(lam, sigma, mode="nearest", truncate=3.0)
    else:
        lam = np.where(valid, ratio, 1.0)
    return np.clip(lam, 0.0, 1.0), float(valid.mean())


# --------------------------------------------------------------------------- full solver

def estimate_direct(x0, xt, cfg: DirectConfig = DirectConfig()) -> Estimate:
    """Alternate drift registration and closed-form decay recovery."""
    x0, xt = _check_pair(x0, xt)
    affine, residual, converged, iters = register_affine_full(x0, xt, cfg)
    lam, vf = decay_from_pair(x0, xt, affine, cfg)
    for _ in range(cfg.max_alternations - 1):
        moving = x0 * lam
        if not np.ptp(moving) > 0:
            break
        new, res, conv, it = refine_affine(moving, xt, affine, cfg)
        iters += it
        delta = new.as_array() - affine.as_array()
        affine, residual, converged = new, res, conv
        lam, vf = decay_from_pair(x0, xt, affine, cfg)
        if abs(delta[0]) < cfg.param_tol_deg and math.hypot(delta[1], delta[2]) < cfg.param_tol_px:
            break
    return Estimate(affine, lam, residual, converged, iters, vf)


class DirectEstimator:
    """Callable wrapper with the common estimator signature."""

    supports_time = False

    def __init__(self, cfg: DirectConfig = DirectConfig()):
        self.cfg = cfg

    def __call__(self, x0, xT, t=None, T=None) -> Estimate:
        if t is not None and T is not None and t != T:
            raise InvalidParameterError("the direct estimator only solves the end state (t == T)")
        return estimate_direct(x0, xT, self.cfg)
