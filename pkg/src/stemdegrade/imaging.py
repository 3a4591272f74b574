"""Image algebra: affine drift parameters, bilinear warp and attenuation.

Images and decay maps are plain 2-D ``numpy`` arrays (row-major, float64).
Geometry uses centered pixel coordinates::

    u = col - (W - 1) / 2
    v = row - (H - 1) / 2

so rotations pivot about the image center.  With ``v`` pointing down the
rows, a positive angle turns the ``+u`` axis towards ``+v``; that is
counterclockwise in a y-up plot and clockwise on screen (row 0 on top).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionError, InvalidParameterError, SingularTransformError

__all__ = [
    "AffineParams",
    "build_affine_matrix",
    "invert_affine",
    "compose_affine",
    "params_from_matrix",
    "bilinear_sample",
    "centered_grid",
    "warp",
    "attenuate",
    "degrade_forward",
    "as_image",
    "as_decay",
]

IDENTITY = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class AffineParams:
    """Rigid drift: in-plane rotation (degrees) plus translation (pixels)."""

    theta_deg: float = 0.0
    tx_px: float = 0.0
    ty_px: float = 0.0

    def __post_init__(self):
        vals = (self.theta_deg, self.tx_px, self.ty_px)
        if not all(math.isfinite(float(v)) for v in vals):
            raise InvalidParameterError(f"non-finite affine parameters {vals}")
        if abs(self.theta_deg) >= 180.0:
            raise InvalidParameterError(f"|theta_deg| must be < 180, got {self.theta_deg}")

    def as_array(self) -> np.ndarray:
        return np.array([self.theta_deg, self.tx_px, self.ty_px], dtype=float)

    @classmethod
    def from_array(cls, p) -> "AffineParams":
        theta, tx, ty = (float(v) for v in p)
        return cls(theta, tx, ty)


def build_affine_matrix(params: AffineParams) -> np.ndarray:
    """2x3 matrix ``[[cos, -sin, tx], [sin, cos, ty]]`` in centered coordinates."""
    vals = (params.theta_deg, params.tx_px, params.ty_px)
    if not all(math.isfinite(float(v)) for v in vals):
        raise InvalidParameterError(f"non-finite affine parameters {vals}")
    theta = math.radians(params.theta_deg)
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, float(params.tx_px)], [s, c, float(params.ty_px)]])


def params_from_matrix(m: np.ndarray) -> AffineParams:
    m = np.asarray(m, dtype=float)
    return AffineParams(math.degrees(math.atan2(m[1, 0], m[0, 0])), m[0, 2], m[1, 2])


def invert_affine(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (2, 3):
        raise DimensionError(f"affine matrix must be 2x3, got {m.shape}")
    a, b, c = m[0]
    d, e, f = m[1]
    det = a * e - b * d
    if not abs(det) > 1e-12:
        raise SingularTransformError(f"affine block is singular (det={det!r})")
    ia, ib, id_, ie = e / det, -b / det, -d / det, a / det
    return np.array([[ia, ib, -(ia * c + ib * f)], [id_, ie, -(id_ * c + ie * f)]])


def compose_affine(m1: np.ndarray, m2: np.ndarray) -> np.ndarray:
    """Matrix of ``p -> m1(m2(p))``."""
    h1 = np.vstack([np.asarray(m1, dtype=float), [0.0, 0.0, 1.0]])
    h2 = np.vstack([np.asarray(m2, dtype=float), [0.0, 0.0, 1.0]])
    return (h1 @ h2)[:2]


def as_image(img, name: str = "image") -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise DimensionError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError(f"{name} contains non-finite values")
    if np.any(arr < 0):
        raise InvalidParameterError(f"{name} contains negative intensities")
    return arr


def as_decay(lam, shape=None, name: str = "decay map") -> np.ndarray:
    arr = np.asarray(lam, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise DimensionError(f"{name} shape {arr.shape} does not match image shape {tuple(shape)}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0) or np.any(arr > 1):
        raise InvalidParameterError(f"{name} values must lie in [0, 1]")
    return arr


@lru_cache(maxsize=32)
def _grid(h: int, w: int):
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    u = np.arange(w, dtype=float) - cx
    v = np.arange(h, dtype=float) - cy
    return np.broadcast_to(u[None, :], (h, w)), np.broadcast_to(v[:, None], (h, w))


def centered_grid(h: int, w: int):
    """Centered coordinates ``(u, v)`` of every pixel, each of shape (h, w), read-only."""
    return _grid(int(h), int(w))


def bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray, fill: float = 0.0,
                    grad: bool = False):
    """Sample ``img`` at pixel coordinates ``(xs, ys)`` = (column, row).

    Each of the four neighbours that lies outside the image contributes
    ``fill``, so integer-valued coordinates reproduce pixels exactly.

    Returns the sampled values, and with ``grad=True`` also the exact partial
    derivatives of the bilinear surface along x and y plus a mask of samples
    whose footprint lies fully inside the image.
    """
    h, w = img.shape
    # one-pixel fill border: clamping any out-of-range index onto it yields ``fill``
    wp = w + 2
    padded = np.full((h + 2, wp), fill, dtype=np.float64)
    padded[1:-1, 1:-1] = img
    flat = padded.ravel()

    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    cx0 = np.clip(x0.astype(np.int64) + 1, 0, w + 1)
    cx1 = np.clip(x0.astype(np.int64) + 2, 0, w + 1)
    ry0 = np.clip(y0.astype(np.int64) + 1, 0, h + 1) * wp
    ry1 = np.clip(y0.astype(np.int64) + 2, 0, h + 1) * wp
    v00 = flat[ry0 + cx0]
    v01 = flat[ry0 + cx1]
    v10 = flat[ry1 + cx0]
    v11 = flat[ry1 + cx1]

    gx0 = 1.0 - fx
    gy0 = 1.0 - fy
    out = gy0 * (gx0 * v00 + fx * v01) + fy * (gx0 * v10 + fx * v11)
    if not grad:
        return out
    dx = gy0 * (v01 - v00) + fy * (v11 - v10)
    dy = gx0 * (v10 - v00) + fx * (v11 - v01)
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    return out, dx, dy, inside


def warp(img, m, fill: float = 0.0) -> np.ndarray:
    """Resample ``img`` under the forward affine ``m`` (inverse mapping).

    ``out(p) = img(m^-1(p))`` with bilinear interpolation in centered
    coordinates; samples outside the source take ``fill``.
    """
    img = as_image(img)
    minv = invert_affine(m)
    h, w = img.shape
    u, v = centered_grid(h, w)
    xs = minv[0, 0] * u + minv[0, 1] * v + minv[0, 2] + (w - 1) / 2.0
    ys = minv[1, 0] * u + minv[1, 1] * v + minv[1, 2] + (h - 1) / 2.0
    return bilinear_sample(img, xs, ys, fill)


def attenuate(img, lam) -> np.ndarray:
    img = as_image(img)
    lam = as_decay(lam, img.shape)
    return img * lam


def degrade_forward(x0, lam, params: AffineParams, fill: float = 0.0) -> np.ndarray:
    """Decay then drift: ``warp(lam * x0, T(params))``."""
    return warp(attenuate(x0, lam), build_affine_matrix(params), fill)
