"""Damage and drift benchmark harnesses shared by the CLI and the test suite."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imaging import as_image
from .metrics import (
    RegressionReport,
    damage_intensity,
    drift_error,
    mean_report,
    regression_report,
    rotation_error,
)
from .synth import AtomMapSpec, gen_atom_map, gen_damage_benchmark, gen_drift_benchmark

NOISE_ALIASES = {"gaussian": "gaussian_blackhole", "gaussian_blackhole": "gaussian_blackhole",
                 "perlin": "perlin", "random": "random"}


def trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(trial)]).generate_state(1)[0])


def lattice_image(size: int = 512, seed: int = 0) -> np.ndarray:
    """Default synthetic specimen: jittered hexagonal lattice of atomic columns."""
    return gen_atom_map(AtomMapSpec(seed=seed), size, size)


@dataclass
class DamageResult:
    noise_type: str
    report: RegressionReport
    trials: list = field(default_factory=list)  # (pred curve, gt curve, report) per trial


def run_damage_benchmark(x0, noise_type: str, estimator, n_frames: int = 10,
                         max_intensity: float = 0.9, trials: int = 10, seed: int = 0) -> DamageResult:
    """Predicted vs true damage-intensity curves, metrics averaged over trials."""
    x0 = as_image(x0, "x0")
    kind = NOISE_ALIASES.get(noise_type, noise_type)
    rows = []
    for k in range(trials):
        frames = gen_damage_benchmark(x0, kind, n_frames, max_intensity, trial_seed(seed, k))
        gt = np.array([damage_intensity(lam) for _, lam in frames])
        pred = np.array([damage_intensity(estimator(x0, frame).decay) for frame, _ in frames])
        rows.append((pred, gt, regression_report(pred, gt)))
    return DamageResult(noise_type, mean_report(r[2] for r in rows), rows)


@dataclass
class DriftResult:
    rot_set_deg: float
    drift_set_px: float
    mean_drift_err_px: float
    mean_rot_err_deg: float
    trials: list = field(default_factory=list)  # (gt params, predicted params) per trial


def run_drift_benchmark(img, rot_deg: float, drift_px: float, estimator, crop: int = 256,
                        trials: int = 50, seed: int = 0) -> DriftResult:
    img = as_image(img)
    pairs = []
    d_err, r_err = [], []
    for k in range(trials):
        x0, xT, gt = gen_drift_benchmark(img, rot_deg, drift_px, crop, trial_seed(seed, k))
        pred = estimator(x0, xT).affine
        pairs.append((gt, pred))
        d_err.append(drift_error(pred, gt))
        r_err.append(rotation_error(pred, gt))
    return DriftResult(rot_deg, drift_px, float(np.mean(d_err)), float(np.mean(r_err)), pairs)
