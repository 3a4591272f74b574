"""Simulate and invert STEM frame degradation (signal decay plus affine drift).

The torch-based estimator lives in :mod:`stemdegrade.learned` and is imported
on demand so the numpy tooling works without loading torch.
"""
from .direct import DirectConfig, DirectEstimator, Estimate, estimate_direct, grid_search_translation, register_affine
from .errors import (
    DegenerateInputError,
    DimensionError,
    FormatError,
    InvalidParameterError,
    OutOfRangeError,
    SingularTransformError,
    StemDegradeError,
    TrainingDivergedError,
)
from .imaging import AffineParams, attenuate, build_affine_matrix, degrade_forward, invert_affine, warp
from .inference import align_overlay, flow_map, infer_sequence
from .metrics import RegressionReport, damage_intensity, drift_error, regression_report, rotation_error
from .synth import (
    AtomMapSpec,
    DegradationSpec,
    NoiseConfig,
    add_noise,
    gen_atom_map,
    gen_damage_benchmark,
    gen_drift_benchmark,
    gen_sequence_sample,
    interpolate_affine,
    interpolate_decay,
    perlin_field,
)

__all__ = [
    "DirectConfig",
    "DirectEstimator",
    "Estimate",
    "estimate_direct",
    "grid_search_translation",
    "register_affine",
    "DegenerateInputError",
    "DimensionError",
    "FormatError",
    "InvalidParameterError",
    "OutOfRangeError",
    "SingularTransformError",
    "StemDegradeError",
    "TrainingDivergedError",
    "AffineParams",
    "attenuate",
    "build_affine_matrix",
    "degrade_forward",
    "invert_affine",
    "warp",
    "align_overlay",
    "flow_map",
    "infer_sequence",
    "RegressionReport",
    "damage_intensity",
    "drift_error",
    "regression_report",
    "rotation_error",
    "AtomMapSpec",
    "DegradationSpec",
    "NoiseConfig",
    "add_noise",
    "gen_atom_map",
    "gen_damage_benchmark",
    "gen_drift_benchmark",
    "gen_sequence_sample",
    "interpolate_affine",
    "interpolate_decay",
    "perlin_field",
]

__version__ = "0.1.0"
