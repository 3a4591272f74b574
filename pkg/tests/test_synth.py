import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stemdegrade.errors import DimensionError, InvalidParameterError, OutOfRangeError
from stemdegrade.imaging import AffineParams
from stemdegrade.metrics import damage_intensity
from stemdegrade.synth import (
    AtomMapSpec,
    DegradationSpec,
    NoiseConfig,
    SamplerRanges,
    add_noise,
    draw_training_sample,
    gen_atom_map,
    gen_damage_benchmark,
    gen_drift_benchmark,
    gen_sequence_sample,
    interpolate_affine,
    interpolate_decay,
    make_final_decay,
    perlin_field,
    rescale_damage,
)


def test_atom_map_range_and_determinism():
    a = gen_atom_map(AtomMapSpec(seed=7), 64, 48)
    b = gen_atom_map(AtomMapSpec(seed=7), 64, 48)
    assert a.shape == (64, 48)
    assert np.array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1 and a.max() > 0.5


def test_atom_map_peaks_on_lattice():
    spec = AtomMapSpec(amplitude_range=(1, 1), width_range=(1.5, 1.5), jitter_px=0.0)
    img = gen_atom_map(spec, 64, 64)
    # a column sits at the image centre (31.5, 31.5) and one lattice vector to the right
    for x in (31.5, 41.5):
        assert img[31:33, int(x - 0.5):int(x + 1.5)].mean() > 0.8
    assert img[31:33, 36:38].mean() < 0.2


def test_atom_map_zero_amplitude_is_blank():
    img = gen_atom_map(AtomMapSpec(amplitude_range=(0, 0)), 32, 32)
    assert np.all(img == 0)


@pytest.mark.parametrize("kw", [dict(a1=(1, 0), a2=(2, 0)), dict(width_range=(0, 1)),
                                dict(amplitude_range=(0.8, 0.2)), dict(jitter_px=-1)])
def test_atom_map_rejects_bad_spec(kw):
    with pytest.raises(InvalidParameterError):
        gen_atom_map(AtomMapSpec(**kw), 64, 64)


def test_atom_map_min_size():
    with pytest.raises(DimensionError):
        gen_atom_map(AtomMapSpec(), 16, 64)


def test_perlin_normalized():
    f = perlin_field(40, 50, 3, 3, seed=2)
    assert f.shape == (40, 50)
    assert f.min() == 0.0 and f.max() == 1.0
    assert np.array_equal(f, perlin_field(40, 50, 3, 3, seed=2))
    assert not np.array_equal(f, perlin_field(40, 50, 3, 3, seed=3))


def test_perlin_smooth():
    f = perlin_field(64, 64, 2, 1, seed=0)
    assert np.abs(np.diff(f, axis=1)).max() < 0.2


def test_final_decay_range():
    lam = make_final_decay(perlin_field(32, 32, seed=1), 0.3)
    assert lam.min() == pytest.approx(0.3) and lam.max() == pytest.approx(1.0)


@given(st.integers(0, 10), st.floats(0, 0.99))
def test_interpolate_decay_linear(t, m):
    lam_T = np.full((4, 4), m)
    lam = interpolate_decay(lam_T, t, 10)
    np.testing.assert_allclose(lam, 1 - t / 10 * (1 - m), atol=1e-15)


def test_interpolate_endpoints(rng):
    lam_T = rng.random((8, 8))
    assert np.all(interpolate_decay(lam_T, 0, 10) == 1.0)
    assert np.array_equal(interpolate_decay(lam_T, 10, 10), lam_T)
    a = AffineParams(6, -4, 2)
    assert interpolate_affine(a, 0, 10) == AffineParams(0, 0, 0)
    assert interpolate_affine(a, 5, 10) == AffineParams(3, -2, 1)
    assert interpolate_affine(a, 10, 10) == a


def test_interpolate_rejects_bad_time():
    with pytest.raises(OutOfRangeError):
        interpolate_decay(np.ones((2, 2)), 11, 10)
    with pytest.raises(InvalidParameterError):
        interpolate_affine(AffineParams(), 0, 0)


def test_noise_parse():
    assert not NoiseConfig.parse("none").any_enabled
    cfg = NoiseConfig.parse("dose=100,jitter=0,readout=0.02")
    assert cfg.poisson and cfg.dose == 100 and not cfg.jitter and cfg.readout_sigma == 0.02
    with pytest.raises(InvalidParameterError):
        NoiseConfig.parse("dose")


def test_noise_disabled_is_identity(lattice64):
    assert np.array_equal(add_noise(lattice64, NoiseConfig.disabled(), 0), lattice64)


def test_poisson_statistics():
    img = np.full((200, 200), 0.5)
    out = add_noise(img, NoiseConfig(dose=100, jitter=False, readout=False), seed=1)
    assert out.mean() == pytest.approx(0.5, abs=2e-3)
    assert out.var() == pytest.approx(0.5 / 100, rel=0.05)


def test_noise_deterministic_and_nonnegative(lattice64):
    cfg = NoiseConfig()
    a = add_noise(lattice64, cfg, 9)
    assert np.array_equal(a, add_noise(lattice64, cfg, 9))
    assert a.min() >= 0


def test_sequence_sample_noise_free_matches_forward(lattice64):
    lam_T = make_final_decay(perlin_field(64, 64, seed=0), 0.4)
    spec = DegradationSpec(lam_T, AffineParams(4, 2, -1), 10, NoiseConfig.disabled())
    s = gen_sequence_sample(lattice64, spec, 5, seed=0)
    assert s.affine_t == AffineParams(2, 1, -0.5)
    assert np.array_equal(s.x0_noisy, lattice64)
    np.testing.assert_allclose(s.lambda_t, 1 - 0.5 * (1 - lam_T))


def test_training_sample_reproducible():
    r = SamplerRanges()
    a = draw_training_sample(r, 0, 5)
    b = draw_training_sample(r, 0, 5)
    c = draw_training_sample(r, 0, 6)
    assert np.array_equal(a[2].xt_clean, b[2].xt_clean)
    assert not np.array_equal(a[2].xt_clean, c[2].xt_clean)
    assert 1 <= a[2].t <= r.total_steps
    assert abs(a[1].affine_T.theta_deg) <= r.theta_max_deg


@settings(max_examples=50)
@given(st.floats(0.0, 1.0), st.integers(0, 1000))
def test_rescale_damage_mean_exact(target, seed):
    base = np.random.default_rng(seed).random((16, 16)) ** 3
    out = rescale_damage(base, target)
    assert out.min() >= 0 and out.max() <= 1
    assert out.mean() == pytest.approx(target, abs=1e-12)


@pytest.mark.parametrize("kind", ["gaussian_blackhole", "perlin", "random"])
def test_damage_benchmark_linear_intensity(kind, lattice64):
    frames = gen_damage_benchmark(lattice64, kind, 10, 0.9, seed=4)
    deltas = [damage_intensity(lam) for _, lam in frames]
    np.testing.assert_allclose(deltas, np.linspace(0, 0.9, 10), atol=1e-12)
    for frame, lam in frames:
        np.testing.assert_array_equal(frame, lattice64 * lam)


def test_damage_benchmark_unknown_kind(lattice64):
    with pytest.raises(InvalidParameterError):
        gen_damage_benchmark(lattice64, "salt", 10)


def test_drift_benchmark(lattice128):
    x0, xT, p = gen_drift_benchmark(lattice128, 5, 5, crop_size=96, seed=2)
    assert x0.shape == xT.shape == (96, 96)
    assert abs(p.theta_deg) <= 5 and abs(p.tx_px) <= 5 and abs(p.ty_px) <= 5
    with pytest.raises(DimensionError):
        gen_drift_benchmark(lattice128, 5, 20, crop_size=96)
