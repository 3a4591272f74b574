import math

import numpy as np
import pytest
import torch

from stemdegrade.errors import DimensionError, FormatError, InvalidParameterError, TrainingDivergedError
from stemdegrade.imaging import AffineParams, build_affine_matrix, degrade_forward, warp
from stemdegrade.learned import (
    AffineDecayNet,
    LearnedEstimator,
    ModelConfig,
    TrainConfig,
    forward,
    load_model,
    predict,
    reconstruct_torch,
    save_model,
    train,
    warp_torch,
)
from stemdegrade.learned.training import Batch, SyntheticSource, batch_loss, cosine_lr
from stemdegrade.synth import SamplerRanges

TINY = ModelConfig(base_channels=2, depth=1, time_embed_dim=4, input_size=8, head_hidden=4)
SMALL = ModelConfig(base_channels=4, depth=2, time_embed_dim=8, input_size=32, head_hidden=16)
SMALL_RANGES = SamplerRanges(size=32)


def randomize_zero_layers(model, seed=0):
    """Zero-initialized output layers sit on the bilinear kink at the identity; move off it."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for layer in (model.out, model.head2):
            layer.weight.copy_(0.3 * torch.randn(layer.weight.shape, generator=g, dtype=layer.weight.dtype))
            layer.bias.copy_(0.3 * torch.randn(layer.bias.shape, generator=g, dtype=layer.bias.dtype))


def test_warp_torch_matches_numpy(rng):
    img = rng.random((2, 20, 24))
    params = np.array([[7.3, 1.7, -2.2], [-25.0, -4.1, 3.3]])
    out = warp_torch(torch.tensor(img), torch.tensor(params)).numpy()
    for b in range(2):
        ref = warp(img[b], build_affine_matrix(AffineParams(*params[b])))
        np.testing.assert_allclose(out[b], ref, atol=1e-12)


def test_reconstruct_torch_matches_forward_model(rng):
    x0 = rng.random((1, 16, 16))
    lam = rng.random((1, 16, 16))
    p = np.array([[3.0, 0.5, -1.25]])
    out = reconstruct_torch(torch.tensor(x0), torch.tensor(lam), torch.tensor(p)).numpy()[0]
    np.testing.assert_allclose(out, degrade_forward(x0[0], lam[0], AffineParams(*p[0])), atol=1e-12)


def test_full_pipeline_gradient_matches_fd():
    torch.manual_seed(0)
    model = AffineDecayNet(TINY, seed=0).double()
    randomize_zero_layers(model)
    g = torch.Generator().manual_seed(1)
    x0 = torch.rand(2, 8, 8, generator=g, dtype=torch.float64)
    xT = torch.rand(2, 8, 8, generator=g, dtype=torch.float64)
    xt = torch.rand(2, 8, 8, generator=g, dtype=torch.float64)
    batch = Batch(x0, xT, xt, torch.tensor([0.3, 0.8], dtype=torch.float64))

    loss = batch_loss(model, batch)
    model.zero_grad()
    loss.backward()
    params = list(model.parameters())
    analytic = torch.cat([p.grad.reshape(-1) for p in params]).numpy()

    h = 1e-6
    numeric = []
    with torch.no_grad():
        for p in params:
            flat = p.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = batch_loss(model, batch).item()
                flat[i] = orig - h
                down = batch_loss(model, batch).item()
                flat[i] = orig
                numeric.append((up - down) / (2 * h))
    numeric = np.array(numeric)
    rel = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)
    assert rel < 1e-3


def test_output_ranges_and_zero_init():
    model = AffineDecayNet(SMALL)
    x = torch.rand(3, 32, 32)
    decay, params = model(x, x, torch.tensor([0.1, 0.5, 1.0]))
    assert decay.shape == (3, 32, 32) and params.shape == (3, 3)
    # zero-initialized heads start at "no drift, half decay"
    assert torch.all(params == 0)
    assert torch.allclose(decay, torch.full_like(decay, 0.5))
    randomize_zero_layers(model)
    with torch.no_grad():
        model.head2.bias.fill_(50.0)
    decay, params = model(x, x, torch.tensor([0.1, 0.5, 1.0]))
    assert decay.min() >= 0 and decay.max() <= 1
    assert params[:, 0].abs().max() <= SMALL.theta_max_deg
    assert params[:, 1:].abs().max() <= SMALL.shift_max_px


def test_time_changes_output():
    model = AffineDecayNet(SMALL)
    randomize_zero_layers(model)
    x = torch.rand(1, 32, 32)
    a = model(x, x, torch.tensor([0.1]))[0]
    b = model(x, x, torch.tensor([0.9]))[0]
    assert not torch.allclose(a, b)


def test_bad_input_size():
    model = AffineDecayNet(SMALL)
    with pytest.raises(DimensionError):
        model(torch.rand(1, 30, 30), torch.rand(1, 30, 30), torch.tensor([0.5]))
    with pytest.raises(DimensionError):
        forward(model, np.ones((16, 16)), np.ones((16, 16)), 5, 10)
    with pytest.raises(InvalidParameterError):
        ModelConfig(input_size=30, depth=2)


def _small_train(**kw):
    cfg = dict(steps=4, batch_size=4, val_batches=1, val_every=2, lr=1e-3, ranges=SMALL_RANGES)
    cfg.update(kw)
    return train(TrainConfig(**cfg), SMALL)


def test_zero_lr_leaves_parameters_unchanged():
    ref = AffineDecayNet(SMALL, seed=0)
    res = _small_train(lr=0.0, weight_decay=0.0)
    for a, b in zip(ref.state_dict().values(), res.model.state_dict().values()):
        assert torch.equal(a, b)


def test_small_step_decreases_loss():
    torch.manual_seed(0)
    model = AffineDecayNet(SMALL, seed=0).double()
    randomize_zero_layers(model)
    batch = SyntheticSource(SMALL_RANGES, 0, torch.float64).batch(0, 4)
    opt = torch.optim.SGD(model.parameters(), lr=1e-6)
    before = batch_loss(model, batch)
    opt.zero_grad()
    before.backward()
    opt.step()
    assert batch_loss(model, batch).item() < before.item()


def test_adamw_step_decreases_loss():
    torch.manual_seed(0)
    model = AffineDecayNet(SMALL, seed=0).double()
    randomize_zero_layers(model)
    batch = SyntheticSource(SMALL_RANGES, 0, torch.float64).batch(0, 4)
    opt = torch.optim.AdamW(model.parameters(), lr=1e-6, weight_decay=0.0)
    before = batch_loss(model, batch)
    opt.zero_grad()
    before.backward()
    opt.step()
    assert batch_loss(model, batch).item() < before.item()


def test_training_is_deterministic():
    a = _small_train()
    b = _small_train()
    assert a.history == b.history
    for x, y in zip(a.model.state_dict().values(), b.model.state_dict().values()):
        assert torch.equal(x, y)
    assert len(a.history) == 4 and math.isnan(a.history[0]["val_loss"])
    assert not math.isnan(a.history[1]["val_loss"])


def test_divergence_detected():
    with pytest.raises(TrainingDivergedError):
        _small_train(lr=float("inf"), steps=3)


def test_cosine_schedule():
    assert cosine_lr(1.0, 0, 10) == 1.0
    assert cosine_lr(1.0, 5, 10) == pytest.approx(0.5)
    assert cosine_lr(1.0, 10, 10) == pytest.approx(0.0)


def test_checkpoint_round_trip(tmp_path):
    model = AffineDecayNet(SMALL, seed=3)
    randomize_zero_layers(model)
    p = tmp_path / "m.atdm"
    save_model(model, p)
    back = load_model(p)
    assert back.config == SMALL
    for x, y in zip(model.state_dict().values(), back.state_dict().values()):
        assert torch.equal(x, y)
    data = p.read_bytes()
    assert data.startswith(b"ATDM1\n")
    p.write_bytes(data[:-3])
    with pytest.raises(FormatError):
        load_model(p)
    p.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError) as e:
        load_model(p)
    assert e.value.offset == 0


def test_numpy_wrappers(lattice64):
    model = AffineDecayNet(ModelConfig())
    lam, aff = forward(model, lattice64, lattice64, 10, 10)
    assert lam.shape == (64, 64) and aff == AffineParams(0, 0, 0)
    est = predict(model, lattice64, lattice64, 10, 10)
    assert est.residual == pytest.approx(np.mean((0.5 * lattice64 - lattice64) ** 2), rel=1e-5)
    le = LearnedEstimator(model)
    assert le.supports_time
    assert le(lattice64, lattice64, 5, 10).affine == AffineParams(0, 0, 0)
