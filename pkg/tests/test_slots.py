import numpy as np
import pytest
import torch

from ocgvf.slots import (
    SlotAttention,
    SlotAutoencoder,
    SlotConfig,
    SlotTrainer,
    reconstruction_loss,
    slot_learning_rate,
)


def model(resolution=32, num_slots=5, init_mode="learned", seed=0):
    torch.manual_seed(seed)
    return SlotAutoencoder(SlotConfig(num_slots=num_slots, resolution=resolution, init_mode=init_mode))


def test_encoder_output_shape():
    m = model()
    feats = m.encode(torch.rand(2, 32, 32, 3))
    assert feats.shape == (2, 1024, 64)
    with pytest.raises(ValueError):
        m.encode(torch.rand(2, 64, 64, 3))


def test_zero_image_features_translation_invariant():
    m = model()
    with torch.no_grad():
        m.encoder.pos.proj.weight.zero_()
        m.encoder.pos.proj.bias.zero_()
        feats = m.encode(torch.zeros(1, 32, 32, 3)).reshape(32, 32, 64)
    # three same-padded 3x3 convs: positions at least 3 away from the border see no padding
    interior = feats[3:-3, 3:-3].reshape(-1, 64)
    assert torch.allclose(interior, interior[0].expand_as(interior), atol=1e-6)


def test_single_pixel_change_stays_in_receptive_field():
    m = model()
    a = torch.rand(1, 32, 32, 3, generator=torch.Generator().manual_seed(0))
    b = a.clone()
    b[0, 10, 20] += 0.5
    with torch.no_grad():
        diff = (m.encode(a) - m.encode(b)).abs().sum(-1).reshape(32, 32)
    rows, cols = torch.nonzero(diff > 0, as_tuple=True)
    assert len(rows) > 0
    assert (rows - 10).abs().max() <= 3 and (cols - 20).abs().max() <= 3


@pytest.mark.parametrize("resolution", [32, 64])
def test_decoder_output_size_and_mask_normalisation(resolution):
    m = model(resolution)
    out = m(torch.rand(2, resolution, resolution, 3))
    assert out.recon.shape == (2, resolution, resolution, 3)
    assert out.masks.shape == (2, 5, resolution, resolution)
    assert out.per_slot_rgb.shape == (2, 5, resolution, resolution, 3)
    assert torch.allclose(out.masks.sum(1), torch.ones(2, resolution, resolution), atol=1e-5)
    combined = (out.masks.unsqueeze(-1) * out.per_slot_rgb).sum(1)
    assert torch.allclose(out.recon, combined, atol=1e-6)


def test_single_slot_mask_is_one():
    m = model(num_slots=1)
    out = m(torch.rand(1, 32, 32, 3))
    assert torch.equal(out.masks, torch.ones_like(out.masks))
    assert torch.allclose(out.recon, out.per_slot_rgb[:, 0])


def test_identical_init_slots_stay_identical():
    torch.manual_seed(1)
    attn = SlotAttention(4, 16, 8, iters=3)
    inputs = torch.randn(2, 50, 8)
    init = torch.randn(2, 1, 16).expand(-1, 4, -1)
    slots = attn(inputs, init)
    assert torch.allclose(slots, slots[:, :1].expand_as(slots), atol=1e-6)


def test_permutation_equivariance_random_init():
    m = model(init_mode="random")
    g = torch.Generator().manual_seed(3)
    obs = torch.rand(1, 32, 32, 3, generator=g)
    init = m.attention.initial_slots(1, generator=g)
    perm = torch.tensor([3, 0, 4, 1, 2])
    with torch.no_grad():
        a = m.slots(obs, init)
        b = m.slots(obs, init[:, perm])
    assert torch.allclose(a[:, perm], b, atol=1e-5)
    matched = torch.cdist(b[0], a[0]).argmin(dim=1)
    assert torch.equal(matched, perm)


def test_learned_init_is_deterministic():
    m = model()
    obs = torch.rand(3, 32, 32, 3)
    with torch.no_grad():
        assert torch.equal(m.slots(obs), m.slots(obs))


def test_learning_rate_schedule():
    assert slot_learning_rate(0) == 0.0
    assert slot_learning_rate(5000) == pytest.approx(0.0002)
    assert slot_learning_rate(10_000) == pytest.approx(0.0004)
    assert slot_learning_rate(110_000) == pytest.approx(0.0002)
    assert slot_learning_rate(210_000) == pytest.approx(0.0001)


def test_trainer_steps_and_freezes():
    m = model()
    trainer = SlotTrainer(m, warmup_steps=2, num_train_steps=3)
    obs = torch.rand(4, 32, 32, 3)
    before = {k: v.clone() for k, v in m.state_dict().items()}
    first = trainer.train_step(obs)  # lr 0: parameters unchanged
    assert first == pytest.approx(float(reconstruction_loss(m, obs).detach()))
    assert all(torch.equal(before[k], v) for k, v in m.state_dict().items())
    assert trainer.train_step(obs) is not None
    assert trainer.train_step(obs) is not None
    assert trainer.finished and trainer.train_step(obs) is None
    frozen = {k: v.clone() for k, v in m.state_dict().items()}
    trainer.train_step(obs)
    assert all(torch.equal(frozen[k], v) for k, v in m.state_dict().items())


def test_trainer_reduces_loss_on_fixed_batch():
    m = model()
    trainer = SlotTrainer(m, base_lr=1e-3, warmup_steps=1, num_train_steps=10_000)
    obs = torch.rand(2, 32, 32, 3, generator=torch.Generator().manual_seed(0))
    losses = [trainer.train_step(obs) for _ in range(40)]
    assert losses[-1] < losses[1]


def test_trainer_state_roundtrip():
    m = model()
    trainer = SlotTrainer(m, warmup_steps=1)
    obs = torch.rand(2, 32, 32, 3)
    trainer.train_step(obs)
    trainer.train_step(obs)
    clone = SlotTrainer(model(seed=5), warmup_steps=1)
    clone.load_state_dict(trainer.state_dict())
    assert clone.step_count == 2
    assert trainer.train_step(obs) == clone.train_step(obs)


def test_config_validation():
    with pytest.raises(ValueError):
        SlotConfig(num_slots=0)
    with pytest.raises(ValueError):
        SlotConfig(resolution=48)
    with pytest.raises(ValueError):
        SlotConfig(init_mode="gaussian")


def test_mask_normalisation_random_parameters():
    rng = np.random.default_rng(0)
    for trial in range(5):
        m = model(seed=trial)
        with torch.no_grad():
            for p in m.decoder.parameters():
                p.mul_(float(rng.uniform(0.5, 5.0)))
            out = m(torch.rand(1, 32, 32, 3))
        assert torch.allclose(out.masks.sum(1), torch.ones(1, 32, 32), atol=1e-5)
