"""Encoders, predictor, objectives and the joint pre-training step."""

import math

import numpy as np
import pytest
import torch

from conftest import tiny_config

from echoworld.config import ExperimentConfig
from echoworld.pose_algebra import Pose
from echoworld.world_model import (
    MaskSpec,
    MotionEncoder,
    Predictor,
    VisionEncoder,
    block_mask,
    build_state,
    denormalize_movement,
    ema_decay_at,
    ema_update,
    encode_context,
    encode_target,
    info_nce,
    joint_step,
    lr_at,
    normalize_movement,
    spatial_loss,
)


@pytest.fixture()
def cfg():
    return tiny_config()


@pytest.fixture()
def mask(rng):
    return block_mask(4, 4, rng)


def rand_images(cfg, b=3, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(b, 1, cfg.encoder.image_size, cfg.encoder.image_size, generator=g)


# ---------------------------------------------------------------------------
# context / target encoders


def test_encode_context_token_count(cfg, mask):
    torch.manual_seed(0)
    enc = VisionEncoder(cfg.encoder)
    out = encode_context(enc, rand_images(cfg), mask)
    assert out.shape == (3, mask.n_visible, cfg.encoder.embed_dim)


def test_encode_context_ignores_masked_pixels(cfg, mask):
    """Masked patches are removed before encoding, so their pixels are inert."""
    torch.manual_seed(0)
    enc = VisionEncoder(cfg.encoder)
    images = rand_images(cfg)
    out1 = encode_context(enc, images, mask)
    corrupted = images.clone()
    patch = cfg.encoder.patch_size
    cell = mask.masked[0]
    row, col = divmod(cell, enc.grid)
    corrupted[:, :, row * patch : (row + 1) * patch, col * patch : (col + 1) * patch] = 0.77
    out2 = encode_context(enc, corrupted, mask)
    assert torch.equal(out1, out2)


def test_encode_context_empty_mask_equals_full_encoding(cfg):
    torch.manual_seed(0)
    enc = VisionEncoder(cfg.encoder)
    images = rand_images(cfg)
    empty = MaskSpec.from_masked(4, 4, [])
    assert torch.equal(encode_context(enc, images, empty), enc(images))


def test_encode_target_full_grid_and_no_grad(cfg):
    torch.manual_seed(0)
    enc = VisionEncoder(cfg.encoder)
    out = encode_target(enc, rand_images(cfg))
    assert out.shape[1] == enc.num_patches
    assert not out.requires_grad


def test_target_equals_context_when_weights_equal(cfg):
    torch.manual_seed(0)
    ctx = VisionEncoder(cfg.encoder)
    tgt = VisionEncoder(cfg.encoder)
    tgt.load_state_dict(ctx.state_dict())
    images = rand_images(cfg)
    with torch.no_grad():
        full_ctx = ctx(images)
    assert torch.equal(encode_target(tgt, images), full_ctx)


def test_no_gradient_through_target_encoder(cfg, mask, rng):
    state = build_state(cfg, seed=0, total_steps=10)
    images = rand_images(cfg)
    movements = torch.from_numpy(rng.uniform(-30, 30, (3, 6))).float()
    joint_step(state, images, movements, images, mask=mask)
    for p in state.target_encoder.parameters():
        assert p.grad is None
    for p in state.projector_ema.parameters():
        assert p.grad is None


# ---------------------------------------------------------------------------
# EMA schedule


def test_ema_decay_endpoints():
    assert ema_decay_at(0, 1000) == pytest.approx(0.996, abs=1e-9)
    assert ema_decay_at(1000, 1000) == pytest.approx(1.0, abs=1e-9)


def test_ema_decay_monotone():
    values = [ema_decay_at(s, 500) for s in range(501)]
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_ema_update_rule(cfg):
    torch.manual_seed(0)
    online = VisionEncoder(cfg.encoder)
    target = VisionEncoder(cfg.encoder)
    before = [p.clone() for p in target.parameters()]
    ema_update(online, target, 0.9)
    for b, o, t in zip(before, online.parameters(), target.parameters()):
        assert torch.allclose(t, 0.9 * b + 0.1 * o, atol=1e-7)


# ---------------------------------------------------------------------------
# predictor


def test_predict_spatial_output_count(cfg, mask):
    torch.manual_seed(0)
    enc = VisionEncoder(cfg.encoder)
    pred = Predictor(cfg.encoder)
    h = encode_context(enc, rand_images(cfg), mask)
    out = pred.predict_spatial(h, mask)
    assert out.shape == (3, mask.n_masked, cfg.encoder.embed_dim)


def test_predict_spatial_position_not_order(cfg):
    """Swapping which cell is listed first permutes outputs identically.

    The position information lives in the added encodings, not in token
    order; attention's internal summation order may shift last bits.
    """
    torch.manual_seed(0)
    enc = VisionEncoder(cfg.encoder)
    pred = Predictor(cfg.encoder)
    images = rand_images(cfg, b=2)
    for cells, perm in (
        ((1, 6, 11), (2, 0, 1)),
        ((0, 3, 12, 15), (3, 2, 1, 0)),
        ((2, 5), (1, 0)),
    ):
        visible = tuple(i for i in range(16) if i not in cells)
        m1 = MaskSpec(4, 4, masked=cells, visible=visible)
        h = encode_context(enc, images, m1)
        out1 = pred.predict_spatial(h, m1)
        m2 = MaskSpec(4, 4, masked=tuple(cells[i] for i in perm), visible=visible)
        out2 = pred.predict_spatial(h, m2)
        assert torch.allclose(out2, out1[:, perm, :], atol=1e-6)


def test_predict_motion_shape_and_sensitivity(cfg, mask, rng):
    torch.manual_seed(0)
    enc = VisionEncoder(cfg.encoder)
    pred = Predictor(cfg.encoder)
    h = encode_context(enc, rand_images(cfg), mask)
    z = torch.randn(3, cfg.encoder.embed_dim)
    out = pred.predict_motion(h, mask.visible, z)
    assert out.shape == (3, cfg.encoder.embed_dim)
    out2 = pred.predict_motion(h, mask.visible, z + 0.1)
    assert (out - out2).abs().max() > 0


def test_predictor_residual_identity(cfg, mask):
    """Zeroed block weights leave the motion slot equal to its input token."""
    torch.manual_seed(0)
    enc = VisionEncoder(cfg.encoder)
    pred = Predictor(cfg.encoder)
    with torch.no_grad():
        for name, p in pred.named_parameters():
            if "mask_token" not in name:
                p.zero_()
    h = encode_context(enc, rand_images(cfg), mask)
    z = torch.randn(3, cfg.encoder.embed_dim)
    out = pred.predict_motion(h, mask.visible, z)
    want = (pred.mask_token.squeeze(0) + z).detach()
    assert torch.allclose(out, want, atol=1e-6)


# ---------------------------------------------------------------------------
# losses


def test_spatial_loss_zero_when_equal():
    x = torch.randn(2, 5, 8)
    assert float(spatial_loss(x, x)) == 0.0


def test_spatial_loss_scalar_oracle():
    # one cell, dim 4, all diffs = 2: smoothed-L1 per dim = 2 - 0.5 = 1.5
    pred = torch.full((1, 1, 4), 2.0)
    target = torch.zeros(1, 1, 4)
    assert float(spatial_loss(pred, target)) == pytest.approx(6.0)


def test_spatial_loss_quadratic_region():
    pred = torch.full((1, 1, 1), 0.5)
    target = torch.zeros(1, 1, 1)
    assert float(spatial_loss(pred, target)) == pytest.approx(0.5 * 0.25)


def test_spatial_loss_rejects_mismatch():
    with pytest.raises(ValueError):
        spatial_loss(torch.zeros(1, 2, 3), torch.zeros(1, 3, 3))


def test_info_nce_single_sample_exact_zero():
    assert float(info_nce(torch.randn(1, 8), torch.randn(1, 8), 0.1)) == 0.0


def test_info_nce_two_sample_oracle():
    e = torch.eye(2)
    want = -math.log(math.exp(10.0) / (math.exp(10.0) + 1.0))
    got = float(info_nce(e, e, 0.1))
    assert got == pytest.approx(want, rel=0.01)
    assert got == pytest.approx(4.54e-5, rel=0.01)


def test_info_nce_nonnegative_and_symmetrized(rng):
    p = torch.from_numpy(rng.standard_normal((16, 8))).float()
    t = torch.from_numpy(rng.standard_normal((16, 8))).float()
    assert float(info_nce(p, t, 0.1)) >= 0.0
    assert float(info_nce(p, t, 0.1, symmetrize=True)) >= 0.0


def test_info_nce_random_init_near_log_b(rng):
    """At initialization the motion loss sits near log B (uniform softmax)."""
    cfg = tiny_config()
    state = build_state(cfg, seed=0, total_steps=100)
    images_a = rand_images(cfg, b=64, seed=1)
    images_b = rand_images(cfg, b=64, seed=2)
    movements = torch.from_numpy(rng.uniform(-30, 30, (64, 6))).float()
    mask = block_mask(4, 4, np.random.default_rng(0))
    logged = joint_step(state, images_a, movements, images_b, mask=mask)
    assert abs(logged["l_motion"] - math.log(64)) / math.log(64) < 0.2


# ---------------------------------------------------------------------------
# motion encoder and normalization


def test_normalize_roundtrip(rng):
    v = rng.uniform(-150, 150, (20, 6))
    back = denormalize_movement(normalize_movement(v))
    assert np.allclose(back, v, atol=1e-9)


def test_motion_encoder_deterministic_and_finite():
    torch.manual_seed(0)
    enc = MotionEncoder(out_dim=16, hidden=32)
    p = torch.tensor([[10.0, -5.0, 3.0, 45.0, -20.0, 90.0]])
    assert torch.equal(enc.encode_raw(p), enc.encode_raw(p))
    # extremes of the normalization box stay finite
    corners = torch.tensor(
        [[sx * 100.0, sy * 100.0, sz * 100.0, sa * 180.0, sb * 180.0, sc * 180.0]
         for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)
         for sa in (-1, 1) for sb in (-1, 1) for sc in (-1, 1)]
    )
    out = enc.encode_raw(corners)
    assert torch.isfinite(out).all()


def test_motion_encoder_identity_is_well_defined():
    torch.manual_seed(0)
    enc = MotionEncoder(out_dim=16, hidden=32)
    z0 = enc.encode_raw(torch.from_numpy(Pose.identity().to_vector()).float().unsqueeze(0))
    assert z0.shape == (1, 16)
    assert torch.isfinite(z0).all()


# ---------------------------------------------------------------------------
# joint step


def test_joint_step_total_is_weighted_sum(cfg, mask, rng):
    state = build_state(cfg, seed=0, total_steps=100)
    images = rand_images(cfg)
    movements = torch.from_numpy(rng.uniform(-30, 30, (3, 6))).float()
    logged = joint_step(state, images, movements, images, mask=mask)
    lam = cfg.pretrain.lambda_motion
    assert logged["l_total"] == pytest.approx(
        logged["l_spatial"] + lam * logged["l_motion"], rel=1e-6
    )


def test_joint_step_lambda_zero_is_pure_spatial(cfg, mask, rng):
    cfg.pretrain.lambda_motion = 0.0
    state = build_state(cfg, seed=0, total_steps=100)
    images = rand_images(cfg)
    movements = torch.from_numpy(rng.uniform(-30, 30, (3, 6))).float()
    joint_step(state, images, movements, images, mask=mask)
    # motion gradient is exactly zero: the motion encoder receives none
    for p in state.motion_encoder.parameters():
        assert p.grad is None or torch.all(p.grad == 0)


def test_single_step_descends_on_fixed_batch(cfg, rng):
    cfg.pretrain.lr = 1e-4
    cfg.pretrain.warmup_epochs = 0
    state = build_state(cfg, seed=0, total_steps=2)
    state.step = 1  # past warmup; fixed lr from the cosine tail
    images = rand_images(cfg, b=8, seed=3)
    images_b = rand_images(cfg, b=8, seed=4)
    movements = torch.from_numpy(rng.uniform(-30, 30, (8, 6))).float()
    mask = block_mask(4, 4, np.random.default_rng(0))
    first = joint_step(state, images, movements, images_b, mask=mask, apply_ema=False)
    state.step = 1
    second = joint_step(state, images, movements, images_b, mask=mask, apply_ema=False)
    assert second["l_total"] < first["l_total"]


def test_lr_schedule_endpoints():
    assert lr_at(0, 100, 1e-3, warmup_steps=10) == 0.0
    assert lr_at(10, 100, 1e-3, warmup_steps=10) == pytest.approx(1e-3)
    assert lr_at(100, 100, 1e-3, warmup_steps=10) == pytest.approx(0.0, abs=1e-12)
