import csv
import dataclasses
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.metrics import structural_similarity

from mairkit.net import ModelConfig, build_model
from mairkit.train.ablation import (AXES, CSV_FIELDS, converged, default_run, rows_to_csv,
                                    run_ablation, variants)
from mairkit.train.data import DegradationSpec, box_downsample, degrade, synth_images
from mairkit.train.loop import TrainRun, train
from mairkit.train.metrics import PSNR_CAP, psnr, ssim
from mairkit.train.optim import AdamState, adam_step, cosine_lr

TINY_SR = ModelConfig(channels=4, n_groups=1, n_blocks=2, stripe_width=2, d_state=2,
                      head="sr", scale=2)
TINY_RESTORE = ModelConfig(channels=4, n_groups=1, n_blocks=2, stripe_width=2, d_state=2)


# --- data ---------------------------------------------------------------------

def test_synth_images_deterministic_and_in_range():
    a = synth_images(3, 24, 20, seed=5)
    assert a.shape == (3, 3, 24, 20) and a.dtype == np.float32
    np.testing.assert_array_equal(a, synth_images(3, 24, 20, seed=5))
    assert a.min() >= 0.0 and a.max() <= 1.0
    assert not np.array_equal(a, synth_images(3, 24, 20, seed=6))
    # textures, not flat fields
    assert all(img.std() > 0.01 for img in a)


def test_synth_images_size_floor():
    with pytest.raises(ValueError):
        synth_images(1, 8, 32, seed=0)


def test_degrade_zero_sigma_is_identity():
    clean = synth_images(1, 16, 16, seed=0)
    np.testing.assert_array_equal(degrade(clean, DegradationSpec(sigma=0.0)), clean)


def test_noise_std_matches_sigma():
    clean = synth_images(1, 64, 64, seed=1)[0]
    sigma = 25 / 255
    noisy = degrade(clean, DegradationSpec(sigma=sigma, seed=3))
    assert abs((noisy - clean).std() / sigma - 1) < 0.05


def test_noise_is_seeded():
    clean = synth_images(1, 16, 16, seed=1)
    a = degrade(clean, DegradationSpec(seed=3))
    np.testing.assert_array_equal(a, degrade(clean, DegradationSpec(seed=3)))
    assert not np.array_equal(a, degrade(clean, DegradationSpec(seed=4)))


def test_sr_degradation_box_average():
    clean = synth_images(1, 32, 32, seed=2)
    low = degrade(clean, DegradationSpec(task="sr", scale=2))
    assert low.shape == (1, 3, 16, 16)
    np.testing.assert_allclose(low[0, 1, 3, 5], clean[0, 1, 6:8, 10:12].mean(), rtol=1e-6)
    assert box_downsample(np.ones((3, 7, 9)), 3).shape == (3, 2, 3)


def test_degradation_validation():
    with pytest.raises(ValueError):
        DegradationSpec(task="blur")
    with pytest.raises(ValueError):
        DegradationSpec(sigma=-1)


# --- optimizer ----------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    p = {"w": np.array([1.0, -2.0])}
    new, state = adam_step(p, {"w": np.zeros(2)}, AdamState(), lr=0.1)
    np.testing.assert_array_equal(new["w"], p["w"])
    assert state.step == 1


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 1e3), st.floats(-1e3, -0.1), st.floats(1e-4, 1e-1))
def test_adam_first_step_is_lr_times_sign(gpos, gneg, lr):
    # the exact step is lr·g/(|g| + eps), within 1e-7 relative of lr·sign(g) for |g| >= 0.1
    p = {"w": np.zeros(3)}
    new, _ = adam_step(p, {"w": np.array([gpos, gneg, 0.0])}, AdamState(), lr=lr)
    np.testing.assert_allclose(new["w"], [-lr, lr, 0.0], rtol=1e-6, atol=1e-12)


def test_adam_matches_hand_update_over_steps():
    rng = np.random.default_rng(0)
    p = rng.standard_normal(4)
    m = v = np.zeros(4)
    params, state = {"w": p.copy()}, AdamState()
    for t in range(1, 6):
        g = rng.standard_normal(4)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        p = p - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        params, state = adam_step(params, {"w": g}, state, lr=0.01)
    np.testing.assert_allclose(params["w"], p, rtol=1e-12)


def test_adam_shape_error():
    with pytest.raises(ValueError, match="shape"):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState(), lr=0.1)


def test_cosine_schedule_endpoints():
    assert cosine_lr(1e-3, 0, 100) == pytest.approx(1e-3)
    assert cosine_lr(1e-3, 50, 100) == pytest.approx(5e-4)
    assert cosine_lr(1e-3, 100, 100) == pytest.approx(0.0)


# --- metrics ------------------------------------------------------------------

def test_psnr_examples():
    a = np.random.default_rng(0).random((3, 8, 8))
    assert psnr(a, a) == PSNR_CAP
    assert psnr(np.zeros((4, 4)), np.full((4, 4), 0.25)) == pytest.approx(12.0412, abs=1e-4)
    b = np.full((4, 4), 0.25)
    assert psnr(np.zeros((4, 4)), b) == psnr(np.full((4, 4), 0.5), b)
    with pytest.raises(ValueError):
        psnr(np.zeros(3), np.zeros(4))


@pytest.mark.parametrize("shape", [(3, 32, 32), (1, 17, 23)])
def test_ssim_matches_skimage(shape):
    rng = np.random.default_rng(1)
    a = rng.random(shape)
    b = np.clip(a + 0.1 * rng.standard_normal(shape), 0, 1)
    ref = structural_similarity(a, b, channel_axis=0, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False, data_range=1.0)
    assert abs(ssim(a, b) - ref) < 1e-9


def test_ssim_symmetric_and_identity():
    rng = np.random.default_rng(2)
    a, b = rng.random((2, 3, 16, 16))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert ssim(a, b) < 1.0


# --- training loop ------------------------------------------------------------

def tiny_run(**kw):
    base = dict(model=TINY_RESTORE, steps=4, patch=16, train_images=4, val_images=2,
                eval_every=2, seed=1)
    base.update(kw)
    return TrainRun(**base)


def test_train_run_validation():
    with pytest.raises(ValueError, match="head"):
        TrainRun(model=TINY_SR)
    with pytest.raises(ValueError, match="scale"):
        TrainRun(model=TINY_SR, degradation=DegradationSpec(task="sr", scale=3))
    with pytest.raises(ValueError):
        tiny_run(schedule="step")


def test_train_run_dict_round_trip():
    run = tiny_run(schedule="cosine")
    assert TrainRun.from_dict(run.manifest()) == run
    with pytest.raises(ValueError, match="unknown config keys"):
        TrainRun.from_dict({"model": {"width": 3}})


def test_short_training_is_deterministic():
    a = train(tiny_run())
    b = train(tiny_run())
    assert a.log == b.log
    assert [e["step"] for e in a.log] == [0, 1, 2, 3]
    assert "val_psnr" in a.log[1] and "val_psnr" not in a.log[0]
    assert np.isfinite(a.val_psnr) and 0 < a.val_ssim <= 1


def test_training_changes_parameters():
    run = tiny_run(steps=2)
    result = train(run)
    before = build_model(run.model).state_dict()
    after = result.model.state_dict()
    assert any(not np.array_equal(before[k], after[k]) for k in before)


# --- ablation -----------------------------------------------------------------

def test_converged_rule():
    assert converged(list(np.linspace(1.0, 0.5, 20)))
    assert not converged([1.0] * 20)
    assert not converged([1.0, 0.5])
    assert not converged([1.0] * 19 + [float("nan")])


def test_variant_tables():
    assert len(variants("scan_strategy")) == 6
    assert len(variants("aggregation")) == 6
    with pytest.raises(ValueError, match="axis"):
        variants("depth")
    assert AXES == ("scan_strategy", "aggregation", "stripe_width")


def test_variant_parameter_budgets():
    base = default_run(1).model
    ssa = build_model(base).num_parameters()
    for axis in AXES:
        for name, o in variants(axis).items():
            n = build_model(dataclasses.replace(base, **o)).num_parameters()
            assert abs(n - ssa) <= 0.05 * ssa, (axis, name, n)
    # plain sum drops exactly the SSA group maps: D·K² + D·K per module, D = 32 inner channels
    add = build_model(dataclasses.replace(base, aggregation="add")).num_parameters()
    assert ssa - add == 4 * (32 * 16 + 32 * 4)


def test_ablation_rows_and_csv():
    base = TrainRun(model=TINY_SR, degradation=DegradationSpec(task="sr", scale=2), patch=16,
                    train_images=4, val_images=2, seed=2)
    rows = run_ablation("scan_strategy", 3, base)
    assert [r.variant for r in rows] == list(variants("scan_strategy"))
    assert len({r.params for r in rows}) == 1
    assert all(r.steps == 3 and r.status in ("converged", "non-converged") for r in rows)
    parsed = list(csv.reader(io.StringIO(rows_to_csv(rows))))
    assert tuple(parsed[0]) == CSV_FIELDS
    assert len(parsed) == 7
    assert all(len(line) == len(CSV_FIELDS) for line in parsed)
