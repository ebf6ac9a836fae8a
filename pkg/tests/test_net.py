import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mairkit import tensor as T
from mairkit.net import (ModelConfig, build_model, forward_restore, forward_sr, load_model,
                         loss_charbonnier, loss_l1, model_bytes, model_from_bytes, save_model)
from mairkit.tensor import Tensor

SMALL = dict(channels=4, n_groups=1, n_blocks=2, stripe_width=2, d_state=2)


def expected_params(C=16, G=2, B=2, E=2, N=8, in_ch=3, head="restore", scale=2):
    """Parameter count added up layer by layer."""
    conv = lambda ci, co, k=3: ci * co * k * k + co
    I = E * C
    R = max(1, I // 16)
    ssm = 4 * (I * N + I + (R + 2 * N) * I + I * R + I)
    ssa = I * 16 + I * 4
    vmm = 2 * C + 2 * I * C + (9 * I + I) + ssm + ssa + 2 * I + C * I + C
    rmb = vmm + conv(C, C)
    rmg = B * rmb + conv(C, C)
    total = conv(in_ch, C) + G * rmg + conv(C, C) + conv(C, in_ch)
    if head == "sr":
        total += conv(C, C * scale * scale)
    return total


def zeroed(model, names=None):
    for name, p in list(model.named_parameters()):
        if names is None or name in names:
            model.set_parameter(name, Tensor(np.zeros(p.shape, dtype=p.dtype)))
    return model


def image(seed, shape=(3, 8, 8)):
    return Tensor(np.random.default_rng(seed).random(shape).astype(np.float32))


# --- structure ----------------------------------------------------------------

@pytest.mark.parametrize("kw", [
    {},
    dict(head="sr", scale=2),
    dict(channels=8, n_groups=1, n_blocks=3, d_state=4, head="sr", scale=3),
    dict(channels=32, expansion=1, in_channels=1),
])
def test_parameter_count_closed_form(kw):
    cfg = ModelConfig(**kw)
    args = dict(C=cfg.channels, G=cfg.n_groups, B=cfg.n_blocks, E=cfg.expansion, N=cfg.d_state,
                in_ch=cfg.in_channels, head=cfg.head, scale=cfg.scale)
    assert build_model(cfg).num_parameters() == expected_params(**args)


def test_default_counts():
    assert build_model(ModelConfig()).num_parameters() == 42915
    assert build_model(ModelConfig(head="sr")).num_parameters() == 52195


def test_shift_alternates_within_groups():
    model = build_model(ModelConfig(n_groups=2, n_blocks=3))
    for g in model.groups:
        assert [b.shifted for b in g.blocks] == [False, True, False]
        assert [b.vmm.mairm.cfg.scan_spec.shifted for b in g.blocks] == [False, True, False]
    no_shift = build_model(ModelConfig(n_blocks=2, shift=False))
    assert not any(b.shifted for g in no_shift.groups for b in g.blocks)


def test_config_validation():
    with pytest.raises(ValueError, match="unknown config keys"):
        ModelConfig.from_dict({"channels": 4, "colour": 1})
    with pytest.raises(ValueError):
        ModelConfig(head="deblur")
    with pytest.raises(ValueError):
        ModelConfig(head="sr", scale=5)
    with pytest.raises(ValueError):
        ModelConfig(stripe_width=3)   # shifted stripes need an even width
    ModelConfig(stripe_width=3, shift=False)
    assert ModelConfig.from_dict(ModelConfig(channels=5).to_dict()) == ModelConfig(channels=5)


# --- residual identities ------------------------------------------------------

def test_zero_body_gives_deep_equal_shallow():
    model = build_model(ModelConfig(**SMALL))
    zeroed(model, set(model.body_parameter_names()))
    feats = model.extract(image(0))
    np.testing.assert_array_equal(feats["F_D"].tensor.data, feats["F_S"].tensor.data)


def test_all_zero_model_restores_identity_exactly():
    model = zeroed(build_model(ModelConfig(**SMALL)))
    x = image(1)
    np.testing.assert_array_equal(forward_restore(model, x).data, x.data)


def test_sr_output_shape():
    for r in (2, 3, 4):
        model = build_model(ModelConfig(**SMALL, head="sr", scale=r))
        y = forward_sr(model, image(2, (3, 6, 5)))
        assert y.shape == (3, 6 * r, 5 * r)


def test_heads_reject_wrong_model():
    with pytest.raises(ValueError, match="SR head"):
        forward_sr(build_model(ModelConfig(**SMALL)), image(0))
    with pytest.raises(ValueError, match="restore head"):
        forward_restore(build_model(ModelConfig(**SMALL, head="sr")), image(0))
    with pytest.raises(ValueError, match="channels"):
        build_model(ModelConfig(**SMALL))(image(0, (1, 8, 8)))


def test_model_is_not_linear():
    model = build_model(ModelConfig(**SMALL))
    x = image(3)
    y1 = forward_restore(model, x).data
    y2 = forward_restore(model, Tensor(2 * x.data)).data
    assert np.abs(y2 - 2 * y1).max() > 1e-4


def test_receptive_field_spans_the_image():
    # two 3x3 convs alone reach 2 pixels; the scans must carry a corner change across
    model = build_model(ModelConfig(**SMALL)).astype(np.float64)
    x = Tensor(image(4, (3, 12, 12)).data.astype(np.float64))
    bumped = x.data.copy()
    bumped[:, 0, 0] += 1.0
    delta = np.abs(forward_restore(model, Tensor(bumped)).data - forward_restore(model, x).data)
    assert delta[:, -1, -1].max() > 0
    assert (delta.max(axis=0) > 0).all()


def test_batched_forward():
    model = build_model(ModelConfig(**SMALL))
    xs = np.stack([image(5).data, image(6).data])
    yb = model(Tensor(xs)).data
    np.testing.assert_allclose(yb[1], model(image(6)).data, rtol=1e-5, atol=1e-6)


# --- losses -------------------------------------------------------------------

def test_l1_examples():
    assert loss_l1(Tensor(np.ones((2, 2))), np.ones((2, 2))).item() == 0.0
    assert loss_l1(Tensor(np.zeros((2, 2))), np.full((2, 2), 0.5)).item() == 0.5


def test_l1_matches_loop():
    rng = np.random.default_rng(7)
    a, b = rng.standard_normal((2, 3, 4, 5))
    total = sum(abs(float(a.flat[i]) - float(b.flat[i])) for i in range(a.size))
    assert abs(loss_l1(Tensor(a), b).item() - total / a.size) < 1e-12


def test_charbonnier_examples():
    x = Tensor(np.zeros((4, 4)))
    assert loss_charbonnier(x, np.zeros((4, 4))).item() == 1e-3
    assert abs(loss_charbonnier(x, np.ones((4, 4))).item() - np.sqrt(1 + 1e-6)) < 1e-12
    with pytest.raises(ValueError):
        loss_charbonnier(x, np.zeros((4, 4)), eps=0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_charbonnier_bounds_l1(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 3, 5))
    l1 = loss_l1(Tensor(a), b).item()
    assert loss_charbonnier(Tensor(a), b).item() >= l1
    assert abs(loss_charbonnier(Tensor(a), b, eps=1e-8).item() - l1) <= 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_losses_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 24))
    p = rng.permutation(24)
    for fn in (loss_l1, loss_charbonnier):
        assert abs(fn(Tensor(a), b).item() - fn(Tensor(a[p]), b[p]).item()) < 1e-12


def test_loss_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        loss_l1(Tensor(np.zeros((2, 2))), np.zeros((2, 3)))


def test_loss_gradient_of_l1():
    a = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    with T.Tape() as tape:
        loss = loss_l1(a, np.zeros(3))
    np.testing.assert_allclose(T.backward(tape, loss)[a], [1 / 3, -1 / 3, 1 / 3])


# --- serialization ------------------------------------------------------------

@pytest.mark.parametrize("kw", [SMALL, dict(SMALL, head="sr", scale=3)])
def test_save_load_round_trip(tmp_path, kw):
    model = build_model(ModelConfig(**kw, seed=11))
    path = tmp_path / "m.mair"
    save_model(model, path)
    loaded = load_model(path)
    assert model_bytes(loaded) == path.read_bytes()
    x = image(8)
    np.testing.assert_array_equal(loaded(x).data, model(x).data)


def test_bytes_are_deterministic():
    a = model_bytes(build_model(ModelConfig(**SMALL, seed=3)))
    b = model_bytes(build_model(ModelConfig(**SMALL, seed=3)))
    assert a == b
    assert a != model_bytes(build_model(ModelConfig(**SMALL, seed=4)))


def test_rejects_foreign_file():
    blob = model_bytes(build_model(ModelConfig(**SMALL)))
    with pytest.raises(ValueError):
        model_from_bytes(blob.replace(b"mairkit-model", b"otherkit-mod"))
