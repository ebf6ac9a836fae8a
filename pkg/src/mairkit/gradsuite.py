"""Finite-difference gradient suites per module, at 64-bit precision on tiny shapes."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .gradcheck import GradCheckResult, check_gradients
from .mairm import MaIRM, MaIRMConfig, VMM
from .net import ModelConfig, build_model
from .ssa import SSA, ssa_aggregate
from .ssm import SSMParams, s6_forward, selective_scan
from .tensor import Tensor

F64 = np.float64


def _leaf(rng, shape, low=None, high=None) -> Tensor:
    if low is None:
        arr = rng.standard_normal(shape)
    else:
        arr = rng.uniform(low, high, size=shape)
    return Tensor(arr.astype(F64), requires_grad=True)


def _probe(rng, out_shape) -> np.ndarray:
    return rng.standard_normal(out_shape)


def _weighted(fn: Callable[[], Tensor], rng) -> Callable[[], Tensor]:
    """Scalarize fn() with a fixed random projection so every output entry matters."""
    probe = {}

    def loss():
        y = fn()
        if "w" not in probe:
            probe["w"] = Tensor(_probe(rng, y.shape))
        return T.tsum(y * probe["w"])

    return loss


def _check(fn, inputs, seed, rng, max_coords=None, prefix="", step=1e-5):
    res = check_gradients(_weighted(fn, rng), inputs, max_coords=max_coords, seed=seed,
                          step=step)
    for r in res:
        r.name = prefix + r.name
    return res


def tensor_ops_suite(seed: int) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    out: list[GradCheckResult] = []
    a = _leaf(rng, (3, 4))
    b = _leaf(rng, (1, 4))
    pos = _leaf(rng, (3, 4), 0.5, 2.0)
    away = Tensor(rng.choice([-1, 1], size=(3, 4)) * rng.uniform(0.5, 2, (3, 4)), requires_grad=True)
    cases = {
        "add": (lambda: a + b, {"a": a, "b": b}),
        "sub": (lambda: a - b, {"a": a, "b": b}),
        "mul": (lambda: a * b, {"a": a, "b": b}),
        "div": (lambda: a / pos, {"a": a, "pos": pos}),
        "exp": (lambda: T.exp(a), {"a": a}),
        "log": (lambda: T.log(pos), {"pos": pos}),
        "sqrt": (lambda: T.sqrt(pos), {"pos": pos}),
        "abs": (lambda: T.tabs(away), {"away": away}),
        "hypot": (lambda: T.hypot(a, pos), {"a": a, "pos": pos}),
        "square": (lambda: T.square(a), {"a": a}),
        "sigmoid": (lambda: T.sigmoid(a), {"a": a}),
        "silu": (lambda: T.silu(a), {"a": a}),
        "softplus": (lambda: T.softplus(a), {"a": a}),
        "softmax": (lambda: T.softmax(a, axis=0), {"a": a}),
        "sum": (lambda: T.tsum(a * a, axis=1, keepdims=True), {"a": a}),
        "mean": (lambda: T.mean(a * a, axis=0), {"a": a}),
        "transpose": (lambda: T.transpose(a) * T.transpose(a), {"a": a}),
        "take": (lambda: T.take(a * a, [2, 0, 1, 2], axis=0), {"a": a}),
        "concat": (lambda: T.concat([a, b * b], axis=0), {"a": a, "b": b}),
        "stack": (lambda: T.stack([a, a * a], axis=1), {"a": a}),
        "getitem": (lambda: (a * a)[1:, ::2], {"a": a}),
    }
    m = _leaf(rng, (2, 3, 4))
    n = _leaf(rng, (4, 5))
    cases["matmul"] = (lambda: T.matmul(m, n), {"m": m, "n": n})
    e1 = _leaf(rng, (2, 3))
    e2 = _leaf(rng, (4, 3, 5))
    cases["einsum"] = (lambda: T.einsum("ij,kjl->kil", e1, e2), {"e1": e1, "e2": e2})
    x = _leaf(rng, (2, 4, 5, 5))
    g = _leaf(rng, (4,), 0.5, 1.5)
    be = _leaf(rng, (4,))
    cases["layer_norm"] = (lambda: T.layer_norm(x, g, be, axis=1), {"x": x, "gamma": g, "beta": be})
    w = _leaf(rng, (3, 4, 3, 3))
    bias = _leaf(rng, (3,))
    cases["conv2d"] = (lambda: T.conv2d(x, w, bias), {"x": x, "w": w, "b": bias})
    wd = _leaf(rng, (4, 1, 3, 3))
    cases["conv2d_depthwise"] = (lambda: T.conv2d(x, wd, None, groups=4), {"x": x, "w": wd})
    wg = _leaf(rng, (4, 2, 1, 1))
    cases["conv2d_grouped_1x1"] = (lambda: T.conv2d(x, wg, None, groups=2), {"x": x, "w": wg})
    ps = _leaf(rng, (8, 3, 3))
    cases["pixel_shuffle"] = (lambda: T.pixel_shuffle(ps * ps, 2), {"x": ps})
    for name, (fn, inputs) in cases.items():
        out += _check(fn, inputs, seed, rng, prefix=name + ":")
    return out


def ssm_suite(seed: int) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    D, N, L = 2, 2, 5
    x = _leaf(rng, (D, L))
    delta = _leaf(rng, (D, L), 0.05, 0.8)
    A = _leaf(rng, (D, N), -2.0, -0.2)
    B = _leaf(rng, (N, L))
    C = _leaf(rng, (N, L))
    skip = _leaf(rng, (D,))
    out = _check(lambda: selective_scan(x, delta, A, B, C, skip),
                 {"x": x, "delta": delta, "A": A, "B": B, "C": C, "skip": skip},
                 seed, rng, prefix="selective_scan:")
    p = SSMParams(D, N, rng, copies=1).astype(F64)
    seq = _leaf(rng, (D, L))
    inputs = {"seq": seq, **dict(p.named_parameters())}
    out += _check(lambda: s6_forward(seq, p), inputs, seed, rng, prefix="s6_forward:")
    return out


def _randomize(module, rng, scale=0.5, ssm_scale=None):
    """Jitter every parameter; ``ssm_scale`` overrides the spread for S6 parameters."""
    for name, p in list(module.named_parameters()):
        s = ssm_scale if ssm_scale is not None and ".ssm." in name else scale
        module.set_parameter(name, Tensor(p.data + s * rng.standard_normal(p.shape)))
    return module


def ssa_suite(seed: int) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for norm in ("softmax", "sigmoid", "identity"):
        ssa = _randomize(SSA(2, 4, norm).astype(F64), rng)
        maps = _leaf(rng, (4, 2, 2, 2))
        inputs = {"maps": maps, **dict(ssa.named_parameters())}
        out += _check(lambda: ssa_aggregate(maps, ssa), inputs, seed, rng, prefix=f"ssa[{norm}]:")
    return out


def mairm_suite(seed: int) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    m = MaIRM(MaIRMConfig(2, stripe_width=2, shifted=bool(seed % 2), d_state=2), rng).astype(F64)
    _randomize(m, rng, 0.1)
    F = _leaf(rng, (2, 4, 4))
    inputs = {"F": F, **dict(m.named_parameters())}
    return _check(lambda: m(F), inputs, seed, rng, max_coords=4, prefix="mairm:")


def vmm_suite(seed: int) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    v = VMM(4, rng, expansion=2, stripe_width=2, shifted=bool(seed % 2), d_state=2).astype(F64)
    _randomize(v, rng, 0.1)
    X = _leaf(rng, (4, 4, 4))
    inputs = {"X": X, **dict(v.named_parameters())}
    return _check(lambda: v(X), inputs, seed, rng, max_coords=3, prefix="vmm:")


TINY = dict(channels=4, n_groups=1, n_blocks=2, stripe_width=2, d_state=2, expansion=2)


def heads_suite(seed: int) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for head in ("restore", "sr"):
        model = build_model(ModelConfig(head=head, scale=2, seed=seed, **TINY)).astype(F64)
        # wider S6 jitter keeps the step-size path from vanishing below FD resolution
        _randomize(model, rng, 0.05, ssm_scale=0.5)
        x = _leaf(rng, (3, 8, 8), 0.0, 1.0)
        inputs = {"x": x, **dict(model.named_parameters())}
        out += _check(lambda: model(x), inputs, seed, rng, max_coords=2, prefix=f"{head}:",
                      step=1e-4)
    return out


def losses_suite(seed: int) -> list[GradCheckResult]:
    from .net import loss_charbonnier, loss_l1
    rng = np.random.default_rng(seed)
    pred = _leaf(rng, (3, 4, 4))
    target = Tensor(pred.data + rng.choice([-1, 1], (3, 4, 4)) * rng.uniform(0.1, 1, (3, 4, 4)))
    out = check_gradients(lambda: loss_l1(pred, target), {"l1:pred": pred}, seed=seed)
    out += check_gradients(lambda: loss_charbonnier(pred, target), {"charbonnier:pred": pred},
                           seed=seed)
    return out


SUITES: dict[str, Callable[[int], list[GradCheckResult]]] = {
    "tensor": tensor_ops_suite,
    "ssm": ssm_suite,
    "ssa": ssa_suite,
    "mairm": mairm_suite,
    "vmm": vmm_suite,
    "heads": heads_suite,
    "losses": losses_suite,
}


def run_all(seeds, suites: dict | None = None) -> dict[str, list[GradCheckResult]]:
    suites = suites or SUITES
    return {name: [r for s in seeds for r in fn(s)] for name, fn in suites.items()}
