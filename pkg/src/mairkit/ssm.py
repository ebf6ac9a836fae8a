"""Selective state-space scan (S6) with input-dependent step sizes.

Per channel d and state index n:

    h[t] = exp(delta[d, t] * A[d, n]) * h[t-1] + delta[d, t] * B[n, t] * x[d, t]
    y[d, t] = sum_n C[n, t] * h[t] + skip[d] * x[d, t]

The recurrence runs step by step in compiled loops; the backward pass replays
it in reverse using the stored states.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from . import tensor as T
from .nn import Module, param
from .tensor import Tensor


@njit(cache=True)
def _scan_forward(x, dt, A, Bt, Ct, skip, hs, decay):
    G, D, L = x.shape
    N = A.shape[2]
    y = np.empty_like(x)
    h = np.zeros(N, dtype=hs.dtype)
    for g in range(G):
        for d in range(D):
            h[:] = 0.0
            for t in range(L):
                xt = x[g, d, t]
                dtt = dt[g, d, t]
                acc = 0.0
                for n in range(N):
                    a = math.exp(dtt * A[g, d, n])
                    hn = a * h[n] + dtt * Bt[g, t, n] * xt
                    h[n] = hn
                    hs[g, d, t, n] = hn
                    decay[g, d, t, n] = a
                    acc += Ct[g, t, n] * hn
                y[g, d, t] = acc + skip[g, d] * xt
    return y


@njit(cache=True)
def _scan_backward(x, dt, A, Bt, Ct, skip, hs, decay, gy):
    G, D, L = x.shape
    N = A.shape[2]
    gx = np.zeros_like(x)
    gdt = np.zeros_like(x)
    gA = np.zeros_like(A)
    gB = np.zeros_like(Bt)
    gC = np.zeros_like(Ct)
    gskip = np.zeros_like(skip)
    gh = np.zeros(N, dtype=hs.dtype)
    for g in range(G):
        for d in range(D):
            gh[:] = 0.0
            for t in range(L - 1, -1, -1):
                gyt = gy[g, d, t]
                xt = x[g, d, t]
                dtt = dt[g, d, t]
                gskip[g, d] += gyt * xt
                gxt = gyt * skip[g, d]
                gdtt = 0.0
                for n in range(N):
                    a_n = A[g, d, n]
                    a = decay[g, d, t, n]
                    gC[g, t, n] += gyt * hs[g, d, t, n]
                    ghn = gh[n] + gyt * Ct[g, t, n]
                    hprev = hs[g, d, t - 1, n] if t > 0 else 0.0
                    g_decay = ghn * hprev * a
                    gdtt += g_decay * a_n + ghn * Bt[g, t, n] * xt
                    gA[g, d, n] += g_decay * dtt
                    gB[g, t, n] += ghn * dtt * xt
                    gxt += ghn * dtt * Bt[g, t, n]
                    gh[n] = ghn * a
                gx[g, d, t] = gxt
                gdt[g, d, t] = gdtt
    return gx, gdt, gA, gB, gC, gskip


def _first_bad_step(y: np.ndarray) -> int:
    bad = ~np.isfinite(y).reshape(-1, y.shape[-1]).all(axis=0)
    return int(np.argmax(bad))


def _scan_primitive(x: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor,
                    skip: Tensor) -> Tensor:
    # all inputs already flattened to G leading entries
    dtype = np.result_type(x.dtype, delta.dtype, A.dtype, B.dtype, C.dtype, skip.dtype)
    xd = np.ascontiguousarray(x.data, dtype=dtype)
    dd = np.ascontiguousarray(delta.data, dtype=dtype)
    Ad = np.ascontiguousarray(A.data, dtype=dtype)
    Bt = np.ascontiguousarray(B.data.transpose(0, 2, 1), dtype=dtype)
    Ct = np.ascontiguousarray(C.data.transpose(0, 2, 1), dtype=dtype)
    sd = np.ascontiguousarray(skip.data, dtype=dtype)
    G, D, L = xd.shape
    hs = np.empty((G, D, L, Ad.shape[2]), dtype=dtype)
    decay = np.empty_like(hs)
    y = _scan_forward(xd, dd, Ad, Bt, Ct, sd, hs, decay)
    if not np.isfinite(y).all():
        raise FloatingPointError(
            f"selective scan produced a non-finite value at step {_first_bad_step(y)}")

    def bw(g):
        gx, gdt, gA, gB, gC, gskip = _scan_backward(
            xd, dd, Ad, Bt, Ct, sd, hs, decay, np.ascontiguousarray(g, dtype=dtype))
        return gx, gdt, gA, gB.transpose(0, 2, 1), gC.transpose(0, 2, 1), gskip

    return T.record(y, (x, delta, A, B, C, skip), bw)


def selective_scan(x: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor,
                   skip: Tensor) -> Tensor:
    """Run the recurrence over the last axis.

    Shapes: x, delta (..., D, L); A (..., D, N); B, C (..., N, L); skip (..., D).
    Leading axes broadcast against those of ``x``.
    """
    x, delta, A, B, C, skip = (T.as_tensor(v) for v in (x, delta, A, B, C, skip))
    *lead, D, L = x.shape
    N = A.shape[-1]
    if delta.shape != x.shape:
        raise ValueError(f"delta shape {delta.shape} does not match x shape {x.shape}")
    if A.shape[-2] != D:
        raise ValueError(f"A has {A.shape[-2]} channels, x has {D}")
    for name, m in (("B", B), ("C", C)):
        if m.shape[-2:] != (N, L):
            raise ValueError(f"{name} must end in ({N}, {L}), got {m.shape}")
    if skip.shape[-1] != D:
        raise ValueError(f"skip has {skip.shape[-1]} channels, x has {D}")
    if np.any(delta.data < 0):
        raise ValueError("delta must be non-negative")
    lead = tuple(lead)
    G = int(np.prod(lead, dtype=int))

    def flat(t: Tensor, tail: tuple) -> Tensor:
        if t.shape != lead + tail:
            t = T.broadcast_to(t, lead + tail)
        return T.reshape(t, (G, *tail))

    y = _scan_primitive(flat(x, (D, L)), flat(delta, (D, L)), flat(A, (D, N)),
                        flat(B, (N, L)), flat(C, (N, L)), flat(skip, (D,)))
    return T.reshape(y, (*lead, D, L))


class SSMParams(Module):
    """Parameters of ``copies`` independent S6 units over D channels.

    Shapes carry a leading copies axis K: A_log (K, D, N), skip (K, D),
    proj_dbc (K, R + 2N, D), dt_proj (K, D, R), dt_bias (K, D).
    """

    def __init__(self, d: int, n: int = 8, rng: np.random.Generator | None = None,
                 rank: int | None = None, copies: int = 1,
                 dt_min: float = 1e-3, dt_max: float = 1e-1):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d, self.n, self.copies = d, n, copies
        self.rank = rank if rank is not None else max(1, d // 16)
        R, K = self.rank, copies
        self.A_log = param(np.broadcast_to(np.log(np.arange(1, n + 1)), (K, d, n)))
        self.skip = param(np.ones((K, d)))
        self.proj_dbc = param(rng.uniform(-d ** -0.5, d ** -0.5, size=(K, R + 2 * n, d)))
        self.dt_proj = param(rng.uniform(-R ** -0.5, R ** -0.5, size=(K, d, R)))
        dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), size=(K, d)))
        self.dt_bias = param(dt + np.log(-np.expm1(-dt)))  # softplus^-1(dt)


def s6_forward(seq: Tensor, p: SSMParams) -> Tensor:
    """Input-dependent scan of ``seq`` shaped (..., K, D, L), or (D, L) when K == 1."""
    single = seq.ndim == 2
    if single:
        if p.copies != 1:
            raise ValueError("a (D, L) sequence needs single-copy parameters")
        seq = T.reshape(seq, (1, 1, *seq.shape))
    *lead, K, D, L = seq.shape
    if (K, D) != (p.copies, p.d):
        raise ValueError(f"sequence has (K, D)=({K}, {D}), parameters expect ({p.copies}, {p.d})")
    b = int(np.prod(lead, dtype=int))
    x = T.reshape(seq, (b, K, D, L))
    R, N = p.rank, p.n
    dbc = T.matmul(p.proj_dbc, x)
    dts = dbc[:, :, :R]
    Bm = dbc[:, :, R:R + N]
    Cm = dbc[:, :, R + N:]
    pre = T.matmul(p.dt_proj, dts) + T.reshape(p.dt_bias, (1, K, D, 1))
    delta = T.softplus(pre)
    A = -T.exp(p.A_log)
    y = selective_scan(x, delta, A, Bm, Cm, p.skip)
    if single:
        return T.reshape(y, (D, L))
    return T.reshape(y, (*lead, K, D, L))
