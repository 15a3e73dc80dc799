"""Selective state-space sequence learner.

The sequence mixer is a gated residual stack. Each layer wraps a block:

    out = x + zero_init_linear(layer_norm(block(x)))

so a freshly initialized stack is the identity map, bit for bit, and
depth only starts to matter once the gate weights move off zero. With
``residual=False`` the skip connection is dropped (ablation; the layer
then outputs the gate branch alone, and the gate linear starts at the
identity instead of zero, because a zero gate without a skip would be a
dead layer).

A block projects channels C up to a stream/gate pair of width E, runs a
depthwise causal conv and SiLU over the stream, mixes it along the
sequence, multiplies by the SiLU'd gate and projects back to C. The
mixer is selectable:

* ``mamba``    - selective scan: per channel e, state h advances as
                 h[l] = exp(dt*A) * h[l-1] + (dt*B[l]) * u[l,e] and emits
                 y[l,e] = <C[l], h[l]>, with dt, B, C all functions of
                 the input and A = -exp(A_log) diagonal and negative.
* ``mambaout`` - the scan is deleted and the convolved stream passes
                 through unchanged. The scan's parameters do not exist in
                 this kind; everything around it is identical.
* ``attention``- single-head softmax attention over the convolved
                 stream, the quadratic comparator for the benchmark.

Direction handling: ``none`` runs left to right only. ``v1`` also runs a
right-to-left pass reusing the same parameters; ``v2`` gives the reverse
pass its own conv/dt/B/C/A_log set. Direction outputs merge by
arithmetic mean. Attention is already bidirectional, so combining it
with v1/v2 is a contract error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DomainError
from .instrument import madds_scan, meter
from . import tensor as T
from .nnops import causal_conv1d, layer_norm, linear, softmax_rows
from .tensor import Tensor, accumulate_owned, apply

_M = meter()

# above this many stored scalars per buffer the scan keeps only sparse
# checkpoints and recomputes segments in backward
_SCAN_STORE_LIMIT = 1 << 24
_SCAN_CHUNK = 64


def selective_scan(u: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor) -> Tensor:
    """Run the scan on a single sequence.

    Shapes: u and delta (L, E); A (E, N); B and C (L, N). Returns (L, E).
    delta must be strictly positive.
    """
    if u.data.ndim != 2 or delta.data.shape != u.data.shape:
        raise ContractError(
            f"scan wants u and delta of equal 2-d shape, got {u.data.shape} "
            f"and {delta.data.shape}")
    L, E = u.data.shape
    if A.data.ndim != 2 or A.data.shape[0] != E:
        raise ContractError(f"A must be (E={E}, N), got {A.data.shape}")
    N = A.data.shape[1]
    if B.data.shape != (L, N) or C.data.shape != (L, N):
        raise ContractError(
            f"B and C must be ({L}, {N}), got {B.data.shape} and {C.data.shape}")
    if np.min(delta.data) <= 0.0:
        raise DomainError("scan step sizes must be strictly positive")
    u3 = T.reshape(u, (1, L, E))
    d3 = T.reshape(delta, (1, L, E))
    B3 = T.reshape(B, (1, L, N))
    C3 = T.reshape(C, (1, L, N))
    y = scan_batched(u3, d3, A, B3, C3)
    return T.reshape(y, (L, E))


def scan_batched(u: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor) -> Tensor:
    """Batched scan over (Bt, L, E) with (Bt, L, N) projections.

    A is (E, N), or (G, E, N) to give each contiguous batch slab of
    Bt/G rows its own state matrix (how a bidirectional layer runs both
    directions in one call).

    Forward stores full per-step state when it fits; otherwise it keeps
    checkpoints every _SCAN_CHUNK steps and backward recomputes each
    segment, which reproduces the forward values exactly (same ops, same
    order).
    """
    Bt, L, E = u.data.shape
    grouped = A.data.ndim == 3
    G = A.data.shape[0] if grouped else 1
    if Bt % G:
        raise ContractError(f"batch {Bt} not divisible into {G} scan groups")
    Bg = Bt // G
    N = A.data.shape[-1]
    ud, dd, Bd, Cd = u.data, delta.data, B.data, C.data
    # A expanded to one (E, N) row per batch element, so the loop body
    # stays flat; gradients fold back per group at the end
    Ad = A.data if grouped else A.data[None]
    A_rows = np.ascontiguousarray(
        np.broadcast_to(Ad[:, None], (G, Bg, E, N))).reshape(Bt, E, N)
    _M.madds += madds_scan(L, E, N, batch=Bt)

    need_grad = T.grad_enabled() and any(
        t.requires_grad for t in (u, delta, A, B, C))
    full = Bt * L * E * N <= _SCAN_STORE_LIMIT

    y = np.empty((Bt, L, E))
    dBu = dd * ud
    _M.track(y)

    # the recurrence h[l] = Abar[l]*h[l-1] + dBu[l]*B[l] keeps only two
    # sequential ops per step; everything around it is batched over L
    def run_segment(Ab, hc, h0):
        scratch = np.empty((Bt, E, N))
        if h0 is not None:
            np.multiply(h0, Ab[:, 0], out=scratch)
            hc[:, 0] += scratch
        for l in range(1, hc.shape[1]):
            np.multiply(hc[:, l - 1], Ab[:, l], out=scratch)
            hc[:, l] += scratch

    saved = None
    if full:
        Abar_all = dd[:, :, :, None] * A_rows[:, None]
        np.exp(Abar_all, out=Abar_all)
        h_all = dBu[:, :, :, None] * Bd[:, :, None, :]
        _M.track(Abar_all)
        _M.track(h_all)
        run_segment(Abar_all, h_all, None)
        np.matmul(h_all.reshape(Bt * L, E, N), Cd.reshape(Bt * L, N, 1),
                  out=y.reshape(Bt * L, E, 1))
        if need_grad:
            saved = ("full", None, Abar_all, h_all)
    else:
        checkpoints = {} if need_grad else None
        h0 = np.zeros((Bt, E, N))
        for s in range(0, L, _SCAN_CHUNK):
            e = min(s + _SCAN_CHUNK, L)
            if need_grad:
                checkpoints[s] = h0
            Ab = dd[:, s:e, :, None] * A_rows[:, None]
            np.exp(Ab, out=Ab)
            hc = dBu[:, s:e, :, None] * Bd[:, s:e, None, :]
            _M.track(Ab)
            _M.track(hc)
            run_segment(Ab, hc, h0)
            y[:, s:e] = np.matmul(
                hc.reshape(-1, E, N),
                Cd[:, s:e].reshape(-1, N, 1)).reshape(Bt, e - s, E)
            h0 = hc[:, -1].copy()
        if need_grad:
            saved = ("chunk", checkpoints, None, None)

    if not need_grad:
        return apply(y, (u, delta, A, B, C), None)

    def bw(g):
        _M.madds += 3 * madds_scan(L, E, N, batch=Bt)
        du = np.empty_like(ud)
        ddelta = np.empty_like(dd)
        dB = np.empty_like(Bd)
        dC = np.empty_like(Cd)

        mode, checkpoints = saved[0], saved[1]
        if mode == "full":
            spans = [(0, L)]
        else:
            spans = [(s, min(s + _SCAN_CHUNK, L))
                     for s in range(0, L, _SCAN_CHUNK)]

        carry = np.zeros((Bt, E, N))
        scratch = np.empty((Bt, E, N))
        dA_parts = []
        for s, e in reversed(spans):
            Lc = e - s
            if mode == "full":
                Ab_c, h_c, h0 = saved[2], saved[3], None
            else:
                # recompute this segment from its checkpoint
                h0 = checkpoints[s]
                Ab_c = dd[:, s:e, :, None] * A_rows[:, None]
                np.exp(Ab_c, out=Ab_c)
                h_c = dBu[:, s:e, :, None] * Bd[:, s:e, None, :]
                run_segment(Ab_c, h_c, h0)
            gs = g[:, s:e]
            dC[:, s:e] = np.matmul(
                gs.reshape(-1, 1, E), h_c.reshape(-1, E, N)).reshape(Bt, Lc, N)
            # dh_all[l] is the adjoint state right after the g*C
            # injection at l; suffix recurrence mirrors the forward one
            dh_all = gs[:, :, :, None] * Cd[:, s:e, None, :]
            dh_all[:, Lc - 1] += carry
            for l in range(Lc - 2, -1, -1):
                np.multiply(dh_all[:, l + 1], Ab_c[:, l + 1], out=scratch)
                dh_all[:, l] += scratch
            np.multiply(dh_all[:, 0], Ab_c[:, 0], out=carry)
            w = np.matmul(dh_all.reshape(-1, E, N),
                          Bd[:, s:e].reshape(-1, N, 1)).reshape(Bt, Lc, E)
            du[:, s:e] = w * dd[:, s:e]
            dB[:, s:e] = np.matmul(
                dBu[:, s:e].reshape(-1, 1, E),
                dh_all.reshape(-1, E, N)).reshape(Bt, Lc, N)
            # tmp = dh * h_prev * Abar, reusing the Abar buffer in place
            tmp = Ab_c
            tmp *= dh_all
            tmp[:, 1:] *= h_c[:, :-1]
            if h0 is None:
                tmp[:, 0] = 0.0  # state before the sequence start is zero
            else:
                tmp[:, 0] *= h0
            ddelta[:, s:e] = np.einsum("blen,ben->ble", tmp, A_rows) \
                + w * ud[:, s:e]
            dA_parts.append(np.einsum("blen,ble->ben", tmp, dd[:, s:e]))
        dA_rows = dA_parts[-1]
        for part in dA_parts[-2::-1]:
            dA_rows = dA_rows + part
        dA = dA_rows.reshape(G, Bg, E, N).sum(axis=1)
        accumulate_owned(u, du)
        accumulate_owned(delta, ddelta)
        accumulate_owned(A, dA if grouped else dA[0])
        accumulate_owned(B, dB)
        accumulate_owned(C, dC)

    return apply(y, (u, delta, A, B, C), bw)


# -- parameter containers ------------------------------------------------------


KINDS = ("mamba", "mambaout", "attention")
VARIANTS = ("none", "v1", "v2")


@dataclass
class BlockConfig:
    channels: int
    kind: str = "mamba"
    variant: str = "v2"
    d_state: int = 16
    expand: int = 2
    conv_kernel: int = 4

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"block kind {self.kind!r}, expected one of {KINDS}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"scan variant {self.variant!r}, expected one of {VARIANTS}")
        if self.channels < 1 or self.d_state < 1 or self.expand < 1 or self.conv_kernel < 1:
            raise ConfigError("block dimensions must be positive")
        if self.kind == "attention" and self.variant != "none":
            raise ContractError(
                "attention is already bidirectional; scan variants v1/v2 do not apply")


def _normal(rng, shape, std):
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def _zeros(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


class _Direction:
    """Per-direction scan parameters: conv, dt, B, C, A_log."""

    def __init__(self, cfg: BlockConfig, rng):
        E, N, k = cfg.expand * cfg.channels, cfg.d_state, cfg.conv_kernel
        self.conv_w = _normal(rng, (k, E), k ** -0.5)
        self.conv_b = _zeros((E,))
        if cfg.kind == "mamba":
            self.dt_w = _normal(rng, (E, E), E ** -0.5)
            # bias places softplus(dt_b) log-uniformly in [1e-3, 0.1]
            dt = np.exp(rng.uniform(np.log(1e-3), np.log(0.1), size=E))
            self.dt_b = Tensor(np.log(np.expm1(dt)), requires_grad=True)
            self.b_w = _normal(rng, (E, N), E ** -0.5)
            self.c_w = _normal(rng, (E, N), E ** -0.5)
            # A = -exp(A_log) = -(1..N), repeated across channels
            self.a_log = Tensor(np.tile(np.log(np.arange(1, N + 1)), (E, 1)),
                                requires_grad=True)

    def tensors(self, prefix: str):
        for name in ("conv_w", "conv_b", "dt_w", "dt_b", "b_w", "c_w", "a_log"):
            t = getattr(self, name, None)
            if t is not None:
                yield f"{prefix}.{name}", t


class Block:
    def __init__(self, cfg: BlockConfig, rng):
        cfg.validate()
        self.cfg = cfg
        C = cfg.channels
        E = cfg.expand * C
        self.in_w = _normal(rng, (C, 2 * E), C ** -0.5)
        self.in_b = _zeros((2 * E,))
        self.out_w = _normal(rng, (E, C), E ** -0.5)
        self.out_b = _zeros((C,))
        if cfg.kind == "attention":
            self.q_w = _normal(rng, (E, E), E ** -0.5)
            self.k_w = _normal(rng, (E, E), E ** -0.5)
            self.v_w = _normal(rng, (E, E), E ** -0.5)
            self.dirs = [_Direction(cfg, rng)]
        elif cfg.variant == "v2":
            self.dirs = [_Direction(cfg, rng), _Direction(cfg, rng)]
        else:
            # v1 reuses one parameter set for both directions
            self.dirs = [_Direction(cfg, rng)]

    def tensors(self, prefix: str):
        for name in ("in_w", "in_b", "out_w", "out_b", "q_w", "k_w", "v_w"):
            t = getattr(self, name, None)
            if t is not None:
                yield f"{prefix}.{name}", t
        for i, d in enumerate(self.dirs):
            yield from d.tensors(f"{prefix}.dir{i}")

    def _mix(self, u: Tensor, d: _Direction) -> Tensor:
        cfg = self.cfg
        if cfg.kind == "mambaout":
            return u
        if cfg.kind == "attention":
            E = u.data.shape[-1]
            q = linear(u, self.q_w)
            k = linear(u, self.k_w)
            v = linear(u, self.v_w)
            scores = T.mul(T.matmul(q, T.transpose(k, (0, 2, 1))), E ** -0.5)
            return T.matmul(softmax_rows(scores), v)
        dt = T.softplus(T.add(T.matmul(u, d.dt_w), d.dt_b))
        Bv = T.matmul(u, d.b_w)
        Cv = T.matmul(u, d.c_w)
        A = T.neg(T.exp(d.a_log))
        return scan_batched(u, dt, A, Bv, Cv)

    def _mix_bidir(self, stream: Tensor) -> Tensor:
        """Both scan directions in one batched call: the reversed copy
        rides along as extra batch rows (per-direction A via scan groups
        when v2). Row-for-row this computes exactly what two separate
        passes would."""
        cfg = self.cfg
        B = stream.data.shape[0]
        rev = T.flip(stream, 1)
        if cfg.variant == "v1":
            d = self.dirs[0]
            u = T.silu(causal_conv1d(T.concat([stream, rev], 0), d.conv_w, d.conv_b))
            if cfg.kind == "mamba":
                dt = T.softplus(T.add(T.matmul(u, d.dt_w), d.dt_b))
                Bv = T.matmul(u, d.b_w)
                Cv = T.matmul(u, d.c_w)
                A = T.neg(T.exp(d.a_log))
                y2 = scan_batched(u, dt, A, Bv, Cv)
            else:
                y2 = u
        else:  # v2: separate parameters per direction
            d0, d1 = self.dirs
            u0 = T.silu(causal_conv1d(stream, d0.conv_w, d0.conv_b))
            u1 = T.silu(causal_conv1d(rev, d1.conv_w, d1.conv_b))
            u = T.concat([u0, u1], 0)
            if cfg.kind == "mamba":
                dt = T.concat(
                    [T.softplus(T.add(T.matmul(u0, d0.dt_w), d0.dt_b)),
                     T.softplus(T.add(T.matmul(u1, d1.dt_w), d1.dt_b))], 0)
                Bv = T.concat([T.matmul(u0, d0.b_w), T.matmul(u1, d1.b_w)], 0)
                Cv = T.concat([T.matmul(u0, d0.c_w), T.matmul(u1, d1.c_w)], 0)
                E, N = d0.a_log.data.shape
                A = T.concat([T.reshape(T.neg(T.exp(d0.a_log)), (1, E, N)),
                              T.reshape(T.neg(T.exp(d1.a_log)), (1, E, N))], 0)
                y2 = scan_batched(u, dt, A, Bv, Cv)
            else:
                y2 = u
        fwd = T.narrow(y2, 0, 0, B)
        bwd = T.flip(T.narrow(y2, 0, B, B), 1)
        return T.mul(T.add(fwd, bwd), 0.5)

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 3:
            raise ContractError(f"block wants (B, L, C), got {x.data.shape}")
        cfg = self.cfg
        E = cfg.expand * cfg.channels
        xz = linear(x, self.in_w, self.in_b)
        stream = T.narrow(xz, 2, 0, E)
        gate = T.narrow(xz, 2, E, E)
        if cfg.variant == "none" or cfg.kind == "attention":
            d = self.dirs[0]
            u = T.silu(causal_conv1d(stream, d.conv_w, d.conv_b))
            y = self._mix(u, d)
        else:
            y = self._mix_bidir(stream)
        gated = T.mul(y, T.silu(gate))
        return linear(gated, self.out_w, self.out_b)


class Layer:
    """Gated residual wrapper: x + zero_init_linear(layer_norm(block(x)))."""

    def __init__(self, cfg: BlockConfig, rng, residual: bool = True):
        C = cfg.channels
        self.block = Block(cfg, rng)
        self.residual = residual
        self.ln_g = Tensor(np.ones(C), requires_grad=True)
        self.ln_b = _zeros((C,))
        self.gate_w = _zeros((C, C))
        self.gate_b = _zeros((C,))
        if not residual:
            # without the skip, a zero gate is a dead layer: start the
            # block path at unit gain instead
            np.fill_diagonal(self.gate_w.data, 1.0)

    def tensors(self, prefix: str):
        yield from self.block.tensors(f"{prefix}.block")
        for name in ("ln_g", "ln_b", "gate_w", "gate_b"):
            yield f"{prefix}.{name}", getattr(self, name)

    def forward(self, x: Tensor) -> Tensor:
        y = self.block.forward(x)
        g = linear(layer_norm(y, self.ln_g, self.ln_b), self.gate_w, self.gate_b)
        return T.add(x, g) if self.residual else g


class Stack:
    """A pile of layers; depth 0 is the identity."""

    def __init__(self, cfg: BlockConfig, depth: int, rng, residual: bool = True):
        if depth < 0:
            raise ConfigError(f"negative stack depth {depth}")
        self.cfg = cfg
        self.layers = [Layer(cfg, rng, residual) for _ in range(depth)]

    def tensors(self, prefix: str = "stack"):
        for i, layer in enumerate(self.layers):
            yield from layer.tensors(f"{prefix}.layer{i}")

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer.forward(x)
        return x
