"""Structured ops on top of the tensor tape: normalization, convolution,
pooling, and row softmax.

conv2d runs NHWC through an im2col matmul. Its input gradient is computed
as another correlation (dilated output grad against the flipped,
channel-swapped kernel), so the backward pass is matmuls end to end and
never touches np.add.at.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError
from .instrument import (
    madds_conv2d,
    madds_elementwise,
    madds_layer_norm,
    madds_matmul,
    madds_softmax,
    meter,
)
from .tensor import Tensor, accumulate, accumulate_owned, apply, matmul, add

_M = meter()


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    if b is not None:
        y = add(y, b)
    return y


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ContractError(
            f"layer_norm affine shapes {gamma.data.shape}/{beta.data.shape} "
            f"do not match feature dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    _M.madds += madds_layer_norm(x.data.size)

    def bw(g):
        _M.madds += 3 * madds_layer_norm(x.data.size)
        lead = tuple(range(g.ndim - 1))
        accumulate_owned(gamma, np.sum(g * xhat, axis=lead))
        accumulate_owned(beta, np.sum(g, axis=lead))
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        accumulate_owned(x, inv * (dxhat - m1 - xhat * m2))

    return apply(out, (x, gamma, beta), bw)


def _corr(xp: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    """Valid cross-correlation of padded NHWC input with (kh,kw,ci,co)."""
    kh, kw, ci, co = w.shape
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    # window axes arrive last: (F, Ho, Wo, ci, kh, kw) -> (F, Ho, Wo, kh, kw, ci)
    win = win[:, ::stride, ::stride].transpose(0, 1, 2, 4, 5, 3)
    f, ho, wo = win.shape[:3]
    cols = np.ascontiguousarray(win).reshape(f * ho * wo, kh * kw * ci)
    y = cols @ w.reshape(kh * kw * ci, co)
    return y.reshape(f, ho, wo, co), cols


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation. x is (F,H,W,Cin), w is (kh,kw,Cin,Cout)."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ContractError(
            f"conv2d wants 4-d input and kernel, got {x.data.shape} and {w.data.shape}")
    F, H, W, ci = x.data.shape
    kh, kw, wci, co = w.data.shape
    if wci != ci:
        raise ContractError(f"conv2d channels: input has {ci}, kernel expects {wci}")
    if stride < 1 or pad < 0:
        raise ContractError(f"conv2d stride={stride} pad={pad}")
    hp, wp = H + 2 * pad, W + 2 * pad
    if hp < kh or wp < kw:
        raise ContractError(
            f"conv2d kernel ({kh},{kw}) larger than padded input ({hp},{wp})")
    if pad:
        xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    else:
        xp = x.data
    out, cols = _corr(xp, w.data, stride)
    ho, wo = out.shape[1], out.shape[2]
    _M.madds += madds_conv2d(F * ho * wo, kh, ci, co)
    if b is not None:
        if b.data.shape != (co,):
            raise ContractError(f"conv2d bias shape {b.data.shape}, expected ({co},)")
        out += b.data

    def bw(g):
        rows = F * ho * wo
        g2 = g.reshape(rows, co)
        _M.madds += madds_matmul(kh * kw * ci, rows, co)
        accumulate_owned(w, (cols.T @ g2).reshape(w.data.shape))
        if b is not None:
            accumulate_owned(b, g2.sum(axis=0))
        if x.requires_grad:
            # input grad: dilate g by the stride, then full-correlate with
            # the flipped kernel, channels swapped
            gd_h, gd_w = (ho - 1) * stride + 1, (wo - 1) * stride + 1
            if stride > 1:
                gd = np.zeros((F, gd_h, gd_w, co))
                gd[:, ::stride, ::stride] = g
            else:
                gd = g
            gfull = np.pad(gd, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
            wflip = np.flip(w.data, axis=(0, 1)).transpose(0, 1, 3, 2)
            dxp_part, _ = _corr(gfull, np.ascontiguousarray(wflip), 1)
            _M.madds += madds_conv2d(F * gd_h * gd_w, kh, co, ci)
            dxp = np.zeros((F, hp, wp, ci))
            dxp[:, :dxp_part.shape[1], :dxp_part.shape[2]] = dxp_part
            if pad:
                dxp = dxp[:, pad:pad + H, pad:pad + W]
            accumulate_owned(x, np.ascontiguousarray(dxp))

    parents = (x, w, b) if b is not None else (x, w)
    return apply(out, parents, bw)


def _pool_bounds(n_in: int, n_out: int):
    lo = [(i * n_in) // n_out for i in range(n_out)]
    hi = [-(-((i + 1) * n_in) // n_out) for i in range(n_out)]
    return lo, hi


def pool2d(x: Tensor, out_hw: tuple[int, int], kind: str = "max") -> Tensor:
    """Adaptive 2-D pooling over NHWC.

    Output cell (i, j) covers input rows [floor(i*H/h), ceil((i+1)*H/h))
    and likewise for columns; windows may overlap when sizes do not
    divide. Max ties resolve to the first element in row-major window
    order.
    """
    if x.data.ndim != 4:
        raise ContractError(f"pool2d wants 4-d input, got {x.data.shape}")
    if kind not in ("max", "mean"):
        raise ContractError(f"pool2d kind must be max or mean, got {kind!r}")
    F, H, W, C = x.data.shape
    h, w = out_hw
    if not (1 <= h <= H and 1 <= w <= W):
        raise ContractError(f"pool2d output {out_hw} incompatible with input {(H, W)}")
    rlo, rhi = _pool_bounds(H, h)
    clo, chi = _pool_bounds(W, w)
    out = np.empty((F, h, w, C))
    argmaxes = {} if kind == "max" else None
    for i in range(h):
        for j in range(w):
            region = x.data[:, rlo[i]:rhi[i], clo[j]:chi[j], :]
            if kind == "max":
                flat = region.reshape(F, -1, C)
                am = flat.argmax(axis=1)
                out[:, i, j, :] = np.take_along_axis(flat, am[:, None, :], axis=1)[:, 0, :]
                argmaxes[(i, j)] = am
            else:
                out[:, i, j, :] = region.mean(axis=(1, 2))
    _M.madds += madds_elementwise(x.data.size)

    def bw(g):
        _M.madds += madds_elementwise(x.data.size)
        dx = np.zeros_like(x.data)
        fi = np.arange(F)[:, None]
        ci_ = np.arange(C)[None, :]
        for i in range(h):
            for j in range(w):
                if kind == "max":
                    am = argmaxes[(i, j)]
                    ww = chi[j] - clo[j]
                    ri = rlo[i] + am // ww
                    cj = clo[j] + am % ww
                    dx[fi, ri, cj, ci_] += g[:, i, j, :]
                else:
                    cnt = (rhi[i] - rlo[i]) * (chi[j] - clo[j])
                    dx[:, rlo[i]:rhi[i], clo[j]:chi[j], :] += \
                        g[:, i:i + 1, j:j + 1, :] / cnt
        accumulate_owned(x, dx)

    return apply(out, (x,), bw)


def causal_conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Depthwise causal 1-D convolution over (B, L, E).

    w is (k, E); position t sees x[t-k+1 .. t] with zero history on the
    left, so output t never reads the future.
    """
    if x.data.ndim != 3:
        raise ContractError(f"causal_conv1d wants (B,L,E), got {x.data.shape}")
    Bt, L, E = x.data.shape
    k = w.data.shape[0]
    if w.data.shape != (k, E) or b.data.shape != (E,):
        raise ContractError(
            f"causal_conv1d kernel {w.data.shape} / bias {b.data.shape} "
            f"do not fit channels {E}")
    xp = np.pad(x.data, ((0, 0), (k - 1, 0), (0, 0)))
    out = np.empty_like(x.data)
    out[:] = b.data
    for j in range(k):
        out += w.data[j] * xp[:, j:j + L]
    _M.madds += k * madds_elementwise(out.size)

    def bw(g):
        _M.madds += 2 * k * madds_elementwise(g.size)
        accumulate_owned(b, g.sum(axis=(0, 1)))
        dw = np.empty_like(w.data)
        for j in range(k):
            dw[j] = np.einsum("ble,ble->e", g, xp[:, j:j + L])
        accumulate_owned(w, dw)
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[:, j:j + L] += w.data[j] * g
            accumulate_owned(x, np.ascontiguousarray(dxp[:, k - 1:]))

    return apply(out, (x, w, b), bw)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, max-shifted for stability."""
    m = x.data.max(axis=-1, keepdims=True)
    e = np.exp(x.data - m)
    out = e / e.sum(axis=-1, keepdims=True)
    _M.madds += madds_softmax(x.data.size)

    def bw(g):
        _M.madds += 2 * madds_softmax(x.data.size)
        dot = np.sum(g * out, axis=-1, keepdims=True)
        accumulate_owned(x, out * (g - dot))

    return apply(out, (x,), bw)
