"""Contrastive retrieval head: sequence pooling, embedding normalization,
and the InfoNCE objective with a learnable, clamped temperature.

The 2x2 worked example that the tests freeze: with similarities
[[0.9, 0.1], [0.2, 0.8]] and tau=1, each row's cross entropy is
softplus(off_diag - diag), so the mean is
(softplus(-0.8) + softplus(-0.6)) / 2 = 0.4042943...
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError, DomainError
from . import tensor as T
from .tensor import Tensor, accumulate_owned, apply
from .instrument import madds_softmax, meter

_M = meter()

TAU_MIN, TAU_MAX = 1e-3, 1.0

POOLINGS = ("mean_all", "mean_scale1")


def make_temperature(init: float) -> Tensor:
    if not (TAU_MIN <= init <= TAU_MAX):
        raise ConfigError(
            f"temperature init {init} outside [{TAU_MIN}, {TAU_MAX}]")
    return Tensor(np.asarray(init, dtype=np.float64), requires_grad=True)


def clamp_temperature(tau: Tensor) -> bool:
    """Keep tau inside its legal range; call after every optimizer step.

    Returns True when the clamp actually moved the value, so the caller
    can drop stale optimizer velocity on the projected coordinate.
    """
    before = float(tau.data.reshape(()))
    np.clip(tau.data, TAU_MIN, TAU_MAX, out=tau.data)
    return float(tau.data.reshape(())) != before


def mean_positions(x: Tensor, idx: np.ndarray) -> Tensor:
    """Mean over selected sequence positions. x is (L, C) or (B, L, C)."""
    idx = np.asarray(idx)
    if idx.size == 0:
        raise ConfigError("pooling selected no positions")
    k = idx.size
    if x.data.ndim == 2:
        out = x.data[idx].mean(axis=0)
    elif x.data.ndim == 3:
        out = x.data[:, idx].mean(axis=1)
    else:
        raise ContractError(f"pooling wants (L,C) or (B,L,C), got {x.data.shape}")
    _M.madds += x.data.size

    def bw(g):
        _M.madds += x.data.size
        dx = np.zeros_like(x.data)
        if x.data.ndim == 2:
            dx[idx] += g / k
        else:
            dx[:, idx] += g[:, None, :] / k
        accumulate_owned(x, dx)

    return apply(out, (x,), bw)


def pool_sequence(x: Tensor, layout, pooling: str) -> Tensor:
    """Collapse a token sequence to one vector per video.

    mean_all averages every position; mean_scale1 averages only the
    positions that came from scale 1 (the global tokens). Selecting a
    scale the layout does not contain is a config error.
    """
    if pooling not in POOLINGS:
        raise ConfigError(f"pooling {pooling!r}, expected one of {POOLINGS}")
    L = len(layout)
    if x.data.shape[-2] != L:
        raise ContractError(
            f"sequence length {x.data.shape} does not match layout of {L}")
    if pooling == "mean_all":
        idx = np.arange(L)
    else:
        idx = np.flatnonzero(layout.scale_id == 1)
        if idx.size == 0:
            raise ConfigError("mean_scale1 pooling needs scale 1 in the scale set")
    return mean_positions(x, idx)


def l2_normalize_rows(x: Tensor) -> Tensor:
    """Scale each row to unit length. Zero rows are a domain error."""
    norms = np.sqrt(np.sum(x.data * x.data, axis=-1, keepdims=True))
    if np.min(norms) == 0.0:
        raise DomainError("cannot normalize a zero embedding")
    out = x.data / norms
    _M.madds += 3 * x.data.size

    def bw(g):
        _M.madds += 3 * x.data.size
        dot = np.sum(g * out, axis=-1, keepdims=True)
        accumulate_owned(x, (g - out * dot) / norms)

    return apply(out, (x,), bw)


def _diag_cross_entropy(logits: Tensor) -> Tensor:
    """Mean over rows of -log softmax(row)[i] with target i = row index."""
    n = logits.data.shape[0]
    m = logits.data.max(axis=-1, keepdims=True)
    e = np.exp(logits.data - m)
    p = e / e.sum(axis=-1, keepdims=True)
    lse = np.log(e.sum(axis=-1)) + m[:, 0]
    loss = np.asarray((lse - np.diagonal(logits.data)).mean())
    _M.madds += 2 * madds_softmax(logits.data.size)

    def bw(g):
        _M.madds += madds_softmax(logits.data.size)
        d = p.copy()
        d[np.arange(n), np.arange(n)] -= 1.0
        d *= float(g.reshape(())) / n
        accumulate_owned(logits, d)

    return apply(loss, (logits,), bw)


def info_nce(video: Tensor, text: Tensor, tau, symmetric: bool = True) -> Tensor:
    """Contrastive loss over a batch of paired embeddings.

    Row i of the similarity matrix video @ text.T must beat its own row
    (and, when symmetric, its own column); temperatures at or below zero
    are a domain error. Inputs are used as-is; normalize them first if
    cosine similarity is intended.
    """
    if video.data.ndim != 2 or video.data.shape != text.data.shape:
        raise ContractError(
            f"paired embeddings must share a (B, D) shape, got "
            f"{video.data.shape} and {text.data.shape}")
    if video.data.shape[0] < 2:
        raise ContractError("contrastive loss needs at least 2 pairs")
    tau_t = tau if isinstance(tau, Tensor) else Tensor(np.asarray(float(tau)))
    if float(tau_t.data.reshape(())) <= 0.0:
        raise DomainError(f"temperature must be positive, got {tau_t.data}")
    sim = T.matmul(video, T.transpose(text))
    logits = T.div(sim, tau_t)
    loss = _diag_cross_entropy(logits)
    if symmetric:
        loss_t = _diag_cross_entropy(T.transpose(logits))
        loss = T.mul(T.add(loss, loss_t), 0.5)
    return loss
