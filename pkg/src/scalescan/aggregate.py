"""Orderings that flatten a token pyramid into one sequence.

Three modes, all consuming per-scale token grids (T, s, s, C):

* ``scale``   : scales ascending, then frames ascending, then row-major
                spatial order. Length T * sum(s^2).
* ``frame``   : frames ascending, then scales ascending, then row-major.
                Same length, different neighborhood structure.
* ``spatial`` : mean-pool every grid over time first, then scales
                ascending, row-major. Length sum(s^2); the time axis is
                gone, so positions carry frame = -1 in the layout and
                the ordering cannot be inverted.

``aggregate`` and ``disaggregate`` are exact inverses for scale and
frame modes. Asking to invert spatial raises ContractError.

The batched variants do the same thing with a leading video axis and
exist so the model can push a whole batch through one op chain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from . import tensor as T
from .tensor import Tensor

MODES = ("scale", "frame", "spatial")


@dataclass
class Layout:
    """Provenance of each sequence position."""
    mode: str
    scales: tuple[int, ...]
    frames: int
    scale_id: np.ndarray   # which scale the token came from
    frame: np.ndarray      # source frame, -1 once time is pooled away
    row: np.ndarray
    col: np.ndarray

    def __len__(self):
        return self.scale_id.size


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ConfigError(f"aggregation mode {mode!r}, expected one of {MODES}")


def layout(mode: str, scales, frames: int) -> Layout:
    _check_mode(mode)
    scales = tuple(scales)
    sid, frm, row, col = [], [], [], []

    def grid(s):
        r, c = np.divmod(np.arange(s * s), s)
        return r, c

    if mode == "scale":
        for s in scales:
            r, c = grid(s)
            for t in range(frames):
                sid.append(np.full(s * s, s)); frm.append(np.full(s * s, t))
                row.append(r); col.append(c)
    elif mode == "frame":
        for t in range(frames):
            for s in scales:
                r, c = grid(s)
                sid.append(np.full(s * s, s)); frm.append(np.full(s * s, t))
                row.append(r); col.append(c)
    else:
        for s in scales:
            r, c = grid(s)
            sid.append(np.full(s * s, s)); frm.append(np.full(s * s, -1))
            row.append(r); col.append(c)
    return Layout(mode, scales, frames,
                  np.concatenate(sid), np.concatenate(frm),
                  np.concatenate(row), np.concatenate(col))


def _check_tokens(tokens) -> tuple[tuple[int, ...], int]:
    if not tokens:
        raise ContractError("no token grids to aggregate")
    scales = tuple(s for s, _ in tokens)
    if list(scales) != sorted(set(scales)):
        raise ContractError(f"token grids must arrive in ascending scale order, got {scales}")
    frames = tokens[0][1].data.shape[0]
    for s, t in tokens:
        d = t.data
        if d.ndim != 4 or d.shape[1] != s or d.shape[2] != s or d.shape[0] != frames:
            raise ContractError(
                f"grid for scale {s} has shape {d.shape}, expected ({frames},{s},{s},C)")
    return scales, frames


def aggregate(tokens: list[tuple[int, Tensor]], mode: str) -> Tensor:
    """Flatten (scale, (T,s,s,C)) grids into an (L, C) sequence."""
    _check_mode(mode)
    scales, frames = _check_tokens(tokens)
    C = tokens[0][1].data.shape[-1]
    if mode == "scale":
        parts = [T.reshape(t, (frames * s * s, C)) for s, t in tokens]
        return T.concat(parts, axis=0)
    if mode == "frame":
        parts = [T.reshape(t, (frames, s * s, C)) for s, t in tokens]
        return T.reshape(T.concat(parts, axis=1), (frames * sum(s * s for s in scales), C))
    parts = [T.reshape(T.tmean(t, axis=0), (s * s, C)) for s, t in tokens]
    return T.concat(parts, axis=0)


def disaggregate(seq: Tensor, mode: str, scales, frames: int) -> list[tuple[int, Tensor]]:
    """Exact inverse of aggregate for scale and frame modes."""
    _check_mode(mode)
    if mode == "spatial":
        raise ContractError("spatial aggregation pools time away and cannot be inverted")
    scales = tuple(scales)
    per_frame = sum(s * s for s in scales)
    C = seq.data.shape[-1]
    if seq.data.ndim != 2 or seq.data.shape[0] != frames * per_frame:
        raise ContractError(
            f"sequence length {seq.data.shape} does not match {frames} frames "
            f"of {per_frame} tokens")
    out = []
    if mode == "scale":
        off = 0
        for s in scales:
            n = frames * s * s
            out.append((s, T.reshape(T.narrow(seq, 0, off, n), (frames, s, s, C))))
            off += n
    else:
        grid3 = T.reshape(seq, (frames, per_frame, C))
        off = 0
        for s in scales:
            out.append((s, T.reshape(T.narrow(grid3, 1, off, s * s), (frames, s, s, C))))
            off += s * s
    return out


def aggregate_batched(tokens: list[tuple[int, Tensor]], mode: str) -> Tensor:
    """Same orderings with a leading batch axis: grids (B,T,s,s,C) -> (B,L,C)."""
    _check_mode(mode)
    if not tokens:
        raise ContractError("no token grids to aggregate")
    B, frames = tokens[0][1].data.shape[:2]
    C = tokens[0][1].data.shape[-1]
    if mode == "scale":
        parts = [T.reshape(t, (B, frames * s * s, C)) for s, t in tokens]
        return T.concat(parts, axis=1)
    if mode == "frame":
        parts = [T.reshape(t, (B, frames, s * s, C)) for s, t in tokens]
        total = sum(s * s for s, _ in tokens)
        return T.reshape(T.concat(parts, axis=2), (B, frames * total, C))
    parts = [T.reshape(T.tmean(t, axis=1), (B, s * s, C)) for s, t in tokens]
    return T.concat(parts, axis=1)
