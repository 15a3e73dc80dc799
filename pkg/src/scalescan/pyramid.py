"""Feature pyramid over a single-scale token grid.

Each video frame arrives as a (G, G, C) grid. For every requested scale
s the grid is first resized, then refined by a small per-scale conv
stack (3x3 channel-preserving conv, layer norm over channels, SiLU,
repeated ``conv_layers`` times; 0 disables refinement):

* s <  G : adaptive max-pool down to (s, s)
* s == G : no resize
* G < s <= 2G : nearest-neighbor upsample (source row floor(i*G/s))
* s > 2G : refused; blowing a grid up beyond twice its side invents
  nothing but cost, so it is a config error

Every scale owns its conv parameters; coarse and fine statistics differ
enough that sharing hurts.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError
from . import tensor as T
from .nnops import conv2d, layer_norm, pool2d
from .tensor import Tensor, accumulate_owned, apply


def check_scales(scales, grid: int) -> tuple[int, ...]:
    scales = tuple(scales)
    if not scales:
        raise ConfigError("at least one scale is required")
    if any(not isinstance(s, (int, np.integer)) or s < 1 for s in scales):
        raise ConfigError(f"scales must be positive integers, got {scales}")
    if list(scales) != sorted(set(scales)):
        raise ConfigError(f"scales must be strictly increasing, got {scales}")
    if scales[-1] > 2 * grid:
        raise ConfigError(
            f"scale {scales[-1]} exceeds twice the base grid ({grid})")
    return scales


def tokens_per_frame(scales) -> int:
    return int(sum(s * s for s in scales))


def _upsample_nearest(x: Tensor, s: int) -> Tensor:
    F, G = x.data.shape[0], x.data.shape[1]
    idx = (np.arange(s) * G) // s
    out = x.data[:, idx][:, :, idx]
    out = np.ascontiguousarray(out)

    def bw(g):
        dx = np.zeros_like(x.data)
        for i in range(s):
            tmp = dx[:, idx[i]]
            for j in range(s):
                tmp[:, idx[j]] += g[:, i, j]
            dx[:, idx[i]] = tmp
        accumulate_owned(x, dx)

    return apply(out, (x,), bw)


class Pyramid:
    """Per-scale resize plus conv refinement, parameters included."""

    def __init__(self, grid: int, channels: int, scales, conv_layers: int = 2,
                 rng: np.random.Generator | None = None):
        if grid < 1 or channels < 1:
            raise ConfigError(f"grid={grid} channels={channels}")
        if conv_layers < 0:
            raise ConfigError(f"conv_layers={conv_layers}")
        self.grid = grid
        self.channels = channels
        self.scales = check_scales(scales, grid)
        self.conv_layers = conv_layers
        if rng is None:
            rng = np.random.default_rng(0)
        self.stacks = {}
        std = (9 * channels) ** -0.5
        for s in self.scales:
            stack = []
            for _ in range(conv_layers):
                stack.append({
                    "w": Tensor(rng.normal(0.0, std, (3, 3, channels, channels)),
                                requires_grad=True),
                    "b": Tensor(np.zeros(channels), requires_grad=True),
                    "ln_g": Tensor(np.ones(channels), requires_grad=True),
                    "ln_b": Tensor(np.zeros(channels), requires_grad=True),
                })
            self.stacks[s] = stack

    def tensors(self, prefix: str = "pyramid"):
        for s, stack in self.stacks.items():
            for i, layer in enumerate(stack):
                for name, t in layer.items():
                    yield f"{prefix}.s{s}.conv{i}.{name}", t

    def forward(self, x: Tensor) -> list[tuple[int, Tensor]]:
        """x is (F, G, G, C) with frames in the leading axis (several
        videos may be stacked there). Returns (scale, tokens) pairs in
        ascending scale order, tokens shaped (F, s, s, C)."""
        if x.data.ndim != 4 or x.data.shape[1] != self.grid \
                or x.data.shape[2] != self.grid or x.data.shape[3] != self.channels:
            raise ContractError(
                f"pyramid wants (F, {self.grid}, {self.grid}, {self.channels}), "
                f"got {x.data.shape}")
        out = []
        for s in self.scales:
            if s < self.grid:
                t = pool2d(x, (s, s), kind="max")
            elif s == self.grid:
                t = x
            else:
                t = _upsample_nearest(x, s)
            for layer in self.stacks[s]:
                t = conv2d(t, layer["w"], layer["b"], stride=1, pad=1)
                t = layer_norm(t, layer["ln_g"], layer["ln_b"])
                t = T.silu(t)
            out.append((s, t))
        return out
