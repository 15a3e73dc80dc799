"""The full video-text retrieval model.

Video side: frames -> per-scale pyramid -> one flat token sequence
(ordering per config) -> residual scan stack -> pooled, L2-normalized
embedding. Text embeddings arrive precomputed; the text side only
normalizes them. All representation learning therefore happens in the
pyramid convolutions and the scan stack; the only other learnable is
the similarity temperature.

Each component draws its parameters from its own child RNG stream, so
changing the stack depth leaves the pyramid initialization untouched
(a depth-0 model and a freshly initialized deep model then embed
identically, because untrained layers are exact identities).
"""

from __future__ import annotations

import numpy as np

from .aggregate import aggregate_batched, layout
from .config import Config
from .errors import ContractError
from .pyramid import Pyramid
from .retrieval import l2_normalize_rows, make_temperature, pool_sequence
from .ssm import BlockConfig, Stack
from . import tensor as T
from .tensor import Tensor


def _child_rng(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))


class Model:
    def __init__(self, cfg: Config):
        self.cfg = cfg
        block_cfg = BlockConfig(
            channels=cfg.channels, kind=cfg.block, variant=cfg.variant,
            d_state=cfg.d_state, expand=cfg.expand, conv_kernel=cfg.conv_kernel)
        self.pyramid = Pyramid(cfg.grid, cfg.channels, cfg.scales,
                               conv_layers=cfg.conv_layers,
                               rng=_child_rng(cfg.seed, 1))
        self.stack = Stack(block_cfg, cfg.layers, _child_rng(cfg.seed, 2),
                           residual=cfg.residual)
        self.tau = make_temperature(cfg.temperature_init)
        self.layout = layout(cfg.aggregation, cfg.scales, cfg.frames)

    def params(self) -> dict[str, Tensor]:
        out = dict(self.pyramid.tensors("pyramid"))
        out.update(self.stack.tensors("stack"))
        out["head.tau"] = self.tau
        return out

    def forward_video(self, frames) -> Tensor:
        x = frames if isinstance(frames, Tensor) else Tensor(frames)
        if x.data.ndim != 5:
            raise ContractError(f"videos are (B,T,G,G,C), got {x.data.shape}")
        B, F = x.data.shape[0], x.data.shape[1]
        cfg = self.cfg
        if F != cfg.frames:
            raise ContractError(f"expected {cfg.frames} frames, got {F}")
        flat = T.reshape(x, (B * F, cfg.grid, cfg.grid, cfg.channels))
        toks = [(s, T.reshape(t, (B, F) + t.data.shape[1:]))
                for s, t in self.pyramid.forward(flat)]
        seq = aggregate_batched(toks, cfg.aggregation)
        seq = self.stack.forward(seq)
        pooled = pool_sequence(seq, self.layout, cfg.pooling)
        return l2_normalize_rows(pooled)

    def forward_text(self, text) -> Tensor:
        x = text if isinstance(text, Tensor) else Tensor(text)
        if x.data.ndim != 2 or x.data.shape[1] != self.cfg.channels:
            raise ContractError(f"texts are (B,{self.cfg.channels}), got {x.data.shape}")
        return l2_normalize_rows(x)
