"""Synthetic planted-signal video/text pairs.

Patterns come in groups. Every group owns a sparse unit channel
direction; every pattern in the group owns its own zero-mean, unit-norm
k x k spatial map. A video of pattern m is white noise with
``amplitude * map_m (x) direction_g(m)`` stamped at ``pattern_sites``
random grid locations in a random half of its frames, then standardized
to global mean 0 / std 1, which erases all first-order global statistics
of the plant.

The group structure is the point of the exercise:

* the spatial maps sum to zero, so space-averaged (or per-channel mean)
  features see exactly nothing - ``mean_pool_probe`` certifies that;
* a 1x1-scale view can recover which channels light up, hence the group,
  but patterns within a group differ only in spatial arrangement, so a
  coarse-only model is structurally capped near group-level retrieval;
* fine scales see the arrangement and can tell group members apart -
  ``matched_filter_probe`` certifies the information is really there.

Text embeddings are an arbitrary unit direction per pattern plus noise,
re-normalized; the towers have to agree on the pairing by training.

Videos are never stored: each pair carries a seed and ``synth_video``
regenerates the tensor bit-identically on demand, so datasets on disk
are small (bank, texts, pair metadata).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import Config
from .errors import ContractError


@dataclass
class PatternBank:
    spatial: np.ndarray    # (M, k, k) zero-mean, unit-norm maps
    channel: np.ndarray    # (M, C) unit direction, shared within a group
    text_dir: np.ndarray   # (M, C) unit direction the text side uses
    sites: int             # plant sites per hot frame


@dataclass
class Dataset:
    bank: PatternBank
    pattern_id: np.ndarray  # (n,)
    video_seed: np.ndarray  # (n,)
    text: np.ndarray        # (n, C)
    frames: int
    grid: int
    channels: int
    amplitude: float


def make_bank(rng: np.random.Generator, patterns: int, size: int, channels: int,
              active: int, group: int, sites: int) -> PatternBank:
    spatial = rng.normal(size=(patterns, size, size))
    spatial -= spatial.mean(axis=(1, 2), keepdims=True)
    spatial /= np.linalg.norm(spatial, axis=(1, 2), keepdims=True)
    active = min(active, channels)
    n_groups = -(-patterns // group)
    group_dirs = np.zeros((n_groups, channels))
    for g in range(n_groups):
        sel = rng.choice(channels, size=active, replace=False)
        group_dirs[g, sel] = rng.normal(size=active)
    group_dirs /= np.linalg.norm(group_dirs, axis=1, keepdims=True)
    channel = group_dirs[np.arange(patterns) // group]
    text_dir = rng.normal(size=(patterns, channels))
    text_dir /= np.linalg.norm(text_dir, axis=1, keepdims=True)
    return PatternBank(spatial, channel, text_dir, sites)


def synth_video(bank: PatternBank, pattern: int, seed: int, frames: int,
                grid: int, channels: int, amplitude: float) -> np.ndarray:
    """Deterministically rebuild one (T, G, G, C) video from its seed."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(frames, grid, grid, channels))
    k = bank.spatial.shape[1]
    locs = rng.integers(0, grid - k + 1, size=(bank.sites, 2))
    hot = rng.choice(frames, size=max(1, frames // 2), replace=False)
    plant = amplitude * bank.spatial[pattern][:, :, None] * bank.channel[pattern]
    for r0, c0 in locs:
        v[hot, r0:r0 + k, c0:c0 + k, :] += plant
    v -= v.mean()
    v /= v.std()
    return v


def make_dataset(cfg: Config, rng: np.random.Generator, n_pairs: int,
                 bank: PatternBank | None = None) -> Dataset:
    if bank is None:
        bank = make_bank(rng, cfg.patterns, cfg.pattern_size, cfg.channels,
                         cfg.pattern_channels, cfg.pattern_group, cfg.pattern_sites)
    pattern_id = rng.integers(0, cfg.patterns, size=n_pairs)
    # seeds stay below 2**53 so they survive a float64 round-trip on disk
    video_seed = rng.integers(0, 2 ** 53, size=n_pairs)
    text = bank.text_dir[pattern_id] + cfg.text_noise * rng.normal(
        size=(n_pairs, cfg.channels))
    text /= np.linalg.norm(text, axis=1, keepdims=True)
    return Dataset(bank, pattern_id, video_seed, text,
                   cfg.frames, cfg.grid, cfg.channels, cfg.amplitude)


def splits(cfg: Config, seed: int) -> tuple[Dataset, Dataset]:
    """The train/test datasets implied by a config and seed. One bank is
    shared; test pairs use fresh noise, sites, and locations."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(17,)))
    bank = make_bank(rng, cfg.patterns, cfg.pattern_size, cfg.channels,
                     cfg.pattern_channels, cfg.pattern_group, cfg.pattern_sites)
    train = make_dataset(cfg, rng, cfg.train_pairs, bank)
    test = make_dataset(cfg, rng, cfg.test_pairs, bank)
    return train, test


def videos_for(ds: Dataset, idx) -> np.ndarray:
    idx = np.asarray(idx)
    out = np.empty((len(idx), ds.frames, ds.grid, ds.grid, ds.channels))
    for row, i in enumerate(idx):
        out[row] = synth_video(ds.bank, int(ds.pattern_id[i]), int(ds.video_seed[i]),
                               ds.frames, ds.grid, ds.channels, ds.amplitude)
    return out


# -- leak oracles ----------------------------------------------------------


def mean_pool_probe(train: Dataset, test: Dataset) -> float:
    """Accuracy of ridge-regressed per-channel means at naming the pattern.

    This is the strongest purely global-mean classifier; near-chance
    accuracy certifies that the plant is invisible to first-order global
    statistics (the spatial maps integrate to zero and standardization
    removes the rest).
    """
    def feats(ds):
        X = np.empty((len(ds.pattern_id), ds.channels))
        for i in range(len(ds.pattern_id)):
            v = synth_video(ds.bank, int(ds.pattern_id[i]), int(ds.video_seed[i]),
                            ds.frames, ds.grid, ds.channels, ds.amplitude)
            X[i] = v.mean(axis=(0, 1, 2))
        return X

    Xtr, Xte = feats(train), feats(test)
    M = train.bank.spatial.shape[0]
    Y = np.eye(M)[train.pattern_id]
    A = Xtr.T @ Xtr + 1e-3 * np.eye(train.channels)
    W = np.linalg.solve(A, Xtr.T @ Y)
    pred = (Xte @ W).argmax(axis=1)
    return float(np.mean(pred == test.pattern_id))


def matched_filter_probe(ds: Dataset, limit: int | None = None) -> float:
    """Accuracy of sliding the true templates over each video (max over
    frames and positions of the template inner product). Near-perfect
    accuracy certifies the plant carries enough energy to find."""
    n = len(ds.pattern_id) if limit is None else min(limit, len(ds.pattern_id))
    k = ds.bank.spatial.shape[1]
    M = ds.bank.spatial.shape[0]
    hits = 0
    for i in range(n):
        v = synth_video(ds.bank, int(ds.pattern_id[i]), int(ds.video_seed[i]),
                        ds.frames, ds.grid, ds.channels, ds.amplitude)
        best = np.full(M, -np.inf)
        for m in range(M):
            proj = v @ ds.bank.channel[m]                    # (T, G, G)
            for r in range(ds.grid - k + 1):
                for c in range(ds.grid - k + 1):
                    score = np.einsum(
                        "tij,ij->t", proj[:, r:r + k, c:c + k], ds.bank.spatial[m]).max()
                    best[m] = max(best[m], score)
        hits += int(best.argmax() == ds.pattern_id[i])
    return hits / n


def check_indices(ds: Dataset, idx) -> np.ndarray:
    idx = np.asarray(idx)
    if idx.size == 0 or idx.min() < 0 or idx.max() >= len(ds.pattern_id):
        raise ContractError(f"pair indices out of range for dataset of {len(ds.pattern_id)}")
    return idx
