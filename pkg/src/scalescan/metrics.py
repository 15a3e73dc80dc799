"""Retrieval metrics.

Ranks are pessimistic under ties by index: the rank of the true item is
1 plus the number of strictly better candidates plus the number of
equal-scoring candidates that precede it in index order. So a truth at
index 0 that ties everything still ranks 1, while the same scores with
truth at the last index rank it last.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError


def rank_of_truth(scores: np.ndarray, truth: int) -> int:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ContractError(f"scores must be a nonempty vector, got shape {scores.shape}")
    if not (0 <= truth < scores.size):
        raise ContractError(f"truth index {truth} outside [0, {scores.size})")
    st = scores[truth]
    better = int(np.count_nonzero(scores > st))
    tied_before = int(np.count_nonzero(scores[:truth] == st))
    return 1 + better + tied_before


def retrieval_report(sim: np.ndarray, truth: np.ndarray | None = None) -> dict:
    """Summarize a (queries x candidates) similarity matrix.

    truth[i] is the index of query i's correct candidate (defaults to the
    diagonal). Returns recall percentages at 1/5/10, median and mean
    rank, and the raw rank list, keyed r1/r5/r10/mdr/mnr/ranks.
    """
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.size == 0:
        raise ContractError(f"similarity matrix must be 2-d and nonempty, got {sim.shape}")
    q, n = sim.shape
    if truth is None:
        if q > n:
            raise ContractError(
                f"diagonal truth needs at least as many candidates as queries, got {sim.shape}")
        truth = np.arange(q)
    truth = np.asarray(truth)
    if truth.shape != (q,):
        raise ContractError(f"truth must have shape ({q},), got {truth.shape}")
    ranks = [rank_of_truth(sim[i], int(truth[i])) for i in range(q)]
    arr = np.asarray(ranks, dtype=np.float64)

    def recall(k):
        return float(100.0 * np.count_nonzero(arr <= k) / q)

    srt = np.sort(arr)
    if q % 2:
        mdr = float(srt[q // 2])
    else:
        mdr = float((srt[q // 2 - 1] + srt[q // 2]) / 2.0)
    return {
        "r1": recall(1),
        "r5": recall(5),
        "r10": recall(10),
        "mdr": mdr,
        "mnr": float(arr.mean()),
        "ranks": [int(r) for r in ranks],
    }
