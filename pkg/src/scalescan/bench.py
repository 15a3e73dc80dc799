"""Compute/memory benchmark for the sequence mixers.

The predictor below enumerates, term by term, the same accounting the
ops report at runtime (see instrument.py for the conventions), so
``predicted_madds == measured_madds`` exactly; a unit test pins that.
Token counts follow the scale-major ordering: frames * sum(s^2) tokens.

Measurements run the stack forward alone (no pyramid, no loss), batch 1,
gradients off. Peak live scalars count buffers allocated inside the
measured region; the quadratic attention score matrix shows up there,
the scan's chunked state does not. Configs whose predicted cost exceeds
``bench_budget`` are skipped with a notice instead of grinding the
machine into swap; that cliff is the whole point of the comparison.
"""

from __future__ import annotations

import csv
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import Config
from .errors import ConfigError
from .instrument import measure
from .pyramid import check_scales, tokens_per_frame
from .ssm import Block, BlockConfig, Stack
from .tensor import Tensor, no_grad

CSV_COLUMNS = ("kind", "frames", "tokens", "predicted_madds",
               "measured_madds", "peak_scalars", "wall_ms")


def predict_block_madds(L: int, C: int, E: int, N: int, k: int,
                        kind: str, variant: str) -> int:
    """Forward MAdds of one block on an (1, L, C) input.

    Term by term against the implementation:
    in-proj matmul L*C*2E, bias L*2E; per direction the causal conv is k
    passes over L*E, SiLU L*E; the scan path adds the dt projection
    (L*E*E matmul, L*E bias, L*E softplus), B and C projections (L*E*N
    each), and the scan itself (7*L*E*N); A = -exp(A_log) costs 2*E*N per
    parameter set, and the tied bidirectional variant shares one set
    across both directions, so it pays that term once. Attention instead
    adds q/k/v (3*L*E*E), scores (L*L*E), the 1/sqrt(E) scale (L*L),
    softmax (3*L*L) and the value mix (L*L*E). Two-direction variants pay
    the direction twice plus an L*E add and an L*E halving. The gate
    costs SiLU plus multiply (2*L*E), the out-proj L*E*C + L*C.
    """
    m = L * C * 2 * E + L * 2 * E
    dirs = 1 if (variant == "none" or kind == "attention") else 2
    per_dir = k * L * E + L * E
    if kind == "mamba":
        per_dir += L * E * E + 2 * L * E
        per_dir += 2 * L * E * N
        per_dir += 7 * L * E * N
    elif kind == "attention":
        per_dir += 3 * L * E * E
        per_dir += 2 * L * L * E + 4 * L * L
    m += dirs * per_dir
    if kind == "mamba":
        a_sets = 1 if variant in ("none", "v1") else 2
        m += a_sets * 2 * E * N
    if dirs == 2:
        m += 2 * L * E
    m += 2 * L * E
    m += L * E * C + L * C
    return m


def predict_layer_madds(L: int, C: int, E: int, N: int, k: int,
                        kind: str, variant: str, residual: bool) -> int:
    """Block plus the residual wrapper: layer norm 7*L*C, gate linear
    L*C*C + L*C, and the skip add L*C when residual is on."""
    m = predict_block_madds(L, C, E, N, k, kind, variant)
    m += 7 * L * C + L * C * C + L * C
    if residual:
        m += L * C
    return m


def predict_stack_madds(L: int, depth: int, C: int, E: int, N: int, k: int,
                        kind: str, variant: str, residual: bool = True) -> int:
    return depth * predict_layer_madds(L, C, E, N, k, kind, variant, residual)


@dataclass
class BenchRow:
    kind: str
    frames: int
    tokens: int
    predicted_madds: int
    measured_madds: int | None = None
    peak_scalars: int | None = None
    wall_ms: float | None = None

    @property
    def skipped(self) -> bool:
        return self.measured_madds is None


def sweep(cfg: Config, kinds=("mamba", "attention"), log=None) -> list[BenchRow]:
    scales = check_scales(cfg.scales, cfg.grid)
    per_frame = tokens_per_frame(scales)
    C = cfg.channels
    E = cfg.expand * C
    N = cfg.d_state
    k = cfg.conv_kernel
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for kind in kinds:
        variant = "none" if kind == "attention" else cfg.variant
        bc = BlockConfig(channels=C, kind=kind, variant=variant,
                         d_state=N, expand=cfg.expand, conv_kernel=k)
        stack = Stack(bc, cfg.layers, np.random.default_rng(cfg.seed))
        for f in cfg.bench_frames:
            L = f * per_frame
            predicted = predict_stack_madds(L, cfg.layers, C, E, N, k, kind, variant)
            row = BenchRow(kind, f, L, predicted)
            rows.append(row)
            if predicted > cfg.bench_budget:
                if log is not None:
                    print(f"bench: skipping {kind} at {f} frames "
                          f"({predicted:.3e} predicted MAdds over budget "
                          f"{cfg.bench_budget:.3e})", file=log, flush=True)
                continue
            x = Tensor(rng.standard_normal((1, L, C)))
            with no_grad():
                with measure() as meas:
                    t0 = time.perf_counter()
                    y = stack.forward(x)
                    wall = (time.perf_counter() - t0) * 1e3
                del y
            row.measured_madds = meas.madds
            row.peak_scalars = meas.peak_scalars
            row.wall_ms = wall
            if log is not None:
                print(f"bench: {kind} frames={f} tokens={L} madds={meas.madds:.3e} "
                      f"peak={meas.peak_scalars:.3e} wall={wall:.1f}ms",
                      file=log, flush=True)
    return rows


def growth_summary(rows: list[BenchRow]) -> dict:
    """MAdd and peak-memory growth ratios across frame doublings."""
    out: dict = {}
    by_kind: dict[str, list[BenchRow]] = {}
    for r in rows:
        by_kind.setdefault(r.kind, []).append(r)
    for kind, rs in by_kind.items():
        pairs = []
        measured = {r.frames: r for r in rs if not r.skipped}
        for f1 in sorted(measured):
            f2 = 2 * f1
            if f2 in measured:
                a, b = measured[f1], measured[f2]
                pairs.append({
                    "frames": [f1, f2],
                    "madds_ratio": b.measured_madds / a.measured_madds,
                    "peak_ratio": b.peak_scalars / a.peak_scalars,
                })
        out[kind] = pairs
    return out


def write_csv(rows: list[BenchRow], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([
                r.kind, r.frames, r.tokens, r.predicted_madds,
                "" if r.measured_madds is None else r.measured_madds,
                "" if r.peak_scalars is None else r.peak_scalars,
                "" if r.wall_ms is None else f"{r.wall_ms:.3f}",
            ])


def bench_to_dir(cfg: Config, out_dir, kinds=("mamba", "attention"), log=sys.stderr) -> dict:
    if not kinds:
        raise ConfigError("bench needs at least one block kind")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = sweep(cfg, kinds=kinds, log=log)
    write_csv(rows, out / "bench.csv")
    summary = growth_summary(rows)
    (out / "bench_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary
