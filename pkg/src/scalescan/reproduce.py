"""One-command ablation grids.

Each axis fixes everything except one knob, trains from scratch per
setting, and writes a CSV of retrieval metrics. ``plan`` builds the
(label, config) list without running anything, so tests can pin the
grids; ``run_axis`` does the work.
"""

from __future__ import annotations

import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from .config import Config
from .errors import ConfigError
from .train import evaluate, train_model

AXES = ("aggregation", "block", "layers", "residual", "scales", "scan")

_SCALE_GRID = [(1,), (1, 3), (1, 3, 7), (1, 3, 7, 14), (1, 3, 7, 14, 28)]


def plan(axis: str, base: Config) -> list[tuple[str, Config]]:
    if axis == "scales":
        return [("+".join(map(str, s)), replace(base, scales=s)) for s in _SCALE_GRID]
    if axis == "scan":
        return [(v, replace(base, block="mamba", variant=v))
                for v in ("none", "v1", "v2")]
    if axis == "layers":
        return [(str(d), replace(base, layers=d)) for d in (0, 2, 4, 8, 16)]
    if axis == "block":
        out = []
        for blk in ("mamba", "mambaout", "attention"):
            variant = "none" if blk == "attention" else base.variant
            out.append((blk, replace(base, block=blk, variant=variant)))
        return out
    if axis == "aggregation":
        return [(m, replace(base, aggregation=m)) for m in ("scale", "frame", "spatial")]
    if axis == "residual":
        return [("with", replace(base, residual=True)),
                ("without", replace(base, residual=False))]
    raise ConfigError(f"unknown reproduce axis {axis!r}, expected one of {AXES}")


def run_axis(axis: str, base: Config, out_dir, log=sys.stderr) -> list[dict]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for label, cfg in plan(axis, base):
        t0 = time.perf_counter()
        model, history, test_ds = train_model(cfg, log=None)
        report = evaluate(model, test_ds)
        wall = time.perf_counter() - t0
        row = {"value": label, "r1": report["r1"], "r5": report["r5"],
               "r10": report["r10"], "mdr": report["mdr"], "mnr": report["mnr"],
               "final_loss": history[-1]}
        rows.append(row)
        if log is not None:
            print(f"reproduce {axis}={label}: r1={row['r1']:.1f} r5={row['r5']:.1f} "
                  f"mdr={row['mdr']:.1f} ({wall:.0f}s)", file=log, flush=True)
    with open(out / f"reproduce_{axis}.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)
    (out / f"reproduce_{axis}.json").write_text(json.dumps(rows, indent=2, sort_keys=True))
    return rows
