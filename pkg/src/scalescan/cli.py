"""Command line entry point.

Subcommands: gen-data, train, eval, bench, reproduce. All take
``--config`` (a flat key=value file), ``--seed`` (overrides the config's
seed) and ``--out`` (output directory). Deliberate failures exit 2 with
one line on stderr; anything else is a bug and keeps its traceback.

Datasets are pure functions of (config, seed): train and eval regenerate
them internally, gen-data materializes the same thing to disk for
inspection.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .bench import bench_to_dir
from .config import config_dict, load_config
from .data import splits
from .errors import ScaleScanError
from .reproduce import AXES, run_axis
from .tio import save_tensor
from .train import evaluate, load_checkpoint, train_to_dir


def _common(sp):
    sp.add_argument("--config", default=None, help="key=value config file")
    sp.add_argument("--seed", type=int, default=None, help="override the config seed")
    sp.add_argument("--out", required=True, help="output directory")


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="scalescan",
        description="multi-scale video retrieval with selective scan learners")
    sub = p.add_subparsers(dest="cmd", required=True)
    _common(sub.add_parser("gen-data", help="write the synthetic dataset to disk"))
    _common(sub.add_parser("train", help="train a model and checkpoint it"))
    ev = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _common(ev)
    ev.add_argument("--checkpoint", required=True, help="checkpoint directory")
    _common(sub.add_parser("bench", help="compute/memory sweep of the mixers"))
    rp = sub.add_parser("reproduce", help="run one ablation axis")
    rp.add_argument("axis", choices=sorted(AXES))
    _common(rp)
    return p


def _gen_data(cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_ds, test_ds = splits(cfg, cfg.seed)
    save_tensor(out / "bank_spatial.must", train_ds.bank.spatial)
    save_tensor(out / "bank_channel.must", train_ds.bank.channel)
    save_tensor(out / "bank_text_dir.must", train_ds.bank.text_dir)
    for name, ds in (("train", train_ds), ("test", test_ds)):
        save_tensor(out / f"{name}_text.must", ds.text)
        meta = np.stack([ds.pattern_id.astype(np.float64),
                         ds.video_seed.astype(np.float64)], axis=1)
        save_tensor(out / f"{name}_meta.must", meta)
    (out / "dataset.json").write_text(json.dumps({
        "config": config_dict(cfg),
        "train_pairs": len(train_ds.pattern_id),
        "test_pairs": len(test_ds.pattern_id),
        "meta_columns": ["pattern_id", "video_seed"],
    }, indent=2, sort_keys=True))


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    overrides = {"seed": str(args.seed)} if args.seed is not None else None
    t0 = time.perf_counter()
    try:
        if args.cmd == "eval":
            model = load_checkpoint(args.checkpoint)
            cfg = model.cfg
            seed = args.seed if args.seed is not None else cfg.seed
            _, test_ds = splits(cfg, seed)
            report = evaluate(model, test_ds)
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
            print(f"r1={report['r1']:.1f} r5={report['r5']:.1f} r10={report['r10']:.1f} "
                  f"mdr={report['mdr']:.1f} mnr={report['mnr']:.2f}", flush=True)
        else:
            cfg = load_config(args.config, overrides)
            if args.cmd == "gen-data":
                _gen_data(cfg, args.out)
            elif args.cmd == "train":
                report = train_to_dir(cfg, args.out)
                t = report["test"]
                print(f"r1={t['r1']:.1f} r5={t['r5']:.1f} r10={t['r10']:.1f} "
                      f"mdr={t['mdr']:.1f} mnr={t['mnr']:.2f}", flush=True)
            elif args.cmd == "bench":
                bench_to_dir(cfg, args.out)
            elif args.cmd == "reproduce":
                run_axis(args.axis, cfg, args.out)
    except ScaleScanError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"done in {time.perf_counter() - t0:.1f}s", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
