import dataclasses
import sys
import time

import numpy as np

from scalescan.config import Config
from scalescan.train import evaluate, train_model

over = {}
for a in sys.argv[1:]:
    k, v = a.split("=")
    over[k] = v
cfg0 = Config()
fields = {f.name: f for f in dataclasses.fields(Config)}
kw = {}
for k, v in over.items():
    t = type(fields[k].default)
    kw[k] = t(v) if t is not tuple else tuple(int(x) for x in v.split(","))
base = dataclasses.replace(cfg0, **kw)

r1s = []
for seed in (0, 1, 2):
    cfg = dataclasses.replace(base, seed=seed)
    t0 = time.perf_counter()
    model, history, test_ds = train_model(cfg)
    rep = evaluate(model, test_ds)
    rep.pop("ranks")
    wall = time.perf_counter() - t0
    print(f"seed {seed}: {rep} loss0={history[0]:.4f} "
          f"lossN={history[-1]:.4f} [{wall:.0f}s]", flush=True)
    r1s.append(rep["r1"])
print(f"mean r1 = {np.mean(r1s):.2f}", flush=True)
