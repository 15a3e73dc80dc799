import sys, time
import dataclasses
import numpy as np
from scalescan.config import Config
from scalescan.train import train_model, evaluate

over = {}
for a in sys.argv[1:]:
    k, v = a.split("=")
    over[k] = v
cfg = Config()
for k, v in over.items():
    f = {f.name: f for f in dataclasses.fields(Config)}[k]
    t = type(f.default)
    cfg = dataclasses.replace(cfg, **{k: t(v) if t is not tuple else tuple(int(x) for x in v.split(","))})
t0 = time.time()
model, hist, test = train_model(cfg, log=sys.stdout)
rep = evaluate(model, cfg, test)
print({k: rep[k] for k in ("r1", "r5", "r10", "mdr", "mnr")},
      f"tau={model.tau.data.item():.3f} [{time.time()-t0:.0f}s]")
