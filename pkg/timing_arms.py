import time
import numpy as np
from scalescan.config import Config
from scalescan.data import splits, videos_for
from scalescan.model import Model
from scalescan.retrieval import clamp_temperature, info_nce
from scalescan.train import Sgd, sample_batch, evaluate

t0 = time.perf_counter()
base = Config(batch=3, conv_layers=1, amplitude=30.0, lr=0.15)
train_ds, test_ds = splits(base, 0)
print(f"data gen: {time.perf_counter() - t0:.1f}s")

def step_time(cfg, nsteps=10):
    model = Model(cfg)
    opt = Sgd(model.params(), cfg.lr, cfg.momentum)
    rng = np.random.default_rng(7)
    times = []
    for s in range(nsteps + 2):
        t = time.perf_counter()
        idx = sample_batch(train_ds, cfg.batch, rng)
        videos = videos_for(train_ds, idx)
        v = model.forward_video(videos)
        te = model.forward_text(train_ds.text[idx])
        loss = info_nce(v, te, model.tau, symmetric=cfg.symmetric_loss)
        opt.zero_grad()
        loss.backward()
        opt.step()
        clamp_temperature(model.tau)
        if s >= 2:
            times.append(time.perf_counter() - t)
    return float(np.mean(times)), model

for layers in (4, 2):
    for name, kw in [("default", {}),
                     ("scales1", {"scales": (1,)}),
                     ("mambaout", {"block": "mambaout", "variant": "none"})]:
        cfg = Config(batch=3, conv_layers=1, amplitude=30.0, lr=0.15,
                     layers=layers, **kw)
        dt, model = step_time(cfg)
        print(f"layers={layers} {name:9s} {dt*1000:7.1f} ms/step "
              f"-> 500 steps = {dt*500:6.1f}s")
        if name == "default":
            t = time.perf_counter()
            evaluate(model, test_ds)
            print(f"    eval(100 pairs): {time.perf_counter() - t:.1f}s")
