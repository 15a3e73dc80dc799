import numpy as np, time, sys
import dataclasses
from scalescan.config import Config
from scalescan.data import splits, videos_for
from scalescan.model import Model
from scalescan.tensor import Tensor, no_grad
from scalescan.retrieval import info_nce, clamp_temperature
from scalescan.train import Sgd, evaluate, sample_batch

over = {}
for a in sys.argv[1:]:
    k, v = a.split("=")
    over[k] = v
cfg = Config()
fields = {f.name: f for f in dataclasses.fields(Config)}
for k, v in over.items():
    t = type(fields[k].default)
    cfg = dataclasses.replace(cfg, **{k: t(v) if t is not tuple else tuple(int(x) for x in v.split(","))})
steps = cfg.steps
train, test = splits(cfg, cfg.seed)
model = Model(cfg)
opt = Sgd(model.params(), lr=cfg.lr, momentum=cfg.momentum)
order = np.random.default_rng(99)
probe_idx = np.arange(32)
probe_v = videos_for(train, probe_idx)
probe_t = train.text[probe_idx]


def probe():
    with no_grad():
        vs = []
        for i in range(0, 32, 8):
            vs.append(model.forward_video(Tensor(probe_v[i:i+8])).numpy())
        v = np.concatenate(vs)
        t = model.forward_text(Tensor(probe_t)).numpy()
        S = v @ t.T
        diag = np.diag(S).mean()
        off = (S.sum() - np.trace(S)) / (32 * 31)
        tau = model.tau.data.item()
        loss = -np.mean(np.log(np.exp(np.diag(S) / tau) / np.exp(S / tau).sum(1)))
        return loss, diag - off


t0 = time.time()
for step in range(steps + 1):
    if step % 50 == 0:
        L, margin = probe()
        print(f"step {step:4d} probe-loss {L:.5f} margin {margin:+.5f} "
              f"tau {model.tau.data.item():.4f} [{time.time()-t0:.0f}s]", flush=True)
    if step == steps:
        break
    idx = sample_batch(train, cfg.batch, order)
    v = model.forward_video(Tensor(videos_for(train, idx)))
    t = model.forward_text(Tensor(train.text[idx]))
    loss = info_nce(v, t, model.tau, symmetric=cfg.symmetric_loss)
    opt.zero_grad(); loss.backward(); opt.step()
    if clamp_temperature(model.tau):
        opt.velocity["head.tau"][...] = 0.0

rep = evaluate(model, test)
print({k: rep[k] for k in ("r1", "r5", "r10", "mdr", "mnr")}, flush=True)
