import time
import numpy as np
from scalescan.config import Config
from scalescan.data import splits, videos_for, mean_pool_probe, matched_filter_probe
from scalescan.model import Model
from scalescan.tensor import Tensor, no_grad, reshape
from scalescan.aggregate import aggregate_batched
from scalescan import retrieval


def pooled_feats(model, ds, idx):
    out = []
    with no_grad():
        for i in range(0, len(idx), 10):
            v = Tensor(videos_for(ds, idx[i:i + 10]))
            B, F, G, _, C = v.data.shape
            flat = reshape(v, (B * F, G, G, C))
            feats = model.pyramid.forward(flat)
            feats = [(s, reshape(t, (B, F, s, s, C))) for s, t in feats]
            x = aggregate_batched(feats, model.cfg.aggregation)
            x = model.stack.forward(x)
            x = retrieval.pool_sequence(x, model.layout, model.cfg.pooling)
            out.append(x.data.copy())
    return np.concatenate(out)


def ridge_acc(Xtr, ytr, Xte, yte, M):
    Xtr = (Xtr - Xtr.mean(0)) / (Xtr.std(0) + 1e-8)
    Xte = (Xte - Xte.mean(0)) / (Xte.std(0) + 1e-8)
    Y = np.eye(M)[ytr]
    A = Xtr.T @ Xtr + 1e-1 * np.eye(Xtr.shape[1])
    W = np.linalg.solve(A, Xtr.T @ Y)
    return float(np.mean((Xte @ W).argmax(1) == yte))


cfg = Config()
train, test = splits(cfg, cfg.seed)
t0 = time.time()
print("mean-pool leak probe:", mean_pool_probe(train, test), "(chance %.3f)" % (1 / cfg.patterns))
print("matched filter (40):", matched_filter_probe(test, limit=40))
model = Model(cfg)
ntr = 240
idx_tr = np.arange(ntr)
idx_te = np.arange(len(test.pattern_id))
Xtr = pooled_feats(model, train, idx_tr)
Xte = pooled_feats(model, test, idx_te)
ytr, yte = train.pattern_id[:ntr], test.pattern_id
acc_p = ridge_acc(Xtr, ytr, Xte, yte, cfg.patterns)
acc_g = ridge_acc(Xtr, ytr // cfg.pattern_group, Xte, yte // cfg.pattern_group,
                  cfg.patterns // cfg.pattern_group)
print(f"init probe pattern acc={acc_p:.3f} (chance {1/cfg.patterns:.3f})  "
      f"group acc={acc_g:.3f} (chance {cfg.pattern_group/cfg.patterns:.3f})")
print(f"[{time.time()-t0:.1f}s]")
