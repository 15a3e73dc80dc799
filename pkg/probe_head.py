"""Frozen-feature head experiment: can a linear head + InfoNCE exploit the
init features at all, and what lr/batch/tau does it need?"""
import time
import numpy as np
from scalescan.config import Config
from scalescan.data import splits
from scalescan.metrics import retrieval_report
from probe_init import pooled_feats
from scalescan.model import Model

cfg = Config()
train, test = splits(cfg, cfg.seed)
model = Model(cfg)
t0 = time.time()
Ftr = pooled_feats(model, train, np.arange(cfg.train_pairs))
Fte = pooled_feats(model, test, np.arange(cfg.test_pairs))
Ttr, Tte = train.text, test.text
print(f"features in {time.time()-t0:.0f}s; F std {Ftr.std():.3f}")
C = cfg.channels
D = Ftr.shape[1]


def run(lr, batch, steps, tau0=1.0, tau_lr_scale=1.0, seed=0):
    rng = np.random.default_rng(seed)
    Wv = rng.normal(size=(D, C)) / np.sqrt(D)
    bv = np.zeros(C)
    Wt = rng.normal(size=(C, C)) / np.sqrt(C)
    bt = np.zeros(C)
    log_items = []
    tau = tau0
    vel = {}
    params = {"Wv": Wv, "bv": bv, "Wt": Wt, "bt": bt}

    def norm_rows(X):
        n = np.linalg.norm(X, axis=1, keepdims=True)
        return X / n, n

    for step in range(steps):
        idx = rng.choice(len(Ftr), size=batch, replace=False)
        f, x = Ftr[idx], Ttr[idx]
        v_raw = f @ Wv + bv
        t_raw = x @ Wt + bt
        v, nv = norm_rows(v_raw)
        t, nt = norm_rows(t_raw)
        S = v @ t.T / tau
        # symmetric InfoNCE
        def ce_rows(S):
            m = S.max(1, keepdims=True)
            lse = m[:, 0] + np.log(np.exp(S - m).sum(1))
            return np.mean(lse - np.diag(S)), (np.exp(S - m) / np.exp(S - m).sum(1, keepdims=True) - np.eye(batch)) / batch
        L1, G1 = ce_rows(S)
        L2, G2t = ce_rows(S.T)
        loss = 0.5 * (L1 + L2)
        G = 0.5 * (G1 + G2t.T)              # dL/dS
        dtau = -(G * (v @ t.T)).sum() / tau**2
        Gv = (G @ t) / tau                   # dL/dv
        Gt = (G.T @ v) / tau
        # through normalize
        def back_norm(Graw, X, n, Xn):
            return (Graw - Xn * (Graw * Xn).sum(1, keepdims=True)) / n
        Gv_raw = back_norm(Gv, v_raw, nv, v)
        Gt_raw = back_norm(Gt, t_raw, nt, t)
        grads = {"Wv": f.T @ Gv_raw, "bv": Gv_raw.sum(0),
                 "Wt": x.T @ Gt_raw, "bt": Gt_raw.sum(0)}
        for k in params:
            vel[k] = 0.9 * vel.get(k, 0) - lr * grads[k]
            params[k] += vel[k]
        vel["tau"] = 0.9 * vel.get("tau", 0) - lr * tau_lr_scale * dtau
        tau = float(np.clip(tau + vel["tau"], 1e-3, 1.0))
        if step % 100 == 0 or step == steps - 1:
            log_items.append((step, loss, tau))
    v_te, _ = norm_rows(Fte @ Wv + bv)
    t_te, _ = norm_rows(Tte @ Wt + bt)
    rep = retrieval_report(t_te @ v_te.T)
    return log_items, rep


for lr, batch, steps, ts in [(2.0, 16, 1000, 1), (5.0, 16, 1000, 1), (10.0, 16, 1000, 1),
                             (2.0, 32, 2000, 1), (5.0, 32, 2000, 1), (10.0, 32, 2000, 1),
                             (20.0, 32, 2000, 1), (5.0, 32, 2000, 5), (10.0, 32, 2000, 5),
                             (10.0, 4, 2000, 1), (10.0, 8, 2000, 1)]:
    t0 = time.time()
    logi, rep = run(lr, batch, steps, tau_lr_scale=ts)
    tail = logi[-1]
    print(f"lr={lr} B={batch} steps={steps} ts={ts}: loss {logi[0][1]:.3f}->{tail[1]:.3f} "
          f"tau={tail[2]:.3f} R1={rep['r1']:.1f} R5={rep['r5']:.1f} mdr={rep['mdr']:.1f} "
          f"[{time.time()-t0:.1f}s]")
