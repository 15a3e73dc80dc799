import numpy as np
from scalescan.metrics import retrieval_report


def run(Ftr, Ttr, Fte, Tte, lr, batch, steps, tau0=1.0, tau_lr_scale=1.0, seed=0,
        verbose=False):
    rng = np.random.default_rng(seed)
    D, C = Ftr.shape[1], Ttr.shape[1]
    Wv = rng.normal(size=(D, C)) / np.sqrt(D)
    bv = np.zeros(C)
    Wt = rng.normal(size=(C, C)) / np.sqrt(C)
    bt = np.zeros(C)
    tau = tau0
    vel = {}
    params = {"Wv": Wv, "bv": bv, "Wt": Wt, "bt": bt}

    def norm_rows(X):
        n = np.linalg.norm(X, axis=1, keepdims=True)
        return X / n, n

    first = None
    for step in range(steps):
        idx = rng.choice(len(Ftr), size=batch, replace=False)
        f, x = Ftr[idx], Ttr[idx]
        v_raw = f @ Wv + bv
        t_raw = x @ Wt + bt
        v, nv = norm_rows(v_raw)
        t, nt = norm_rows(t_raw)
        Sc = v @ t.T
        S = Sc / tau

        def ce_rows(S):
            m = S.max(1, keepdims=True)
            e = np.exp(S - m)
            p = e / e.sum(1, keepdims=True)
            lse = m[:, 0] + np.log(e.sum(1))
            return np.mean(lse - np.diag(S)), (p - np.eye(batch)) / batch

        L1, G1 = ce_rows(S)
        L2, G2 = ce_rows(S.T)
        loss = 0.5 * (L1 + L2)
        G = 0.5 * (G1 + G2.T)                # dL/dS
        if first is None:
            first = loss
        dtau = -(G * Sc).sum() / tau ** 2
        Gv = (G @ t) / tau
        Gt = (G.T @ v) / tau

        def back_norm(Gn, n, Xn):
            return (Gn - Xn * (Gn * Xn).sum(1, keepdims=True)) / n

        Gv_raw = back_norm(Gv, nv, v)
        Gt_raw = back_norm(Gt, nt, t)
        grads = {"Wv": f.T @ Gv_raw, "bv": Gv_raw.sum(0),
                 "Wt": x.T @ Gt_raw, "bt": Gt_raw.sum(0)}
        for k in params:
            vel[k] = 0.9 * vel.get(k, 0) - lr * grads[k]
            params[k] += vel[k]
        vel["tau"] = 0.9 * vel.get("tau", 0) - lr * tau_lr_scale * dtau
        tau = float(np.clip(tau + vel["tau"], 1e-3, 1.0))
        if verbose and (step % max(1, steps // 10) == 0):
            gw = np.linalg.norm(grads["Wv"])
            print(f"  step {step}: loss {loss:.4f} tau {tau:.3f} |dWv| {gw:.2e} "
                  f"sim spread {Sc.std():.3f}")
    v_te, _ = norm_rows(Fte @ Wv + bv)
    t_te, _ = norm_rows(Tte @ Wt + bt)
    rep = retrieval_report(t_te @ v_te.T)
    return first, loss, tau, rep
