"""Training, evaluation, and checkpointing.

Plain SGD with classical momentum; the temperature is clamped back into
its legal range after every step. A non-finite loss aborts immediately
with the batch's pair indices and seeds in the message, because a NaN
that trains for another hour is the worst kind of NaN.

Checkpoints are a directory of one tensor file per parameter plus a
manifest. Reports deliberately contain no wall-clock fields; identical
config and seed must produce byte-identical reports and checkpoints.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from .config import Config, config_dict, load_config
from .data import Dataset, splits, videos_for
from .errors import ContractError, DomainError
from .metrics import retrieval_report
from .model import Model
from .retrieval import clamp_temperature, info_nce
from .tensor import Tensor, no_grad
from .tio import load_tensor, save_tensor


class Sgd:
    def __init__(self, params: dict[str, Tensor], lr: float, momentum: float):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        for k, p in self.params.items():
            if p.grad is None:
                continue
            v = self.velocity[k]
            v *= self.momentum
            v -= self.lr * p.grad
            p.data += v

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def sample_batch(ds: Dataset, batch: int, rng: np.random.Generator) -> np.ndarray:
    """Pair indices for one step, patterns distinct within the batch.

    Two videos of the same pattern in one batch would make the
    contrastive target ill-posed (a second column carries the right
    text), so batches are stratified by pattern whenever enough
    distinct patterns exist.
    """
    pids = np.unique(ds.pattern_id)
    if batch > pids.size:
        return rng.choice(len(ds.pattern_id), size=batch, replace=False)
    chosen = rng.choice(pids, size=batch, replace=False)
    idx = np.empty(batch, dtype=np.int64)
    for j, pid in enumerate(chosen):
        rows = np.flatnonzero(ds.pattern_id == pid)
        idx[j] = rows[rng.integers(rows.size)]
    return idx


def train_model(cfg: Config, log=None) -> tuple[Model, list[float], Dataset]:
    """Train from scratch; returns the model, per-step losses, and the
    test split (so callers do not re-derive it)."""
    train_ds, test_ds = splits(cfg, cfg.seed)
    model = Model(cfg)
    params = model.params()
    opt = Sgd(params, cfg.lr, cfg.momentum)
    order_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=cfg.seed, spawn_key=(99,)))
    history: list[float] = []
    for step in range(cfg.steps):
        idx = sample_batch(train_ds, cfg.batch, order_rng)
        videos = videos_for(train_ds, idx)
        v_emb = model.forward_video(videos)
        t_emb = model.forward_text(train_ds.text[idx])
        loss = info_nce(v_emb, t_emb, model.tau, symmetric=cfg.symmetric_loss)
        val = loss.item()
        if not np.isfinite(val):
            raise DomainError(
                f"non-finite loss {val} at step {step}; batch pairs {idx.tolist()}, "
                f"video seeds {train_ds.video_seed[idx].tolist()}")
        history.append(val)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if clamp_temperature(model.tau):
            # projected coordinate: stale velocity would keep shoving
            # tau into the wall, so drop it
            opt.velocity["head.tau"][...] = 0.0
        if log is not None and (step % 25 == 0 or step == cfg.steps - 1):
            print(f"step {step:5d}  loss {val:.4f}  tau {model.tau.item():.4f}",
                  file=log, flush=True)
    return model, history, test_ds


def embed_dataset(model: Model, ds: Dataset, chunk: int = 10):
    """Video and text embeddings for a whole dataset, without gradients."""
    n = len(ds.pattern_id)
    v_out = np.empty((n, model.cfg.channels))
    t_out = np.empty((n, model.cfg.channels))
    with no_grad():
        for lo in range(0, n, chunk):
            idx = np.arange(lo, min(lo + chunk, n))
            v_out[idx] = model.forward_video(videos_for(ds, idx)).numpy()
            t_out[idx] = model.forward_text(ds.text[idx]).numpy()
    return v_out, t_out


def evaluate(model: Model, ds: Dataset) -> dict:
    """Text-to-video retrieval over a dataset: query i is text i, the
    correct candidate is video i."""
    v_emb, t_emb = embed_dataset(model, ds)
    sim = t_emb @ v_emb.T
    return retrieval_report(sim)


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(model: Model, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = model.params()
    for name, p in params.items():
        save_tensor(out / f"{name}.must", p.data)
    manifest = {
        "format": 1,
        "config": config_dict(model.cfg),
        "params": sorted(params),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(ckpt_dir) -> Model:
    ckpt = Path(ckpt_dir)
    manifest_path = ckpt / "manifest.json"
    if not manifest_path.exists():
        raise ContractError(f"{ckpt} has no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    raw = {k: str(v) for k, v in manifest["config"].items()}
    for key in ("scales", "bench_frames"):
        raw[key] = ",".join(str(x) for x in manifest["config"][key])
    cfg = load_config(None, raw)
    model = Model(cfg)
    params = model.params()
    if sorted(params) != manifest["params"]:
        raise ContractError(f"{ckpt}: parameter list does not match this config")
    for name, p in params.items():
        arr = load_tensor(ckpt / f"{name}.must")
        if arr.shape != p.data.shape:
            raise ContractError(
                f"{ckpt}: {name} has shape {arr.shape}, model wants {p.data.shape}")
        p.data = arr
    return model


def train_to_dir(cfg: Config, out_dir, log=sys.stderr) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model, history, test_ds = train_model(cfg, log=log)
    save_checkpoint(model, out / "checkpoint")
    report = {
        "config": config_dict(cfg),
        "loss_history": history,
        "final_tau": model.tau.item(),
        "test": evaluate(model, test_ds),
    }
    (out / "train_report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return report
