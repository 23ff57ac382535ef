"""Adam training loop with early stopping, plus checkpoint I/O."""
import ctypes
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import metrics
from ..errors import UsageError
from ..tensor_core import load_matrix, save_matrix
from .model import loss_and_grads, predict
from .params import ModelConfig, ModelParams, init_params

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "train_loss", "val_mae", "val_rmse", "val_mape")

_M_TRIM_THRESHOLD, _M_MMAP_THRESHOLD = -1, -3


def _keep_heap():
    """Ask glibc to recycle large buffers instead of mapping fresh pages.

    Every batch allocates the same few megabyte-sized temporaries; with the
    default thresholds each one is a new mmap and the page faults dominate.
    No-op off glibc.
    """
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(_M_MMAP_THRESHOLD, 1 << 26)
        libc.mallopt(_M_TRIM_THRESHOLD, 1 << 27)
    except (OSError, AttributeError):
        pass


class Adam:
    def __init__(self, params, lr=0.003, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            update = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            params[k] = params[k] - update


@dataclass
class TrainResult:
    params: ModelParams
    history: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def _targets(dataset, name):
    # dataset targets are (S, horizon, N); the model emits (S, N, horizon)
    x, y = dataset.part(name)
    return x, np.swapaxes(y, 1, 2)


def evaluate_split(dataset, adj, params, cfg, name="val"):
    x, y = _targets(dataset, name)
    pred = predict(x, adj, params, cfg, dataset.stats)
    return pred, y, metrics.report(y, pred)


def train(dataset, adj, cfg, params=None, max_epochs=None, callback=None, time_budget=None):
    """Mini-batch Adam on mean Huber loss of raw-scale predictions.

    Stops after ``cfg.patience`` epochs without a better validation MAE, or
    once an epoch ends past ``time_budget`` seconds, and returns the
    best-validation parameters with per-epoch history.
    """
    _keep_heap()
    t0 = time.perf_counter()
    for name in ("train", "val"):
        if len(dataset.splits.get(name, ())) == 0:
            raise UsageError(f"{name} split is empty")
    max_epochs = cfg.max_epochs if max_epochs is None else max_epochs
    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg) if params is None else params.copy()
    opt = Adam(params, lr=cfg.learning_rate)
    x_train, y_train = _targets(dataset, "train")
    best, best_mae, best_epoch, waited = params.copy(), np.inf, 0, 0
    history = []
    stopped = False
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(len(x_train))
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            loss, grads, _ = loss_and_grads(
                x_train[idx], y_train[idx], adj, params, cfg, dataset.stats
            )
            opt.step(params, grads)
            total += loss * len(idx)
        _, _, rep = evaluate_split(dataset, adj, params, cfg, "val")
        row = {
            "epoch": epoch,
            "train_loss": total / len(order),
            "val_mae": rep.mae,
            "val_rmse": rep.rmse,
            "val_mape": rep.mape,
        }
        history.append(row)
        log.info("epoch %d train_loss %.6g val_mae %.6g", epoch, row["train_loss"], rep.mae)
        if callback is not None:
            callback(row)
        if rep.mae < best_mae:
            best, best_mae, best_epoch, waited = params.copy(), rep.mae, epoch, 0
        else:
            waited += 1
            if waited >= cfg.patience:
                stopped = True
                break
        if time_budget is not None and time.perf_counter() - t0 > time_budget:
            stopped = True
            break
    return TrainResult(params=best, history=history, best_epoch=best_epoch, stopped_early=stopped)


def write_history(path, history):
    with open(path, "w") as f:
        f.write(",".join(HISTORY_FIELDS) + "\n")
        for row in history:
            f.write(",".join(repr(row[k]) if k != "epoch" else str(row[k]) for k in HISTORY_FIELDS) + "\n")


def save_checkpoint(directory, params, cfg, stats, **manifest):
    """``params.stm`` (1 x P flat vector) and ``checkpoint.json`` in ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_matrix(directory / "params.stm", params.flat()[None, :])
    body = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "n_params": params.total_count(),
        "stats": {"mean": stats.mean.tolist(), "std": stats.std.tolist()},
        **manifest,
    }
    (directory / "checkpoint.json").write_text(json.dumps(body, indent=2) + "\n")


def load_checkpoint(directory):
    from ..data_io import NormStats

    directory = Path(directory)
    body = json.loads((directory / "checkpoint.json").read_text())
    cfg = ModelConfig.from_dict(body["config"])
    params = ModelParams.from_flat(cfg, load_matrix(directory / "params.stm"))
    stats = NormStats(np.array(body["stats"]["mean"]), np.array(body["stats"]["std"]))
    return params, cfg, stats, body
