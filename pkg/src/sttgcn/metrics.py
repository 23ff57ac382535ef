"""MAE, MAPE and RMSE, overall and per horizon step."""
from dataclasses import dataclass, field

import numpy as np

from .errors import STTError, UsageError


class UndefinedMetricError(STTError, ValueError):
    kind = "undefined-metric"


def _pair(y, pred):
    y = np.asarray(y, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if y.shape != pred.shape:
        raise UsageError(f"shape mismatch {y.shape} vs {pred.shape}")
    return y, pred


def mae(y, pred):
    y, pred = _pair(y, pred)
    return float(np.mean(np.abs(y - pred)))


def rmse(y, pred):
    y, pred = _pair(y, pred)
    return float(np.sqrt(np.mean((y - pred) ** 2)))


def mape(y, pred):
    """Percent error over targets with ``|y| > 0``; zero targets are skipped."""
    y, pred = _pair(y, pred)
    keep = y != 0
    if not keep.any():
        raise UndefinedMetricError("MAPE undefined: every target is zero")
    return float(100.0 * np.mean(np.abs((y[keep] - pred[keep]) / y[keep])))


@dataclass
class MetricRow:
    label: str
    mae: float
    rmse: float
    mape: float
    n: int
    n_mape: int


@dataclass
class MetricReport:
    mae: float
    rmse: float
    mape: float
    n: int
    n_mape_excluded: int
    per_step: list = field(default_factory=list)
    seconds: float = 0.0

    def rows(self):
        overall = MetricRow("all", self.mae, self.rmse, self.mape, self.n, self.n - self.n_mape_excluded)
        return [overall] + list(self.per_step)


def _row(label, y, pred):
    try:
        m = mape(y, pred)
    except UndefinedMetricError:
        m = float("nan")
    return MetricRow(label, mae(y, pred), rmse(y, pred), m, y.size, int(np.count_nonzero(y)))


def report(y, pred, seconds=0.0):
    """Aggregate metrics plus one row per horizon step (the last axis)."""
    y, pred = _pair(y, pred)
    overall = _row("all", y, pred)
    per_step = [_row(str(h + 1), y[..., h], pred[..., h]) for h in range(y.shape[-1])]
    return MetricReport(
        mae=overall.mae,
        rmse=overall.rmse,
        mape=overall.mape,
        n=overall.n,
        n_mape_excluded=overall.n - overall.n_mape,
        per_step=per_step,
        seconds=seconds,
    )


def write_report(path, rep):
    with open(path, "w") as f:
        f.write("step,mae,rmse,mape,n,n_mape\n")
        for r in rep.rows():
            f.write(f"{r.label},{r.mae!r},{r.rmse!r},{r.mape!r},{r.n},{r.n_mape}\n")
