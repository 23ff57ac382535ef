"""Flow series loading, normalisation, sliding windows, splits and a synthetic generator."""
import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, UsageError
from .stgraph import build_spatial_adjacency

FLOW_MAGIC = b"STF1"
STEPS_PER_DAY = 288


@dataclass
class FlowSeries:
    values: np.ndarray  # (n_steps, n_sensors)

    @property
    def n_steps(self):
        return self.values.shape[0]

    @property
    def n_sensors(self):
        return self.values.shape[1]


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x):
        return (x - self.mean) / self.std

    def invert(self, x):
        return x * self.std + self.mean


@dataclass
class WindowedDataset:
    """Sliding-window samples over one series.

    ``inputs`` are z-scored, shape ``(S, T, N, 1)``; ``targets`` stay on the
    raw scale, shape ``(S, horizon, N)``. ``starts[s]`` is the series step of
    the first input of sample ``s``.
    """

    inputs: np.ndarray
    targets: np.ndarray
    starts: np.ndarray
    stats: NormStats
    splits: dict
    window: int
    horizon: int

    def __len__(self):
        return len(self.starts)

    def part(self, name):
        idx = self.splits[name]
        return self.inputs[idx], self.targets[idx]


def load_flow(path, format=None):
    """Read a flow series from CSV (rows = steps) or the STF1 binary form."""
    path = Path(path)
    if format is None:
        format = "stt_binary" if path.read_bytes()[:4] == FLOW_MAGIC else "csv"
    if format == "stt_binary":
        return _load_flow_binary(path)
    if format != "csv":
        raise UsageError(f"unknown flow format {format!r}")
    rows = []
    width = None
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            try:
                values = [float(x) for x in row]
            except ValueError:
                if lineno == 1 and not rows:
                    continue  # header
                raise FormatError(f"{path}:{lineno}: non-numeric cell") from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise FormatError(f"{path}:{lineno}: expected {width} cells, got {len(values)}")
            bad = [i for i, v in enumerate(values) if not np.isfinite(v)]
            if bad:
                raise FormatError(f"{path}:{lineno}: non-finite value in column {bad[0] + 1}")
            rows.append(values)
    if not rows:
        raise FormatError(f"{path}: no data rows")
    return FlowSeries(np.array(rows, dtype=np.float64))


def _load_flow_binary(path):
    raw = path.read_bytes()
    if raw[:4] != FLOW_MAGIC or len(raw) < 20:
        raise FormatError(f"{path}: not an STF1 flow file")
    n_steps, n_sensors = struct.unpack("<2Q", raw[4:20])
    if len(raw) != 20 + 8 * n_steps * n_sensors:
        raise FormatError(f"{path}: expected {n_steps}x{n_sensors} values")
    values = np.frombuffer(raw, dtype="<f8", offset=20).astype(np.float64)
    values = values.reshape(n_steps, n_sensors)
    bad = np.argwhere(~np.isfinite(values))
    if len(bad):
        step, sensor = bad[0]
        raise FormatError(f"{path}: non-finite value at step {step + 1}, sensor {sensor + 1}")
    return FlowSeries(values)


def save_flow(path, series, format="csv"):
    values = series.values if isinstance(series, FlowSeries) else np.asarray(series)
    if format == "stt_binary":
        with open(path, "wb") as f:
            f.write(FLOW_MAGIC)
            f.write(struct.pack("<2Q", *values.shape))
            f.write(np.ascontiguousarray(values, dtype="<f8").tobytes())
        return
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"s{i + 1}" for i in range(values.shape[1])])
        for row in values:
            w.writerow([repr(float(v)) for v in row])


def save_distances(path, graph):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["from", "to", "cost"])
        for (a, b), cost in sorted(graph.costs.items()):
            w.writerow([a, b, repr(cost)])


def fit_stats(values):
    """Per-sensor mean and std (population); zero std falls back to 1."""
    values = np.asarray(values, dtype=np.float64)
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return NormStats(mean=mean, std=std)


def zscore(values, stats=None):
    if stats is None:
        stats = fit_stats(values)
    return stats.apply(values), stats


def denormalize(x, stats):
    return stats.invert(x)


def split_sizes(n, ratios=(6, 2, 2)):
    if n < 3:
        raise UsageError(f"need at least 3 samples to split, got {n}")
    total = sum(ratios)
    n_train = (n * ratios[0]) // total
    n_val = (n * ratios[1]) // total
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise UsageError(f"{n} samples too few for a {ratios} split")
    return n_train, n_val, n_test


def split(n, ratios=(6, 2, 2)):
    """Contiguous time-ordered index ranges for train/val/test."""
    n_train, n_val, _ = split_sizes(n, ratios)
    return {
        "train": np.arange(0, n_train),
        "val": np.arange(n_train, n_train + n_val),
        "test": np.arange(n_train + n_val, n),
    }


def window_starts(n_steps, window=12, horizon=12, stride=1):
    if n_steps < window + horizon:
        raise UsageError(
            f"series of {n_steps} steps is shorter than window+horizon={window + horizon}"
        )
    return np.arange(0, n_steps - window - horizon + 1, stride)


def make_windows(series, window=12, horizon=12, stride=1, ratios=(6, 2, 2)):
    """Window, split and normalise a series.

    Statistics come from the steps touched by training samples only.
    """
    values = series.values if isinstance(series, FlowSeries) else np.asarray(series, float)
    starts = window_starts(values.shape[0], window, horizon, stride)
    splits = split(len(starts), ratios)
    last_train = starts[splits["train"][-1]]
    stats = fit_stats(values[: last_train + window + horizon])
    normed = stats.apply(values)
    offsets = np.arange(window)
    inputs = normed[starts[:, None] + offsets][..., None]
    targets = values[starts[:, None] + window + np.arange(horizon)]
    return WindowedDataset(
        inputs=inputs,
        targets=targets,
        starts=starts,
        stats=stats,
        splits=splits,
        window=window,
        horizon=horizon,
    )


def ring_graph(n):
    return build_spatial_adjacency([(i + 1, (i + 1) % n + 1, 1.0) for i in range(n)], n)


def diffusion_step(x, adjacency, t, base, amplitude, phases, noise):
    """One step of the synthetic generator.

    ``x_next = 0.6 x + 0.35 mean(neighbours) + 0.05 base
               + amplitude * sin(2 pi (t + 1) / 288 + phase) + noise``
    """
    deg = adjacency.sum(axis=1)
    nbr = np.divide(adjacency @ x, deg, out=np.array(x, dtype=float), where=deg > 0)
    season = amplitude * np.sin(2 * np.pi * (t + 1) / STEPS_PER_DAY + phases)
    return 0.6 * x + 0.35 * nbr + 0.05 * base + season + noise


def synth_diffusion(n_nodes, n_steps, seed, base=100.0, amplitude=2.0,
                    noise_scale=0.05, burn_in=STEPS_PER_DAY):
    """Seeded diffusion on a ring with a daily cycle; see :func:`diffusion_step`.

    The state starts uniform at ``base`` (a fixed point when ``amplitude`` and
    ``noise_scale`` are zero). Node ``i`` has phase ``2 pi i / n_nodes``, the
    noise standard deviation is ``noise_scale * base`` and noise is drawn
    from ``numpy.random.default_rng(seed)``. The first ``burn_in`` steps are
    simulated and dropped so the start-up transient does not leak into the
    series; keep it a multiple of 288 so row 0 sits at time-of-day slot 0.
    """
    if n_nodes < 2:
        raise UsageError(f"need at least 2 nodes, got {n_nodes}")
    rng = np.random.default_rng(seed)
    graph = ring_graph(n_nodes)
    phases = 2 * np.pi * np.arange(n_nodes) / n_nodes
    sigma = noise_scale * base
    total = n_steps + burn_in
    values = np.empty((total, n_nodes))
    x = np.full(n_nodes, float(base))
    for t in range(total):
        values[t] = x
        noise = sigma * rng.standard_normal(n_nodes)
        x = diffusion_step(x, graph.adjacency, t, base, amplitude, phases, noise)
    return FlowSeries(values[burn_in:]), graph


def historical_average(values, n_train_steps, steps_per_day=STEPS_PER_DAY):
    """Per-node mean for every time-of-day slot over the first ``n_train_steps`` rows.

    Row 0 is taken as slot 0. Slots never seen in training fall back to the
    node's overall training mean.
    """
    values = np.asarray(values, dtype=np.float64)[:n_train_steps]
    slots = np.arange(len(values)) % steps_per_day
    table = np.tile(values.mean(axis=0), (steps_per_day, 1))
    for s in np.unique(slots):
        table[s] = values[slots == s].mean(axis=0)
    return table
