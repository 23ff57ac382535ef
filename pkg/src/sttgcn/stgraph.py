"""Localized spatial-temporal fusion graph and its offline tensor reconstruction.

The fusion matrix joins three consecutive time steps of an ``n``-node road
graph. Node ``i`` (1-based) at step ``t`` gets row ``(t - 1) * n + i``. Block
``(k, l)`` of the ``3n x 3n`` matrix is stored as lateral slice
``l + 3 (k - 1)`` (1-based) of an ``n x n x 9`` adjacency tensor.
"""
import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import decomp
from .errors import FormatError, UsageError
from .tensor_core import as_tensor3, frobenius_norm, load_matrix, save_matrix

STEPS = 3
METHODS = ("tucker_hooi", "l1_tucker", "tt")


@dataclass
class SpatialGraph:
    n: int
    adjacency: np.ndarray
    costs: dict = field(default_factory=dict)

    @property
    def edges(self):
        return sorted(self.costs)


@dataclass
class FusionGraph:
    n: int
    matrix: np.ndarray
    steps: int = STEPS


def build_spatial_adjacency(edge_list, n):
    """Binary symmetric adjacency from ``(from, to, cost)`` triples with 1-based ids.

    Duplicate edges keep their first cost. ``edge_list`` items may carry an
    optional fourth element used as the line label in error messages.
    """
    n = int(n)
    if n < 1:
        raise UsageError(f"node count must be positive, got {n}")
    adj = np.zeros((n, n))
    costs = {}
    for pos, item in enumerate(edge_list, start=1):
        a, b, cost = item[:3]
        where = item[3] if len(item) > 3 else f"edge {pos}"
        if not (1 <= a <= n and 1 <= b <= n):
            raise FormatError(f"{where}: node id out of range [1, {n}] in ({a}, {b})")
        if a == b:
            raise FormatError(f"{where}: self-loop on node {a}")
        if not cost >= 0:
            raise FormatError(f"{where}: negative or invalid cost {cost}")
        key = (min(a, b), max(a, b))
        costs.setdefault(key, float(cost))
        adj[a - 1, b - 1] = adj[b - 1, a - 1] = 1.0
    return SpatialGraph(n=n, adjacency=adj, costs=costs)


def load_distances(path, n=None, base=1):
    """Read a ``from,to,cost`` CSV. ``n`` defaults to the largest node id seen."""
    edges = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["from", "to", "cost"]:
            raise FormatError(f"{path}:1: expected header from,to,cost")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                a, b = int(row[0]) - base + 1, int(row[1]) - base + 1
                cost = float(row[2])
            except (ValueError, IndexError):
                raise FormatError(f"{path}:{lineno}: malformed row {row!r}") from None
            edges.append((a, b, cost, f"{path}:{lineno}"))
    if n is None:
        n = max((max(a, b) for a, b, *_ in edges), default=0)
    return build_spatial_adjacency(edges, n)


def build_fusion_matrix(g):
    n = g.n
    eye = np.eye(n)
    m = np.zeros((STEPS * n, STEPS * n))
    for k in range(STEPS):
        m[k * n:(k + 1) * n, k * n:(k + 1) * n] = g.adjacency
        if k + 1 < STEPS:
            m[k * n:(k + 1) * n, (k + 1) * n:(k + 2) * n] = eye
            m[(k + 1) * n:(k + 2) * n, k * n:(k + 1) * n] = eye
    return FusionGraph(n=n, matrix=m)


def blocks_to_tensor(f):
    m = np.asarray(f.matrix if isinstance(f, FusionGraph) else f, dtype=np.float64)
    size = m.shape[0]
    if m.ndim != 2 or m.shape[0] != m.shape[1] or size % STEPS:
        raise UsageError(f"fusion matrix must be square with size divisible by 3, got {m.shape}")
    n = size // STEPS
    t = np.empty((n, n, STEPS * STEPS))
    for k in range(STEPS):
        for l in range(STEPS):
            t[:, :, l + STEPS * k] = m[k * n:(k + 1) * n, l * n:(l + 1) * n]
    return t


def tensor_to_blocks(t):
    t = as_tensor3(t)
    n = t.shape[0]
    if t.shape != (n, n, STEPS * STEPS):
        raise UsageError(f"adjacency tensor must have dims (n, n, 9), got {t.shape}")
    m = np.empty((STEPS * n, STEPS * n))
    for k in range(STEPS):
        for l in range(STEPS):
            m[k * n:(k + 1) * n, l * n:(l + 1) * n] = t[:, :, l + STEPS * k]
    return FusionGraph(n=n, matrix=m)


def fix_diagonal(t):
    """Set ``t[i, i, s] = 1`` on every slice; returns a new tensor."""
    t = np.array(as_tensor3(t))
    n = t.shape[0]
    if t.shape[:2] != (n, n):
        raise UsageError(f"slices must be square, got {t.shape}")
    idx = np.arange(n)
    t[idx, idx, :] = 1.0
    return t


@dataclass
class Reconstruction:
    graph: FusionGraph
    raw: np.ndarray
    method: str
    objective_trace: list
    iterations: int
    seconds: float
    source_norm: float
    rel_error: float = 0.0  # of the decomposition, before the diagonal reset


def decompose_adjacency(a, method, seed=0, max_iter=decomp.DEFAULT_MAX_ITER,
                        tol=decomp.DEFAULT_TOL, tt_max_rank=None):
    """Full-size decomposition of the adjacency tensor.

    Returns ``(tensor, trace, iterations, rel_error)``: the core (or for
    ``tt`` the contracted train), the objective trace, the sweep count and
    ``||rebuilt - a|| / ||a||``.
    """
    norm = frobenius_norm(a)
    if method in ("tucker_hooi", "l1_tucker"):
        if method == "tucker_hooi":
            d = decomp.hooi(a, a.shape, max_iter=max_iter, tol=tol)
        else:
            d = decomp.l1_tucker(a, a.shape, max_iter=max_iter, tol=tol, seed=seed)
        err = frobenius_norm(decomp.tucker_reconstruct(d) - a)
        return d.core, d.objective_trace, d.iterations, err / norm if norm else err
    if method == "tt":
        rank = tt_max_rank if tt_max_rank is not None else max(a.shape)
        d = decomp.tt_svd(a, rank, tol=0.0)
        out = decomp.tt_reconstruct(d)
        err = frobenius_norm(out - a)
        return out, [err], 1, err / norm if norm else err
    raise UsageError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def reconstruct_fusion_graph(g, method="l1_tucker", seed=0, **opts):
    """Build the fusion graph of ``g`` and replace it by a full-size decomposition core.

    For ``tt`` there is no full-size core, so the contracted train is used.
    Diagonals of every slice are reset to 1 afterwards.
    """
    start = time.perf_counter()
    a = blocks_to_tensor(build_fusion_matrix(g))
    core, trace, iters, rel_error = decompose_adjacency(a, method, seed=seed, **opts)
    graph = tensor_to_blocks(fix_diagonal(core))
    return Reconstruction(
        graph=graph,
        raw=core,
        method=method,
        objective_trace=[float(v) for v in trace],
        iterations=iters,
        seconds=time.perf_counter() - start,
        source_norm=frobenius_norm(a),
        rel_error=rel_error,
    )


def save_graph(path, f, manifest=None):
    """Write the fusion matrix as STM1 and, if given, a JSON manifest beside it."""
    path = Path(path)
    save_matrix(path, f.matrix)
    if manifest is not None:
        path.with_suffix(".json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_graph(path):
    m = load_matrix(path)
    if m.shape[0] != m.shape[1] or m.shape[0] % STEPS:
        raise FormatError(f"{path}: fusion matrix must be square 3n x 3n, got {m.shape}")
    return FusionGraph(n=m.shape[0] // STEPS, matrix=m)


def export_graph(f, path, slice_path=None):
    """Dense ``row,col,value`` CSV (1-based) of the fusion matrix.

    ``slice_path`` additionally receives the ``n x n`` slice-1 block (the
    step-1 spatial relations) in the same format.
    """
    _write_entries(path, f.matrix)
    if slice_path is not None:
        _write_entries(slice_path, f.matrix[: f.n, : f.n])


def _write_entries(path, m):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "value"])
        for (r, c), v in np.ndenumerate(m):
            w.writerow([r + 1, c + 1, repr(float(v))])


def import_graph_csv(path):
    entries = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["row", "col", "value"]:
            raise FormatError(f"{path}:1: expected header row,col,value")
        for lineno, row in enumerate(reader, start=2):
            try:
                entries.append((int(row[0]), int(row[1]), float(row[2])))
            except (ValueError, IndexError):
                raise FormatError(f"{path}:{lineno}: malformed row {row!r}") from None
    size = max(max(r, c) for r, c, _ in entries)
    m = np.zeros((size, size))
    for r, c, v in entries:
        m[r - 1, c - 1] = v
    return m
