"""Tucker (HOSVD, HOOI), L1-Tucker and Tensor-Train decompositions of rank-3 tensors."""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericalError, UsageError
from .tensor_core import (
    MODES,
    as_tensor3,
    frobenius_norm,
    l1_norm,
    multi_mode_product,
    save_matrix,
    save_tensor,
    unfold,
)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100
DEFAULT_INNER_MAX_ITER = 500


@dataclass
class TuckerDecomp:
    core: np.ndarray
    factors: list
    objective_trace: list = field(default_factory=list)
    method: str = "hosvd"
    iterations: int = 0

    @property
    def ranks(self):
        return tuple(self.core.shape)

    @property
    def dims(self):
        return tuple(u.shape[0] for u in self.factors)


@dataclass
class TTDecomp:
    cores: list
    ranks: tuple = ()

    @property
    def dims(self):
        return tuple(c.shape[1] for c in self.cores)


def fix_signs(u):
    """Flip columns so each column's largest-magnitude entry is nonnegative.

    Ties in magnitude go to the lowest row index (``np.argmax`` semantics).
    """
    u = np.array(u, dtype=np.float64)
    if u.size == 0:
        return u
    rows = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[rows, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    return u * signs


def leading_left_singular_vectors(x, rank, mode=None):
    """Top-``rank`` left singular vectors of ``x`` with the sign convention applied.

    When ``rank`` exceeds ``min(x.shape)`` the full left basis is computed so
    the extra columns complete an orthonormal basis.
    """
    full = rank > min(x.shape)
    try:
        u, _, _ = np.linalg.svd(x, full_matrices=full)
    except np.linalg.LinAlgError as exc:
        where = f" in mode {mode}" if mode is not None else ""
        raise NumericalError(f"SVD failed{where}: {exc}") from exc
    return fix_signs(u[:, :rank])


def _check_ranks(t, ranks):
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != 3:
        raise UsageError(f"need three ranks, got {ranks}")
    for m, (r, d) in enumerate(zip(ranks, t.shape), start=1):
        if not 1 <= r <= d:
            raise UsageError(f"rank {r} for mode {m} outside [1, {d}]")
    return ranks


def _check_iter(max_iter, tol):
    if max_iter < 1:
        raise UsageError(f"max_iter must be >= 1, got {max_iter}")
    if not tol > 0:
        raise UsageError(f"tol must be positive, got {tol}")


def project(t, factors, skip=None):
    """``t x_n U_n^T`` over all modes except ``skip``."""
    return multi_mode_product(t, factors, transpose=True, skip=skip)


def l2_objective(t, factors):
    return frobenius_norm(project(t, factors)) ** 2


def l1_objective(t, factors):
    return l1_norm(project(t, factors))


def hosvd(t, ranks):
    t = as_tensor3(t)
    ranks = _check_ranks(t, ranks)
    factors = [
        leading_left_singular_vectors(unfold(t, m), r, mode=m)
        for m, r in zip(MODES, ranks)
    ]
    core = project(t, factors)
    return TuckerDecomp(
        core=core,
        factors=factors,
        objective_trace=[frobenius_norm(core) ** 2],
        method="hosvd",
    )


def hooi(t, ranks, max_iter=DEFAULT_MAX_ITER, tol=DEFAULT_TOL):
    """Higher-order orthogonal iteration, started from the HOSVD factors.

    Each sweep replaces every factor by the leading left singular basis of the
    tensor projected onto the other factors. The trace holds the squared
    Frobenius norm of the core after initialisation and after each sweep.
    """
    t = as_tensor3(t)
    ranks = _check_ranks(t, ranks)
    _check_iter(max_iter, tol)
    factors = hosvd(t, ranks).factors
    trace = [l2_objective(t, factors)]
    sweeps = 0
    for sweeps in range(1, max_iter + 1):
        for m, r in zip(MODES, ranks):
            partial = project(t, factors, skip=m)
            factors[m - 1] = leading_left_singular_vectors(unfold(partial, m), r, mode=m)
        trace.append(l2_objective(t, factors))
        if trace[-1] - trace[-2] < tol:
            break
    return TuckerDecomp(
        core=project(t, factors),
        factors=factors,
        objective_trace=trace,
        method="hooi",
        iterations=sweeps,
    )


def _sign(x):
    return np.where(x >= 0, 1.0, -1.0)


def nearest_orthonormal(x):
    """Polar factor ``W V^T`` of ``x = W S V^T``; the closest column-orthonormal matrix."""
    try:
        w, _, vt = np.linalg.svd(x, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"polar decomposition failed: {exc}") from exc
    return w @ vt


def l1_pca(x, u0, max_iter=DEFAULT_INNER_MAX_ITER):
    """Fixed-point L1-PCA ascent on ``||U^T x||_1`` starting from orthonormal ``u0``.

    Alternates ``B = sign(x^T U)`` and ``U = polar(x B)`` until the sign
    pattern repeats. Each step cannot lower the objective.

    Returns
    -------
    u : ndarray
        Column-orthonormal basis, shape ``u0.shape``.
    n_iter : int
    """
    u = u0
    b = _sign(x.T @ u)
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        u_new = nearest_orthonormal(x @ b)
        # the polar step can stall on a tie; keep the old basis unless it helps
        if np.abs(u_new.T @ x).sum() < np.abs(u.T @ x).sum():
            break
        u = u_new
        b_new = _sign(x.T @ u)
        if np.array_equal(b_new, b):
            break
        b = b_new
    return u, n_iter


def l1_tucker(
    t,
    ranks,
    max_iter=DEFAULT_MAX_ITER,
    tol=DEFAULT_TOL,
    seed=0,
    inner_max_iter=DEFAULT_INNER_MAX_ITER,
    init="hosvd",
):
    """L1-Tucker by mode-wise fixed-point L1-PCA sweeps.

    Maximises ``||t x_1 U1^T x_2 U2^T x_3 U3^T||_1`` over column-orthonormal
    factors. Only monotone ascent is guaranteed, not the global optimum.
    ``init="random"`` draws orthonormal starting factors from ``seed``;
    the default ``"hosvd"`` start does not use the seed.
    """
    t = as_tensor3(t)
    ranks = _check_ranks(t, ranks)
    _check_iter(max_iter, tol)
    if init == "hosvd":
        factors = hosvd(t, ranks).factors
    elif init == "random":
        rng = np.random.default_rng(seed)
        factors = [
            nearest_orthonormal(rng.standard_normal((d, r)))
            for d, r in zip(t.shape, ranks)
        ]
    else:
        raise UsageError(f"unknown init {init!r}")

    trace = [l1_objective(t, factors)]
    sweeps = 0
    for sweeps in range(1, max_iter + 1):
        for m in MODES:
            x = unfold(project(t, factors, skip=m), m)
            factors[m - 1], _ = l1_pca(x, factors[m - 1], inner_max_iter)
        trace.append(l1_objective(t, factors))
        if trace[-1] - trace[-2] < tol:
            break
    return TuckerDecomp(
        core=project(t, factors),
        factors=factors,
        objective_trace=trace,
        method="l1_tucker",
        iterations=sweeps,
    )


def tucker_reconstruct(d):
    core = as_tensor3(d.core)
    if len(d.factors) != 3:
        raise UsageError("a Tucker decomposition needs three factors")
    for m, (u, r) in enumerate(zip(d.factors, core.shape), start=1):
        if u.ndim != 2 or u.shape[1] != r:
            raise UsageError(f"factor {m} has shape {u.shape}, core needs {r} columns")
    return multi_mode_product(core, d.factors)


def _truncation_rank(s, max_rank, tol):
    """Smallest rank whose discarded tail is within ``tol`` of the total, capped."""
    total = np.sqrt(np.sum(s**2))
    if total == 0.0:
        return 1
    # tail[r] = norm of s[r:]
    tail = np.sqrt(np.cumsum((s**2)[::-1])[::-1])
    tail = np.append(tail, 0.0)
    r = next(r for r in range(1, len(s) + 1) if tail[r] <= tol * total)
    return max(1, min(r, max_rank, len(s)))


def tt_svd(t, max_rank, tol=0.0):
    """Left-to-right TT-SVD into cores of shapes ``(1,d1,r1), (r1,d2,r2), (r2,d3,1)``."""
    t = as_tensor3(t)
    if max_rank < 1:
        raise UsageError(f"max_rank must be >= 1, got {max_rank}")
    if tol < 0:
        raise UsageError(f"tol must be nonnegative, got {tol}")
    d1, d2, d3 = t.shape
    cores = []
    rest = t.reshape(d1, d2 * d3)
    r_prev = 1
    for d, tail_dim in ((d1, d2 * d3), (d2, d3)):
        mat = rest.reshape(r_prev * d, tail_dim)
        try:
            u, s, vt = np.linalg.svd(mat, full_matrices=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"SVD failed in TT sweep: {exc}") from exc
        r = _truncation_rank(s, max_rank, tol)
        cores.append(u[:, :r].reshape(r_prev, d, r))
        rest = s[:r, None] * vt[:r]
        r_prev = r
    cores.append(rest.reshape(r_prev, d3, 1))
    return TTDecomp(cores=cores, ranks=(1, cores[0].shape[2], cores[1].shape[2], 1))


def tt_reconstruct(d):
    g1, g2, g3 = d.cores
    return np.einsum("aib,bjc,ckd->ijk", g1, g2, g3)


def save_decomposition(directory, d, **extra):
    """Write core (STT1), factors (STM1) and a JSON manifest into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_tensor(directory / "core.stt", d.core)
    for m, u in zip(MODES, d.factors):
        save_matrix(directory / f"factor{m}.stm", u)
    manifest = {
        "method": d.method,
        "ranks": list(d.ranks),
        "iterations": d.iterations,
        "final_objective": d.objective_trace[-1] if d.objective_trace else None,
        "objective_trace": list(d.objective_trace),
        **extra,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
