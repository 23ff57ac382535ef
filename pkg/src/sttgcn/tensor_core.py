"""Dense rank-3 tensors and the multilinear algebra used by the decompositions.

Tensors are plain ``float64`` numpy arrays of shape ``(d1, d2, d3)`` stored in
C order, so entry ``(i, j, k)`` (0-based) lives at flat offset
``(i * d2 + j) * d3 + k``. The binary and CSV file formats below use the same
layout.

Modes are numbered 1, 2, 3. The mode-n unfolding follows Kolda & Bader: the
row index is the mode-n index and the columns enumerate the two remaining
indices with the lower-numbered remaining mode varying fastest, e.g. for mode 1
entry ``(i, j, k)`` goes to column ``j + k * d2``.
"""
import csv
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, UsageError

TENSOR_MAGIC = b"STT1"
MATRIX_MAGIC = b"STM1"

MODES = (1, 2, 3)


def _check_mode(mode):
    if mode not in MODES:
        raise UsageError(f"mode must be one of 1, 2, 3; got {mode!r}")
    return mode - 1


def as_tensor3(data):
    """Validate and return ``data`` as a finite float64 rank-3 array."""
    t = np.asarray(data, dtype=np.float64)
    if t.ndim != 3:
        raise UsageError(f"expected a rank-3 tensor, got shape {t.shape}")
    if min(t.shape) < 1:
        raise UsageError(f"tensor dims must be positive, got {t.shape}")
    if not np.all(np.isfinite(t)):
        raise UsageError("tensor contains NaN or Inf")
    return t


def as_matrix(data):
    m = np.asarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise UsageError(f"expected a matrix, got shape {m.shape}")
    return m


def unfold(t, mode):
    """Mode-`mode` unfolding of ``t`` with shape ``(d_mode, prod(other dims))``."""
    ax = _check_mode(mode)
    t = as_tensor3(t)
    return np.reshape(np.moveaxis(t, ax, 0), (t.shape[ax], -1), order="F")


def fold(m, mode, dims):
    """Inverse of :func:`unfold`."""
    ax = _check_mode(mode)
    m = as_matrix(m)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise UsageError(f"dims must be three positive integers, got {dims}")
    rest = [d for i, d in enumerate(dims) if i != ax]
    if m.shape != (dims[ax], rest[0] * rest[1]):
        raise UsageError(
            f"matrix shape {m.shape} does not match mode-{mode} unfolding of {dims}"
        )
    moved = np.reshape(m, (dims[ax], rest[0], rest[1]), order="F")
    return np.ascontiguousarray(np.moveaxis(moved, 0, ax))


def mode_n_product(t, u, mode):
    """n-mode product ``t x_mode u``; ``u`` has shape ``(J, d_mode)``."""
    ax = _check_mode(mode)
    t = as_tensor3(t)
    u = as_matrix(u)
    if u.shape[1] != t.shape[ax]:
        raise UsageError(
            f"matrix with {u.shape[1]} columns cannot multiply mode {mode} "
            f"of size {t.shape[ax]}"
        )
    out = np.tensordot(u, t, axes=([1], [ax]))
    return np.ascontiguousarray(np.moveaxis(out, 0, ax))


def multi_mode_product(t, matrices, transpose=False, skip=None):
    """Apply one matrix per mode; ``None`` entries and mode ``skip`` are left alone."""
    for mode, u in zip(MODES, matrices):
        if u is None or mode == skip:
            continue
        t = mode_n_product(t, u.T if transpose else u, mode)
    return t


def frobenius_norm(t):
    return float(np.sqrt(np.sum(np.square(as_tensor3(t)))))


def l1_norm(t):
    return float(np.sum(np.abs(as_tensor3(t))))


# -- file formats ----------------------------------------------------------


def save_tensor(path, t):
    """Write the STT1 binary form: magic, three u64 dims, float64 data (LE)."""
    t = as_tensor3(t)
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC)
        f.write(struct.pack("<3Q", *t.shape))
        f.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def load_tensor(path):
    raw = Path(path).read_bytes()
    if raw[:4] != TENSOR_MAGIC:
        raise FormatError(f"{path}: not an STT1 tensor file")
    if len(raw) < 28:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack("<3Q", raw[4:28])
    count = dims[0] * dims[1] * dims[2]
    if len(raw) != 28 + 8 * count:
        raise FormatError(f"{path}: expected {count} values for dims {dims}")
    data = np.frombuffer(raw, dtype="<f8", offset=28).astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: non-finite value at offset {int(np.argmin(np.isfinite(data)))}")
    return data.reshape(dims)


def save_matrix(path, m):
    """Write the STM1 binary form: magic, u64 rows, u64 cols, float64 data (LE)."""
    m = as_matrix(m)
    with open(path, "wb") as f:
        f.write(MATRIX_MAGIC)
        f.write(struct.pack("<2Q", *m.shape))
        f.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def load_matrix(path):
    raw = Path(path).read_bytes()
    if raw[:4] != MATRIX_MAGIC:
        raise FormatError(f"{path}: not an STM1 matrix file")
    if len(raw) < 20:
        raise FormatError(f"{path}: truncated header")
    rows, cols = struct.unpack("<2Q", raw[4:20])
    if len(raw) != 20 + 8 * rows * cols:
        raise FormatError(f"{path}: expected {rows * cols} values for {rows}x{cols}")
    data = np.frombuffer(raw, dtype="<f8", offset=20).astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: non-finite value in matrix data")
    return data.reshape(rows, cols)


def save_tensor_csv(path, t):
    """Debug CSV form with header ``i,j,k,value`` and 1-based indices."""
    t = as_tensor3(t)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["i", "j", "k", "value"])
        for (i, j, k), v in np.ndenumerate(t):
            w.writerow([i + 1, j + 1, k + 1, repr(float(v))])


def load_tensor_csv(path):
    entries = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["i", "j", "k", "value"]:
            raise FormatError(f"{path}:1: expected header i,j,k,value")
        for lineno, row in enumerate(reader, start=2):
            try:
                i, j, k = (int(x) for x in row[:3])
                v = float(row[3])
            except (ValueError, IndexError):
                raise FormatError(f"{path}:{lineno}: malformed row {row!r}") from None
            if min(i, j, k) < 1 or not np.isfinite(v):
                raise FormatError(f"{path}:{lineno}: bad index or value")
            entries[(i - 1, j - 1, k - 1)] = v
    if not entries:
        raise FormatError(f"{path}: no entries")
    dims = tuple(max(key[a] for key in entries) + 1 for a in range(3))
    t = np.zeros(dims)
    for key, v in entries.items():
        t[key] = v
    return t
