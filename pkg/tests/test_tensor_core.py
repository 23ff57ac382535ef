import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import nmode_loop, unfold_loop
from sttgcn import tensor_core as tc
from sttgcn.errors import FormatError, UsageError


def counting_2x2x2():
    t = np.zeros((2, 2, 2))
    for i in range(2):
        for j in range(2):
            for k in range(2):
                t[i, j, k] = 4 * i + 2 * j + k + 1
    return t


dims3 = st.tuples(*(st.integers(1, 5) for _ in range(3)))


def test_unfold_matches_index_map():
    t = counting_2x2x2()
    for mode in (1, 2, 3):
        np.testing.assert_array_equal(tc.unfold(t, mode), unfold_loop(t, mode))
    assert tc.unfold(t, 1).shape == (2, 4)


def test_fold_of_oracle_matrix_restores_counting_tensor():
    t = counting_2x2x2()
    back = tc.fold(unfold_loop(t, 1), 1, (2, 2, 2))
    np.testing.assert_array_equal(back, t)
    assert sorted(back.ravel()) == list(range(1, 9))


def test_singletons():
    one = np.full((1, 1, 1), 5.0)
    for mode in (1, 2, 3):
        np.testing.assert_array_equal(tc.unfold(one, mode), [[5.0]])
    np.testing.assert_array_equal(tc.fold([[7.0]], 2, (1, 1, 1)), np.full((1, 1, 1), 7.0))


def test_fold_unfold_mode2_bitwise():
    t = np.random.default_rng(0).standard_normal((3, 4, 5))
    assert np.array_equal(tc.fold(tc.unfold(t, 2), 2, t.shape), t)


@settings(max_examples=60, deadline=None)
@given(dims3, st.sampled_from([1, 2, 3]), st.integers(0, 2**31))
def test_fold_inverts_unfold(dims, mode, seed):
    t = np.random.default_rng(seed).standard_normal(dims)
    assert np.array_equal(tc.fold(tc.unfold(t, mode), mode, dims), t)
    np.testing.assert_array_equal(tc.unfold(t, mode), unfold_loop(t, mode))


def test_invalid_mode_and_shapes():
    t = np.zeros((2, 2, 2))
    for bad in (0, 4, "1"):
        with pytest.raises(UsageError):
            tc.unfold(t, bad)
    with pytest.raises(UsageError):
        tc.fold(np.zeros((2, 3)), 1, (2, 2, 2))
    with pytest.raises(UsageError):
        tc.mode_n_product(t, np.eye(3), 2)
    with pytest.raises(UsageError):
        tc.as_tensor3(np.zeros((2, 2)))
    with pytest.raises(UsageError):
        tc.as_tensor3(np.full((1, 1, 1), np.nan))


def test_identity_and_scaling():
    t = np.random.default_rng(1).standard_normal((3, 4, 2))
    for mode in (1, 2, 3):
        eye = np.eye(t.shape[mode - 1])
        np.testing.assert_array_equal(tc.mode_n_product(t, eye, mode), t)
        np.testing.assert_array_equal(tc.mode_n_product(t, 2 * eye, mode), 2 * t)


def test_nmode_matches_loop_oracle():
    rng = np.random.default_rng(2)
    t = rng.standard_normal((3, 3, 3))
    u = rng.standard_normal((3, 3))
    assert np.abs(tc.mode_n_product(t, u, 2) - nmode_loop(t, u, 2)).max() < 1e-12


@settings(max_examples=30, deadline=None)
@given(dims3, st.sampled_from([1, 2, 3]), st.integers(1, 4), st.integers(0, 2**31))
def test_nmode_changes_only_its_mode(dims, mode, rows, seed):
    rng = np.random.default_rng(seed)
    t = rng.standard_normal(dims)
    u = rng.standard_normal((rows, dims[mode - 1]))
    out = tc.mode_n_product(t, u, mode)
    expect = list(dims)
    expect[mode - 1] = rows
    assert out.shape == tuple(expect)
    np.testing.assert_allclose(tc.unfold(out, mode), u @ tc.unfold(t, mode), atol=1e-12)


def test_norm_fixtures():
    assert tc.frobenius_norm(np.zeros((2, 3, 1))) == 0
    assert tc.frobenius_norm(np.full((1, 1, 1), -3.0)) == 3
    assert tc.frobenius_norm(np.array([3.0, 4, 0, 0]).reshape(2, 2, 1)) == 5
    assert tc.l1_norm(np.zeros((2, 2, 2))) == 0
    assert tc.l1_norm(np.array([-2.0, 3]).reshape(1, 1, 2)) == 5


def test_l1_norm_matches_direct_sum():
    t = np.random.default_rng(3).standard_normal((4, 3, 5))
    total = 0.0
    for v in t.ravel():
        total += abs(v)
    assert tc.l1_norm(t) == pytest.approx(total, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(dims3, st.integers(0, 2**31))
def test_orthonormal_rotation_keeps_frobenius(dims, seed):
    rng = np.random.default_rng(seed)
    t = rng.standard_normal(dims)
    out = t
    for mode in (1, 2, 3):
        q = np.linalg.qr(rng.standard_normal((dims[mode - 1],) * 2))[0]
        out = tc.mode_n_product(out, q, mode)
    assert abs(tc.frobenius_norm(out) - tc.frobenius_norm(t)) < 1e-10


def test_binary_round_trips(tmp_path):
    rng = np.random.default_rng(4)
    t = rng.standard_normal((2, 3, 4))
    tc.save_tensor(tmp_path / "t.stt", t)
    assert np.array_equal(tc.load_tensor(tmp_path / "t.stt"), t)
    raw = (tmp_path / "t.stt").read_bytes()
    assert raw[:4] == tc.TENSOR_MAGIC and len(raw) == 4 + 24 + 8 * 24
    # layout: index (i*d2 + j)*d3 + k
    assert np.frombuffer(raw[28:], "<f8")[(1 * 3 + 2) * 4 + 3] == t[1, 2, 3]
    m = rng.standard_normal((3, 5))
    tc.save_matrix(tmp_path / "m.stm", m)
    assert np.array_equal(tc.load_matrix(tmp_path / "m.stm"), m)


def test_binary_rejects_garbage(tmp_path):
    p = tmp_path / "bad.stt"
    p.write_bytes(b"XXXX" + bytes(24))
    with pytest.raises(FormatError):
        tc.load_tensor(p)
    tc.save_tensor(p, np.ones((2, 2, 2)))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(FormatError):
        tc.load_tensor(p)


def test_csv_round_trip(tmp_path):
    t = np.random.default_rng(5).standard_normal((2, 2, 3))
    tc.save_tensor_csv(tmp_path / "t.csv", t)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert len(lines) == 1 + t.size
    assert np.array_equal(tc.load_tensor_csv(tmp_path / "t.csv"), t)
