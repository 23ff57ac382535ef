import itertools

import numpy as np
import pytest

from oracles import fusion_blocks_by_hand, hosvd_loop, sign_convention, tt_loop, unfold_loop
from sttgcn import stgraph as sg
from sttgcn.errors import FormatError, UsageError
from sttgcn.tensor_core import frobenius_norm

N2_FUSION = np.array([
    [0, 1, 1, 0, 0, 0],
    [1, 0, 0, 1, 0, 0],
    [1, 0, 0, 1, 1, 0],
    [0, 1, 1, 0, 0, 1],
    [0, 0, 1, 0, 0, 1],
    [0, 0, 0, 1, 1, 0],
], dtype=float)


def random_graph(n, p, seed):
    rng = np.random.default_rng(seed)
    edges = [(a, b, 1.0) for a, b in itertools.combinations(range(1, n + 1), 2) if rng.random() < p]
    return sg.build_spatial_adjacency(edges, n)


def test_spatial_adjacency_fixtures():
    g = sg.build_spatial_adjacency([(1, 2, 3.5)], 2)
    np.testing.assert_array_equal(g.adjacency, [[0, 1], [1, 0]])
    assert not sg.build_spatial_adjacency([], 3).adjacency.any()


@pytest.mark.parametrize("edge", [(0, 1, 1.0), (1, 4, 1.0), (2, 2, 1.0), (1, 2, -1.0)])
def test_spatial_adjacency_errors_name_the_line(edge):
    with pytest.raises(FormatError, match="edge 2"):
        sg.build_spatial_adjacency([(1, 2, 1.0), edge], 3)


def test_load_distances_reports_file_line(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("from,to,cost\n1,2,5.0\n2,2,1.0\n")
    with pytest.raises(FormatError, match=r"d.csv:3"):
        sg.load_distances(p)
    p.write_text("from,to,cost\n1,2,5.0\n3,2,1.5\n1,2,9.0\n")
    g = sg.load_distances(p)
    assert g.n == 3 and g.costs[(1, 2)] == 5.0
    assert sg.load_distances(p, n=5).n == 5


def test_fusion_fixtures():
    g2 = sg.build_spatial_adjacency([(1, 2, 1.0)], 2)
    np.testing.assert_array_equal(sg.build_fusion_matrix(g2).matrix, N2_FUSION)
    g1 = sg.build_spatial_adjacency([], 1)
    np.testing.assert_array_equal(sg.build_fusion_matrix(g1).matrix, [[0, 1, 0], [1, 0, 1], [0, 1, 0]])


def test_fusion_matches_hand_assembly_and_is_symmetric():
    for seed in range(5):
        g = random_graph(6, 0.4, seed)
        m = sg.build_fusion_matrix(g).matrix
        np.testing.assert_array_equal(m, fusion_blocks_by_hand(g.adjacency))
        np.testing.assert_array_equal(m, m.T)


def test_slice_mapping():
    n = 2
    m = np.zeros((3 * n, 3 * n))
    for k, l in itertools.product(range(3), range(3)):
        m[k * n:(k + 1) * n, l * n:(l + 1) * n] = 10 * (k + 1) + (l + 1)
    t = sg.blocks_to_tensor(m)
    # slice s (1-based) = l + 3(k-1)
    assert (t[:, :, 6 - 1] == 23).all()
    assert (t[:, :, 1 - 1] == 11).all()
    assert (t[:, :, 9 - 1] == 33).all()
    back = sg.tensor_to_blocks(t).matrix
    assert (back[2:4, 4:6] == 23).all()


def test_n2_slices():
    t = sg.blocks_to_tensor(sg.FusionGraph(2, N2_FUSION))
    np.testing.assert_array_equal(t[:, :, 0], [[0, 1], [1, 0]])
    np.testing.assert_array_equal(t[:, :, 1], np.eye(2))
    np.testing.assert_array_equal(t[:, :, 2], np.zeros((2, 2)))


def test_block_tensor_round_trips():
    rng = np.random.default_rng(0)
    t = rng.standard_normal((4, 4, 9))
    assert np.array_equal(sg.blocks_to_tensor(sg.tensor_to_blocks(t)), t)
    f = sg.FusionGraph(4, rng.standard_normal((12, 12)))
    assert np.array_equal(sg.tensor_to_blocks(sg.blocks_to_tensor(f)).matrix, f.matrix)
    assert not sg.tensor_to_blocks(np.zeros((3, 3, 9))).matrix.any()
    with pytest.raises(UsageError):
        sg.blocks_to_tensor(np.zeros((5, 5)))
    with pytest.raises(UsageError):
        sg.tensor_to_blocks(np.zeros((3, 3, 8)))


def test_fix_diagonal():
    n = 4
    out = sg.fix_diagonal(np.zeros((n, n, 9)))
    assert out.sum() == 9 * n
    assert all((out[:, :, s] == np.eye(n)).all() for s in range(9))
    t = np.zeros((2, 2, 9))
    t[0, 0, 0], t[0, 1, 0] = 0.3, 0.7
    fixed = sg.fix_diagonal(t)
    assert fixed[0, 0, 0] == 1.0 and fixed[0, 1, 0] == 0.7 and t[0, 0, 0] == 0.3
    r = np.random.default_rng(1).random((3, 3, 9))
    assert np.array_equal(sg.fix_diagonal(sg.fix_diagonal(r)), sg.fix_diagonal(r))
    assert np.count_nonzero(sg.fix_diagonal(r) != r) == 9 * 3


@pytest.mark.parametrize("method", sg.METHODS)
def test_n1_reconstruction(method):
    rec = sg.reconstruct_fusion_graph(sg.build_spatial_adjacency([], 1), method)
    m = rec.graph.matrix
    assert m.shape == (3, 3) and np.isfinite(m).all()
    np.testing.assert_array_equal(np.diag(m), np.ones(3))


@pytest.mark.parametrize("seed", range(5))
def test_hooi_keeps_frobenius_norm(seed):
    g = random_graph(5 + seed, 0.3, seed)
    rec = sg.reconstruct_fusion_graph(g, "tucker_hooi")
    assert abs(frobenius_norm(rec.raw) - rec.source_norm) < 1e-10
    assert np.all(np.diff(rec.objective_trace) >= -1e-12)


def _oracle_hooi_core(a):
    """Full-size HOOI core from the loop oracles: HOSVD start plus one sweep."""
    _, factors = hosvd_loop(a, a.shape)
    for m in range(3):
        proj = a
        for other in range(3):
            if other != m:
                proj = np.moveaxis(np.tensordot(factors[other].T, proj, axes=([1], [other])), 0, other)
        x = unfold_loop(proj, m + 1)
        factors[m] = sign_convention(np.linalg.svd(x)[0][:, :a.shape[m]])
    core = a
    for m in range(3):
        core = np.moveaxis(np.tensordot(factors[m].T, core, axes=([1], [m])), 0, m)
    return core


def test_n8_tt_matches_composed_oracle():
    g = random_graph(8, 0.3, 7)
    a = sg.blocks_to_tensor(fusion_blocks_by_hand(g.adjacency))
    oracle = tt_loop(a, max(a.shape))
    for s in range(9):
        np.fill_diagonal(oracle[:, :, s], 1.0)
    rec = sg.reconstruct_fusion_graph(g, "tt")
    assert np.abs(rec.graph.matrix - sg.tensor_to_blocks(oracle).matrix).max() < 1e-8


def test_n8_hooi_matches_composed_oracle():
    g = random_graph(8, 0.3, 7)
    a = sg.blocks_to_tensor(fusion_blocks_by_hand(g.adjacency))
    oracle = sg.fix_diagonal(_oracle_hooi_core(a))
    rec = sg.reconstruct_fusion_graph(g, "tucker_hooi")
    assert np.abs(rec.graph.matrix - sg.tensor_to_blocks(oracle).matrix).max() < 1e-8


def test_unknown_method():
    with pytest.raises(UsageError):
        sg.reconstruct_fusion_graph(random_graph(3, 0.5, 0), "pca")


def test_export_round_trip(tmp_path):
    g = sg.build_spatial_adjacency([(1, 2, 1.0)], 2)
    f = sg.build_fusion_matrix(g)
    sg.export_graph(f, tmp_path / "g.csv", slice_path=tmp_path / "s.csv")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "row,col,value" and len(lines) == 37
    assert np.array_equal(sg.import_graph_csv(tmp_path / "g.csv"), f.matrix)
    assert np.array_equal(sg.import_graph_csv(tmp_path / "s.csv"), g.adjacency)
    rec = sg.reconstruct_fusion_graph(random_graph(4, 0.5, 3), "l1_tucker")
    sg.export_graph(rec.graph, tmp_path / "r.csv")
    assert np.array_equal(sg.import_graph_csv(tmp_path / "r.csv"), rec.graph.matrix)


def test_pems08_scale_export(tmp_path):
    n = 170
    f = sg.build_fusion_matrix(sg.build_spatial_adjacency([(1, 2, 1.0)], n))
    sg.export_graph(f, tmp_path / "g.csv")
    with open(tmp_path / "g.csv") as fh:
        count = sum(1 for _ in fh) - 1
    assert f.matrix.shape == (510, 510) and count == 260100


def test_save_load_graph(tmp_path):
    f = sg.build_fusion_matrix(random_graph(4, 0.5, 2))
    sg.save_graph(tmp_path / "f.stm", f, manifest={"method": "none"})
    assert np.array_equal(sg.load_graph(tmp_path / "f.stm").matrix, f.matrix)
    assert (tmp_path / "f.json").exists()
