import json

import numpy as np
import pytest

from stgraph_fixtures import N2_DISTANCES
from sttgcn import cli, data_io as D, metrics, stgraph
from sttgcn.net.params import ModelParams
from sttgcn.net.train import load_checkpoint, save_checkpoint
from sttgcn.tensor_core import load_matrix, load_tensor

SMALL = ["--layers", "2", "--filters", "4", "--dilated-channels", "4", "--fc-hidden", "8",
         "--max-epochs", "2", "--batch-size", "16"]


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert run("synth", "--nodes", 4, "--steps", 200, "--seed", 3, "--out", d) == 0
    return d


@pytest.fixture(scope="module")
def graph_file(synth_dir):
    assert run("reconstruct", "--distances", synth_dir / "distances.csv", "--out", synth_dir) == 0
    return synth_dir / "reconstructed.stm"


def test_synth_outputs(synth_dir):
    s = D.load_flow(synth_dir / "flow.csv")
    assert (s.n_steps, s.n_sensors) == (200, 4)
    expect, _ = D.synth_diffusion(4, 200, 3)
    np.testing.assert_array_equal(s.values, expect.values)
    assert stgraph.load_distances(synth_dir / "distances.csv").n == 4


def test_build_graph_n2(tmp_path, capsys):
    (tmp_path / "d.csv").write_text(N2_DISTANCES)
    for out in ("a", "b"):
        assert run("build-graph", "--distances", tmp_path / "d.csv", "--out", tmp_path / out) == 0
    m = load_matrix(tmp_path / "a" / "fusion.stm")
    np.testing.assert_array_equal(m, stgraph.build_fusion_matrix(stgraph.load_distances(tmp_path / "d.csv")).matrix)
    assert load_tensor(tmp_path / "a" / "adjacency.stt").shape == (2, 2, 9)
    for name in ("fusion.stm", "adjacency.stt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert "identity(slice 6)" in capsys.readouterr().out


def test_missing_file_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    assert run("build-graph", "--distances", missing, "--out", tmp_path) != 0
    assert str(missing) in capsys.readouterr().err


def test_bad_distance_file_is_format_error(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("from,to,cost\n1,1,2.0\n")
    assert run("build-graph", "--distances", tmp_path / "d.csv", "--out", tmp_path) == 2
    assert "format" in capsys.readouterr().err


@pytest.mark.parametrize("method", ["tucker", "l1tucker", "tt"])
def test_reconstruct_byte_identical_and_matches_library(tmp_path, method):
    (tmp_path / "d.csv").write_text(N2_DISTANCES)
    for out in ("a", "b"):
        assert run("reconstruct", "--method", method, "--distances", tmp_path / "d.csv", "--out", tmp_path / out) == 0
    for name in ("reconstructed.stm", "reconstructed.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    lib = stgraph.reconstruct_fusion_graph(stgraph.load_distances(tmp_path / "d.csv"), cli.METHOD_ALIASES[method])
    assert load_matrix(tmp_path / "a" / "reconstructed.stm").tobytes() == lib.graph.matrix.tobytes()
    manifest = json.loads((tmp_path / "a" / "reconstructed.json").read_text())
    assert np.all(np.diff(manifest["objective_trace"]) >= -1e-12)


def test_bench_decomp_format(synth_dir, tmp_path):
    assert run("bench-decomp", "--distances", synth_dir / "distances.csv", "--out", tmp_path) == 0
    lines = (tmp_path / "bench_decomp.csv").read_text().splitlines()
    assert lines[0] == "method,n,seconds,iterations,final_objective"
    assert [l.split(",")[0] for l in lines[1:]] == list(stgraph.METHODS)


def test_export_graph(graph_file, tmp_path):
    assert run("export-graph", "--graph", graph_file, "--out", tmp_path) == 0
    lines = (tmp_path / "graph.csv").read_text().splitlines()
    assert len(lines) == 1 + 12 * 12
    np.testing.assert_array_equal(stgraph.import_graph_csv(tmp_path / "graph.csv"), load_matrix(graph_file))
    assert len((tmp_path / "graph_slice1.csv").read_text().splitlines()) == 1 + 16


def test_train_and_evaluate(synth_dir, graph_file, tmp_path, capsys):
    flow = synth_dir / "flow.csv"
    for out in ("a", "b"):
        assert run("train", "--flow", flow, "--graph", graph_file, "--out", tmp_path / out, *SMALL) == 0
    assert (tmp_path / "a" / "history.csv").read_bytes() == (tmp_path / "b" / "history.csv").read_bytes()
    out = capsys.readouterr().out
    params, cfg, _, body = load_checkpoint(tmp_path / "a" / "checkpoint")
    assert f"parameters: {params.total_count()}" in out
    assert cfg.layers == 2 and cfg.filters == (4, 4, 4)
    assert body["seed"] == 0

    assert run("evaluate", "--flow", flow, "--graph", graph_file, "--checkpoint", tmp_path / "a" / "checkpoint",
               "--out", tmp_path / "ev") == 0
    rows = (tmp_path / "ev" / "metrics.csv").read_text().splitlines()
    assert len(rows) == 1 + 1 + 12
    overall = rows[1].split(",")
    y, p = cli.read_predictions(tmp_path / "ev" / "predictions.csv")
    assert abs(metrics.mae(y, p) - float(overall[1])) < 1e-9
    assert abs(metrics.rmse(y, p) - float(overall[2])) < 1e-9
    assert abs(metrics.mape(y, p) - float(overall[3])) < 1e-9


def test_perfect_prediction_stub(tmp_path, graph_file):
    flow = np.full((120, 4), 50.0)
    D.save_flow(tmp_path / "flow.csv", D.FlowSeries(flow))
    from sttgcn.net.params import ModelConfig
    cfg = ModelConfig(n_nodes=4, layers=2, filters=(4, 4, 4), dilated_channels=4, fc_hidden=8)
    ds = D.make_windows(D.FlowSeries(flow))
    save_checkpoint(tmp_path / "ck", ModelParams.zeros(cfg), cfg, ds.stats)
    assert run("evaluate", "--flow", tmp_path / "flow.csv", "--graph", graph_file, "--checkpoint", tmp_path / "ck",
               "--out", tmp_path / "ev") == 0
    for row in (tmp_path / "ev" / "metrics.csv").read_text().splitlines()[1:]:
        assert [float(v) for v in row.split(",")[1:4]] == [0.0, 0.0, 0.0]


def test_config_file_and_flag_precedence(tmp_path, synth_dir):
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"distances = {synth_dir / 'distances.csv'}\nmethod = tt\nseed = 5\n")
    args = cli.parse_args(["reconstruct", "--config", str(cfg)])
    assert (args.method, args.seed) == ("tt", 5)
    args = cli.parse_args(["reconstruct", "--config", str(cfg), "--seed", "9"])
    assert args.seed == 9
    cfg.write_text("[run]\nbogus = 1\n")
    assert run("reconstruct", "--config", cfg, "--out", tmp_path) == 2


def test_thread_env(monkeypatch, tmp_path, synth_dir):
    monkeypatch.setenv("STT_THREADS", "lots")
    assert run("reconstruct", "--distances", synth_dir / "distances.csv", "--out", tmp_path) == 2
    monkeypatch.setenv("STT_THREADS", "0")
    assert run("reconstruct", "--distances", synth_dir / "distances.csv", "--out", tmp_path) == 0
