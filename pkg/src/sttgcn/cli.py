"""Command-line front end: ``sttgcn <subcommand> [options]``.

Options may also come from ``--config FILE``, an INI-style file whose
``[section]`` headers are ignored and whose ``key = value`` lines use the long
option names (dashes or underscores). Command-line flags win over the file.
"""
import argparse
import configparser
import csv
import json
import logging
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import data_io, metrics, stgraph
from .errors import STTError, UsageError
from .net.model import predict
from .net.params import ModelConfig, init_params
from .net.train import load_checkpoint, save_checkpoint, train, write_history
from .tensor_core import save_tensor

log = logging.getLogger("sttgcn")

METHOD_ALIASES = {"tucker": "tucker_hooi", "l1tucker": "l1_tucker", "tt": "tt"}

# published STTGCN parameter counts keyed by sensor count, for comparison only
REFERENCE_COUNTS = {358: 1255308, 307: 1242252, 883: 1389708, 170: 1207108}

MODEL_KEYS = {
    "window": int, "horizon": int, "layers": int, "dilation": int,
    "dilated_channels": int, "fc_hidden": int, "huber_delta": float,
    "learning_rate": float, "batch_size": int, "max_epochs": int, "patience": int,
}


def _thread_limit():
    raw = os.environ.get("STT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"STT_THREADS must be an integer, got {raw!r}") from None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return nullcontext()
    return threadpool_limits(limits=max(n, 1))


def _require(path, what):
    if path is None:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} file not found: {p}")
    return p


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _method(args):
    return METHOD_ALIASES[args.method]


def _write_json(path, body):
    Path(path).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


# -- subcommands -------------------------------------------------------------


def cmd_synth(args):
    out = _out_dir(args)
    series, graph = data_io.synth_diffusion(args.nodes, args.steps, args.seed)
    data_io.save_flow(out / "flow.csv", series)
    data_io.save_distances(out / "distances.csv", graph)
    print(f"synth: {args.nodes} nodes x {args.steps} steps -> {out}")


def cmd_build_graph(args):
    out = _out_dir(args)
    g = stgraph.load_distances(_require(args.distances, "distances"), n=args.nodes)
    f = stgraph.build_fusion_matrix(g)
    stgraph.save_graph(out / "fusion.stm", f)
    save_tensor(out / "adjacency.stt", stgraph.blocks_to_tensor(f))
    n = g.n
    names = {0: "zero", 1: "identity"}
    for k in range(3):
        cells = []
        for l in range(3):
            block = f.matrix[k * n:(k + 1) * n, l * n:(l + 1) * n]
            if np.array_equal(block, g.adjacency):
                label = "spatial"
            elif np.array_equal(block, np.eye(n)):
                label = names[1]
            elif not block.any():
                label = names[0]
            else:
                label = "other"
            cells.append(f"{label}(slice {l + 3 * k + 1})")
        print(f"block row {k + 1}: " + "  ".join(cells))
    print(f"build-graph: n={n} edges={len(g.costs)} fusion={3 * n}x{3 * n} -> {out}")


def _reconstruct(args, g, method):
    return stgraph.reconstruct_fusion_graph(
        g, method, seed=args.seed, max_iter=args.max_iter, tol=args.tol
    )


def cmd_reconstruct(args):
    out = _out_dir(args)
    g = stgraph.load_distances(_require(args.distances, "distances"), n=args.nodes)
    method = _method(args)
    rec = _reconstruct(args, g, method)
    manifest = {
        "method": method,
        "seed": args.seed,
        "n": g.n,
        "iterations": rec.iterations,
        "objective_trace": rec.objective_trace,
    }
    stgraph.save_graph(out / "reconstructed.stm", rec.graph, manifest)
    # wall time lives in its own file so the main artefacts rerun byte-identically
    _write_json(out / "reconstruct_timing.json", {"method": method, "seconds": rec.seconds})
    print(f"reconstruct: {method} n={g.n} sweeps={rec.iterations} "
          f"objective={rec.objective_trace[-1]:.6g} seconds={rec.seconds:.3f}")


def cmd_bench_decomp(args):
    out = _out_dir(args)
    g = stgraph.load_distances(_require(args.distances, "distances"), n=args.nodes)
    path = out / "bench_decomp.csv"
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "n", "seconds", "iterations", "final_objective"])
        for method in stgraph.METHODS:
            rec = _reconstruct(args, g, method)
            w.writerow([method, g.n, repr(rec.seconds), rec.iterations, repr(rec.objective_trace[-1])])
            print(f"bench-decomp: {method} {rec.seconds:.4f}s")
    print(f"bench-decomp: -> {path}")


def cmd_export_graph(args):
    out = _out_dir(args)
    f = stgraph.load_graph(_require(args.graph, "graph"))
    stgraph.export_graph(f, out / "graph.csv", slice_path=out / "graph_slice1.csv")
    print(f"export-graph: {3 * f.n}x{3 * f.n} -> {out / 'graph.csv'}")


def _model_config(args, n_nodes):
    overrides = {k: getattr(args, k) for k in MODEL_KEYS if getattr(args, k, None) is not None}
    if args.filters is not None:
        overrides["filters"] = (args.filters,) * 3
    return ModelConfig(n_nodes=n_nodes, seed=args.seed, **overrides)


def _dataset(args, cfg=None):
    series = data_io.load_flow(_require(args.flow, "flow"))
    window = cfg.window if cfg else (args.window or 12)
    horizon = cfg.horizon if cfg else (args.horizon or 12)
    return series, data_io.make_windows(series, window=window, horizon=horizon)


def cmd_train(args):
    out = _out_dir(args)
    series, ds = _dataset(args)
    f = stgraph.load_graph(_require(args.graph, "graph"))
    if f.n != series.n_sensors:
        raise UsageError(f"graph has {f.n} nodes but flow has {series.n_sensors} sensors")
    cfg = _model_config(args, series.n_sensors)
    count = init_params(cfg).total_count()
    ref = REFERENCE_COUNTS.get(cfg.n_nodes)
    line = f"parameters: {count}"
    if ref is not None:
        line += f" (reference count for {cfg.n_nodes} sensors: {ref}; informational)"
    log.info(line)
    print(line)
    start = time.perf_counter()
    res = train(ds, f.matrix, cfg)
    write_history(out / "history.csv", res.history)
    save_checkpoint(
        out / "checkpoint", res.params, cfg, ds.stats,
        epoch=res.best_epoch,
        epochs_run=len(res.history),
        metrics=res.history[res.best_epoch - 1] if res.best_epoch else {},
    )
    print(f"train: {len(res.history)} epochs, best {res.best_epoch}, "
          f"{time.perf_counter() - start:.1f}s -> {out}")


def cmd_evaluate(args):
    out = _out_dir(args)
    params, cfg, stats, _ = load_checkpoint(_require(args.checkpoint, "checkpoint"))
    _, ds = _dataset(args, cfg)
    f = stgraph.load_graph(_require(args.graph, "graph"))
    x, y = ds.part("test")
    start = time.perf_counter()
    pred = predict(x, f.matrix, params, cfg, stats)
    y = np.swapaxes(y, 1, 2)
    rep = metrics.report(y, pred, seconds=time.perf_counter() - start)
    metrics.write_report(out / "metrics.csv", rep)
    write_predictions(out / "predictions.csv", ds.starts[ds.splits["test"]], y, pred)
    print(f"evaluate: MAE {rep.mae:.4f} RMSE {rep.rmse:.4f} MAPE {rep.mape:.2f}% "
          f"(n={rep.n}, MAPE skipped {rep.n_mape_excluded} zero targets) -> {out}")


def write_predictions(path, starts, y, pred):
    """Rows ``sample,start,step,sensor,target,prediction,residual`` (1-based step/sensor)."""
    with open(path, "w") as f:
        f.write("sample,start,step,sensor,target,prediction,residual\n")
        for s, start in enumerate(starts):
            for i in range(y.shape[1]):
                for h in range(y.shape[2]):
                    t, p = float(y[s, i, h]), float(pred[s, i, h])
                    f.write(f"{s},{start},{h + 1},{i + 1},{t!r},{p!r},{p - t!r}\n")


def read_predictions(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 4], data[:, 5]


# -- argument parsing --------------------------------------------------------


def _common(p, method=False):
    p.add_argument("--config", help="INI-style file of option values")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    if method:
        p.add_argument("--method", choices=sorted(METHOD_ALIASES), default="l1tucker")


def _graph_opts(p):
    p.add_argument("--distances", help="CSV with header from,to,cost (1-based ids)")
    p.add_argument("--nodes", type=int, help="node count (default: largest id)")
    p.add_argument("--max-iter", dest="max_iter", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-8)


def _model_opts(p):
    for key, typ in MODEL_KEYS.items():
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=typ)
    p.add_argument("--filters", type=int, help="width of every graph convolution")


def build_parser():
    parser = argparse.ArgumentParser(prog="sttgcn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic ring-diffusion dataset")
    _common(p, method=True)
    p.add_argument("--nodes", type=int, default=12)
    p.add_argument("--steps", type=int, default=5000)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-graph", help="binary fusion matrix and adjacency tensor")
    _common(p, method=True)
    _graph_opts(p)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("reconstruct", help="rebuild the fusion graph from a decomposition")
    _common(p, method=True)
    _graph_opts(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("bench-decomp", help="time every decomposition method")
    _common(p, method=True)
    _graph_opts(p)
    p.set_defaults(func=cmd_bench_decomp)

    p = sub.add_parser("export-graph", help="dump a fusion graph as row,col,value CSV")
    _common(p, method=True)
    p.add_argument("--graph", help="STM1 fusion matrix")
    p.set_defaults(func=cmd_export_graph)

    p = sub.add_parser("train", help="train the forecaster")
    _common(p, method=True)
    p.add_argument("--flow", help="flow CSV or STF1 file")
    p.add_argument("--graph", help="STM1 reconstructed fusion matrix")
    _model_opts(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="test-split metrics and predictions")
    _common(p, method=True)
    p.add_argument("--flow", help="flow CSV or STF1 file")
    p.add_argument("--graph", help="STM1 reconstructed fusion matrix")
    p.add_argument("--checkpoint", help="checkpoint directory written by train")
    p.set_defaults(func=cmd_evaluate)
    return parser


def _config_defaults(path):
    cp = configparser.ConfigParser()
    cp.optionxform = lambda s: s.replace("-", "_")
    text = Path(path).read_text()
    if not text.lstrip().startswith("["):
        text = "[main]\n" + text
    cp.read_string(text, source=str(path))
    values = {}
    for section in cp.sections():
        values.update(cp[section])
    return values


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        values = _config_defaults(_require(args.config, "config"))
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        unknown = set(values) - set(known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        for key, raw in values.items():
            action = known[key]
            converted = action.type(raw) if action.type else raw
            sub.set_defaults(**{key: converted})
        # reparse so explicit flags override the file
        args = parser.parse_args(argv)
    return args


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        with _thread_limit():
            args.func(args)
    except STTError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return 2
    except (OSError, configparser.Error) as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
