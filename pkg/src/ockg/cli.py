"""Command-line entry points: generate, tune, run, evaluate, repro.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .divergence import ScoreSeries
from .graph import GraphError, read_edgelist, write_edgelist
from .io import (DataError, read_json, read_stream_csv, read_truth, write_json,
                 write_stream_csv, write_truth)
from .metrics import aggregate, evaluate_instance
from .pipeline import METHODS, Calibration, RunSettings, calibrate, detect, instance_rngs, run_instance
from .scenarios import DEFAULTS, ScenarioSpec, make_graph, generate

log = logging.getLogger("ockg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- settings

def _settings_fields() -> dict:
    return {f.name: f for f in fields(RunSettings)}


def load_settings(args, base: dict | None = None) -> RunSettings:
    """RunSettings from (in increasing priority) ``base``, ``--config`` and flags."""
    values = dict(base or {})
    if getattr(args, "config", None):
        cfg = read_json(args.config)
        unknown = set(cfg) - set(_settings_fields()) - {"schema"}
        if unknown:
            raise DataError(f"{args.config}: unknown settings {sorted(unknown)}")
        values.update({k: v for k, v in cfg.items() if k != "schema"})
    for name in _settings_fields():
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if "n" not in values:
        raise UsageError("window size n is required (--n or --config)")
    s = RunSettings(**values)
    _check_settings(s)
    return s


def _check_settings(s: RunSettings) -> None:
    if s.n < 2:
        raise UsageError("--n must be at least 2")
    if not 0 <= s.alpha < 1:
        raise UsageError("--alpha must lie in [0, 1)")
    if s.stride < 1:
        raise UsageError("--stride must be at least 1")
    if not 0 < s.mu0 < 1:
        raise UsageError("mu0 must lie in (0, 1)")
    if s.capacity < 1 or s.R < 2 or s.max_cycles < 1:
        raise UsageError("capacity must be >= 1, R >= 2, max_cycles >= 1")
    if not s.sigma_scale > 0:
        raise UsageError("--sigma-scale must be positive")


def _add_settings_flags(p: argparse.ArgumentParser, stride=True) -> None:
    p.add_argument("--config", help="JSON file with run settings (n, alpha, stride, mu0, ...)")
    p.add_argument("--n", type=int, help="window size")
    p.add_argument("--alpha", type=float, help="relative ratio mixing weight (default 0.1)")
    if stride:
        p.add_argument("--stride", type=int, help="score every STRIDE steps (default 1)")
    p.add_argument("--mu0", type=float, help="coherence threshold (default 0.1)")
    p.add_argument("--capacity", type=int, help="maximum dictionary size (default 100)")
    p.add_argument("--R", type=int, dest="R", help="cross-validation folds (default 5)")
    p.add_argument("--tol", type=float, help="solver tolerance (default 1e-6*sqrt(NL))")
    p.add_argument("--max-cycles", type=int, dest="max_cycles", help="solver cycle cap")
    p.add_argument("--sigma-scale", type=float, dest="sigma_scale",
                   help="factor on the per-node median widths (default 0.5)")


# ---------------------------------------------------------------- commands

def _scenario(args) -> ScenarioSpec:
    if args.config:
        spec = ScenarioSpec.from_json(read_json(args.config))
        if args.seed is not None:
            spec.seed = args.seed
        return spec
    if not args.experiment or args.n is None:
        raise UsageError("give an experiment and --n, or --config with a scenario spec")
    return ScenarioSpec(args.experiment, args.n, tau=args.tau, T=args.T,
                        seed=args.seed if args.seed is not None else 0)


def cmd_generate(args) -> int:
    spec = _scenario(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    graph_rng, pairs = instance_rngs(spec.seed, args.instances)
    graph, clusters = make_graph(spec, graph_rng)
    write_edgelist(graph, out / "graph.txt", clusters)
    write_json(out / "scenario.json", {k: v for k, v in spec.to_json().items() if k != "schema"},
               config=spec.to_json())
    for i, (data_rng, _) in enumerate(pairs):
        stream, C = generate(spec, graph, clusters, data_rng)
        write_stream_csv(stream, out / f"stream_{i:03d}.csv")
        write_truth(out / f"truth_{i:03d}.json", spec.tau, C)
    log.info("wrote %d instance(s) to %s", args.instances, out)
    return EXIT_OK


def _load_graph(path, n_nodes: int):
    graph, _ = read_edgelist(path)
    if graph.n_nodes != n_nodes:
        raise DataError(f"graph has {graph.n_nodes} nodes but the stream has {n_nodes}")
    return graph


def cmd_tune(args) -> int:
    settings = load_settings(args)
    stream, _ = read_stream_csv(args.stream)
    graph = _load_graph(args.graph, stream.shape[1])
    if stream.shape[0] < 2 * settings.n:
        raise DataError(f"calibration stream has {stream.shape[0]} steps, need 2n={2 * settings.n}")
    if args.pool:
        graph = graph.without_edges()
    seed = args.seed if args.seed is not None else 0
    calib = calibrate(stream[:2 * settings.n].transpose(1, 0, 2), graph, settings,
                      np.random.default_rng(seed), pool=args.pool)
    config = {"settings": settings.to_json(), "pool": args.pool, "seed": seed,
              "graph": graph.digest()}
    write_json(args.out, {"settings": settings.to_json(), "pool": args.pool, "seed": seed,
                          "calibration": calib.to_json()}, config=config)
    log.info("forward %s, backward %s", calib.forward, calib.backward)
    return EXIT_OK


def cmd_run(args) -> int:
    report = read_json(args.tuning)
    try:
        base = report["settings"]
        calib = Calibration.from_json(report["calibration"])
    except (KeyError, TypeError) as e:
        raise DataError(f"{args.tuning}: not a tuning report ({e})") from None
    settings = load_settings(args, base)
    stream, t0 = read_stream_csv(args.stream)
    graph = _load_graph(args.graph, stream.shape[1])
    if stream.shape[2] != calib.dictionaries[0].dim:
        raise DataError(f"stream dimension {stream.shape[2]} != tuning dimension "
                        f"{calib.dictionaries[0].dim}")
    if args.pool:
        graph = graph.without_edges()
    if bool(report.get("pool", False)) != args.pool:
        log.warning("tuning report pool=%s but run pool=%s", report.get("pool"), args.pool)
    T = stream.shape[0]
    start = 0 if args.start is None else args.start - t0
    stop = T if args.stop is None else args.stop - t0
    if not 0 <= start < stop <= T:
        raise DataError(f"--start/--stop must satisfy {t0} <= start < stop <= {t0 + T}")
    res = detect(stream, graph, calib, settings, start=start, stop=stop,
                 eta=args.eta, eta_nodes=args.eta_node)
    # detect() numbers steps from the slice start; shift to the stream clock
    res.series.times += t0
    if not np.isfinite(res.series.node_scores).all():
        raise FloatingPointError("non-finite scores")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res.series.to_csv(out / "scores.csv")
    config = {"settings": settings.to_json(), "pool": args.pool, "eta": args.eta,
              "eta_node": args.eta_node, "start": args.start, "stop": args.stop,
              "graph": graph.digest(), "tuning": report.get("config_digest")}
    write_json(out / "result.json", {
        "tau_hat": None if res.tau_hat is None else res.tau_hat + t0,
        "affected": sorted(res.affected),
        "unconverged_steps": res.unconverged_steps,
        "n_scores": len(res.series),
    }, config=config)
    return EXIT_OK


def _roc_rows(name: str, agg: dict) -> list[str]:
    roc = agg["mean_roc"]
    return [f"{name},{f:.2f},{m:.17g},{s:.17g}"
            for f, m, s in zip(roc["fpr"], roc["tpr_mean"], roc["tpr_std"])]


def cmd_evaluate(args) -> int:
    if len(args.scores) != len(args.truth):
        raise UsageError("need one --truth per --scores file")
    per_instance = []
    for sp, tp in zip(args.scores, args.truth):
        series = ScoreSeries.from_csv(sp)
        tau, C = read_truth(tp)
        n = args.n if args.n is not None else read_json(tp).get("n")
        if n is None:
            raise UsageError(f"window size unknown for {tp}; pass --n")
        try:
            m = evaluate_instance(series, tau, int(n), C)
        except ValueError as e:
            raise DataError(f"{sp}: {e}") from None
        per_instance.append({"scores": str(sp), "truth": str(tp), **m})
    agg = aggregate(per_instance)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = {"scores": [str(s) for s in args.scores], "truth": [str(t) for t in args.truth],
              "n": args.n}
    write_json(out / "report.json", {"instances": per_instance, "aggregate": agg}, config=config)
    (out / "roc.csv").write_text("\n".join(["method,fpr,tpr_mean,tpr_std"] + _roc_rows("scores", agg)) + "\n")
    print(_summary_line("scores", agg))
    return EXIT_OK


def _summary_line(name: str, agg: dict) -> str:
    return (f"{name}: delay {agg['delay_mean']:.2f} ({agg['delay_std']:.2f})  "
            f"AUC {agg['auc_mean']:.3f} ({agg['auc_std']:.3f})  precision {agg['precision']:.2f}")


def _repro_job(job):
    spec, settings, methods, i, data_rng, tune_seed, out = job
    graph, clusters = _repro_graph(spec)
    res = run_instance(spec, graph, clusters, data_rng, tune_seed, settings, methods)
    inst_dir = Path(out) / f"instance_{i:03d}"
    inst_dir.mkdir(parents=True, exist_ok=True)
    write_truth(inst_dir / "truth.json", spec.tau, res["affected"])
    rows, timing = {}, {}
    for m, r in res["methods"].items():
        r["series"].to_csv(inst_dir / f"scores_{m}.csv")
        write_json(inst_dir / f"tuning_{m}.json", {"calibration": r["calibration"].to_json()})
        rows[m] = {"instance": i, "unconverged_steps": r["unconverged_steps"], **r["metrics"]}
        timing[m] = r["timing"]
    return i, rows, timing


def _repro_graph(spec: ScenarioSpec):
    graph_rng, _ = instance_rngs(spec.seed, 0)
    return make_graph(spec, graph_rng)


def cmd_repro(args) -> int:
    settings = load_settings(args)
    seed = args.seed if args.seed is not None else 0
    spec = ScenarioSpec(args.experiment, settings.n, tau=args.tau, T=args.T, seed=seed)
    methods = tuple(args.methods)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    graph, clusters = _repro_graph(spec)
    write_edgelist(graph, out / "graph.txt", clusters)
    _, pairs = instance_rngs(seed, args.instances)
    # graph rng is drawn from the same seed sequence, so jobs rebuild the same graph
    jobs = [(spec, settings, methods, i, d, int(t.integers(2**31)), str(out))
            for i, (d, t) in enumerate(pairs)]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_repro_job, jobs))
    else:
        results = [_repro_job(j) for j in jobs]
    results.sort(key=lambda r: r[0])

    report = {"experiment": spec.experiment, "scenario": spec.to_json(),
              "settings": settings.to_json(), "graph_digest": graph.digest(), "methods": {}}
    roc_lines = ["method,fpr,tpr_mean,tpr_std"]
    for m in methods:
        rows = [r[1][m] for r in results]
        agg = aggregate(rows)
        report["methods"][m] = {"aggregate": agg, "instances": rows}
        roc_lines += _roc_rows(m, agg)
        print(_summary_line(m, agg))
    config = {"scenario": spec.to_json(), "settings": settings.to_json(),
              "instances": args.instances, "methods": list(methods)}
    write_json(out / "report.json", report, config=config)
    (out / "roc.csv").write_text("\n".join(roc_lines) + "\n")
    # wall-clock numbers live outside the report so the report is reproducible
    write_json(out / "timing.json", {"instances": [{"instance": r[0], **r[2]} for r in results]})
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ockg", description="Online kernel- and graph-based change-point detection.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a graph, streams and ground truth")
    g.add_argument("experiment", nargs="?", choices=sorted(DEFAULTS))
    g.add_argument("--config", help="scenario spec JSON")
    g.add_argument("--n", type=int)
    g.add_argument("--tau", type=int)
    g.add_argument("--T", type=int, dest="T")
    g.add_argument("--seed", type=int)
    g.add_argument("--instances", type=int, default=1)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("tune", help="select (sigma, lambda, gamma) on the first 2n steps")
    t.add_argument("--graph", required=True)
    t.add_argument("--stream", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--pool", action="store_true", help="ignore the graph (W = 0)")
    t.add_argument("--out", required=True, help="tuning report JSON")
    _add_settings_flags(t, stride=False)
    t.set_defaults(func=cmd_tune)

    r = sub.add_parser("run", help="score a stream with a tuned detector")
    r.add_argument("--graph", required=True)
    r.add_argument("--stream", required=True)
    r.add_argument("--tuning", required=True, help="report written by 'ockg tune'")
    r.add_argument("--pool", action="store_true", help="ignore the graph (W = 0)")
    r.add_argument("--eta", type=float, default=float("inf"), help="global alarm threshold")
    r.add_argument("--eta-node", type=float, default=0.0, dest="eta_node",
                   help="node threshold for the affected set")
    r.add_argument("--start", type=int, help="first time index to feed")
    r.add_argument("--stop", type=int, help="time index to stop before")
    r.add_argument("--out", required=True)
    _add_settings_flags(r)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("evaluate", help="delay, AUC and precision against ground truth")
    e.add_argument("--scores", nargs="+", required=True)
    e.add_argument("--truth", nargs="+", required=True)
    e.add_argument("--n", type=int)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("repro", help="generate, tune, run and evaluate one experiment")
    x.add_argument("experiment", choices=sorted(DEFAULTS))
    x.add_argument("--tau", type=int)
    x.add_argument("--T", type=int, dest="T")
    x.add_argument("--seed", type=int)
    x.add_argument("--instances", type=int, default=10)
    x.add_argument("--crop", action="store_true", default=None, help="score only around the change-point")
    x.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))
    x.add_argument("--workers", type=int, default=1)
    x.add_argument("--out", required=True)
    _add_settings_flags(x)
    x.set_defaults(func=cmd_repro)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"ockg: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as e:
        print(f"ockg: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, GraphError, OSError, ValueError, KeyError) as e:
        print(f"ockg: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
