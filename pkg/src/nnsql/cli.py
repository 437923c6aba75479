"""Command-line surface.

Subcommands group into evaluation (import, eval, classify), verification
(geometry, integral, verify), and white-box inspection (prune, stats,
saliency), plus bench for the scaling study and sql for compiler
inspection.  ``--check`` reruns the task natively and exits nonzero when
SQL and oracle disagree beyond 1e-9.

Exit codes: 0 ok, 2 usage, 3 data error, 4 engine error, 5 check mismatch.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import models, oracle, sqlgen, store
from . import runner as run_mod
from .errors import (
    CapabilityMissing,
    CheckMismatch,
    EngineError,
    EngineUnavailable,
    NnsqlError,
)

CHECK_TOL = 1e-9

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_ENGINE = 4
EXIT_MISMATCH = 5


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    if value is None:
        return ""
    return str(value)


def _emit(args, columns: list[str], rows: list[tuple], extra: dict | None = None):
    if args.json:
        doc = {
            "columns": columns,
            "rows": [[_fmt(v) if isinstance(v, float) else v for v in r] for r in rows],
        }
        if extra:
            doc.update(extra)
        print(json.dumps(doc, indent=1))
    elif args.csv:
        print(",".join(columns))
        for r in rows:
            print(",".join(_fmt(v) for v in r))
    else:
        widths = [
            max(len(c), *(len(_fmt(r[i])) for r in rows)) if rows else len(c)
            for i, c in enumerate(columns)
        ]
        print("  ".join(c.ljust(w) for c, w in zip(columns, widths)))
        for r in rows:
            print("  ".join(_fmt(v).ljust(w) for v, w in zip(r, widths)))
        if extra:
            for k, v in extra.items():
                print(f"{k}: {_fmt(v)}")


def _session(args) -> run_mod.EngineSession:
    return run_mod.open_session(
        args.db, backend=args.backend, read_only=getattr(args, "read_only", False)
    )


def _extract_model(session, model_id: int, output_activation: str = "identity"):
    graph = store.extract_graph(session.backend, model_id)
    depth = max(layer for _, _, layer in graph.nodes)
    activations = ("relu",) * (depth - 1) + (output_activation,)
    graph = models.NetworkGraph(graph.nodes, graph.edges, activations)
    return models.graph_to_model(graph), graph


def _opts(args, output_activation: str = "identity") -> sqlgen.EvalOptions:
    depth = getattr(args, "fixed_depth", None)
    return sqlgen.EvalOptions(depth=depth, output_activation=output_activation)


def _mismatch(args, label: str, delta) -> None:
    raise CheckMismatch(f"{label}: SQL and oracle disagree ({delta})")


# --- subcommand handlers ---------------------------------------------------------


def cmd_import(args) -> int:
    model = models.import_model(args.model)
    graph = models.model_to_graph(model, keep_zero_edges=not args.drop_zero_edges)
    session = _session(args)
    store.create_schema(session.backend)
    n_nodes, n_edges = store.load_graph(
        session.backend, graph, model_id=args.model_id, replace=args.replace
    )
    _emit(
        args,
        ["model_id", "nodes", "edges"],
        [(args.model_id, n_nodes, n_edges)],
    )
    return EXIT_OK


def cmd_load_input(args) -> int:
    values = [float(v) for v in args.values.split(",")]
    session = _session(args)
    store.create_schema(session.backend)
    n = store.load_inputs(
        session.backend,
        [models.InputVector(args.vec_id, np.array(values))],
        replace=args.replace,
    )
    _emit(args, ["vec_id", "rows"], [(args.vec_id, n)])
    return EXIT_OK


def _auto_depth(args, session, opts: sqlgen.EvalOptions) -> sqlgen.EvalOptions:
    """Downgrade to fixed depth when recursion wasn't explicitly requested
    and the engine cannot aggregate inside recursive queries."""
    if (
        opts.depth is None
        and not getattr(args, "recursive", False)
        and not session.capabilities.recursive_aggregation
    ):
        graph = store.extract_graph(session.backend, args.model_id)
        depth = max(layer for _, _, layer in graph.nodes)
        return sqlgen.EvalOptions(
            depth=depth, output_activation=opts.output_activation
        )
    return opts


def cmd_eval(args) -> int:
    session = _session(args)
    opts = _auto_depth(args, session, _opts(args, args.output_activation))
    if opts.depth is None:
        query = sqlgen.gen_eval_recursive(opts, args.model_id, args.vec_id)
    else:
        query = sqlgen.gen_eval_fixed(opts, args.model_id, args.vec_id)
    table = run_mod.execute(session, query)
    extra = {}
    if args.check:
        model, _ = _extract_model(session, args.model_id, args.output_activation)
        vecs = store.extract_inputs(session.backend, args.vec_id)
        want = oracle.eval_model(model, vecs[0].values)
        got = np.array([r[-1] for r in table.rows])
        delta = float(np.max(np.abs(got - want))) if len(got) else 0.0
        extra["max_abs_delta"] = delta
        if delta > CHECK_TOL or got.shape != want.shape:
            _emit(args, table.columns, table.rows, extra)
            _mismatch(args, "eval", delta)
    _emit(args, table.columns, table.rows, extra)
    return EXIT_OK


def cmd_classify(args) -> int:
    session = _session(args)
    opts = _auto_depth(args, session, _opts(args, "softmax"))
    query = sqlgen.gen_classify(opts, args.model_id, args.vec_id)
    table = run_mod.execute(session, query)
    extra = {}
    if args.check:
        model, graph = _extract_model(session, args.model_id, "softmax")
        vecs = store.extract_inputs(session.backend, args.vec_id)
        probs = oracle.eval_model(model, vecs[0].values)
        unit = int(np.argmax(probs))
        output_ids = sorted(
            nid for nid, _, lay in graph.nodes
            if lay == max(l for _, _, l in graph.nodes)
        )
        want_id, want_prob = output_ids[unit], float(probs[unit])
        got_id, got_prob = int(table.rows[0][0]), float(table.rows[0][1])
        delta = abs(got_prob - want_prob)
        extra["max_abs_delta"] = delta
        if got_id != want_id or delta > CHECK_TOL:
            _emit(args, table.columns, table.rows, extra)
            _mismatch(args, "classify", f"unit {got_id} vs {want_id}, prob {delta}")
    _emit(args, table.columns, table.rows, extra)
    return EXIT_OK


def cmd_geometry(args) -> int:
    session = _session(args)
    pwl = run_mod.sql_geometry(session, args.model_id)
    extra = {"s0": pwl.s0, "s_last": pwl.last_slope}
    rows = [
        (x, y, pwl.slopes[i] if i < len(pwl.slopes) else None)
        for i, (x, y) in enumerate(pwl.breakpoints)
    ]
    if args.check:
        model, _ = _extract_model(session, args.model_id)
        native = oracle.geometry(model)
        deltas = [abs(native.s0 - pwl.s0), abs(native.last_slope - pwl.last_slope)]
        if len(native.breakpoints) != len(pwl.breakpoints):
            _mismatch(args, "geometry", "breakpoint counts differ")
        for (ax, ay), (bx, by) in zip(pwl.breakpoints, native.breakpoints):
            deltas += [abs(ax - bx), abs(ay - by)]
        delta = max(deltas)
        extra["max_abs_delta"] = delta
        if delta > CHECK_TOL:
            _mismatch(args, "geometry", delta)
    _emit(args, ["x", "y", "slope_after"], rows, extra)
    return EXIT_OK


def cmd_integral(args) -> int:
    session = _session(args)
    run_mod.check_geometry_eligible(session, args.model_id)
    query = sqlgen.gen_integral(args.a, args.b, args.model_id)
    value = float(run_mod.execute(session, query).scalar())
    extra = {}
    if args.check:
        model, _ = _extract_model(session, args.model_id)
        want = oracle.integral(oracle.geometry(model), args.a, args.b)
        delta = abs(value - want)
        extra["max_abs_delta"] = delta
        if delta > CHECK_TOL:
            _mismatch(args, "integral", delta)
    _emit(args, ["integral"], [(value,)], extra)
    return EXIT_OK


def cmd_verify(args) -> int:
    session = _session(args)
    run_mod.check_geometry_eligible(session, args.model_id)
    query = sqlgen.gen_threshold_check(args.threshold, args.model_id)
    exceeded = bool(run_mod.execute(session, query).scalar())
    if args.check:
        model, _ = _extract_model(session, args.model_id)
        want = oracle.exceeds_threshold(oracle.geometry(model), args.threshold)
        if exceeded != want:
            _mismatch(args, "verify", f"sql={exceeded} native={want}")
    _emit(args, ["threshold", "exceeded"], [(args.threshold, exceeded)])
    return EXIT_OK


def cmd_prune(args) -> int:
    session = _session(args)
    if args.sweep:
        lo, hi, steps = args.sweep.split(":")
        lo, hi, steps = float(lo), float(hi), int(steps)
        rows = []
        for i in range(steps):
            eps = lo + (hi - lo) * i / max(steps - 1, 1)
            if eps <= 0:
                eps = 1e-12
            ids = run_mod.execute(
                session, sqlgen.gen_prunable_nodes(eps, args.model_id)
            ).column()
            rows.append((eps, len(ids)))
        _emit(args, ["epsilon", "count"], rows)
        return EXIT_OK
    query = sqlgen.gen_prunable_nodes(args.epsilon, args.model_id)
    ids = [int(v) for v in run_mod.execute(session, query).column()]
    if args.check:
        model, _ = _extract_model(session, args.model_id)
        want = oracle.prunable(model, args.epsilon)
        if set(ids) != want:
            _mismatch(args, "prune", f"{sorted(set(ids) ^ want)}")
    _emit(args, ["id"], [(i,) for i in ids])
    return EXIT_OK


def cmd_stats(args) -> int:
    session = _session(args)
    queries = sqlgen.gen_stats(args.model_id)
    values = [run_mod.execute(session, q).scalar() for q in queries]
    if args.check:
        graph = store.extract_graph(session.backend, args.model_id)
        want = (len(graph.nodes), len(graph.edges), oracle.depth(graph))
        if tuple(values) != want:
            _mismatch(args, "stats", f"{tuple(values)} vs {want}")
    _emit(args, ["neurons", "edges", "depth"], [tuple(values)])
    return EXIT_OK


def _write_pgm(path: str, entries: dict[int, float], width: int | None) -> str:
    ids = sorted(entries)
    vals = [entries[i] for i in ids]
    n = len(vals)
    if width is None:
        width = int(np.sqrt(n)) if int(np.sqrt(n)) ** 2 == n else n
    height = (n + width - 1) // width
    peak = max(vals) if vals and max(vals) > 0 else 1.0
    scale = 255.0 / peak
    pixels = [int(round(v * scale)) for v in vals]
    pixels += [0] * (width * height - n)
    lines = [f"P2\n{width} {height}\n255"]
    for row in range(height):
        lines.append(" ".join(str(p) for p in pixels[row * width:(row + 1) * width]))
    Path(path).write_text("\n".join(lines) + "\n")
    return f"{path} (scale: {scale:.17g} per unit saliency)"


def cmd_saliency(args) -> int:
    if args.mode == "zero" and args.targets != "input":
        raise NnsqlError(
            "zero mode targets input units; use --mode remove for hidden units"
        )
    session = _session(args)
    vec_id = run_mod.require_baseline(session, args.vec_id)
    opts = _auto_depth(args, session, _opts(args, args.output_activation))

    if args.concurrent:
        graph = store.extract_graph(session.backend, args.model_id)
        max_layer = max(layer for _, _, layer in graph.nodes)
        if args.targets == "input":
            drop_ids = [nid for nid, _, lay in graph.nodes if lay == 0]
        else:
            drop_ids = [nid for nid, _, lay in graph.nodes if 0 < lay < max_layer]
        backend = session.backend

        def factory() -> run_mod.EngineSession:
            return run_mod.EngineSession(backend.clone())

        entries = run_mod.run_saliency_concurrent(
            factory,
            drop_ids,
            mode=args.mode,
            opts=opts,
            model_id=args.model_id,
            vec_id=vec_id,
            workers=args.concurrent,
        )
    else:
        if args.mode == "zero":
            query = sqlgen.gen_saliency_pinputs(opts, args.model_id, vec_id)
        else:
            query = sqlgen.gen_saliency_medges(
                args.targets, opts, args.model_id, vec_id
            )
        table = run_mod.execute(session, query)
        entries = {int(d): float(v) for d, v in table.rows}

    extra = {}
    if args.check:
        model, _ = _extract_model(session, args.model_id, args.output_activation)
        vec = store.extract_inputs(session.backend, vec_id)[0]
        native = oracle.saliency(model, vec.values, args.mode, args.targets)
        if set(entries) != set(native.entries):
            _mismatch(args, "saliency", "entry sets differ")
        delta = max(
            (abs(entries[d] - native.entries[d]) for d in entries), default=0.0
        )
        extra["max_abs_delta"] = delta
        if delta > CHECK_TOL:
            _mismatch(args, "saliency", delta)
    if args.pgm:
        extra["pgm"] = _write_pgm(args.pgm, entries, args.width)
    _emit(args, ["d_id", "saliency"], sorted(entries.items()), extra)
    return EXIT_OK


def cmd_bench(args) -> int:
    sizes = tuple(int(s) for s in args.sizes.split(","))
    base = (
        (784, 4, 10_000, 4)
        if args.paper_scale
        else tuple(int(v) for v in args.base.split(","))
    )
    if args.paper_scale:
        print(
            "warning: paper-scale shapes are heavy (10k-wide layers); "
            "expect long runtimes",
            file=sys.stderr,
        )
    config = bench_mod.BenchConfig(
        axis=args.axis,
        sizes=sizes,
        base=base,
        repetitions=args.repetitions,
        seed=args.seed,
    )
    session = _session(args)
    if args.compare == "strategies":
        rows = bench_mod.compare_recursive_vs_fixed(config, session)
        out = bench_mod.write_compare_csv(rows, args.out, bench_mod.COMPARE_HEADER)
    elif args.compare == "engines":
        rows = bench_mod.compare_engines(config)
        out = bench_mod.write_compare_csv(rows, args.out, bench_mod.ENGINES_HEADER)
    else:
        bench_rows = bench_mod.run_scaling(config, session, strategy=args.strategy)
        out = bench_mod.write_scaling_csv(bench_rows, args.out)
        if args.check_timing_slopes:
            slope = bench_mod.fit_loglog_slope(
                [r.value for r in bench_rows],
                [r.median_seconds for r in bench_rows],
            )
            lo, hi = (1.6, 2.5) if args.axis == "layer_size" else (0.7, 1.4)
            print(f"log-log slope: {slope:.3f} (expected [{lo}, {hi}])")
            if not lo <= slope <= hi:
                raise CheckMismatch(f"timing slope {slope:.3f} outside [{lo}, {hi}]")
    print(f"wrote {out}")
    return EXIT_OK


_SQL_TASKS = {
    "eval-recursive": lambda a: sqlgen.gen_eval_recursive(
        sqlgen.EvalOptions(), a.model_id, a.vec_id
    ),
    "eval-fixed": lambda a: sqlgen.gen_eval_fixed(
        sqlgen.EvalOptions(depth=a.depth), a.model_id, a.vec_id
    ),
    "classify": lambda a: sqlgen.gen_classify(
        sqlgen.EvalOptions(depth=a.depth, output_activation="softmax")
        if a.depth
        else sqlgen.EvalOptions(output_activation="softmax"),
        a.model_id,
        a.vec_id,
    ),
    "breakpoints": lambda a: sqlgen.gen_breakpoints(a.model_id),
    "slopes": lambda a: sqlgen.gen_slopes(a.model_id),
    "initial-slope": lambda a: sqlgen.gen_initial_slope(a.model_id),
    "final-slope": lambda a: sqlgen.gen_final_slope(a.model_id),
    "integral": lambda a: sqlgen.gen_integral(0.0, 1.0, a.model_id),
    "threshold": lambda a: sqlgen.gen_threshold_check(0.0, a.model_id),
    "prunable": lambda a: sqlgen.gen_prunable_nodes(0.01, a.model_id),
    "unconnected": lambda a: sqlgen.gen_unconnected_nodes("Edge", a.model_id),
    "pinputs": lambda a: sqlgen.gen_saliency_pinputs(
        sqlgen.EvalOptions(depth=a.depth) if a.depth else None, a.model_id, a.vec_id
    ),
    "medges-input": lambda a: sqlgen.gen_saliency_medges(
        "input", sqlgen.EvalOptions(depth=a.depth) if a.depth else None,
        a.model_id, a.vec_id,
    ),
    "medges-hidden": lambda a: sqlgen.gen_saliency_medges(
        "hidden", sqlgen.EvalOptions(depth=a.depth) if a.depth else None,
        a.model_id, a.vec_id,
    ),
    "drop-one": lambda a: sqlgen.gen_saliency_single_drop(
        "remove", sqlgen.EvalOptions(depth=a.depth) if a.depth else None,
        a.model_id, a.vec_id,
    ),
}


def cmd_sql(args) -> int:
    if args.task == "stats":
        for q in sqlgen.gen_stats(args.model_id):
            print(q.text)
        return EXIT_OK
    query = _SQL_TASKS[args.task](args)
    print(query.text, end="")
    return EXIT_OK


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nnsql",
        description="Store ReLU networks as relations and analyze them in SQL.",
    )
    parser.add_argument(
        "--db",
        default=os.environ.get("NNSQL_DB", "nnsql.db"),
        help="database location (env NNSQL_DB; ':memory:' for transient)",
    )
    parser.add_argument(
        "--backend",
        choices=("auto", "duckdb", "sqlite"),
        default="auto",
        help="engine backend (auto prefers the compiled engine)",
    )
    parser.add_argument("--read-only", action="store_true")
    fmt = parser.add_mutually_exclusive_group()
    fmt.add_argument("--csv", action="store_true", help="CSV output")
    fmt.add_argument("--json", action="store_true", help="JSON output")

    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, check=True, vec=False):
        p.add_argument("--model-id", type=int, default=0)
        if vec:
            p.add_argument("--vec-id", type=int, default=0)
        if check:
            p.add_argument(
                "--check",
                action="store_true",
                help="cross-check against the native oracle (exit 5 on mismatch)",
            )

    p = sub.add_parser("import", help="load a model JSON file into the store")
    p.add_argument("model")
    p.add_argument("--replace", action="store_true")
    p.add_argument("--drop-zero-edges", action="store_true")
    common(p, check=False)
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("load-input", help="store one input vector")
    p.add_argument("values", help="comma-separated reals")
    p.add_argument("--vec-id", type=int, default=0)
    p.add_argument("--replace", action="store_true")
    p.set_defaults(func=cmd_load_input)

    p = sub.add_parser("eval", help="evaluate the stored model on a stored vector")
    common(p, vec=True)
    strat = p.add_mutually_exclusive_group()
    strat.add_argument("--fixed-depth", type=int, default=None)
    strat.add_argument("--recursive", action="store_true")
    p.add_argument(
        "--output-activation", choices=("identity", "relu", "softmax"),
        default="identity",
    )
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("classify", help="argmax class with softmax probability")
    common(p, vec=True)
    p.add_argument("--fixed-depth", type=int, default=None)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("geometry", help="breakpoints, slopes and boundary slopes")
    common(p)
    p.set_defaults(func=cmd_geometry)

    p = sub.add_parser("integral", help="definite integral of the represented function")
    common(p)
    p.add_argument("--from", dest="a", type=float, required=True)
    p.add_argument("--to", dest="b", type=float, required=True)
    p.set_defaults(func=cmd_integral)

    p = sub.add_parser("verify", help="does the function ever exceed a threshold?")
    common(p)
    p.add_argument("--threshold", type=float, required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("prune", help="nodes with only near-zero incoming weights")
    common(p)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--sweep", help="lo:hi:steps epsilon sweep")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("stats", help="neuron count, edge count, depth")
    common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("saliency", help="per-unit output change when dropped")
    common(p, vec=False)
    p.add_argument("--vec-id", type=int, default=None)
    p.add_argument("--mode", choices=("zero", "remove"), default="zero")
    p.add_argument("--targets", choices=("input", "hidden"), default="input")
    p.add_argument("--concurrent", type=int, default=0, metavar="K")
    p.add_argument("--fixed-depth", type=int, default=None)
    p.add_argument(
        "--output-activation", choices=("identity", "relu", "softmax"),
        default="identity",
    )
    p.add_argument("--pgm", help="write the map as a plain PGM image")
    p.add_argument("--width", type=int, default=None)
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("bench", help="scaling study; CSV output")
    p.add_argument("--axis", choices=bench_mod.AXES, default="layer_size")
    p.add_argument("--sizes", default="32,64,128")
    p.add_argument("--base", default="64,3,48,4",
                   help="input_len,depth,layer_size,num_inputs")
    p.add_argument("--paper-scale", action="store_true")
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strategy", choices=("recursive", "fixed"), default="recursive")
    p.add_argument("--compare", choices=("strategies", "engines"), default=None)
    p.add_argument("--check-timing-slopes", action="store_true")
    p.add_argument("--out", default="bench.csv")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sql", help="print generated SQL without executing")
    p.add_argument("task", choices=sorted([*_SQL_TASKS, "stats"]))
    p.add_argument("--model-id", type=int, default=0)
    p.add_argument("--vec-id", type=int, default=0)
    p.add_argument("--depth", type=int, default=None)
    p.set_defaults(func=cmd_sql)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CheckMismatch as e:
        _error(args, e, EXIT_MISMATCH)
        return EXIT_MISMATCH
    except (CapabilityMissing, EngineError, EngineUnavailable) as e:
        _error(args, e, EXIT_ENGINE)
        return EXIT_ENGINE
    except NnsqlError as e:
        _error(args, e, EXIT_DATA)
        return EXIT_DATA


def _error(args, exc: Exception, code: int) -> None:
    if getattr(args, "json", False):
        doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        print(json.dumps(doc), file=sys.stderr)
    else:
        print(f"nnsql: {type(exc).__name__}: {exc}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
