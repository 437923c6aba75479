"""Scaling study and strategy/engine comparisons, reported as CSV.

``run_scaling`` varies exactly one shape axis of a random layered network
(input length, number of input vectors, depth, or layer size), loads each
instance, times the evaluation query, verifies the result against the
native oracle, and emits one row per size.  Stored edge counts grow
quadratically in layer size (s^2 between successive hidden layers) and
linearly in the other axes; the structural counts are always asserted,
while wall-clock slopes are only checked behind an explicit flag since
timing is environment-sensitive.

``compare_recursive_vs_fixed`` runs both evaluation strategies on
identical data and reports the two timings side by side; which one wins
is reported, never asserted.  ``compare_engines`` does the same for the
compiled engine against the stdlib fallback on the fixed-depth strategy.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import sqlgen, store
from .errors import CheckMismatch
from .models import InputVector, Model, model_to_graph, random_model
from .oracle import eval_model
from .runner import EngineSession, execute, open_session

AXES = ("input_length", "num_inputs", "depth", "layer_size")

CSV_HEADER = "axis,value,median_seconds,checksum,rows"
COMPARE_HEADER = "value,recursive_seconds,fixed_seconds,checksum,rows"
ENGINES_HEADER = "value,duckdb_seconds,sqlite_seconds,checksum,rows"


@dataclass(frozen=True)
class BenchConfig:
    """One scaling experiment: vary ``axis`` over ``sizes``.

    ``base`` fixes the other three dimensions as
    (input length, depth, layer size, num inputs).  The default base is a
    desk-scale shape; pass ``paper_scale=True`` for the 784/4/10000 setup
    (slow; prints a warning).
    """

    axis: str
    sizes: tuple[int, ...]
    base: tuple[int, int, int, int] = (784, 4, 512, 4)
    repetitions: int = 3
    seed: int = 0
    output_dim: int = 10
    check_tolerance: float = 1e-9

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {self.axis!r}")
        if not self.sizes or min(self.sizes) < 1:
            raise ValueError("sizes must be positive")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")

    def shape_for(self, size: int) -> tuple[int, int, int, int]:
        input_len, depth, layer_size, num_inputs = self.base
        return {
            "input_length": (size, depth, layer_size, num_inputs),
            "num_inputs": (input_len, depth, layer_size, size),
            "depth": (input_len, size, layer_size, num_inputs),
            "layer_size": (input_len, depth, size, num_inputs),
        }[self.axis]


@dataclass(frozen=True)
class BenchRow:
    axis: str
    value: int
    median_seconds: float
    checksum: str
    rows: int
    node_count: int
    edge_count: int


def paper_scale_config(axis: str, sizes: tuple[int, ...], **kw) -> BenchConfig:
    """The original experiment's base shape; heavy on a laptop-class box."""
    return BenchConfig(axis=axis, sizes=sizes, base=(784, 4, 10_000, 4), **kw)


def _expected_edge_count(input_len: int, depth: int, layer_size: int, out: int) -> int:
    return input_len * layer_size + (depth - 1) * layer_size**2 + layer_size * out


def _build_instance(
    config: BenchConfig, size: int
) -> tuple[Model, list[InputVector]]:
    input_len, depth, layer_size, num_inputs = config.shape_for(size)
    rng = np.random.default_rng(config.seed + size)
    model = random_model(
        rng, input_len, (layer_size,) * depth, config.output_dim,
        name=f"bench_{config.axis}_{size}",
    )
    vectors = [
        InputVector(i, rng.uniform(-1.0, 1.0, input_len))
        for i in range(num_inputs)
    ]
    return model, vectors


def _checksum(rows: list[tuple]) -> str:
    text = "\n".join(",".join(repr(v) for v in row) for row in rows)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _median_time(
    session: EngineSession, query: sqlgen.SqlQuery, repetitions: int
) -> tuple[float, list[tuple]]:
    rows = execute(session, query).rows  # warm-up, also the checked result
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        result = execute(session, query)
        times.append(time.perf_counter() - t0)
        if result.rows != rows:
            raise CheckMismatch("benchmark result changed between repetitions")
    times.sort()
    return times[len(times) // 2], rows


def _verify_against_oracle(
    model: Model,
    vectors: list[InputVector],
    rows: list[tuple],
    tolerance: float,
) -> None:
    got: dict[int, list[float]] = {}
    for vec_id, _, val in rows:
        got.setdefault(int(vec_id), []).append(float(val))
    for vec in vectors:
        want = eval_model(model, vec.values)
        have = np.array(got.get(vec.vec_id, []))
        if have.shape != want.shape or np.max(np.abs(have - want)) > tolerance:
            raise CheckMismatch(
                f"bench result for vec {vec.vec_id} deviates from the oracle"
            )


def run_scaling(
    config: BenchConfig,
    session: EngineSession | None = None,
    strategy: str = "recursive",
) -> list[BenchRow]:
    """Time the evaluation query across one scaling axis.

    Every instance's result is verified against the native oracle, and the
    stored node/edge counts are asserted against the closed-form expected
    values before any timing is trusted.
    """
    own_session = session is None
    session = session or open_session()
    out: list[BenchRow] = []
    try:
        store.create_schema(session.backend)
        for size in config.sizes:
            input_len, depth, layer_size, num_inputs = config.shape_for(size)
            model, vectors = _build_instance(config, size)
            graph = model_to_graph(model)
            expected_edges = _expected_edge_count(
                input_len, depth, layer_size, config.output_dim
            )
            if len(graph.edges) != expected_edges:
                raise CheckMismatch(
                    f"edge count {len(graph.edges)} != expected {expected_edges}"
                )
            session.backend.query("DELETE FROM Node")
            session.backend.query("DELETE FROM Edge")
            session.backend.query("DELETE FROM Input")
            store.load_graph(session.backend, graph, model_id=0, replace=True)
            store.load_inputs(session.backend, vectors)

            opts = sqlgen.EvalOptions(
                depth=None if strategy == "recursive" else depth + 1,
                batch_over=frozenset({"vec_id"}),
            )
            if strategy == "recursive":
                query = sqlgen.gen_eval_recursive(opts)
            else:
                query = sqlgen.gen_eval_fixed(opts)
            median, rows = _median_time(session, query, config.repetitions)
            if len(rows) != num_inputs * config.output_dim:
                raise CheckMismatch(
                    f"result rows {len(rows)} != {num_inputs} * {config.output_dim}"
                )
            _verify_against_oracle(model, vectors, rows, config.check_tolerance)
            out.append(
                BenchRow(
                    axis=config.axis,
                    value=size,
                    median_seconds=median,
                    checksum=_checksum(rows),
                    rows=len(rows),
                    node_count=len(graph.nodes),
                    edge_count=len(graph.edges),
                )
            )
    finally:
        if own_session:
            session.close()
    return out


def compare_recursive_vs_fixed(
    config: BenchConfig, session: EngineSession | None = None
) -> list[tuple[int, float, float, str, int]]:
    """Both strategies on identical data; rows are
    (value, recursive_seconds, fixed_seconds, checksum, result_rows)."""
    own_session = session is None
    session = session or open_session()
    out = []
    try:
        store.create_schema(session.backend)
        for size in config.sizes:
            input_len, depth, layer_size, num_inputs = config.shape_for(size)
            model, vectors = _build_instance(config, size)
            session.backend.query("DELETE FROM Node")
            session.backend.query("DELETE FROM Edge")
            session.backend.query("DELETE FROM Input")
            store.load_graph(session.backend, model_to_graph(model), replace=True)
            store.load_inputs(session.backend, vectors)
            batch = frozenset({"vec_id"})
            rec_q = sqlgen.gen_eval_recursive(sqlgen.EvalOptions(batch_over=batch))
            fix_q = sqlgen.gen_eval_fixed(
                sqlgen.EvalOptions(depth=depth + 1, batch_over=batch)
            )
            rec_t, rec_rows = _median_time(session, rec_q, config.repetitions)
            fix_t, fix_rows = _median_time(session, fix_q, config.repetitions)
            if [r[:2] for r in rec_rows] != [r[:2] for r in fix_rows]:
                raise CheckMismatch("strategies disagree on result keys")
            worst = max(
                (abs(a[2] - b[2]) for a, b in zip(rec_rows, fix_rows)),
                default=0.0,
            )
            if worst > config.check_tolerance:
                raise CheckMismatch(
                    f"strategies disagree by {worst} > {config.check_tolerance}"
                )
            out.append(
                (size, rec_t, fix_t, _checksum(rec_rows), len(rec_rows))
            )
    finally:
        if own_session:
            session.close()
    return out


def compare_engines(
    config: BenchConfig,
) -> list[tuple[int, float | None, float | None, str, int]]:
    """Compiled engine vs stdlib fallback on the fixed-depth strategy.

    Rows are (value, duckdb_seconds, sqlite_seconds, checksum, rows); a
    missing engine reports None for its column.
    """
    from .engines import NATIVE_AVAILABLE

    out = []
    for size in config.sizes:
        input_len, depth, layer_size, num_inputs = config.shape_for(size)
        model, vectors = _build_instance(config, size)
        graph = model_to_graph(model)
        timings: dict[str, float | None] = {"duckdb": None, "sqlite": None}
        checksum, nrows = "", 0
        for dialect in ("duckdb", "sqlite"):
            if dialect == "duckdb" and not NATIVE_AVAILABLE:
                continue
            session = open_session(backend=dialect)
            try:
                store.create_schema(session.backend)
                store.load_graph(session.backend, graph, replace=True)
                store.load_inputs(session.backend, vectors)
                query = sqlgen.gen_eval_fixed(
                    sqlgen.EvalOptions(
                        depth=depth + 1, batch_over=frozenset({"vec_id"})
                    )
                )
                median, rows = _median_time(session, query, config.repetitions)
                _verify_against_oracle(model, vectors, rows, config.check_tolerance)
                timings[dialect] = median
                checksum, nrows = _checksum(rows), len(rows)
            finally:
                session.close()
        out.append((size, timings["duckdb"], timings["sqlite"], checksum, nrows))
    return out


def fit_loglog_slope(sizes: list[int], seconds: list[float]) -> float:
    """Least-squares slope of log(time) against log(size)."""
    xs = [math.log(s) for s in sizes]
    ys = [math.log(max(t, 1e-9)) for t in seconds]
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    denom = sum((x - mx) ** 2 for x in xs)
    return sum((x - mx) * (y - my) for x, y in zip(xs, ys)) / denom


def write_scaling_csv(rows: list[BenchRow], path: str | Path) -> Path:
    path = Path(path)
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(
            f"{r.axis},{r.value},{r.median_seconds:.17g},{r.checksum},{r.rows}"
        )
    path.write_text("\n".join(lines) + "\n")
    return path


def write_compare_csv(
    rows: list[tuple], path: str | Path, header: str = COMPARE_HEADER
) -> Path:
    path = Path(path)
    lines = [header]
    for value, t1, t2, checksum, n in rows:
        c1 = "" if t1 is None else f"{t1:.17g}"
        c2 = "" if t2 is None else f"{t2:.17g}"
        lines.append(f"{value},{c1},{c2},{checksum},{n}")
    path.write_text("\n".join(lines) + "\n")
    return path
