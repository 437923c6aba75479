"""Execute generated queries against an engine session.

A session pairs a backend connection with capabilities probed at open
time by actually running a miniature recursive-aggregation statement;
nothing is inferred from version strings.  Queries declaring
``requires_recursive_aggregation`` refuse to run on sessions without the
capability.

The saliency fan-out runs one perturbed evaluation per dropped unit,
each in its own session on its own worker thread, and merges the maps;
the result is identical to the monolithic query.
"""

from __future__ import annotations

import os
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass
from typing import Any, Callable

from . import sqlgen
from .engines import Backend, open_backend
from .errors import (
    CapabilityMissing,
    EngineError,
    MissingBaseline,
    NotGeometryEligible,
)
from .models import PwlFunction
from .sqlgen import EvalOptions, SqlQuery

_PROBE = (
    "WITH RECURSIVE probe_vals(id, val) AS (\n"
    "  SELECT 0 AS id, 1.0 AS val\n"
    "  UNION ALL\n"
    "  SELECT p.id + 1, SUM(p.val)\n"
    "  FROM probe_vals p\n"
    "  WHERE p.id < 2\n"
    "  GROUP BY p.id + 1\n"
    ")\n"
    "SELECT COUNT(*) FROM probe_vals\n"
)


@dataclass(frozen=True)
class Capabilities:
    recursive_aggregation: bool


@dataclass
class ResultTable:
    columns: list[str]
    rows: list[tuple]

    def scalar(self) -> Any:
        if len(self.rows) != 1 or len(self.rows[0]) != 1:
            raise ValueError(f"expected a 1x1 result, got {len(self.rows)} rows")
        return self.rows[0][0]

    def column(self, index: int = 0) -> list:
        return [r[index] for r in self.rows]


class EngineSession:
    """One backend connection plus its probed capabilities."""

    def __init__(self, backend: Backend):
        self.backend = backend
        self.dialect = backend.dialect
        self.capabilities = Capabilities(
            recursive_aggregation=self._probe_recursive_aggregation()
        )

    def _probe_recursive_aggregation(self) -> bool:
        try:
            _, rows = self.backend.query(_PROBE)
        except EngineError:
            return False
        return bool(rows) and rows[0][0] == 3

    def close(self) -> None:
        self.backend.close()


def open_session(
    location: str = ":memory:",
    backend: str = "auto",
    read_only: bool = False,
) -> EngineSession:
    """Open a database and probe what the engine can do."""
    return EngineSession(open_backend(location, backend=backend, read_only=read_only))


def _coerce(value: Any, kind: str) -> Any:
    if value is None:
        return None
    if kind == "bool":
        return bool(value)
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    return value


def execute(
    session: EngineSession,
    query: SqlQuery,
    params: dict[str, Any] | None = None,
) -> ResultTable:
    """Run one generated query; results are coerced to the declared schema."""
    if (
        query.requires_recursive_aggregation
        and not session.capabilities.recursive_aggregation
    ):
        raise CapabilityMissing(
            "query needs aggregation inside recursion; this engine lacks it "
            "(use the fixed-depth strategy instead)",
            query.text,
        )
    bound = dict(query.params)
    if params:
        bound.update(params)
    names, raw = session.backend.query(query.text, bound)
    width = len(query.result_schema)
    for row in raw:
        if len(row) != width:
            raise EngineError(
                f"result width {len(row)} != declared {width}", query.text
            )
    kinds = [kind for _, kind in query.result_schema]
    rows = [tuple(_coerce(v, k) for v, k in zip(row, kinds)) for row in raw]
    columns = [name for name, _ in query.result_schema]
    return ResultTable(columns, rows)


# --- geometry pipeline ----------------------------------------------------------


def check_geometry_eligible(session: EngineSession, model_id: int = 0) -> None:
    """Shape check via SQL; output activation remains the caller's assertion."""
    table = execute(session, sqlgen.gen_geometry_eligible(model_id))
    n_inputs, n_outputs, depth = table.rows[0]
    if (n_inputs, n_outputs, depth) != (1, 1, 2):
        raise NotGeometryEligible(
            f"need 1 input / one hidden layer / 1 output, got "
            f"{n_inputs} inputs, {n_outputs} outputs, depth {depth}"
        )


def sql_geometry(
    session: EngineSession, model_id: int = 0, use_greatest: bool = False
) -> PwlFunction:
    """Assemble the piecewise-linear function from the SQL-computed views."""
    check_geometry_eligible(session, model_id)
    bps = execute(session, sqlgen.gen_breakpoints(model_id, use_greatest)).rows
    slopes = execute(session, sqlgen.gen_slopes(model_id, use_greatest)).rows
    s0 = float(execute(session, sqlgen.gen_initial_slope(model_id)).scalar())
    s_last = float(execute(session, sqlgen.gen_final_slope(model_id)).scalar())
    if not bps:
        at0 = execute(
            session, sqlgen.gen_eval_at(model_id, use_greatest), {"x0": 0.0}
        )
        return PwlFunction(s0=s0, y_at=float(at0.scalar()), s_last=s_last)
    return PwlFunction(
        s0=s0,
        breakpoints=tuple((float(x), float(y)) for x, y in bps),
        slopes=tuple(float(s) for _, s in slopes),
        y_at=float(bps[0][1]),
        s_last=s_last,
    )


# --- saliency fan-out -----------------------------------------------------------


def run_saliency_concurrent(
    session_factory: Callable[[], EngineSession],
    drop_ids: list[int],
    mode: str = "zero",
    opts: EvalOptions | None = None,
    model_id: int = 0,
    vec_id: int = 0,
    workers: int | None = None,
) -> dict[int, float]:
    """Evaluate each dropped unit in its own session on its own worker.

    Returns the merged map.  The first worker failure cancels the rest and
    propagates; no partial map is ever returned.
    """
    if not drop_ids:
        raise ValueError("drop_ids must be nonempty")
    workers = workers or min(len(drop_ids), os.cpu_count() or 1)
    query = sqlgen.gen_saliency_single_drop(
        mode=mode, opts=opts, model_id=model_id, vec_id=vec_id
    )

    def one(drop_id: int) -> tuple[int, float | None]:
        session = session_factory()
        try:
            table = execute(session, query, {"drop_id": drop_id})
        finally:
            session.close()
        if not table.rows:
            return drop_id, None  # removal disconnected the readout
        return drop_id, float(table.rows[0][1])

    entries: dict[int, float] = {}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(one, d): d for d in drop_ids}
        done, pending = wait(futures, return_when=FIRST_EXCEPTION)
        failed = [f for f in done if f.exception() is not None]
        if failed:
            for f in pending:
                f.cancel()
            raise failed[0].exception()
        for f in done:
            drop_id, value = f.result()
            if value is not None:
                entries[drop_id] = value
    return entries


def require_baseline(session: EngineSession, vec_id: int | None) -> int:
    """Resolve the baseline vector id for saliency queries."""
    _, rows = session.backend.query("SELECT DISTINCT vec_id FROM Input ORDER BY vec_id")
    ids = [int(r[0]) for r in rows]
    if vec_id is not None:
        if vec_id not in ids:
            raise MissingBaseline(f"vec_id {vec_id} not in store")
        return vec_id
    if len(ids) != 1:
        raise MissingBaseline(
            f"need exactly one stored vector or an explicit vec_id, found {ids}"
        )
    return ids[0]


# --- pruning cascade -------------------------------------------------------------


def sql_cascade(
    session: EngineSession, epsilon: float, model_id: int = 0
) -> tuple[set[int], set[tuple[int, int]]]:
    """Iterate sub-epsilon edge deletion and unconnected-node removal in SQL.

    Returns the surviving (node ids, (src, dst) edges).  Uses a temporary
    edge table substituted for Edge in the unconnected-nodes query.
    """
    backend = session.backend
    backend.run_batch("DROP TABLE IF EXISTS pruned_edges")
    backend.run_batch(
        "CREATE TEMP TABLE pruned_edges"
        "(model_id BIGINT, src BIGINT, dst BIGINT, weight DOUBLE)"
    )
    backend.query(
        "INSERT INTO pruned_edges "
        "SELECT model_id, src, dst, weight FROM Edge "
        "WHERE model_id = :m AND NOT (-:eps < weight AND weight < :eps)",
        {"m": model_id, "eps": epsilon},
    )
    unconnected = sqlgen.gen_unconnected_nodes("pruned_edges", model_id)
    removed: set[int] = set()
    while True:
        doomed = [int(r[0]) for r in execute(session, unconnected).rows]
        doomed = [d for d in doomed if d not in removed]
        if not doomed:
            break
        removed.update(doomed)
        id_list = ", ".join(str(d) for d in doomed)
        backend.query(
            f"DELETE FROM pruned_edges WHERE src IN ({id_list}) OR dst IN ({id_list})"
        )
    _, edge_rows = backend.query(
        "SELECT src, dst FROM pruned_edges ORDER BY src, dst"
    )
    _, node_rows = backend.query(
        "SELECT id FROM Node WHERE model_id = :m ORDER BY id", {"m": model_id}
    )
    nodes = {int(r[0]) for r in node_rows} - removed
    backend.run_batch("DROP TABLE IF EXISTS pruned_edges")
    return nodes, {(int(s), int(d)) for s, d in edge_rows}
