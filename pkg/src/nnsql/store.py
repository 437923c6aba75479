"""Relational schema and bulk load/extract for networks and inputs.

The schema is three tables; real values are double precision and the
multi-model / multi-vector key columns are always present (default 0):

    CREATE TABLE Node(model_id BIGINT, id BIGINT, bias DOUBLE)
    CREATE TABLE Edge(model_id BIGINT, src BIGINT, dst BIGINT, weight DOUBLE)
    CREATE TABLE Input(vec_id BIGINT, in_id BIGINT, val DOUBLE)

No layer column is stored; layers are recomputed from the edges on
extraction.  Activation tags are not representable relationally either,
so extraction takes them as an argument (defaulting to ReLU hidden
layers with an identity readout).
"""

from __future__ import annotations

from .engines import Backend
from .errors import DuplicateModel, UnknownModel
from .models import InputVector, NetworkGraph, validate_layered

NODE_DDL = "CREATE TABLE Node(model_id BIGINT, id BIGINT, bias DOUBLE)"
EDGE_DDL = "CREATE TABLE Edge(model_id BIGINT, src BIGINT, dst BIGINT, weight DOUBLE)"
INPUT_DDL = "CREATE TABLE Input(vec_id BIGINT, in_id BIGINT, val DOUBLE)"

TABLES = {"Node": NODE_DDL, "Edge": EDGE_DDL, "Input": INPUT_DDL}


def _existing_tables(backend: Backend) -> set[str]:
    if backend.dialect == "sqlite":
        _, rows = backend.query(
            "SELECT name FROM sqlite_master WHERE type = 'table'"
        )
    else:
        _, rows = backend.query(
            "SELECT table_name FROM information_schema.tables"
        )
    return {r[0].lower() for r in rows}

def create_schema(backend: Backend) -> None:
    """Create the three tables; calling again is a no-op."""
    present = _existing_tables(backend)
    for name, ddl in TABLES.items():
        if name.lower() not in present:
            backend.run_batch(ddl)


def _model_exists(backend: Backend, model_id: int) -> bool:
    _, rows = backend.query(
        "SELECT 1 FROM Node WHERE model_id = :model_id LIMIT 1",
        {"model_id": model_id},
    )
    return bool(rows)


def load_graph(
    backend: Backend,
    graph: NetworkGraph,
    model_id: int = 0,
    replace: bool = False,
) -> tuple[int, int]:
    """Load a graph transactionally; returns (node rows, edge rows)."""
    if _model_exists(backend, model_id):
        if not replace:
            raise DuplicateModel(f"model_id {model_id} already loaded")
    node_rows = [(model_id, nid, bias) for nid, bias, _ in graph.nodes]
    edge_rows = [(model_id, src, dst, w) for src, dst, w in graph.edges]
    backend.query("BEGIN TRANSACTION")
    try:
        backend.query("DELETE FROM Node WHERE model_id = :m", {"m": model_id})
        backend.query("DELETE FROM Edge WHERE model_id = :m", {"m": model_id})
        backend.append_rows("Node", node_rows)
        backend.append_rows("Edge", edge_rows)
        backend.query("COMMIT")
    except Exception:
        backend.query("ROLLBACK")
        raise
    return len(node_rows), len(edge_rows)


def load_inputs(
    backend: Backend, vectors: list[InputVector], replace: bool = False
) -> int:
    """Load input vectors transactionally; returns the row count."""
    rows = []
    for vec in vectors:
        for in_id, val in enumerate(vec.values):
            rows.append((vec.vec_id, in_id, float(val)))
    vec_ids = sorted({vec.vec_id for vec in vectors})
    for vid in vec_ids:
        _, hit = backend.query(
            "SELECT 1 FROM Input WHERE vec_id = :v LIMIT 1", {"v": vid}
        )
        if hit and not replace:
            raise DuplicateModel(f"vec_id {vid} already loaded")
    backend.query("BEGIN TRANSACTION")
    try:
        for vid in vec_ids:
            backend.query("DELETE FROM Input WHERE vec_id = :v", {"v": vid})
        backend.append_rows("Input", rows)
        backend.query("COMMIT")
    except Exception:
        backend.query("ROLLBACK")
        raise
    return len(rows)


def extract_graph(
    backend: Backend,
    model_id: int = 0,
    activations: tuple[str, ...] | None = None,
) -> NetworkGraph:
    """Rebuild the graph for one model; layers recomputed from the edges.

    ``activations`` supplies the per-layer tags the store cannot hold;
    by default hidden layers are ReLU and the readout is identity.
    """
    _, node_rows = backend.query(
        "SELECT id, bias FROM Node WHERE model_id = :m ORDER BY id",
        {"m": model_id},
    )
    if not node_rows:
        raise UnknownModel(f"model_id {model_id} not in store")
    _, edge_rows = backend.query(
        "SELECT src, dst, weight FROM Edge WHERE model_id = :m ORDER BY src, dst",
        {"m": model_id},
    )
    layers = validate_layered(
        [(int(nid), float(bias)) for nid, bias in node_rows],
        [(int(s), int(d), float(w)) for s, d, w in edge_rows],
    )
    depth = max(layers.values(), default=0)
    if activations is None:
        activations = ("relu",) * max(depth - 1, 0) + (
            ("identity",) if depth else ()
        )
    nodes = tuple(
        (int(nid), float(bias), layers[int(nid)]) for nid, bias in node_rows
    )
    edges = tuple((int(s), int(d), float(w)) for s, d, w in edge_rows)
    return NetworkGraph(nodes, edges, tuple(activations))


def extract_inputs(backend: Backend, vec_id: int | None = None) -> list[InputVector]:
    """Read input vectors back, one per distinct vec_id."""
    where = "WHERE vec_id = :v " if vec_id is not None else ""
    params = {"v": vec_id} if vec_id is not None else {}
    _, rows = backend.query(
        f"SELECT vec_id, in_id, val FROM Input {where}ORDER BY vec_id, in_id",
        params,
    )
    grouped: dict[int, list[float]] = {}
    for vid, in_id, val in rows:
        grouped.setdefault(int(vid), []).append(float(val))
    return [InputVector(vid, vals) for vid, vals in sorted(grouped.items())]


def stored_vec_ids(backend: Backend) -> list[int]:
    _, rows = backend.query("SELECT DISTINCT vec_id FROM Input ORDER BY vec_id")
    return [int(r[0]) for r in rows]


def stored_model_ids(backend: Backend) -> list[int]:
    _, rows = backend.query("SELECT DISTINCT model_id FROM Node ORDER BY model_id")
    return [int(r[0]) for r in rows]
