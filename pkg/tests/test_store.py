"""Relational store: schema, loading, extraction, transactionality."""

import numpy as np
import pytest

from nnsql import models, store
from nnsql.errors import DuplicateModel, EngineError, UnknownModel
from nnsql.models import InputVector, model_to_graph, random_model

from .conftest import load_model


def test_create_schema_empty_tables(any_session):
    for table in ("Node", "Edge", "Input"):
        _, rows = any_session.backend.query(f"SELECT COUNT(*) FROM {table}")
        assert rows[0][0] == 0


def test_create_schema_idempotent(any_session):
    rng = np.random.default_rng(0)
    load_model(any_session, random_model(rng, 2, (3,), 1))
    store.create_schema(any_session.backend)  # second call: no error, no loss
    _, rows = any_session.backend.query("SELECT COUNT(*) FROM Node")
    assert rows[0][0] == 6


def test_schema_catalog_columns(any_session):
    if any_session.dialect == "sqlite":
        _, rows = any_session.backend.query("PRAGMA table_info(Node)")
        names = [r[1] for r in rows]
    else:
        _, rows = any_session.backend.query(
            "SELECT column_name FROM information_schema.columns "
            "WHERE table_name = 'Node' ORDER BY ordinal_position"
        )
        names = [r[0] for r in rows]
    assert names == ["model_id", "id", "bias"]


def test_load_counts_2_3_1(any_session):
    rng = np.random.default_rng(1)
    graph = model_to_graph(random_model(rng, 2, (3,), 1))
    counts = store.load_graph(any_session.backend, graph)
    assert counts == (6, 9)


def test_duplicate_model_rejected_and_unchanged(any_session):
    rng = np.random.default_rng(2)
    graph = model_to_graph(random_model(rng, 2, (3,), 1))
    store.load_graph(any_session.backend, graph, model_id=4)
    with pytest.raises(DuplicateModel):
        store.load_graph(any_session.backend, graph, model_id=4)
    _, rows = any_session.backend.query("SELECT COUNT(*) FROM Node")
    assert rows[0][0] == 6
    store.load_graph(any_session.backend, graph, model_id=4, replace=True)
    _, rows = any_session.backend.query("SELECT COUNT(*) FROM Node")
    assert rows[0][0] == 6


def test_graph_roundtrip(any_session):
    rng = np.random.default_rng(3)
    model = random_model(rng, 3, (5, 4), 2)
    graph = load_model(any_session, model, model_id=9)
    back = store.extract_graph(
        any_session.backend, 9, activations=graph.activations
    )
    assert set(back.nodes) == set(graph.nodes)
    assert sorted(back.edges) == sorted(graph.edges)
    assert back.layer_map() == graph.layer_map()


def test_extract_unknown_model(any_session):
    with pytest.raises(UnknownModel):
        store.extract_graph(any_session.backend, 123)


def test_input_roundtrip_exact(any_session):
    rng = np.random.default_rng(4)
    vecs = [InputVector(i, rng.uniform(-1, 1, 7)) for i in range(2)]
    n = store.load_inputs(any_session.backend, vecs)
    assert n == 14
    back = store.extract_inputs(any_session.backend)
    assert len(back) == 2
    for a, b in zip(back, vecs):
        assert a.vec_id == b.vec_id
        assert np.array_equal(a.values, b.values)  # bit-exact round trip


def test_input_784_rows(any_session):
    rng = np.random.default_rng(5)
    n = store.load_inputs(
        any_session.backend, [InputVector(0, rng.uniform(0, 1, 784))]
    )
    assert n == 784


def test_layer0_equals_no_incoming_dst_sql(any_session):
    rng = np.random.default_rng(6)
    model = random_model(rng, 4, (3, 3), 2)
    graph = load_model(any_session, model)
    _, rows = any_session.backend.query(
        "SELECT id FROM Node WHERE model_id = 0 AND id NOT IN "
        "(SELECT dst FROM Edge WHERE model_id = 0) ORDER BY id"
    )
    assert [r[0] for r in rows] == list(graph.input_ids) == [0, 1, 2, 3]


def test_load_is_transactional(any_session, monkeypatch):
    rng = np.random.default_rng(7)
    graph = model_to_graph(random_model(rng, 2, (2,), 1))
    backend = any_session.backend
    real_append = backend.append_rows

    def fail_on_edges(table, rows):
        if table == "Edge":
            raise EngineError("injected failure")
        return real_append(table, rows)

    monkeypatch.setattr(backend, "append_rows", fail_on_edges)
    with pytest.raises(EngineError, match="injected"):
        store.load_graph(backend, graph, model_id=5)
    monkeypatch.undo()
    for table in ("Node", "Edge"):
        _, rows = backend.query(
            f"SELECT COUNT(*) FROM {table} WHERE model_id = 5"
        )
        assert rows[0][0] == 0
