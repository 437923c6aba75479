"""Shared fixtures: engine sessions and store loading helpers."""

from __future__ import annotations

import numpy as np
import pytest

from nnsql import models, runner, store
from nnsql.engines import NATIVE_AVAILABLE

needs_native = pytest.mark.skipif(
    not NATIVE_AVAILABLE,
    reason="compiled engine extension not built (python scripts/build_native.py)",
)


@pytest.fixture
def sqlite_session():
    session = runner.open_session(backend="sqlite")
    store.create_schema(session.backend)
    yield session
    session.close()


@pytest.fixture
def duck_session():
    if not NATIVE_AVAILABLE:
        pytest.skip("compiled engine extension not built")
    session = runner.open_session(backend="duckdb")
    store.create_schema(session.backend)
    yield session
    session.close()


@pytest.fixture(params=["sqlite", "duckdb"])
def any_session(request):
    if request.param == "duckdb" and not NATIVE_AVAILABLE:
        pytest.skip("compiled engine extension not built")
    session = runner.open_session(backend=request.param)
    store.create_schema(session.backend)
    yield session
    session.close()


def load_model(session, model, model_id=0, inputs=(), replace=False):
    """Load a model plus optional input vectors; returns the graph."""
    graph = models.model_to_graph(model)
    store.load_graph(session.backend, graph, model_id=model_id, replace=replace)
    if inputs:
        store.load_inputs(
            session.backend,
            [
                models.InputVector(i, np.asarray(x, dtype=np.float64))
                for i, x in enumerate(inputs)
            ],
            replace=replace,
        )
    return graph
