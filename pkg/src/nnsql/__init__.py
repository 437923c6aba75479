"""nnsql: store ReLU networks as relations, compile analyses to SQL.

The package has three legs that check each other:

* :mod:`nnsql.sqlgen` compiles evaluation, geometry, verification,
  pruning, and saliency tasks into SQL over the Node/Edge/Input schema;
* :mod:`nnsql.runner` executes the queries on an embedded engine
  (compiled extension preferred, stdlib sqlite3 fallback);
* :mod:`nnsql.oracle` recomputes every analysis natively so results can
  be cross-checked.
"""

from .engines import NATIVE_AVAILABLE, open_backend
from .errors import NnsqlError
from .models import (
    Conv2dSpec,
    DenseLayer,
    InputVector,
    Model,
    NetworkGraph,
    PwlFunction,
    conv2d_to_dense,
    export_model,
    graph_to_model,
    import_model,
    model_to_graph,
    pwl_to_network,
    random_model,
    sine_interpolant,
    validate_layered,
)
from .runner import EngineSession, execute, open_session, run_saliency_concurrent
from .sqlgen import EvalOptions, SqlQuery
from .store import create_schema, extract_graph, load_graph, load_inputs

__version__ = "0.1.0"

__all__ = [
    "NATIVE_AVAILABLE",
    "NnsqlError",
    "Conv2dSpec",
    "DenseLayer",
    "InputVector",
    "Model",
    "NetworkGraph",
    "PwlFunction",
    "EvalOptions",
    "SqlQuery",
    "EngineSession",
    "conv2d_to_dense",
    "create_schema",
    "execute",
    "export_model",
    "extract_graph",
    "graph_to_model",
    "import_model",
    "load_graph",
    "load_inputs",
    "model_to_graph",
    "open_backend",
    "open_session",
    "pwl_to_network",
    "random_model",
    "run_saliency_concurrent",
    "sine_interpolant",
    "validate_layered",
    "__version__",
]
