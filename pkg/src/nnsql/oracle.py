"""Native reference implementations of every analysis the SQL computes.

These functions are the ground truth that generated queries are checked
against.  They deliberately share no computation code with the SQL
generator or the engines: evaluation is dense numpy arithmetic, geometry
is closed-form hinge analysis, and graph evaluation is an explicit
frontier sweep.  Only the data types are shared.

Graph evaluation semantics (mirrored by the relational queries): a node
receives a value iff it is an input unit with a supplied value, or it has
at least one incoming edge from a valued node.  Its value is
``activation(bias + sum(w * value(src)))`` over exactly those edges.
Nodes that never receive a value contribute nothing downstream; in
particular, removing a node can silently kill an orphaned successor, which
is what makes remove-mode saliency differ from zero-mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInterval, NotGeometryEligible
from .models import Model, NetworkGraph, PwlFunction, model_to_graph


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "identity":
        return z
    if activation == "softmax":
        e = np.exp(z - np.max(z))
        return e / np.sum(e)
    raise ValueError(f"unknown activation {activation!r}")


def eval_model(model: Model, x: np.ndarray) -> np.ndarray:
    """Forward pass: value(u) = activation(bias + sum of w * value(src))."""
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (model.input_dim,):
        raise ValueError(f"input shape {v.shape} != ({model.input_dim},)")
    for layer in model.layers:
        v = _activate(layer.weights @ v + layer.bias, layer.activation)
    return v


def eval_graph(
    graph: NetworkGraph, inputs: dict[int, float]
) -> dict[int, float]:
    """Frontier-sweep evaluation over a (possibly damaged) layered graph.

    ``inputs`` maps input-unit ids to values.  Returns values for every
    node that received one (see module docstring for the semantics).
    Layer tags stored on the graph drive the sweep order; softmax, when
    tagged on the final layer, is applied jointly to the valued nodes of
    that layer.
    """
    incoming: dict[int, list[tuple[int, float]]] = {}
    has_incoming = set()
    for src, dst, w in graph.edges:
        incoming.setdefault(dst, []).append((src, w))
        has_incoming.add(dst)
    layer_of = graph.layer_map()
    max_layer = max(layer_of.values(), default=0)

    values: dict[int, float] = {}
    for nid, _, layer in graph.nodes:
        if layer == 0 and nid not in has_incoming and nid in inputs:
            values[nid] = float(inputs[nid])

    for layer in range(1, max_layer + 1):
        activation = graph.activations[layer - 1]
        fresh: dict[int, float] = {}
        for nid, bias, lay in graph.nodes:
            if lay != layer:
                continue
            acc = None
            for src, w in incoming.get(nid, []):
                if src in values:
                    acc = (acc or 0.0) + w * values[src]
            if acc is None:
                continue  # no valued predecessor: node stays unvalued
            z = bias + acc
            fresh[nid] = z if activation != "relu" else max(z, 0.0)
        if activation == "softmax" and fresh:
            ids = sorted(fresh)
            z = np.array([fresh[i] for i in ids])
            p = _activate(z, "softmax")
            fresh = {i: float(pv) for i, pv in zip(ids, p)}
        values.update(fresh)
    return values


def depth(graph: NetworkGraph) -> int:
    """Longest path length from an input unit to any node."""
    from .models import graph_layers

    layers = graph_layers(graph)
    return max(layers.values(), default=0)


# --- geometry ----------------------------------------------------------------


def check_geometry_eligible(model: Model) -> None:
    """Raise unless the model is 1-input, one hidden ReLU layer, 1-output
    with identity output activation."""
    if model.depth != 2:
        raise NotGeometryEligible(f"need exactly one hidden layer, got depth {model.depth}")
    if model.input_dim != 1 or model.output_dim != 1:
        raise NotGeometryEligible(
            f"need 1 input and 1 output, got {model.input_dim}/{model.output_dim}"
        )
    if model.layers[0].activation != "relu":
        raise NotGeometryEligible("hidden layer must be relu")
    if model.layers[1].activation != "identity":
        raise NotGeometryEligible("output activation must be identity")


def geometry(model: Model) -> PwlFunction:
    """Reconstruct the represented piecewise-linear function.

    Each hidden unit u with nonzero input weight w contributes a breakpoint
    at x = -bias/w; duplicates (exact float equality) merge.  y values come
    from the forward pass, slopes from successive breakpoints, and the two
    unbounded slopes from the units active toward each infinity.
    """
    check_geometry_eligible(model)
    hidden, readout = model.layers
    w_in = hidden.weights[:, 0]
    b = hidden.bias
    w_out = readout.weights[0, :]

    xs = sorted({float(-b[i] / w_in[i]) for i in range(len(b)) if w_in[i] != 0.0})
    s0 = float(np.sum(w_out[w_in < 0.0] * w_in[w_in < 0.0]))
    s_last = float(np.sum(w_out[w_in > 0.0] * w_in[w_in > 0.0]))

    if not xs:
        # affine function; anchor at x = 0
        y0 = float(eval_model(model, np.array([0.0]))[0])
        return PwlFunction(s0=s0, y_at=y0, s_last=s_last)

    ys = [float(eval_model(model, np.array([x]))[0]) for x in xs]
    slopes = tuple(
        (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]) for i in range(len(xs) - 1)
    )
    return PwlFunction(
        s0=s0,
        breakpoints=tuple(zip(xs, ys)),
        slopes=slopes,
        y_at=ys[0],
        s_last=s_last,
    )


def integral(pwl: PwlFunction, a: float, b: float) -> float:
    """Definite integral of ``pwl`` over [a, b], exact piecewise sum."""
    if not a < b:
        raise InvalidInterval(f"need a < b, got [{a}, {b}]")
    points = [a] + [x for x, _ in pwl.breakpoints if a < x < b] + [b]
    total = 0.0
    for x0, x1 in zip(points, points[1:]):
        total += (x1 - x0) * (pwl(x0) + pwl(x1)) / 2.0
    return total


def exceeds_threshold(pwl: PwlFunction, threshold: float) -> bool:
    """True iff the function ever exceeds ``threshold``.

    The maximum over the reals is attained at a breakpoint unless one of
    the unbounded pieces climbs (s0 < 0 on the left, last slope > 0 on the
    right).  With no breakpoints the function is affine.
    """
    if pwl.s0 < 0.0 or pwl.last_slope > 0.0:
        return True
    if not pwl.breakpoints:
        return pwl.y_at > threshold  # slope is 0 in both directions here
    return max(y for _, y in pwl.breakpoints) > threshold


# --- white-box analyses -------------------------------------------------------


@dataclass(frozen=True)
class SaliencyMap:
    """Per-dropped-component absolute output change for one input.

    ``entries`` maps the dropped node id to the absolute difference of the
    readout unit (the baseline argmax unit for multi-output models).
    Components whose removal disconnects the readout entirely are omitted.
    """

    entries: dict[int, float]
    baseline: np.ndarray
    measure: str = "abs_diff_argmax_unit"


def _argmax_unit(outputs: np.ndarray) -> int:
    """Index of the maximum output; ties break toward the smallest index."""
    return int(np.argmax(outputs))


def saliency(
    model: Model,
    x: np.ndarray,
    mode: str = "zero",
    targets: str = "input",
) -> SaliencyMap:
    """Perturbation saliency: drop one component, re-evaluate, diff.

    ``mode="zero"`` sets the component's value to 0; ``mode="remove"``
    deletes the node's incident edges (graph semantics, biases elsewhere
    intact).  ``targets`` picks input units or hidden units.  The per-unit
    score is the absolute change of the baseline argmax output unit.
    """
    if mode not in ("zero", "remove"):
        raise ValueError(f"unknown mode {mode!r}")
    if targets not in ("input", "hidden"):
        raise ValueError(f"unknown targets {targets!r}")
    x = np.asarray(x, dtype=np.float64)
    baseline = eval_model(model, x)
    unit = _argmax_unit(baseline)
    base_val = float(baseline[unit])

    graph = model_to_graph(model)
    layer_of = graph.layer_map()
    max_layer = max(layer_of.values())
    if targets == "input":
        candidates = [nid for nid, _, lay in graph.nodes if lay == 0]
    else:
        candidates = [
            nid for nid, _, lay in graph.nodes if 0 < lay < max_layer
        ]
    output_ids = sorted(nid for nid, _, lay in graph.nodes if lay == max_layer)
    target_id = output_ids[unit]
    inputs = {i: float(x[i]) for i in range(model.input_dim)}

    entries: dict[int, float] = {}
    for d in candidates:
        if mode == "zero":
            out = _eval_zeroed(model, x, d, layer_of[d])
            entries[d] = abs(float(out[unit]) - base_val)
        else:
            damaged = drop_node(graph, d)
            values = eval_graph(damaged, inputs)
            if target_id in values:
                entries[d] = abs(values[target_id] - base_val)
    return SaliencyMap(entries=entries, baseline=baseline)


def _eval_zeroed(
    model: Model, x: np.ndarray, node_id: int, node_layer: int
) -> np.ndarray:
    """Forward pass with one unit's (post-activation) value forced to 0.

    Breadth-first id assignment makes the id -> (layer, position) mapping
    a running offset.
    """
    offset = model.input_dim
    for widths in (layer.out_dim for layer in model.layers[: node_layer - 1]):
        offset += widths
    position = node_id if node_layer == 0 else node_id - offset

    v = np.asarray(x, dtype=np.float64)
    if node_layer == 0:
        v = v.copy()
        v[position] = 0.0
    for k, layer in enumerate(model.layers, start=1):
        v = _activate(layer.weights @ v + layer.bias, layer.activation)
        if k == node_layer:
            v = v.copy()
            v[position] = 0.0
    return v


def drop_node(graph: NetworkGraph, node_id: int) -> NetworkGraph:
    """Remove all edges incident to ``node_id``; node rows stay intact."""
    edges = tuple(
        (s, d, w) for s, d, w in graph.edges if s != node_id and d != node_id
    )
    return NetworkGraph(graph.nodes, edges, graph.activations)


def prunable(model: Model, epsilon: float) -> set[int]:
    """Node ids whose incoming weights all lie strictly inside
    (-epsilon, epsilon), zero entries included."""
    graph = model_to_graph(model, keep_zero_edges=True)
    incoming: dict[int, list[float]] = {}
    for _, dst, w in graph.edges:
        incoming.setdefault(dst, []).append(w)
    return {
        dst
        for dst, ws in incoming.items()
        if -epsilon < min(ws) and max(ws) < epsilon
    }


def cascade(graph: NetworkGraph, epsilon: float) -> NetworkGraph:
    """Iteratively delete sub-epsilon edges, then hidden nodes left without
    incoming or outgoing edges, until a fixpoint.

    Input and output roles are fixed by the original graph; pruned hidden
    nodes disappear along with their incident edges.
    """
    layer_of = graph.layer_map()
    max_layer = max(layer_of.values(), default=0)
    edges = [
        (s, d, w) for s, d, w in graph.edges if not (-epsilon < w < epsilon)
    ]
    nodes = list(graph.nodes)
    while True:
        has_in = {d for _, d, _ in edges}
        has_out = {s for s, _, _ in edges}
        doomed = {
            nid
            for nid, _, lay in nodes
            if 0 < lay < max_layer and (nid not in has_in or nid not in has_out)
        }
        if not doomed:
            break
        nodes = [(nid, b, lay) for nid, b, lay in nodes if nid not in doomed]
        edges = [(s, d, w) for s, d, w in edges if s not in doomed and d not in doomed]
    return NetworkGraph(tuple(nodes), tuple(edges), graph.activations)
