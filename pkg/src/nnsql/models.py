"""Model and graph representations.

A :class:`Model` is the dense, layer-ordered source of truth (weight
matrices, bias vectors, per-layer activations).  A :class:`NetworkGraph` is
the flat node/edge form that goes into the relational store.  The module
also covers file import/export, expansion of 2-D convolutions to dense
layers, and synthesis of one-hidden-layer networks from piecewise-linear
functions (the main test-fixture generator).

Conventions fixed here and relied on everywhere else:

* node ids are assigned breadth-first per layer, so input units occupy
  ids ``0..n_inputs-1`` in input-vector order;
* input units carry bias 0;
* zero-valued weight entries are kept as edges by default so that edge
  counts are predictable; pass ``keep_zero_edges=False`` for pruning
  workflows;
* convolution inputs/outputs are flattened channel-outermost, then
  row-major within a channel: ``index = c*(H*W) + y*W + x``.
"""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BreakpointOutOfDomain,
    CyclicGraph,
    InvalidSpec,
    InvariantViolation,
    NonLayered,
    ParseError,
)

ACTIVATIONS = ("relu", "identity", "softmax")


@dataclass(frozen=True)
class DenseLayer:
    """One dense layer: ``weights[i, j]`` connects input unit j to output unit i."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2:
            raise InvariantViolation(f"weights must be a matrix, got ndim={w.ndim}")
        if b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise InvariantViolation(
                f"bias length {b.shape} does not match weight rows {w.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise InvariantViolation(f"unknown activation {self.activation!r}")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class Model:
    """A layered dense network; layer 0 consumes the input vector."""

    name: str
    layers: tuple[DenseLayer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise InvariantViolation("model needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].in_dim != layers[i - 1].out_dim:
                raise InvariantViolation(
                    f"layer {i} expects {layers[i].in_dim} inputs, layer {i - 1} "
                    f"produces {layers[i - 1].out_dim}"
                )
        for i, layer in enumerate(layers):
            if layer.activation == "softmax" and i != len(layers) - 1:
                raise InvariantViolation(
                    f"softmax only allowed on the final layer, found on layer {i}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def depth(self) -> int:
        return len(self.layers)


@dataclass(frozen=True)
class InputVector:
    """One input vector; ``values[i]`` feeds input unit i."""

    vec_id: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise InvariantViolation("input vector must be one-dimensional")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class NetworkGraph:
    """Node/edge form of a layered network.

    ``nodes`` rows are (id, bias, layer); ``edges`` rows are
    (src, dst, weight) and may only connect layer L to layer L+1.
    ``activations[k]`` tags the activation applied at layer k+1 (the
    target layer of the k-th edge group).
    """

    nodes: tuple[tuple[int, float, int], ...]
    edges: tuple[tuple[int, int, float], ...]
    activations: tuple[str, ...]

    @property
    def input_ids(self) -> tuple[int, ...]:
        with_incoming = {dst for _, dst, _ in self.edges}
        return tuple(nid for nid, _, _ in self.nodes if nid not in with_incoming)

    @property
    def output_ids(self) -> tuple[int, ...]:
        with_outgoing = {src for src, _, _ in self.edges}
        return tuple(nid for nid, _, _ in self.nodes if nid not in with_outgoing)

    def layer_map(self) -> dict[int, int]:
        return {nid: layer for nid, _, layer in self.nodes}


@dataclass(frozen=True)
class PwlFunction:
    """A continuous piecewise-linear function on the reals.

    ``s0`` is the slope of the unbounded leftmost piece.  ``breakpoints``
    are (x, y) pairs, strictly increasing in x.  ``slopes[i]`` is the slope
    between breakpoints i and i+1.  ``y_at`` anchors the function: the value
    at the first breakpoint, or the intercept at x=0 when there are no
    breakpoints.  ``s_last`` is the slope right of the last breakpoint; when
    None the last interior slope (or ``s0``) continues, i.e. the final
    breakpoint carries no kink.
    """

    s0: float
    breakpoints: tuple[tuple[float, float], ...] = ()
    slopes: tuple[float, ...] = ()
    y_at: float = 0.0
    s_last: float | None = None

    def __post_init__(self):
        bps = tuple((float(x), float(y)) for x, y in self.breakpoints)
        slopes = tuple(float(s) for s in self.slopes)
        if len(slopes) != max(len(bps) - 1, 0):
            raise InvariantViolation(
                f"{len(bps)} breakpoints need {max(len(bps) - 1, 0)} slopes, "
                f"got {len(slopes)}"
            )
        for (x0, y0), (x1, y1), s in zip(bps, bps[1:], slopes):
            if not x1 > x0:
                raise InvariantViolation("breakpoint x values must strictly increase")
            if abs(y1 - (y0 + s * (x1 - x0))) > 1e-9:
                raise InvariantViolation(
                    f"breakpoints ({x0},{y0})->({x1},{y1}) inconsistent with slope {s}"
                )
        if bps and abs(self.y_at - bps[0][1]) > 1e-9:
            raise InvariantViolation("y_at must equal the first breakpoint's y")
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "s0", float(self.s0))
        object.__setattr__(self, "y_at", float(self.y_at))

    @property
    def last_slope(self) -> float:
        """Slope of the unbounded rightmost piece."""
        if self.s_last is not None:
            return self.s_last
        if self.slopes:
            return self.slopes[-1]
        return self.s0

    def __call__(self, x: float) -> float:
        if not self.breakpoints:
            return self.y_at + self.s0 * x
        xs = [bx for bx, _ in self.breakpoints]
        if x <= xs[0]:
            return self.breakpoints[0][1] + self.s0 * (x - xs[0])
        if x >= xs[-1]:
            return self.breakpoints[-1][1] + self.last_slope * (x - xs[-1])
        # rightmost breakpoint at or left of x
        i = bisect.bisect_right(xs, x) - 1
        bx, by = self.breakpoints[i]
        return by + self.slopes[i] * (x - bx)


@dataclass(frozen=True)
class Conv2dSpec:
    """A 2-D convolution to be expanded into a dense layer.

    ``kernel`` has shape (out_channels, in_channels, kh, kw).  Flattening
    of input and output follows the module-level contract.
    """

    in_height: int
    in_width: int
    in_channels: int
    out_channels: int
    kernel: np.ndarray
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=np.float64)
        expected = (self.out_channels, self.in_channels)
        if k.ndim != 4 or k.shape[:2] != expected:
            raise InvalidSpec(
                f"kernel shape {k.shape} does not match (out_channels, in_channels, kh, kw) "
                f"with out/in = {expected}"
            )
        if min(self.in_height, self.in_width, self.in_channels, self.out_channels) < 1:
            raise InvalidSpec("dimensions must be positive")
        if min(self.stride) < 1 or min(self.padding) < 0:
            raise InvalidSpec("stride must be positive, padding nonnegative")
        k.setflags(write=False)
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "stride", tuple(self.stride))
        object.__setattr__(self, "padding", tuple(self.padding))

    @property
    def out_height(self) -> int:
        kh = self.kernel.shape[2]
        return (self.in_height + 2 * self.padding[0] - kh) // self.stride[0] + 1

    @property
    def out_width(self) -> int:
        kw = self.kernel.shape[3]
        return (self.in_width + 2 * self.padding[1] - kw) // self.stride[1] + 1


# --- operations --------------------------------------------------------------


def model_to_graph(model: Model, keep_zero_edges: bool = True) -> NetworkGraph:
    """Flatten a model into nodes and edges.

    Ids are assigned breadth-first per layer.  Zero weights become edges
    unless ``keep_zero_edges`` is False.
    """
    nodes: list[tuple[int, float, int]] = []
    edges: list[tuple[int, int, float]] = []
    # input units: bias 0 by convention
    prev_ids = list(range(model.input_dim))
    nodes.extend((i, 0.0, 0) for i in prev_ids)
    next_id = model.input_dim
    for layer_index, layer in enumerate(model.layers, start=1):
        ids = list(range(next_id, next_id + layer.out_dim))
        next_id += layer.out_dim
        nodes.extend(
            (nid, float(layer.bias[i]), layer_index) for i, nid in enumerate(ids)
        )
        for i, dst in enumerate(ids):
            for j, src in enumerate(prev_ids):
                w = float(layer.weights[i, j])
                if w != 0.0 or keep_zero_edges:
                    edges.append((src, dst, w))
        prev_ids = ids
    activations = tuple(layer.activation for layer in model.layers)
    return NetworkGraph(tuple(nodes), tuple(edges), activations)


def validate_layered(
    nodes: list[tuple[int, float]] | tuple[tuple[int, float], ...],
    edges: list[tuple[int, int, float]] | tuple[tuple[int, int, float], ...],
) -> dict[int, int]:
    """Assign a unique layer to every node or fail.

    Input units are exactly the nodes with no incoming edge; a node's layer
    is the length of any path from an input unit, and all such paths must
    agree.  Raises :class:`CyclicGraph` or :class:`NonLayered`.
    """
    ids = [nid for nid, _ in nodes]
    if len(set(ids)) != len(ids):
        raise InvariantViolation("duplicate node ids")
    id_set = set(ids)
    preds: dict[int, list[int]] = {nid: [] for nid in ids}
    succs: dict[int, list[int]] = {nid: [] for nid in ids}
    for src, dst, _ in edges:
        if src not in id_set or dst not in id_set:
            raise InvariantViolation(f"edge ({src},{dst}) references unknown node")
        preds[dst].append(src)
        succs[src].append(dst)

    indegree = {nid: len(preds[nid]) for nid in ids}
    layer: dict[int, int] = {nid: 0 for nid in ids if indegree[nid] == 0}
    queue = sorted(layer)
    remaining = dict(indegree)
    seen = 0
    while queue:
        nid = queue.pop()
        seen += 1
        for nxt in succs[nid]:
            remaining[nxt] -= 1
            if remaining[nxt] == 0:
                pred_layers = {layer[p] for p in preds[nxt]}
                if len(pred_layers) != 1:
                    raise NonLayered(
                        f"node {nxt} has predecessors on layers {sorted(pred_layers)}"
                    )
                layer[nxt] = pred_layers.pop() + 1
                queue.append(nxt)
    if seen != len(ids):
        raise CyclicGraph("graph contains a directed cycle")
    return layer


def graph_layers(graph: NetworkGraph) -> dict[int, int]:
    """Recompute layers of a graph from its edges alone."""
    return validate_layered(
        [(nid, bias) for nid, bias, _ in graph.nodes], list(graph.edges)
    )


def graph_to_model(
    graph: NetworkGraph, name: str = "extracted"
) -> Model:
    """Rebuild dense matrices from a layered graph (absent edges become 0)."""
    layer_of = graph.layer_map()
    depth = max(layer_of.values()) if layer_of else 0
    if depth == 0:
        raise InvariantViolation("graph has no non-input layer")
    by_layer: dict[int, list[int]] = {}
    bias_of = {nid: b for nid, b, _ in graph.nodes}
    for nid, _, lay in graph.nodes:
        by_layer.setdefault(lay, []).append(nid)
    for lay in by_layer:
        by_layer[lay].sort()
    if len(graph.activations) != depth:
        raise InvariantViolation(
            f"{depth} layers need {depth} activation tags, got {len(graph.activations)}"
        )
    layers = []
    for lay in range(1, depth + 1):
        src_ids = by_layer.get(lay - 1, [])
        dst_ids = by_layer.get(lay, [])
        if not src_ids or not dst_ids:
            raise InvariantViolation(f"layer {lay} is empty")
        src_pos = {nid: j for j, nid in enumerate(src_ids)}
        dst_pos = {nid: i for i, nid in enumerate(dst_ids)}
        w = np.zeros((len(dst_ids), len(src_ids)))
        for src, dst, weight in graph.edges:
            if layer_of[dst] == lay:
                w[dst_pos[dst], src_pos[src]] = weight
        b = np.array([bias_of[nid] for nid in dst_ids])
        layers.append(DenseLayer(w, b, graph.activations[lay - 1]))
    return Model(name, tuple(layers))


def conv2d_to_dense(spec: Conv2dSpec, activation: str = "relu") -> DenseLayer:
    """Expand a 2-D convolution to the equivalent dense layer.

    The returned matrix applied to the flattened input equals the padded,
    strided convolution.  Bias is zero (the spec carries no bias term).
    """
    oh, ow = spec.out_height, spec.out_width
    if oh < 1 or ow < 1:
        raise InvalidSpec(f"output dims {oh}x{ow} must be positive")
    kh, kw = spec.kernel.shape[2], spec.kernel.shape[3]
    h, w = spec.in_height, spec.in_width
    sh, sw = spec.stride
    ph, pw = spec.padding
    in_dim = spec.in_channels * h * w
    out_dim = spec.out_channels * oh * ow
    mat = np.zeros((out_dim, in_dim))
    for co in range(spec.out_channels):
        for oy in range(oh):
            for ox in range(ow):
                row = co * (oh * ow) + oy * ow + ox
                for ci in range(spec.in_channels):
                    for ky in range(kh):
                        for kx in range(kw):
                            iy = oy * sh + ky - ph
                            ix = ox * sw + kx - pw
                            if 0 <= iy < h and 0 <= ix < w:
                                col = ci * (h * w) + iy * w + ix
                                mat[row, col] = spec.kernel[co, ci, ky, kx]
    return DenseLayer(mat, np.zeros(out_dim), activation)


def pwl_to_network(pwl: PwlFunction, domain: tuple[float, float]) -> Model:
    """Synthesize a 1-input, one-hidden-layer, 1-output ReLU network that
    equals ``pwl`` on ``domain``.

    One hidden unit per breakpoint (incoming weight 1, bias -x, outgoing
    weight = slope change at x) plus one always-active unit carrying the
    ``s0`` linear term.  Outside the domain the network and the function
    may differ (the carrier unit shuts off left of ``a - 1``).
    """
    a, b = float(domain[0]), float(domain[1])
    if not a < b:
        raise BreakpointOutOfDomain(f"empty domain [{a}, {b}]")
    for x, _ in pwl.breakpoints:
        if not a < x < b:
            raise BreakpointOutOfDomain(f"breakpoint x={x} outside ({a}, {b})")

    in_weights = [1.0]
    biases = [-(a - 1.0)]
    out_weights = [pwl.s0]
    slope_before = pwl.s0
    n = len(pwl.breakpoints)
    for i, (x, _) in enumerate(pwl.breakpoints):
        slope_after = pwl.slopes[i] if i < n - 1 else pwl.last_slope
        in_weights.append(1.0)
        biases.append(-x)
        out_weights.append(slope_after - slope_before)
        slope_before = slope_after

    if pwl.breakpoints:
        x0, y0 = pwl.breakpoints[0]
        f_a = y0 + pwl.s0 * (a - x0)
    else:
        f_a = pwl.y_at + pwl.s0 * a
    # only the carrier is active at x=a: value s0 * (a - (a-1)) = s0
    out_bias = f_a - pwl.s0

    hidden = DenseLayer(
        np.array(in_weights).reshape(-1, 1), np.array(biases), "relu"
    )
    readout = DenseLayer(
        np.array(out_weights).reshape(1, -1), np.array([out_bias]), "identity"
    )
    return Model("pwl_network", (hidden, readout))


def random_model(
    rng: np.random.Generator,
    input_dim: int,
    hidden: tuple[int, ...],
    output_dim: int,
    output_activation: str = "identity",
    name: str = "random",
) -> Model:
    """Random layered network with fan-in-scaled weights.

    Scaling keeps unit values O(1) at any width, so cross-checks against
    SQL results stay far from the absolute tolerance.
    """
    widths = [input_dim, *hidden, output_dim]
    layers = []
    for i in range(1, len(widths)):
        fan_in = widths[i - 1]
        w = rng.uniform(-1.0, 1.0, (widths[i], fan_in)) / np.sqrt(fan_in)
        b = rng.uniform(-0.5, 0.5, widths[i])
        act = "relu" if i < len(widths) - 1 else output_activation
        layers.append(DenseLayer(w, b, act))
    return Model(name, tuple(layers))


def sine_interpolant(pieces: int = 16, lo: float = 0.0, hi: float = 2 * np.pi) -> PwlFunction:
    """Piecewise-linear interpolant of sin(x) on [lo, hi].

    Breakpoints sit on the left knot of each piece, the function is flat
    left of ``lo`` (s0 = 0), and the final piece's slope continues right of
    the last knot.
    """
    xs = np.linspace(lo, hi, pieces + 1)
    ys = np.sin(xs)
    bps = tuple((float(x), float(y)) for x, y in zip(xs[:-1], ys[:-1]))
    slopes = tuple(
        float((ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])) for i in range(pieces - 1)
    )
    s_last = float((ys[pieces] - ys[pieces - 1]) / (xs[pieces] - xs[pieces - 1]))
    return PwlFunction(
        s0=0.0, breakpoints=bps, slopes=slopes, y_at=float(ys[0]), s_last=s_last
    )


# --- file formats -------------------------------------------------------------


def export_model(model: Model, path: str | Path) -> None:
    """Write the JSON model format (see README for the schema)."""
    doc = {
        "name": model.name,
        "layers": [
            {
                "type": "dense",
                "weights": [[float(v) for v in row] for row in layer.weights],
                "bias": [float(v) for v in layer.bias],
                "activation": layer.activation,
            }
            for layer in model.layers
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def import_model(path: str | Path) -> Model:
    """Read the JSON model format; raises ParseError / InvariantViolation
    with layer context."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    except OSError as e:
        raise ParseError(f"{path}: {e}") from e
    if not isinstance(doc, dict) or "layers" not in doc:
        raise ParseError(f"{path}: top-level object must have a 'layers' field")
    name = doc.get("name", Path(path).stem)
    layers = []
    for i, spec in enumerate(doc["layers"]):
        where = f"{path}: layers[{i}]"
        if spec.get("type", "dense") != "dense":
            raise ParseError(f"{where}: unsupported layer type {spec.get('type')!r}")
        for key in ("weights", "bias", "activation"):
            if key not in spec:
                raise ParseError(f"{where}: missing field {key!r}")
        weights = np.asarray(spec["weights"], dtype=np.float64)
        if weights.ndim != 2:
            raise ParseError(f"{where}: weights must be a list of equal-length rows")
        bias = np.asarray(spec["bias"], dtype=np.float64)
        if bias.ndim != 1 or bias.shape[0] != weights.shape[0]:
            raise InvariantViolation(
                f"{where}: bias length {bias.shape[0]} does not match "
                f"{weights.shape[0]} weight rows"
            )
        if spec["activation"] not in ACTIVATIONS:
            raise ParseError(f"{where}: unknown activation {spec['activation']!r}")
        layers.append(DenseLayer(weights, bias, spec["activation"]))
    try:
        return Model(name, tuple(layers))
    except InvariantViolation as e:
        raise InvariantViolation(f"{path}: {e}") from e


def export_graph_csv(graph: NetworkGraph, directory: str | Path) -> tuple[Path, Path]:
    """Write ``nodes.csv`` (id,bias,layer) and ``edges.csv`` (src,dst,weight)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    nodes_path = directory / "nodes.csv"
    edges_path = directory / "edges.csv"
    with nodes_path.open("w") as f:
        f.write("id,bias,layer\n")
        for nid, bias, layer in graph.nodes:
            f.write(f"{nid},{bias!r},{layer}\n")
    with edges_path.open("w") as f:
        f.write("src,dst,weight\n")
        for src, dst, weight in graph.edges:
            f.write(f"{src},{dst},{weight!r}\n")
    return nodes_path, edges_path
