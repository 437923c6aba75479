"""Compile model-analysis tasks into SQL.

Every generator is a pure function returning a :class:`SqlQuery`: complete
SQL text (a WITH-chain ending in one SELECT), the expected result schema,
a capability flag, and named parameters.  Identical inputs produce
byte-identical text, which the golden-snapshot tests pin down.

Scalar parameters (model_id, vec_id, epsilon, threshold, interval bounds)
are always emitted as named ``:param`` placeholders, never inlined.  The
only structural splice is the fixed evaluation depth, which changes the
shape of the query rather than a value in it, and the caller-supplied
relation name substituted for Edge in pruning queries.

Evaluation queries implement, per unit u reachable from the inputs,

    val(u) = activation(u.bias + SUM(w * val(v)) over edges (v, u, w)),

joining frontier values against Edge and Node and grouping by target unit.
Input units are identified as nodes without an incoming edge, output units
as nodes without an outgoing edge.  A unit none of whose predecessors
carries a value receives no value itself; this matters only for damaged
edge sets (see the saliency generators and the oracle's graph semantics).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import InvalidInterval, UnsupportedActivation

Schema = tuple[tuple[str, str], ...]

_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


@dataclass(frozen=True)
class SqlQuery:
    """A generated query: text, declared result schema, requirements, params.

    ``result_schema`` pairs column names with semantic kinds
    ("int" | "float" | "bool" | "str").  ``params`` maps each named
    placeholder to its bound value; every key appears in ``text`` as
    ``:key`` at least once.
    """

    text: str
    result_schema: Schema
    requires_recursive_aggregation: bool = False
    params: dict[str, float | int] = field(default_factory=dict)

    def __post_init__(self):
        for name in self.params:
            if f":{name}" not in self.text:
                raise ValueError(f"declared param :{name} missing from SQL text")


@dataclass(frozen=True)
class EvalOptions:
    """How to compile an evaluation.

    ``depth=None`` selects the recursive strategy; a positive integer emits
    that many composed layer views.  ``batch_over`` lifts the vec_id and/or
    model_id filters so one query evaluates many vectors / models at once.
    """

    depth: int | None = None
    hidden_activation: str = "relu"
    output_activation: str = "identity"
    batch_over: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.hidden_activation != "relu":
            raise UnsupportedActivation(
                f"hidden activation must be relu, got {self.hidden_activation!r}"
            )
        if self.output_activation not in ("relu", "identity", "softmax"):
            raise UnsupportedActivation(
                f"unknown output activation {self.output_activation!r}"
            )
        if self.depth is not None and self.depth < 1:
            raise ValueError("depth must be >= 1")
        bad = set(self.batch_over) - {"vec_id", "model_id"}
        if bad:
            raise ValueError(f"cannot batch over {sorted(bad)}")
        object.__setattr__(self, "batch_over", frozenset(self.batch_over))


def _relu(expr: str, use_greatest: bool) -> str:
    if use_greatest:
        return f"GREATEST({expr}, 0.0)"
    return f"CASE WHEN {expr} > 0.0 THEN {expr} ELSE 0.0 END"


def _keys(alias: str, keys: tuple[str, ...], trailing: bool = True) -> str:
    """Render 'a.k1, a.k2, ' (or without the trailing separator)."""
    if not keys:
        return ""
    joined = ", ".join(f"{alias}.{k}" for k in keys)
    return joined + (", " if trailing else "")


def _single_model_ctes(with_input: bool = True) -> list[str]:
    """Shared per-model relations, filtered by :model_id (and :vec_id)."""
    ctes = [
        "model_nodes AS (\n"
        "  SELECT id, bias FROM Node WHERE model_id = :model_id\n"
        ")",
        "model_edges AS (\n"
        "  SELECT src, dst, weight FROM Edge WHERE model_id = :model_id\n"
        ")",
        "input_units AS (\n"
        "  SELECT n.id FROM model_nodes n\n"
        "  WHERE NOT EXISTS (SELECT 1 FROM model_edges e WHERE e.dst = n.id)\n"
        ")",
        "output_units AS (\n"
        "  SELECT n.id FROM model_nodes n\n"
        "  WHERE NOT EXISTS (SELECT 1 FROM model_edges e WHERE e.src = n.id)\n"
        ")",
    ]
    if with_input:
        ctes.append(
            "base_input AS (\n"
            "  SELECT in_id, val FROM Input WHERE vec_id = :vec_id\n"
            ")"
        )
    return ctes


def _fixed_chain(
    prefix: str,
    layer0: str,
    keys: tuple[str, ...],
    depth: int,
    output_activation: str,
    use_greatest: bool,
    edge_rel: str = "model_edges",
    node_rel: str = "model_nodes",
    edge_key: str | None = None,
    node_key: str | None = None,
) -> tuple[list[str], str]:
    """Emit layer1..layerN views composing the evaluation to a known depth.

    Returns the CTE list and the name of the final (output layer) relation.
    Softmax is not applied here; the caller post-processes the final layer's
    pre-activations.
    """
    ctes = [f"{prefix}layer0 AS (\n{layer0}\n)"]
    edge_join = "e.src = p.id"
    if edge_key:
        edge_join += f" AND e.{edge_key} = p.{edge_key}"
    node_join = "n.id = e.dst"
    if node_key:
        node_join += f" AND n.{node_key} = e.{node_key}"
    for k in range(1, depth + 1):
        is_output = k == depth
        if is_output and output_activation in ("identity", "softmax"):
            val = "q.pre"  # softmax is applied by the caller on the whole layer
        else:
            val = _relu("q.pre", use_greatest)
        ctes.append(
            f"{prefix}layer{k} AS (\n"
            f"  SELECT {_keys('q', keys)}q.id, {val} AS val\n"
            f"  FROM (\n"
            f"    SELECT {_keys('p', keys)}e.dst AS id, n.bias + SUM(e.weight * p.val) AS pre\n"
            f"    FROM {prefix}layer{k - 1} p\n"
            f"    JOIN {edge_rel} e ON {edge_join}\n"
            f"    JOIN {node_rel} n ON {node_join}\n"
            f"    GROUP BY {_keys('p', keys)}e.dst, n.bias\n"
            f"  ) q\n"
            f")"
        )
    return ctes, f"{prefix}layer{depth}"


def _recursive_values(
    prefix: str,
    layer0: str,
    keys: tuple[str, ...],
    output_activation: str,
    use_greatest: bool,
    edge_rel: str = "model_edges",
    node_rel: str = "model_nodes",
    out_rel: str = "output_units",
    edge_key: str | None = None,
    node_key: str | None = None,
) -> tuple[list[str], str]:
    """Emit one recursive view valuing all units layer by layer.

    The recursive step aggregates the previous frontier grouped by target
    unit, which requires an engine that allows aggregation inside the
    recursive term.  Units with no outgoing edge keep their pre-activation
    (or ReLU when the output activation is relu); recursion stops when the
    frontier has no successors.  The result relation restricts to output
    units.
    """
    pre = "n.bias + SUM(e.weight * p.val)"
    relu_val = _relu(pre, use_greatest)
    if output_activation == "relu":
        val = relu_val
    else:
        val = f"CASE WHEN o.id IS NOT NULL THEN {pre} ELSE {relu_val} END"
    edge_join = "e.src = p.id"
    if edge_key:
        edge_join += f" AND e.{edge_key} = p.{edge_key}"
    node_join = "n.id = e.dst"
    if node_key:
        node_join += f" AND n.{node_key} = e.{node_key}"
    out_join = "o.id = e.dst"
    final_out_join = "o.id = v.id"
    if node_key:
        out_join += f" AND o.{node_key} = e.{node_key}"
        final_out_join += f" AND o.{node_key} = v.{node_key}"
    rec = (
        f"{prefix}values(" + "".join(f"{k}, " for k in keys) + "id, val, layer) AS (\n"
        f"  SELECT {_keys('b', keys)}b.id, b.val, 0 AS layer\n"
        f"  FROM {prefix}layer0 b\n"
        f"  UNION ALL\n"
        f"  SELECT {_keys('p', keys)}e.dst AS id,\n"
        f"    {val} AS val,\n"
        f"    p.layer + 1 AS layer\n"
        f"  FROM {prefix}values p\n"
        f"  JOIN {edge_rel} e ON {edge_join}\n"
        f"  JOIN {node_rel} n ON {node_join}\n"
        f"  LEFT JOIN {out_rel} o ON {out_join}\n"
        f"  GROUP BY {_keys('p', keys)}e.dst, n.bias, o.id, p.layer\n"
        f")"
    )
    final = (
        f"{prefix}outputs AS (\n"
        f"  SELECT {_keys('v', keys)}v.id, v.val\n"
        f"  FROM {prefix}values v\n"
        f"  JOIN {out_rel} o ON {final_out_join}\n"
        f")"
    )
    ctes = [f"{prefix}layer0 AS (\n{layer0}\n)", rec, final]
    return ctes, f"{prefix}outputs"


def _softmax_ctes(
    prefix: str, source: str, keys: tuple[str, ...]
) -> tuple[list[str], str]:
    """Normalize a relation of output pre-activations into probabilities.

    Uses the max-shift form: exp(z - max z) / sum(exp(z - max z)), grouped
    by the batch keys.
    """
    on_keys = (
        " AND ".join(f"p.{k} = m.{k}" for k in keys) if keys else "1 = 1"
    )
    on_tot = " AND ".join(f"e.{k} = t.{k}" for k in keys) if keys else "1 = 1"
    group = _keys("p", keys, trailing=False)
    ctes = [
        f"{prefix}softmax_max AS (\n"
        f"  SELECT {_keys('p', keys)}MAX(p.val) AS mx\n"
        f"  FROM {source} p"
        + (f"\n  GROUP BY {group}\n" if keys else "\n")
        + ")",
        f"{prefix}softmax_exp AS (\n"
        f"  SELECT {_keys('p', keys)}p.id, EXP(p.val - m.mx) AS ex\n"
        f"  FROM {source} p\n"
        f"  JOIN {prefix}softmax_max m ON {on_keys}\n"
        f")",
        f"{prefix}softmax_tot AS (\n"
        f"  SELECT {_keys('e', keys)}SUM(e.ex) AS total\n"
        f"  FROM {prefix}softmax_exp e"
        + (f"\n  GROUP BY {_keys('e', keys, trailing=False)}\n" if keys else "\n")
        + ")",
        f"{prefix}softmax AS (\n"
        f"  SELECT {_keys('e', keys)}e.id, e.ex / t.total AS val\n"
        f"  FROM {prefix}softmax_exp e\n"
        f"  JOIN {prefix}softmax_tot t ON {on_tot}\n"
        f")",
    ]
    return ctes, f"{prefix}softmax"


def _with(ctes: list[str], final_select: str, recursive: bool) -> str:
    head = "WITH RECURSIVE\n" if recursive else "WITH\n"
    return head + ",\n".join(ctes) + "\n" + final_select + "\n"


def _eval_query(
    opts: EvalOptions,
    model_id: int,
    vec_id: int,
    use_greatest: bool,
) -> tuple[str, Schema, dict]:
    """Common body for gen_eval_fixed / gen_eval_recursive / gen_classify."""
    batch_vec = "vec_id" in opts.batch_over
    batch_model = "model_id" in opts.batch_over
    params: dict[str, float | int] = {}

    if batch_model:
        # unit sets become per-model relations keyed by model_id
        ctes = [
            "input_units AS (\n"
            "  SELECT n.model_id, n.id FROM Node n\n"
            "  WHERE NOT EXISTS (SELECT 1 FROM Edge e\n"
            "    WHERE e.model_id = n.model_id AND e.dst = n.id)\n"
            ")",
            "output_units AS (\n"
            "  SELECT n.model_id, n.id FROM Node n\n"
            "  WHERE NOT EXISTS (SELECT 1 FROM Edge e\n"
            "    WHERE e.model_id = n.model_id AND e.src = n.id)\n"
            ")",
        ]
        vec_filter = "" if batch_vec else "\n  WHERE i.vec_id = :vec_id"
        layer0 = (
            "  SELECT u.model_id, "
            + ("i.vec_id, " if batch_vec else "")
            + "u.id, i.val\n"
            "  FROM Input i\n"
            "  JOIN input_units u ON u.id = i.in_id" + vec_filter
        )
        keys = ("model_id",) + (("vec_id",) if batch_vec else ())
        edge_rel, node_rel = "Edge", "Node"
        edge_key = "model_id"
        if not batch_vec:
            params["vec_id"] = vec_id
    else:
        ctes = _single_model_ctes(with_input=not batch_vec)
        params["model_id"] = model_id
        if batch_vec:
            layer0 = (
                "  SELECT i.vec_id, u.id, i.val\n"
                "  FROM Input i\n"
                "  JOIN input_units u ON u.id = i.in_id"
            )
            keys = ("vec_id",)
        else:
            layer0 = (
                "  SELECT u.id, i.val\n"
                "  FROM base_input i\n"
                "  JOIN input_units u ON u.id = i.in_id"
            )
            keys = ()
            params["vec_id"] = vec_id
        edge_rel, node_rel = "model_edges", "model_nodes"
        edge_key = None

    node_key = "model_id" if batch_model else None
    recursive = opts.depth is None
    if recursive:
        body, final_rel = _recursive_values(
            "eval_",
            layer0,
            keys,
            opts.output_activation,
            use_greatest,
            edge_rel=edge_rel,
            node_rel=node_rel,
            out_rel="output_units",
            edge_key=edge_key,
            node_key=node_key,
        )
    else:
        body, final_rel = _fixed_chain(
            "eval_",
            layer0,
            keys,
            opts.depth,
            opts.output_activation,
            use_greatest,
            edge_rel=edge_rel,
            node_rel=node_rel,
            edge_key=edge_key,
            node_key=node_key,
        )
    ctes += body
    if opts.output_activation == "softmax":
        soft, final_rel = _softmax_ctes("eval_", final_rel, keys)
        ctes += soft

    order = ", ".join([*(f"v.{k}" for k in keys), "v.id"])
    select = f"SELECT {_keys('v', keys)}v.id, v.val\nFROM {final_rel} v\nORDER BY {order}"
    schema: Schema = tuple(
        [(k, "int") for k in keys] + [("id", "int"), ("val", "float")]
    )
    return _with(ctes, select, recursive), schema, params


def gen_eval_fixed(
    opts: EvalOptions,
    model_id: int = 0,
    vec_id: int = 0,
    use_greatest: bool = False,
) -> SqlQuery:
    """Evaluation by a fixed composition of per-layer views (depth known)."""
    if opts.depth is None:
        raise ValueError("gen_eval_fixed needs EvalOptions.depth")
    text, schema, params = _eval_query(opts, model_id, vec_id, use_greatest)
    return SqlQuery(text, schema, requires_recursive_aggregation=False, params=params)


def gen_eval_recursive(
    opts: EvalOptions | None = None,
    model_id: int = 0,
    vec_id: int = 0,
    use_greatest: bool = False,
) -> SqlQuery:
    """Evaluation by one recursive view, independent of network depth."""
    opts = opts or EvalOptions()
    if opts.depth is not None:
        opts = EvalOptions(
            depth=None,
            output_activation=opts.output_activation,
            batch_over=opts.batch_over,
        )
    text, schema, params = _eval_query(opts, model_id, vec_id, use_greatest)
    return SqlQuery(text, schema, requires_recursive_aggregation=True, params=params)


def gen_classify(
    opts: EvalOptions,
    model_id: int = 0,
    vec_id: int = 0,
    use_greatest: bool = False,
) -> SqlQuery:
    """Argmax class and softmax probability per input vector.

    Ties break toward the smallest output unit id.
    """
    if opts.output_activation != "softmax":
        raise UnsupportedActivation("classification needs output_activation='softmax'")
    batch_vec = "vec_id" in opts.batch_over
    if "model_id" in opts.batch_over:
        raise ValueError("classification is per-model; batch over vec_id only")

    ctes = _single_model_ctes(with_input=not batch_vec)
    params: dict[str, float | int] = {"model_id": model_id}
    if batch_vec:
        layer0 = (
            "  SELECT i.vec_id, u.id, i.val\n"
            "  FROM Input i\n"
            "  JOIN input_units u ON u.id = i.in_id"
        )
        keys: tuple[str, ...] = ("vec_id",)
    else:
        layer0 = (
            "  SELECT u.id, i.val\n"
            "  FROM base_input i\n"
            "  JOIN input_units u ON u.id = i.in_id"
        )
        keys = ()
        params["vec_id"] = vec_id

    recursive = opts.depth is None
    if recursive:
        body, final_rel = _recursive_values(
            "eval_", layer0, keys, "softmax", use_greatest
        )
    else:
        body, final_rel = _fixed_chain(
            "eval_", layer0, keys, opts.depth, "softmax", use_greatest
        )
    ctes += body
    soft, probs = _softmax_ctes("eval_", final_rel, keys)
    ctes += soft

    same_keys = (
        " AND ".join(f"p2.{k} = p.{k}" for k in keys) if keys else "1 = 1"
    )
    best_group = f"\n  GROUP BY {_keys('p', keys, trailing=False)}" if keys else ""
    ctes.append(
        "best AS (\n"
        f"  SELECT {_keys('p', keys)}MIN(p.id) AS id\n"
        f"  FROM {probs} p\n"
        f"  WHERE p.val = (SELECT MAX(p2.val) FROM {probs} p2 WHERE {same_keys})"
        f"{best_group}\n"
        ")"
    )
    on_keys = " AND ".join(f"p.{k} = b.{k}" for k in keys)
    join_cond = ("p.id = b.id" + (" AND " + on_keys if on_keys else ""))
    order = ", ".join(f"b.{k}" for k in keys) if keys else "b.id"
    select = (
        f"SELECT {_keys('b', keys)}b.id, p.val AS prob\n"
        f"FROM best b\n"
        f"JOIN {probs} p ON {join_cond}\n"
        f"ORDER BY {order}"
    )
    schema: Schema = tuple(
        [(k, "int") for k in keys] + [("id", "int"), ("prob", "float")]
    )
    return SqlQuery(
        _with(ctes, select, recursive),
        schema,
        requires_recursive_aggregation=recursive,
        params=params,
    )


# --- geometry ------------------------------------------------------------------


def _geometry_ctes(use_greatest: bool) -> list[str]:
    """Relations shared by the geometry queries.

    Breakpoint x values come from hidden units: x = -bias / w for the
    incoming weight w != 0.  Their y values are computed by the depth-2
    evaluation chain run on the breakpoint x values themselves, keyed by x
    (so exact-duplicate x values merge before evaluation).
    """
    ctes = _single_model_ctes(with_input=False)
    ctes += [
        "hidden_units AS (\n"
        "  SELECT n.id, n.bias FROM model_nodes n\n"
        "  WHERE EXISTS (SELECT 1 FROM model_edges e WHERE e.dst = n.id)\n"
        "    AND EXISTS (SELECT 1 FROM model_edges e WHERE e.src = n.id)\n"
        ")",
        "in_edges AS (\n"
        "  SELECT e.dst, e.weight FROM model_edges e\n"
        "  JOIN input_units u ON u.id = e.src\n"
        ")",
        "out_edges AS (\n"
        "  SELECT e.src, e.weight FROM model_edges e\n"
        "  JOIN output_units u ON u.id = e.dst\n"
        ")",
    ]
    return ctes


def _probe_eval(
    probe_rel: str, use_greatest: bool
) -> tuple[list[str], str]:
    """Depth-2 evaluation of the 1-input network at every x in probe_rel."""
    layer0 = (
        f"  SELECT p.x, u.id, p.x AS val\n"
        f"  FROM {probe_rel} p\n"
        f"  CROSS JOIN input_units u"
    )
    chain, final = _fixed_chain(
        "probe_", layer0, ("x",), 2, "identity", use_greatest
    )
    return chain, final


_BREAKPOINT_XS = (
    "probe_xs AS (\n"
    "  SELECT DISTINCT -h.bias / e.weight AS x\n"
    "  FROM hidden_units h\n"
    "  JOIN in_edges e ON e.dst = h.id AND e.weight <> 0.0\n"
    ")"
)


def gen_breakpoints(model_id: int = 0, use_greatest: bool = False) -> SqlQuery:
    """Breakpoints(x, y) of the represented piecewise-linear function."""
    ctes = _geometry_ctes(use_greatest)
    ctes.append(_BREAKPOINT_XS)
    chain, final = _probe_eval("probe_xs", use_greatest)
    ctes += chain
    select = f"SELECT v.x, v.val AS y\nFROM {final} v\nORDER BY v.x"
    return SqlQuery(
        _with(ctes, select, recursive=False),
        (("x", "float"), ("y", "float")),
        params={"model_id": model_id},
    )


def gen_slopes(model_id: int = 0, use_greatest: bool = False) -> SqlQuery:
    """Slopes(x, s) between successive breakpoints, keyed by the left one."""
    ctes = _geometry_ctes(use_greatest)
    ctes.append(_BREAKPOINT_XS)
    chain, final = _probe_eval("probe_xs", use_greatest)
    ctes += chain
    ctes.append(
        "breakpoints AS (\n"
        f"  SELECT v.x, v.val AS y FROM {final} v\n"
        ")"
    )
    ctes.append(
        "successive AS (\n"
        "  SELECT x, y,\n"
        "    LEAD(x) OVER (ORDER BY x) AS x_next,\n"
        "    LEAD(y) OVER (ORDER BY x) AS y_next\n"
        "  FROM breakpoints\n"
        ")"
    )
    select = (
        "SELECT x, (y_next - y) / (x_next - x) AS s\n"
        "FROM successive\n"
        "WHERE x_next IS NOT NULL\n"
        "ORDER BY x"
    )
    return SqlQuery(
        _with(ctes, select, recursive=False),
        (("x", "float"), ("s", "float")),
        params={"model_id": model_id},
    )


def gen_eval_at(model_id: int = 0, use_greatest: bool = False) -> SqlQuery:
    """Evaluate the 1-input network at one point (:x0); singleton result."""
    ctes = _geometry_ctes(use_greatest)
    ctes.append("probe_xs AS (\n  SELECT :x0 AS x\n)")
    chain, final = _probe_eval("probe_xs", use_greatest)
    ctes += chain
    select = f"SELECT v.val AS y\nFROM {final} v"
    return SqlQuery(
        _with(ctes, select, recursive=False),
        (("y", "float"),),
        params={"model_id": model_id, "x0": 0.0},
    )


def gen_initial_slope(model_id: int = 0) -> SqlQuery:
    """Singleton s0: the slope left of all breakpoints.

    Only hidden units with negative input weight are active as x -> -inf;
    each contributes out_weight * in_weight.
    """
    ctes = _geometry_ctes(use_greatest=False)
    select = (
        "SELECT COALESCE(SUM(oe.weight * ie.weight), 0.0) AS s0\n"
        "FROM hidden_units h\n"
        "JOIN in_edges ie ON ie.dst = h.id AND ie.weight < 0.0\n"
        "JOIN out_edges oe ON oe.src = h.id"
    )
    return SqlQuery(
        _with(ctes, select, recursive=False),
        (("s0", "float"),),
        params={"model_id": model_id},
    )


def gen_final_slope(model_id: int = 0) -> SqlQuery:
    """Singleton slope of the rightmost piece (units active as x -> +inf)."""
    ctes = _geometry_ctes(use_greatest=False)
    select = (
        "SELECT COALESCE(SUM(oe.weight * ie.weight), 0.0) AS s_last\n"
        "FROM hidden_units h\n"
        "JOIN in_edges ie ON ie.dst = h.id AND ie.weight > 0.0\n"
        "JOIN out_edges oe ON oe.src = h.id"
    )
    return SqlQuery(
        _with(ctes, select, recursive=False),
        (("s_last", "float"),),
        params={"model_id": model_id},
    )


def gen_integral(
    a: float, b: float, model_id: int = 0, use_greatest: bool = False
) -> SqlQuery:
    """Definite integral over [a, b] by exact trapezoids.

    The evaluation points are the breakpoints strictly inside (a, b) plus
    both interval ends; on each sub-interval the function is linear, so the
    trapezoid rule is exact.
    """
    if not a < b:
        raise InvalidInterval(f"need a < b, got [{a}, {b}]")
    ctes = _geometry_ctes(use_greatest)
    ctes.append(
        "probe_xs AS (\n"
        "  SELECT x FROM (\n"
        "    SELECT DISTINCT -h.bias / e.weight AS x\n"
        "    FROM hidden_units h\n"
        "    JOIN in_edges e ON e.dst = h.id AND e.weight <> 0.0\n"
        "  ) bp WHERE bp.x > :a AND bp.x < :b\n"
        "  UNION\n"
        "  SELECT :a AS x\n"
        "  UNION\n"
        "  SELECT :b AS x\n"
        ")"
    )
    chain, final = _probe_eval("probe_xs", use_greatest)
    ctes += chain
    ctes.append(
        "pieces AS (\n"
        f"  SELECT v.x, v.val AS y,\n"
        "    LEAD(v.x) OVER (ORDER BY v.x) AS x_next,\n"
        "    LEAD(v.val) OVER (ORDER BY v.x) AS y_next\n"
        f"  FROM {final} v\n"
        ")"
    )
    select = (
        "SELECT COALESCE(SUM((x_next - x) * (y + y_next) / 2.0), 0.0) AS integral\n"
        "FROM pieces\n"
        "WHERE x_next IS NOT NULL"
    )
    return SqlQuery(
        _with(ctes, select, recursive=False),
        (("integral", "float"),),
        params={"model_id": model_id, "a": a, "b": b},
    )


def gen_threshold_check(threshold: float, model_id: int = 0, use_greatest: bool = False) -> SqlQuery:
    """Does the function ever exceed the threshold?

    True iff some breakpoint y exceeds it, or an unbounded piece climbs
    (initial slope < 0 or final slope > 0).  Evaluating at x = 0 as well
    covers the breakpoint-free affine case without changing the answer
    otherwise.
    """
    ctes = _geometry_ctes(use_greatest)
    ctes.append(
        "probe_xs AS (\n"
        "  SELECT DISTINCT -h.bias / e.weight AS x\n"
        "  FROM hidden_units h\n"
        "  JOIN in_edges e ON e.dst = h.id AND e.weight <> 0.0\n"
        "  UNION\n"
        "  SELECT 0.0 AS x\n"
        ")"
    )
    chain, final = _probe_eval("probe_xs", use_greatest)
    ctes += chain
    ctes += [
        "slope_left AS (\n"
        "  SELECT COALESCE(SUM(oe.weight * ie.weight), 0.0) AS v\n"
        "  FROM hidden_units h\n"
        "  JOIN in_edges ie ON ie.dst = h.id AND ie.weight < 0.0\n"
        "  JOIN out_edges oe ON oe.src = h.id\n"
        ")",
        "slope_right AS (\n"
        "  SELECT COALESCE(SUM(oe.weight * ie.weight), 0.0) AS v\n"
        "  FROM hidden_units h\n"
        "  JOIN in_edges ie ON ie.dst = h.id AND ie.weight > 0.0\n"
        "  JOIN out_edges oe ON oe.src = h.id\n"
        ")",
        f"peak AS (\n  SELECT MAX(v.val) AS v FROM {final} v\n)",
    ]
    select = (
        "SELECT CASE WHEN sl.v < 0.0 OR sr.v > 0.0 OR pk.v > :threshold\n"
        "  THEN 1 ELSE 0 END AS exceeded\n"
        "FROM slope_left sl, slope_right sr, peak pk"
    )
    return SqlQuery(
        _with(ctes, select, recursive=False),
        (("exceeded", "bool"),),
        params={"model_id": model_id, "threshold": threshold},
    )


def gen_geometry_eligible(model_id: int = 0) -> SqlQuery:
    """Shape probe for geometry queries: input/output unit counts and depth.

    Eligible means (1, 1, 2).  Output activation is not stored relationally
    and stays the caller's responsibility.
    """
    ctes = _single_model_ctes(with_input=False)
    ctes.append(
        "reach(id, depth) AS (\n"
        "  SELECT u.id, 0 AS depth FROM input_units u\n"
        "  UNION\n"
        "  SELECT e.dst, r.depth + 1\n"
        "  FROM reach r\n"
        "  JOIN model_edges e ON e.src = r.id\n"
        ")"
    )
    select = (
        "SELECT\n"
        "  (SELECT COUNT(*) FROM input_units) AS n_inputs,\n"
        "  (SELECT COUNT(*) FROM output_units) AS n_outputs,\n"
        "  (SELECT MAX(depth) FROM reach) AS depth"
    )
    return SqlQuery(
        _with(ctes, select, recursive=True),
        (("n_inputs", "int"), ("n_outputs", "int"), ("depth", "int")),
        requires_recursive_aggregation=False,
        params={"model_id": model_id},
    )


# --- white-box queries ----------------------------------------------------------


def gen_prunable_nodes(epsilon: float, model_id: int = 0) -> SqlQuery:
    """Nodes all of whose incoming weights lie strictly inside (-eps, eps)."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    text = (
        "SELECT e.dst AS id\n"
        "FROM Edge e\n"
        "WHERE e.model_id = :model_id\n"
        "GROUP BY e.dst\n"
        "HAVING -:epsilon < MIN(e.weight) AND MAX(e.weight) < :epsilon\n"
        "ORDER BY e.dst\n"
    )
    return SqlQuery(
        text,
        (("id", "int"),),
        params={"model_id": model_id, "epsilon": epsilon},
    )


def gen_unconnected_nodes(
    pruned_edge_rel: str = "Edge", model_id: int = 0
) -> SqlQuery:
    """Hidden nodes (by original roles) lacking incoming or outgoing edges
    in the substituted edge relation.

    ``pruned_edge_rel`` names a relation with the Edge schema; input/output
    roles are always judged against the original Edge table.
    """
    if not _IDENT.match(pruned_edge_rel):
        raise ValueError(f"invalid relation name {pruned_edge_rel!r}")
    p = pruned_edge_rel
    text = (
        "SELECT n.id\n"
        "FROM Node n\n"
        "WHERE n.model_id = :model_id\n"
        "  AND EXISTS (SELECT 1 FROM Edge e\n"
        "    WHERE e.model_id = :model_id AND e.dst = n.id)\n"
        "  AND EXISTS (SELECT 1 FROM Edge e\n"
        "    WHERE e.model_id = :model_id AND e.src = n.id)\n"
        f"  AND (NOT EXISTS (SELECT 1 FROM {p} pe\n"
        "    WHERE pe.model_id = :model_id AND pe.dst = n.id)\n"
        f"    OR NOT EXISTS (SELECT 1 FROM {p} pe\n"
        "    WHERE pe.model_id = :model_id AND pe.src = n.id))\n"
        "ORDER BY n.id\n"
    )
    return SqlQuery(text, (("id", "int"),), params={"model_id": model_id})


def gen_stats(model_id: int = 0) -> list[SqlQuery]:
    """Three structural statistics: neurons, distinct connections, depth.

    The depth query walks layers with a deduplicating recursive view (no
    aggregation inside the recursion, so it runs on engines without that
    capability; the MAX is taken outside).
    """
    neurons = SqlQuery(
        "SELECT COUNT(*) AS neurons FROM Node WHERE model_id = :model_id\n",
        (("neurons", "int"),),
        params={"model_id": model_id},
    )
    edges = SqlQuery(
        "SELECT COUNT(*) AS edges FROM (\n"
        "  SELECT DISTINCT src, dst FROM Edge WHERE model_id = :model_id\n"
        ") t\n",
        (("edges", "int"),),
        params={"model_id": model_id},
    )
    depth_text = (
        "WITH RECURSIVE\n"
        "reach(id, depth) AS (\n"
        "  SELECT n.id, 0 AS depth FROM Node n\n"
        "  WHERE n.model_id = :model_id\n"
        "    AND NOT EXISTS (SELECT 1 FROM Edge e\n"
        "      WHERE e.model_id = :model_id AND e.dst = n.id)\n"
        "  UNION\n"
        "  SELECT e.dst, r.depth + 1\n"
        "  FROM reach r\n"
        "  JOIN Edge e ON e.src = r.id AND e.model_id = :model_id\n"
        ")\n"
        "SELECT MAX(depth) AS depth FROM reach\n"
    )
    depth = SqlQuery(
        depth_text,
        (("depth", "int"),),
        requires_recursive_aggregation=False,
        params={"model_id": model_id},
    )
    return [neurons, edges, depth]


# --- saliency -------------------------------------------------------------------


def _saliency_tail(pert_rel: str) -> str:
    """Diff each perturbed run against the baseline at the argmax unit."""
    return (
        "SELECT p.d_id, ABS(p.val - b.val) AS saliency\n"
        f"FROM {pert_rel} p, baseline b, target t\n"
        "WHERE p.id = t.id AND b.id = t.id\n"
        "ORDER BY p.d_id"
    )


def _baseline_and_target(
    opts: EvalOptions, use_greatest: bool
) -> tuple[list[str], bool]:
    """Evaluate the unperturbed input and pick the argmax output unit."""
    layer0 = (
        "  SELECT u.id, i.val\n"
        "  FROM base_input i\n"
        "  JOIN input_units u ON u.id = i.in_id"
    )
    recursive = opts.depth is None
    if recursive:
        ctes, final = _recursive_values(
            "base_", layer0, (), opts.output_activation, use_greatest
        )
    else:
        ctes, final = _fixed_chain(
            "base_", layer0, (), opts.depth, opts.output_activation, use_greatest
        )
    if opts.output_activation == "softmax":
        soft, final = _softmax_ctes("base_", final, ())
        ctes += soft
    ctes.append(f"baseline AS (\n  SELECT v.id, v.val FROM {final} v\n)")
    ctes.append(
        "target AS (\n"
        "  SELECT MIN(b.id) AS id FROM baseline b\n"
        "  WHERE b.val = (SELECT MAX(val) FROM baseline)\n"
        ")"
    )
    return ctes, recursive


def _pert_pipeline(
    opts: EvalOptions,
    layer0: str,
    use_greatest: bool,
    edge_rel: str = "model_edges",
    edge_key: str | None = None,
) -> tuple[list[str], str, bool]:
    recursive = opts.depth is None
    if recursive:
        ctes, final = _recursive_values(
            "pert_",
            layer0,
            ("d_id",),
            opts.output_activation,
            use_greatest,
            edge_rel=edge_rel,
            edge_key=edge_key,
        )
    else:
        ctes, final = _fixed_chain(
            "pert_",
            layer0,
            ("d_id",),
            opts.depth,
            opts.output_activation,
            use_greatest,
            edge_rel=edge_rel,
            edge_key=edge_key,
        )
    if opts.output_activation == "softmax":
        soft, final = _softmax_ctes("pert_", final, ("d_id",))
        ctes += soft
    return ctes, final, recursive


def gen_saliency_pinputs(
    opts: EvalOptions | None = None,
    model_id: int = 0,
    vec_id: int = 0,
    use_greatest: bool = False,
) -> SqlQuery:
    """Zero-mode saliency over input units, evaluated in one query.

    Builds a perturbed copy of the stored input per candidate unit d_id
    (that unit's value set to 0), evaluates all copies in parallel with
    d_id acting as the vector key, and reports the absolute output change
    at the baseline argmax unit.
    """
    opts = opts or EvalOptions()
    ctes = _single_model_ctes(with_input=True)
    ctes.append(
        "pinputs AS (\n"
        "  SELECT I2.in_id AS d_id, I1.in_id,\n"
        "    CASE WHEN I1.in_id = I2.in_id THEN 0.0 ELSE I1.val END AS val\n"
        "  FROM base_input I1, base_input I2\n"
        ")"
    )
    layer0 = (
        "  SELECT i.d_id, u.id, i.val\n"
        "  FROM pinputs i\n"
        "  JOIN input_units u ON u.id = i.in_id"
    )
    pert, pert_rel, rec1 = _pert_pipeline(opts, layer0, use_greatest)
    base, rec2 = _baseline_and_target(opts, use_greatest)
    text = _with(ctes + pert + base, _saliency_tail(pert_rel), rec1 or rec2)
    return SqlQuery(
        text,
        (("d_id", "int"), ("saliency", "float")),
        requires_recursive_aggregation=rec1 or rec2,
        params={"model_id": model_id, "vec_id": vec_id},
    )


def gen_saliency_medges(
    drop_set: str = "input",
    opts: EvalOptions | None = None,
    model_id: int = 0,
    vec_id: int = 0,
    use_greatest: bool = False,
) -> SqlQuery:
    """Remove-mode saliency: drop a node by deleting its incident edges.

    MEdges holds, per candidate d_id, the model's edge set with that node's
    edges removed; d_id acts as the model key and all variants evaluate in
    parallel against the original input.  ``drop_set`` picks input or
    hidden units as candidates.  Candidates whose removal disconnects the
    readout produce no row.
    """
    if drop_set not in ("input", "hidden"):
        raise ValueError(f"drop_set must be 'input' or 'hidden', got {drop_set!r}")
    opts = opts or EvalOptions()
    ctes = _single_model_ctes(with_input=True)
    if drop_set == "input":
        cand = "cand AS (\n  SELECT u.id AS d_id FROM input_units u\n)"
    else:
        cand = (
            "cand AS (\n"
            "  SELECT n.id AS d_id FROM model_nodes n\n"
            "  WHERE EXISTS (SELECT 1 FROM model_edges e WHERE e.dst = n.id)\n"
            "    AND EXISTS (SELECT 1 FROM model_edges e WHERE e.src = n.id)\n"
            ")"
        )
    ctes.append(cand)
    ctes.append(
        "medges AS (\n"
        "  SELECT c.d_id, e.src, e.dst, e.weight\n"
        "  FROM model_edges e\n"
        "  CROSS JOIN cand c\n"
        "  WHERE e.src <> c.d_id AND e.dst <> c.d_id\n"
        ")"
    )
    layer0 = (
        "  SELECT c.d_id, u.id, i.val\n"
        "  FROM base_input i\n"
        "  JOIN input_units u ON u.id = i.in_id\n"
        "  CROSS JOIN cand c"
    )
    pert, pert_rel, rec1 = _pert_pipeline(
        opts, layer0, use_greatest, edge_rel="medges", edge_key="d_id"
    )
    base, rec2 = _baseline_and_target(opts, use_greatest)
    text = _with(ctes + pert + base, _saliency_tail(pert_rel), rec1 or rec2)
    return SqlQuery(
        text,
        (("d_id", "int"), ("saliency", "float")),
        requires_recursive_aggregation=rec1 or rec2,
        params={"model_id": model_id, "vec_id": vec_id},
    )


def gen_saliency_single_drop(
    mode: str = "zero",
    opts: EvalOptions | None = None,
    model_id: int = 0,
    vec_id: int = 0,
    use_greatest: bool = False,
) -> SqlQuery:
    """One perturbed evaluation for a single dropped unit (:drop_id).

    This is the per-worker query of the concurrent saliency loop; unioning
    its results over all drop ids reproduces the monolithic query exactly.
    """
    if mode not in ("zero", "remove"):
        raise ValueError(f"mode must be 'zero' or 'remove', got {mode!r}")
    opts = opts or EvalOptions()
    ctes = _single_model_ctes(with_input=True)
    ctes.append("cand AS (\n  SELECT :drop_id AS d_id\n)")
    if mode == "zero":
        ctes.append(
            "pinputs AS (\n"
            "  SELECT c.d_id, I1.in_id,\n"
            "    CASE WHEN I1.in_id = c.d_id THEN 0.0 ELSE I1.val END AS val\n"
            "  FROM base_input I1\n"
            "  CROSS JOIN cand c\n"
            ")"
        )
        layer0 = (
            "  SELECT i.d_id, u.id, i.val\n"
            "  FROM pinputs i\n"
            "  JOIN input_units u ON u.id = i.in_id"
        )
        pert, pert_rel, rec1 = _pert_pipeline(opts, layer0, use_greatest)
    else:
        ctes.append(
            "medges AS (\n"
            "  SELECT c.d_id, e.src, e.dst, e.weight\n"
            "  FROM model_edges e\n"
            "  CROSS JOIN cand c\n"
            "  WHERE e.src <> c.d_id AND e.dst <> c.d_id\n"
            ")"
        )
        layer0 = (
            "  SELECT c.d_id, u.id, i.val\n"
            "  FROM base_input i\n"
            "  JOIN input_units u ON u.id = i.in_id\n"
            "  CROSS JOIN cand c"
        )
        pert, pert_rel, rec1 = _pert_pipeline(
            opts, layer0, use_greatest, edge_rel="medges", edge_key="d_id"
        )
    base, rec2 = _baseline_and_target(opts, use_greatest)
    text = _with(ctes + pert + base, _saliency_tail(pert_rel), rec1 or rec2)
    return SqlQuery(
        text,
        (("d_id", "int"), ("saliency", "float")),
        requires_recursive_aggregation=rec1 or rec2,
        params={"model_id": model_id, "vec_id": vec_id, "drop_id": 0},
    )
