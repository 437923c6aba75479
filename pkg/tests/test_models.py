"""Model IR: graph conversion, layering, convolution expansion, synthesis,
and the JSON model format."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nnsql import models, oracle
from nnsql.errors import (
    BreakpointOutOfDomain,
    CyclicGraph,
    InvalidSpec,
    InvariantViolation,
    NonLayered,
    ParseError,
)
from nnsql.models import (
    Conv2dSpec,
    DenseLayer,
    Model,
    PwlFunction,
    conv2d_to_dense,
    graph_to_model,
    import_model,
    export_model,
    model_to_graph,
    pwl_to_network,
    random_model,
    sine_interpolant,
    validate_layered,
)


def identity_chain() -> Model:
    """1 input -> 1 hidden -> 1 output, all weights 1, biases 0."""
    return Model(
        "chain",
        (
            DenseLayer(np.array([[1.0]]), np.array([0.0]), "relu"),
            DenseLayer(np.array([[1.0]]), np.array([0.0]), "identity"),
        ),
    )


class TestModelInvariants:
    def test_empty_model_rejected(self):
        with pytest.raises(InvariantViolation):
            Model("m", ())

    def test_layer_width_mismatch(self):
        with pytest.raises(InvariantViolation, match="layer 1"):
            Model(
                "m",
                (
                    DenseLayer(np.zeros((3, 2)), np.zeros(3)),
                    DenseLayer(np.zeros((1, 4)), np.zeros(1)),
                ),
            )

    def test_softmax_only_on_final_layer(self):
        with pytest.raises(InvariantViolation, match="softmax"):
            Model(
                "m",
                (
                    DenseLayer(np.zeros((2, 2)), np.zeros(2), "softmax"),
                    DenseLayer(np.zeros((1, 2)), np.zeros(1)),
                ),
            )

    def test_bias_length_checked(self):
        with pytest.raises(InvariantViolation):
            DenseLayer(np.zeros((3, 2)), np.zeros(2))


class TestModelToGraph:
    def test_identity_chain(self):
        graph = model_to_graph(identity_chain())
        assert [n[:2] for n in graph.nodes] == [(0, 0.0), (1, 0.0), (2, 0.0)]
        assert graph.edges == ((0, 1, 1.0), (1, 2, 1.0))

    def test_2_3_1_counts(self):
        rng = np.random.default_rng(0)
        model = random_model(rng, 2, (3,), 1)
        graph = model_to_graph(model)
        assert len(graph.nodes) == 6
        assert len(graph.edges) == 2 * 3 + 3 * 1

    def test_zero_edges_kept_by_default(self):
        model = Model(
            "z",
            (
                DenseLayer(np.array([[0.0, 1.0]]), np.array([0.0]), "relu"),
                DenseLayer(np.array([[1.0]]), np.array([0.0]), "identity"),
            ),
        )
        assert len(model_to_graph(model).edges) == 3
        assert len(model_to_graph(model, keep_zero_edges=False).edges) == 2

    def test_extract_and_reevaluate_matches_native(self):
        rng = np.random.default_rng(1)
        model = random_model(rng, 3, (4,), 2)
        rebuilt = graph_to_model(model_to_graph(model))
        for _ in range(10):
            x = rng.uniform(-1, 1, 3)
            np.testing.assert_allclose(
                oracle.eval_model(rebuilt, x),
                oracle.eval_model(model, x),
                atol=1e-12,
            )

    def test_input_ids_in_vector_order(self):
        rng = np.random.default_rng(2)
        graph = model_to_graph(random_model(rng, 5, (3,), 2))
        assert graph.input_ids == (0, 1, 2, 3, 4)


class TestValidateLayered:
    def test_chain(self):
        layers = validate_layered(
            [(0, 0.0), (1, 0.0), (2, 0.0)], [(0, 1, 1.0), (1, 2, 1.0)]
        )
        assert layers == {0: 0, 1: 1, 2: 2}

    def test_skip_connection_rejected(self):
        with pytest.raises(NonLayered):
            validate_layered(
                [(0, 0.0), (1, 0.0), (2, 0.0)],
                [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)],
            )

    def test_cycle_rejected(self):
        with pytest.raises(CyclicGraph):
            validate_layered(
                [(0, 0.0), (1, 0.0), (2, 0.0)],
                [(0, 1, 1.0), (1, 2, 1.0), (2, 1, 1.0)],
            )

    def test_duplicate_ids_rejected(self):
        with pytest.raises(InvariantViolation):
            validate_layered([(0, 0.0), (0, 0.0)], [])

    def test_random_layered_model_matches_construction(self):
        rng = np.random.default_rng(3)
        model = random_model(rng, 4, (5, 6, 3), 2)
        graph = model_to_graph(model)
        assert models.graph_layers(graph) == graph.layer_map()

    @given(
        widths=st.lists(st.integers(min_value=1, max_value=5), min_size=2, max_size=5),
        seed=st.integers(min_value=0, max_value=2**31),
    )
    @settings(max_examples=25, deadline=None)
    def test_every_model_graph_is_layered(self, widths, seed):
        rng = np.random.default_rng(seed)
        model = random_model(rng, widths[0], tuple(widths[1:-1]), widths[-1])
        graph = model_to_graph(model)
        layers = models.graph_layers(graph)
        layer0 = {nid for nid, lay in layers.items() if lay == 0}
        assert layer0 == set(graph.input_ids)
        assert layer0 == set(range(model.input_dim))


def direct_conv2d(spec: Conv2dSpec, image: np.ndarray) -> np.ndarray:
    """Independent convolution oracle: literal sliding-window loops."""
    kh, kw = spec.kernel.shape[2], spec.kernel.shape[3]
    sh, sw = spec.stride
    ph, pw = spec.padding
    padded = np.zeros(
        (spec.in_channels, spec.in_height + 2 * ph, spec.in_width + 2 * pw)
    )
    padded[:, ph:ph + spec.in_height, pw:pw + spec.in_width] = image
    out = np.zeros((spec.out_channels, spec.out_height, spec.out_width))
    for co in range(spec.out_channels):
        for oy in range(spec.out_height):
            for ox in range(spec.out_width):
                window = padded[:, oy * sh:oy * sh + kh, ox * sw:ox * sw + kw]
                out[co, oy, ox] = np.sum(window * spec.kernel[co])
    return out


class TestConv2dToDense:
    def test_1x1_identity_kernel(self):
        spec = Conv2dSpec(3, 3, 1, 1, np.ones((1, 1, 1, 1)))
        layer = conv2d_to_dense(spec)
        np.testing.assert_array_equal(layer.weights, np.eye(9))

    def test_single_window_equals_flattened_kernel(self):
        kernel = np.arange(4.0).reshape(1, 1, 2, 2)
        spec = Conv2dSpec(2, 2, 1, 1, kernel)
        layer = conv2d_to_dense(spec)
        assert layer.weights.shape == (1, 4)
        np.testing.assert_array_equal(layer.weights[0], kernel.ravel())

    def test_matches_direct_convolution(self):
        rng = np.random.default_rng(4)
        spec = Conv2dSpec(4, 4, 1, 1, rng.uniform(-1, 1, (1, 1, 3, 3)))
        layer = conv2d_to_dense(spec)
        for _ in range(20):
            image = rng.uniform(-1, 1, (1, 4, 4))
            got = layer.weights @ image.ravel()
            want = direct_conv2d(spec, image).ravel()
            np.testing.assert_allclose(got, want, atol=1e-12)

    def test_random_specs_match_direct_convolution(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            ci, co = int(rng.integers(1, 3)), int(rng.integers(1, 3))
            h, w = int(rng.integers(2, 7)), int(rng.integers(2, 7))
            kh = int(rng.integers(1, h + 1))
            kw = int(rng.integers(1, w + 1))
            spec = Conv2dSpec(
                h, w, ci, co,
                rng.uniform(-1, 1, (co, ci, kh, kw)),
                stride=(int(rng.integers(1, 3)), int(rng.integers(1, 3))),
                padding=(int(rng.integers(0, 2)), int(rng.integers(0, 2))),
            )
            if spec.out_height < 1 or spec.out_width < 1:
                continue
            layer = conv2d_to_dense(spec)
            image = rng.uniform(-1, 1, (ci, h, w))
            np.testing.assert_allclose(
                layer.weights @ image.ravel(),
                direct_conv2d(spec, image).ravel(),
                atol=1e-12,
            )

    def test_invalid_spec_rejected(self):
        spec = Conv2dSpec(2, 2, 1, 1, np.ones((1, 1, 3, 3)))  # kernel larger than input
        with pytest.raises(InvalidSpec):
            conv2d_to_dense(spec)


class TestPwlFunction:
    def test_slopes_length_invariant(self):
        with pytest.raises(InvariantViolation):
            PwlFunction(s0=0.0, breakpoints=((0.0, 0.0),), slopes=(1.0,))

    def test_inconsistent_y_rejected(self):
        with pytest.raises(InvariantViolation):
            PwlFunction(
                s0=0.0,
                breakpoints=((0.0, 0.0), (1.0, 5.0)),
                slopes=(1.0,),
                y_at=0.0,
            )

    @given(
        xs=st.lists(
            st.floats(min_value=-10, max_value=10, allow_nan=False),
            min_size=2, max_size=6, unique=True,
        ),
        slopes_seed=st.integers(min_value=0, max_value=2**31),
    )
    @settings(max_examples=50, deadline=None)
    def test_consecutive_breakpoints_consistent(self, xs, slopes_seed):
        xs = sorted(xs)
        rng = np.random.default_rng(slopes_seed)
        slopes = rng.uniform(-3, 3, len(xs) - 1)
        ys = [0.0]
        for (x0, x1), s in zip(zip(xs, xs[1:]), slopes):
            ys.append(ys[-1] + s * (x1 - x0))
        pwl = PwlFunction(
            s0=rng.uniform(-3, 3),
            breakpoints=tuple(zip(xs, ys)),
            slopes=tuple(slopes),
            y_at=ys[0],
        )
        for (x0, y0), (x1, y1), s in zip(pwl.breakpoints, pwl.breakpoints[1:], pwl.slopes):
            assert abs(y1 - (y0 + s * (x1 - x0))) <= 1e-9


class TestPwlToNetwork:
    def test_linear_function(self):
        pwl = PwlFunction(s0=1.0, y_at=0.0)
        net = pwl_to_network(pwl, (0.0, 1.0))
        assert oracle.eval_model(net, np.array([0.5]))[0] == pytest.approx(0.5)

    def test_absolute_value(self):
        pwl = PwlFunction(
            s0=-1.0, breakpoints=((0.0, 0.0),), slopes=(), y_at=0.0, s_last=1.0
        )
        net = pwl_to_network(pwl, (-5.0, 5.0))
        assert oracle.eval_model(net, np.array([2.0]))[0] == pytest.approx(2.0)
        assert oracle.eval_model(net, np.array([-2.0]))[0] == pytest.approx(2.0)

    def test_sine_interpolant_at_random_points(self):
        pwl = sine_interpolant()
        net = pwl_to_network(pwl, (-1.0, 7.0))
        rng = np.random.default_rng(6)
        for x in rng.uniform(-1.0, 7.0, 100):
            assert oracle.eval_model(net, np.array([x]))[0] == pytest.approx(
                pwl(x), abs=1e-9
            )

    def test_breakpoint_outside_domain_rejected(self):
        pwl = PwlFunction(s0=0.0, breakpoints=((2.0, 0.0),), y_at=0.0)
        with pytest.raises(BreakpointOutOfDomain):
            pwl_to_network(pwl, (0.0, 1.0))

    def test_geometry_roundtrip_within_domain(self):
        pwl = sine_interpolant()
        net = pwl_to_network(pwl, (-1.0, 7.0))
        rec = oracle.geometry(net)
        inside = [bp for bp in rec.breakpoints if -1.0 <= bp[0] <= 7.0]
        assert len(inside) == len(pwl.breakpoints)
        for (gx, gy), (px, py) in zip(inside, pwl.breakpoints):
            assert gx == pytest.approx(px, abs=1e-9)
            assert gy == pytest.approx(py, abs=1e-9)


class TestModelJson:
    def test_roundtrip_identity(self, tmp_path):
        rng = np.random.default_rng(7)
        model = random_model(rng, 3, (4, 2), 2, output_activation="softmax")
        path = tmp_path / "m.json"
        export_model(model, path)
        back = import_model(path)
        assert back.name == model.name
        assert len(back.layers) == len(model.layers)
        for a, b in zip(back.layers, model.layers):
            np.testing.assert_array_equal(a.weights, b.weights)
            np.testing.assert_array_equal(a.bias, b.bias)
            assert a.activation == b.activation

    def test_bias_mismatch_names_the_layer(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(
            '{"name": "bad", "layers": [{"type": "dense",'
            ' "weights": [[1.0], [2.0]], "bias": [0.0],'
            ' "activation": "relu"}]}'
        )
        with pytest.raises(InvariantViolation, match=r"layers\[0\]"):
            import_model(path)

    def test_invalid_json_reports_line(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"name": "x",\n  "layers": [}')
        with pytest.raises(ParseError, match="line 2"):
            import_model(path)

    def test_shipped_sine16_fixture(self):
        from importlib import resources

        with resources.as_file(
            resources.files("nnsql").joinpath("data/sine16.json")
        ) as path:
            model = import_model(path)
        assert model.input_dim == 1
        assert model.layers[0].out_dim == 17
        assert model.output_dim == 1

    def test_csv_export(self, tmp_path):
        graph = model_to_graph(identity_chain())
        nodes_path, edges_path = models.export_graph_csv(graph, tmp_path)
        assert nodes_path.read_text().splitlines()[0] == "id,bias,layer"
        assert edges_path.read_text().splitlines() == [
            "src,dst,weight",
            "0,1,1.0",
            "1,2,1.0",
        ]
