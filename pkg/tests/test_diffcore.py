import numpy as np
import pytest

from banf import diffcore as dc
from banf.errors import ConfigError, NumericError, UsageError


def _mlp_params(spec, rng, scale=0.5):
    return dc.ParamStore({n: rng.normal(0.0, scale, size=s) for n, s in spec.param_shapes().items()})


class TestParamStore:
    def test_order_is_insertion_order(self):
        store = dc.ParamStore({"b": np.zeros(2), "a": np.ones(3)})
        assert store.names() == ["b", "a"]

    def test_assign_rejects_shape_change(self):
        store = dc.ParamStore({"w": np.zeros((2, 2))})
        with pytest.raises(ConfigError):
            store.assign("w", np.zeros(4))

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(NumericError):
            dc.ParamStore({"w": np.array([0.0, bad])})
        store = dc.ParamStore({"w": np.zeros(2)})
        with pytest.raises(NumericError):
            store.assign("w", np.array([bad, 0.0]))

    def test_copy_is_deep(self):
        store = dc.ParamStore({"w": np.zeros(3)})
        twin = store.copy()
        store.subtract_("w", np.ones(3))
        assert np.all(twin["w"] == 0.0)
        assert not store.equals(twin)


class TestMLP:
    def test_zero_network_outputs_zero(self):
        spec = dc.MLPSpec((3, 8, 8, 2))
        params = dc.ParamStore({n: np.zeros(s) for n, s in spec.param_shapes().items()})
        x = np.random.default_rng(0).normal(size=(5, 3))
        assert np.all(dc.mlp_forward(dc.Tape(), params, spec, x).value == 0.0)

    def test_single_affine_layer(self):
        spec = dc.MLPSpec((1, 1))
        params = dc.ParamStore({"mlp.0.weight": [[2.0]], "mlp.0.bias": [1.0]})
        out = dc.mlp_forward(dc.Tape(), params, spec, np.array([[3.0]]))
        assert out.value.tolist() == [[7.0]]

    @pytest.mark.parametrize("act", ["relu", "softplus", "identity"])
    def test_two_layer_gradients_match_finite_differences(self, act):
        rng = np.random.default_rng(1)
        spec = dc.MLPSpec((3, 6, 1), activation=act)
        params = _mlp_params(spec, rng)
        x = rng.normal(size=(4, 3))

        def loss(tape, p):
            return dc.mlp_forward(tape, p, spec, x)

        # scalar output per row; gradcheck sums the output
        assert dc.gradcheck(loss, params, probes=40, h=1e-5, rtol=1e-4, atol=1e-8) <= 1e-4

    def test_shape_mismatch_is_config_error(self):
        spec = dc.MLPSpec((3, 4, 1))
        params = dc.ParamStore({n: np.zeros(s) for n, s in spec.param_shapes().items()})
        with pytest.raises(ConfigError):
            dc.mlp_forward(dc.Tape(), params, dc.MLPSpec((2, 4, 1)), np.zeros((1, 2)))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_layer_is_named(self):
        spec = dc.MLPSpec((1, 1, 1), activation="identity")
        params = dc.ParamStore({"mlp.0.weight": [[1e200]], "mlp.0.bias": [0.0],
                                "mlp.1.weight": [[1e200]], "mlp.1.bias": [0.0]})
        with pytest.raises(NumericError, match="layer 1"):
            dc.mlp_forward(dc.Tape(), params, spec, np.array([[1e10]]))


class TestBackward:
    def test_zero_gradient_at_target(self):
        spec = dc.MLPSpec((2, 4, 1))
        rng = np.random.default_rng(2)
        params = _mlp_params(spec, rng)
        x = rng.normal(size=(3, 2))
        target = dc.mlp_forward(dc.Tape(record=False), params, spec, x).value
        tape = dc.Tape()
        grads = tape.backward(dc.sse(dc.mlp_forward(tape, params, spec, x), target), params=params)
        assert all(np.all(g == 0.0) for g in grads.values())

    def test_affine_chain_rule(self):
        x = np.array([[1.5, -2.0]])
        params = dc.ParamStore({"w": np.array([[0.3], [0.7]]), "b": np.array([0.1])})
        tape = dc.Tape()
        y = dc.affine(tape.constant(x), tape.param(params, "w"), tape.param(params, "b"))
        grads = tape.backward(y, seed=np.ones((1, 1)))
        assert grads["b"].tolist() == [1.0]
        np.testing.assert_array_equal(grads["w"], x.T)

    def test_backward_without_forward(self):
        tape = dc.Tape()
        with pytest.raises(UsageError):
            tape.backward(tape.constant(1.0))

    def test_untouched_parameters_get_exact_zeros(self):
        params = dc.ParamStore({"used": np.ones((2, 2)), "unused": np.ones(5)})
        tape = dc.Tape()
        loss = dc.sse(tape.param(params, "used"), np.zeros((2, 2)))
        grads = tape.backward(loss, params=params)
        assert grads["unused"].shape == (5,)
        assert np.all(grads["unused"] == 0.0)

    def test_gather_composite_gradients(self):
        rng = np.random.default_rng(3)
        spec = dc.MLPSpec((2, 5, 1), activation="softplus")
        params = _mlp_params(spec, rng)
        params.add("table", rng.normal(size=(7, 2)))
        idx = rng.integers(0, 7, size=(9, 4))
        w = rng.uniform(size=(9, 4))

        def loss(tape, p):
            feat = dc.gather(tape.param(p, "table"), idx, w)
            return dc.mse(dc.mlp_forward(tape, p, spec, feat), np.zeros((9, 1)))

        assert dc.gradcheck(loss, params, probes=50) <= 1e-4

    def test_gather_scatter_accumulates_duplicates(self):
        params = dc.ParamStore({"t": np.zeros((3, 1))})
        tape = dc.Tape()
        out = dc.gather(tape.param(params, "t"), np.array([[1, 1], [1, 2]]), np.array([[0.25, 0.5], [1.0, 2.0]]))
        grads = tape.backward(out, seed=np.ones((2, 1)))
        assert grads["t"][:, 0].tolist() == [0.0, 1.75, 2.0]


class TestOptimizers:
    def test_sgd_update(self):
        params = dc.ParamStore({"p": [0.0]})
        dc.optimizer_step(params, {"p": np.array([1.0])}, dc.OptState("sgd", lr=0.1))
        assert params["p"].tolist() == [-0.1]

    @pytest.mark.parametrize("g", [1e-3, 0.5, -7.0, 1e4])
    def test_adam_first_step_is_lr(self, g):
        params = dc.ParamStore({"p": [0.0]})
        dc.optimizer_step(params, {"p": np.array([g])}, dc.OptState("adam", lr=0.01))
        assert params["p"][0] == pytest.approx(-0.01 * np.sign(g), rel=1e-4)

    def test_rmsprop_arithmetic(self):
        params = dc.ParamStore({"p": [0.0]})
        state = dc.OptState("rmsprop", lr=0.01, decay=0.9, eps=1e-8)
        dc.optimizer_step(params, {"p": np.array([2.0])}, state)
        assert state.second["p"][0] == pytest.approx(0.4, abs=1e-15)
        assert params["p"][0] == pytest.approx(-0.01 * 2.0 / np.sqrt(0.4 + 1e-8), rel=1e-12)
        assert params["p"][0] == pytest.approx(-0.03162, abs=1e-5)

    def test_non_finite_gradient_names_parameter(self):
        params = dc.ParamStore({"good": [0.0], "bad": [0.0]})
        with pytest.raises(NumericError, match="bad"):
            dc.optimizer_step(params, {"good": np.array([1.0]), "bad": np.array([np.nan])}, dc.OptState())

    def test_unknown_parameter(self):
        with pytest.raises(ConfigError):
            dc.optimizer_step(dc.ParamStore({"p": [0.0]}), {"q": np.array([1.0])}, dc.OptState())

    @pytest.mark.parametrize("algo", ["sgd", "rmsprop", "adam"])
    def test_accumulator_shapes_mirror_params(self, algo):
        params = dc.ParamStore({"w": np.ones((3, 2)), "b": np.ones(2)})
        state = dc.OptState(algo, lr=0.1)
        dc.optimizer_step(params, {"w": np.ones((3, 2)), "b": np.ones(2)}, state)
        for acc in (state.first, state.second):
            for name, value in acc.items():
                assert value.shape == params[name].shape

    def test_invalid_eps(self):
        with pytest.raises(ConfigError):
            dc.OptState("adam", eps=0.0)

    def test_training_is_bit_reproducible(self):
        def run():
            rng = np.random.default_rng(5)
            spec = dc.MLPSpec((2, 8, 1))
            params = _mlp_params(spec, rng)
            state = dc.OptState("adam", lr=1e-2)
            for _ in range(20):
                x = rng.normal(size=(16, 2))
                tape = dc.Tape()
                loss = dc.mse(dc.mlp_forward(tape, params, spec, x), np.sin(x[:, :1]))
                dc.optimizer_step(params, tape.backward(loss, params=params), state)
            return params

        assert run().equals(run())
