import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from gradcheck import check_network_instance, numeric_input_grads, rel_error
from negonets.neural import (
    AdamState,
    ConfigurationError,
    EarlyStopState,
    Mlp,
    ShapeError,
    TrainingError,
    adam_step,
    backward,
    dumps_mlp,
    early_stop_update,
    forward,
    load_mlp,
    loads_mlp,
    mlp_init,
    save_mlp,
)


def zero_net(input_dim=3, hidden=(4, 4, 4)):
    net = mlp_init(input_dim, hidden, 0)
    return net.with_params([np.zeros_like(p) for p in net.params()])


class TestInit:
    def test_layer_shapes(self):
        net = mlp_init(3, [16, 16, 16], 42)
        assert net.layer_shapes == [(3, 16), (16, 16), (16, 16), (16, 1)]
        assert net.depth == 4
        assert net.activations == ["softplus"] * 3 + ["sigmoid"]

    def test_deterministic(self):
        a, b = mlp_init(3, [16, 16, 16], 42), mlp_init(3, [16, 16, 16], 42)
        for pa, pb in zip(a.params(), b.params()):
            assert np.array_equal(pa, pb)

    def test_different_seeds_differ(self):
        a, b = mlp_init(3, [8], 1), mlp_init(3, [8], 2)
        assert not np.array_equal(a.weights[0], b.weights[0])

    def test_biases_zero_and_fan_in_scale(self):
        net = mlp_init(200, [400], 0)
        assert all(np.all(b == 0) for b in net.biases)
        # sample std of 80k draws is within a few percent of sqrt(2/200)
        assert net.weights[0].std() == pytest.approx(np.sqrt(2 / 200), rel=0.02)

    @pytest.mark.parametrize("dim,widths", [(0, [16]), (3, []), (3, [4, 0])])
    def test_bad_config(self, dim, widths):
        with pytest.raises(ConfigurationError):
            mlp_init(dim, widths, 1)


class TestForward:
    def test_zero_weights_give_half(self):
        out, _ = forward(zero_net(), np.random.default_rng(0).standard_normal((7, 3)))
        assert np.all(out == 0.5)

    def test_matches_straight_line_oracle(self):
        net = mlp_init(3, [16, 16, 16], 42)
        x = np.array([[0.3, -1.2, 0.7], [1.0, 0.0, -0.5]])
        out, _ = forward(net, x)
        for row, value in zip(x, out):
            ref = oracles.mlp_forward([w.tolist() for w in net.weights], [b.tolist() for b in net.biases], row)
            assert value == pytest.approx(ref, rel=1e-12, abs=1e-15)

    def test_single_vector_is_a_batch_of_one(self):
        net = mlp_init(2, [3], 0)
        assert forward(net, [0.1, 0.2])[0].shape == (1,)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            forward(mlp_init(3, [4], 0), np.zeros((2, 4)))

    def test_trace_depth(self):
        net = mlp_init(3, [5, 6], 0)
        _, trace = forward(net, np.zeros((4, 3)))
        assert len(trace.pre) == len(trace.post) == net.depth
        assert [z.shape for z in trace.pre] == [(4, 5), (4, 6), (4, 1)]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-1e3, 1e3))
    def test_output_in_open_unit_interval(self, seed, scale):
        net = mlp_init(3, [8, 8], seed)
        x = scale * np.random.default_rng(seed).standard_normal((16, 3))
        out, _ = forward(net, x)
        assert np.all((out > 0) & (out < 1))


class TestBackward:
    def test_zero_output_grad(self):
        net = mlp_init(3, [5, 5], 3)
        _, trace = forward(net, np.ones((4, 3)))
        grads, gin = backward(net, trace, np.zeros(4))
        assert all(np.all(g == 0) for g in grads) and np.all(gin == 0)

    def test_shapes_mirror_parameters(self):
        net = mlp_init(3, [5, 2], 3)
        _, trace = forward(net, np.ones((4, 3)))
        grads, gin = backward(net, trace, np.ones(4))
        assert [g.shape for g in grads] == [p.shape for p in net.params()]
        assert gin.shape == (4, 3)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(7)
        assert max(check_network_instance(rng) for _ in range(20)) < 1e-4

    def test_price_input_gradient(self):
        buyer = mlp_init(4, [16, 16, 16], 5)
        x = np.random.default_rng(0).uniform(0, 1, (6, 4))
        _, trace = forward(buyer, x)
        _, gin = backward(buyer, trace, np.ones(6))
        num = numeric_input_grads(lambda z: float(np.sum(forward(buyer, z)[0])), x)
        assert rel_error(gin[:, -1], num[:, -1]) < 1e-4

    def test_mismatched_trace(self):
        a, b = mlp_init(3, [5], 0), mlp_init(3, [6], 0)
        _, trace = forward(a, np.ones((2, 3)))
        with pytest.raises(ShapeError):
            backward(b, trace, np.ones(2))

    def test_wrong_output_grad_length(self):
        net = mlp_init(3, [5], 0)
        _, trace = forward(net, np.ones((2, 3)))
        with pytest.raises(ShapeError):
            backward(net, trace, np.ones(3))


class TestAdam:
    def test_zero_gradient(self):
        params = [np.array([1.0, -2.0])]
        state = AdamState.for_params(params, lr=0.1)
        new, state = adam_step(state, params, [np.zeros(2)])
        assert np.array_equal(new[0], params[0]) and state.step == 1

    def test_first_step_hand_computed(self):
        # m = 0.1, v = 0.001; bias-corrected m_hat = 1, v_hat = 1
        params = [np.array([0.0])]
        state = AdamState.for_params(params, lr=0.1)
        new, _ = adam_step(state, params, [np.array([1.0])])
        assert new[0][0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)

    def test_second_step_hand_computed(self):
        params = [np.array([0.0])]
        state = AdamState.for_params(params, lr=0.1)
        params, state = adam_step(state, params, [np.array([1.0])])
        params, state = adam_step(state, params, [np.array([3.0])])
        m = 0.9 * 0.1 + 0.1 * 3.0
        v = 0.999 * 0.001 + 0.001 * 9.0
        m_hat, v_hat = m / (1 - 0.9**2), v / (1 - 0.999**2)
        expected = -0.1 / (1 + 1e-8) - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
        assert params[0][0] == pytest.approx(expected, abs=1e-14)
        assert state.step == 2

    @given(st.floats(-10, 10).filter(lambda g: abs(g) > 1e-6))
    def test_maximize_mirrors_minimize(self, g):
        params = [np.array([0.5])]
        down, _ = adam_step(AdamState.for_params(params), params, [np.array([g])])
        up, _ = adam_step(AdamState.for_params(params), params, [np.array([g])], maximize=True)
        assert down[0][0] - 0.5 == pytest.approx(-(up[0][0] - 0.5), abs=1e-15)

    def test_quadratic_loss_non_increasing(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(0.5, 2.0, 5)
        target = rng.standard_normal(5)
        params = [np.zeros(5)]
        state = AdamState.for_params(params, lr=1e-2)
        loss = lambda w: float(np.sum(a * (w - target) ** 2))
        prev = loss(params[0])
        for _ in range(1000):
            params, state = adam_step(state, params, [2 * a * (params[0] - target)])
            cur = loss(params[0])
            assert cur <= prev + 1e-8
            prev = cur

    def test_non_finite_gradient(self):
        params = [np.zeros(2)]
        with pytest.raises(TrainingError, match="non-finite"):
            adam_step(AdamState.for_params(params), params, [np.array([np.nan, 0.0])])

    def test_shape_mismatch(self):
        params = [np.zeros(2)]
        with pytest.raises(ShapeError):
            adam_step(AdamState.for_params(params), params, [np.zeros(3)])


class TestEarlyStop:
    def test_strictly_decreasing_never_stops(self):
        state = EarlyStopState(patience=3)
        for k in range(50):
            state, stop = early_stop_update(state, 1.0 / (k + 1), {"epoch": k})
            assert not stop
            assert state.best_params == {"epoch": k}

    def test_constant_losses_stop_after_patience_plus_one(self):
        state = EarlyStopState(patience=5)
        state, stop = early_stop_update(state, 1.0, "first")
        epochs = 0
        while not stop:
            state, stop = early_stop_update(state, 1.0, "later")
            epochs += 1
        assert epochs == 6
        assert state.best_params == "first"

    def test_sub_tolerance_improvement_does_not_count(self):
        state, _ = early_stop_update(EarlyStopState(), 1.0, "a")
        state, _ = early_stop_update(state, 1.0 - 5e-7, "b")
        assert state.since_improvement == 1 and state.best_params == "a"

    def test_snapshot_is_a_copy(self):
        params = [np.zeros(2)]
        state, _ = early_stop_update(EarlyStopState(), 1.0, params)
        params[0][0] = 9.0
        assert state.best_params[0][0] == 0.0

    @given(st.lists(st.floats(0, 10), min_size=1, max_size=40))
    def test_best_loss_non_increasing(self, losses):
        state = EarlyStopState(patience=100)
        best = []
        for v in losses:
            state, _ = early_stop_update(state, v, None)
            best.append(state.best_loss)
            assert state.since_improvement <= state.patience
        assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))

    def test_non_finite_loss(self):
        with pytest.raises(TrainingError):
            early_stop_update(EarlyStopState(), float("nan"), None)


class TestCheckpoint:
    def test_bit_exact_round_trip(self, tmp_path):
        net = mlp_init(4, [16, 16, 16], 9)
        save_mlp(net, tmp_path / "net.mlp")
        back = load_mlp(tmp_path / "net.mlp")
        assert back.activations == net.activations
        for a, b in zip(net.params(), back.params()):
            assert a.shape == b.shape and np.array_equal(a, b)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 5), st.lists(st.integers(1, 6), min_size=1, max_size=3), st.integers(0, 999))
    def test_round_trip_property(self, dim, widths, seed):
        net = mlp_init(dim, widths, seed)
        back = loads_mlp(dumps_mlp(net))
        assert all(np.array_equal(a, b) for a, b in zip(net.params(), back.params()))

    def test_header_is_versioned(self):
        text = dumps_mlp(mlp_init(2, [3], 0))
        assert text.splitlines()[0] == "negonets-mlp 1"
        assert text.splitlines()[2] == "layer 0 2 3 softplus"

    @pytest.mark.parametrize("text", ["", "other 1\n", "negonets-mlp 2\ndepth 1\n", "negonets-mlp 1\ndepth 2\n"])
    def test_malformed(self, text):
        with pytest.raises(ConfigurationError):
            loads_mlp(text)

    def test_with_params_rejects_wrong_shapes(self):
        net = mlp_init(2, [3], 0)
        with pytest.raises(ShapeError):
            net.with_params([np.zeros((3, 3)), np.zeros(3), np.zeros((3, 1)), np.zeros(1)])
        with pytest.raises(ShapeError):
            net.with_params(net.params()[:2])

    def test_call_matches_forward(self):
        net = mlp_init(2, [3], 0)
        x = np.ones((2, 2))
        assert np.array_equal(net(x), forward(net, x)[0])
        assert isinstance(net, Mlp)
