"""Tests for the reverse-mode tensor core."""

import math

import numpy as np
import pytest

from lab import tensor as T
from lab.probmetrics import nll_loss
from lab.tensor import Tape, Tensor, backward, finite_diff_check
from lab.tsformer import ModelConfig, TimeSeriesTransformer
from utils.error_handler import ContractError, DimensionError


def _leaf(data, name='x'):
    return Tensor(data, requires_grad=True, name=name)


def _weighted_sum(out: Tensor, seed: int = 7) -> Tensor:
    """Scalar with a non-trivial gradient for every output element."""
    weights = np.random.default_rng(seed).uniform(0.5, 1.5, size=out.shape)
    return T.sum_all(T.mul(out, Tensor(weights)))


class TestTensorBasics:
    """Construction and data handling."""

    def test_data_is_float64_and_read_only(self):
        x = Tensor([1, 2, 3])
        assert x.data.dtype == np.float64
        with pytest.raises(ValueError):
            x.data[0] = 5.0

    def test_item_requires_single_element(self):
        assert Tensor([[2.5]]).item() == 2.5
        with pytest.raises(ContractError):
            Tensor([1.0, 2.0]).item()

    def test_assign_keeps_shape(self):
        x = Tensor(np.zeros((2, 2)))
        x.assign(np.ones((2, 2)))
        assert np.array_equal(x.data, np.ones((2, 2)))
        with pytest.raises(DimensionError):
            x.assign(np.ones(3))

    def test_ops_outside_tape_are_not_recorded(self):
        x = _leaf([1.0, 2.0])
        with Tape() as tape:
            T.relu(x)
        T.relu(x)
        assert tape.ops() == ['relu']


class TestLinear:
    """linear(x, w, b) = x.w + b."""

    def test_identity(self):
        out = T.linear(Tensor([1.0, 2.0]), Tensor(np.eye(2)), Tensor([0.0, 0.0]))
        assert np.array_equal(out.data, [1.0, 2.0])

    def test_scalar_affine(self):
        out = T.linear(Tensor([3.0]), Tensor([[2.0]]), Tensor([1.0]))
        assert np.array_equal(out.data, [7.0])

    def test_hand_dot_product(self):
        out = T.linear(
            Tensor([1.0, 1.0]), Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([0.5, -0.5])
        )
        assert np.allclose(out.data, [4.5, 5.5], rtol=0, atol=1e-15)

    def test_broadcasts_over_leading_dims(self):
        x = Tensor(np.ones((2, 3, 2)))
        out = T.linear(x, Tensor(np.ones((2, 4))), Tensor(np.zeros(4)))
        assert out.shape == (2, 3, 4)
        assert np.all(out.data == 2.0)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError) as exc_info:
            T.linear(Tensor(np.ones(3)), Tensor(np.ones((2, 2))), Tensor(np.zeros(2)))
        message = str(exc_info.value)
        assert '(3,)' in message
        assert '(2, 2)' in message

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        x = _leaf(rng.standard_normal((3, 2)), 'x')
        w = _leaf(rng.standard_normal((2, 3)), 'w')
        b = _leaf(rng.standard_normal(3), 'b')

        def loss():
            out = T.linear(x, w, b)
            return T.sum_all(T.mul(out, out))

        assert finite_diff_check(loss, [x, w, b], h=1e-5) < 1e-6


class TestRelu:
    """relu forward and backward."""

    def test_forward(self):
        assert np.array_equal(T.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_all_negative_gives_zero_output_and_gradient(self):
        x = _leaf([-1.0, -2.0, -0.5])
        with Tape() as tape:
            out = T.relu(x)
            loss = T.sum_all(out)
        backward(loss, tape)
        assert np.array_equal(out.data, np.zeros(3))
        assert np.array_equal(x.grad, np.zeros(3))

    def test_upstream_gradient_passes_where_positive(self):
        x = _leaf([0.5])
        with Tape() as tape:
            loss = T.sum_all(T.scale(T.relu(x), 3.0))
        backward(loss, tape)
        assert x.grad[0] == pytest.approx(3.0)

    def test_finite_difference(self):
        x = _leaf([0.5, -0.7, 1.3])
        assert finite_diff_check(lambda: _weighted_sum(T.relu(x)), [x]) < 1e-6


class TestSoftmax:
    """Numerically stabilized softmax."""

    def test_uniform(self):
        out = T.softmax(Tensor([0.0, 0.0, 0.0]))
        assert np.allclose(out.data, [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_closed_form(self):
        out = T.softmax(Tensor([0.0, math.log(3.0)]))
        assert np.allclose(out.data, [0.25, 0.75], rtol=0, atol=1e-15)

    def test_shift_invariance(self):
        x = np.random.default_rng(1).standard_normal((4, 5))
        a = T.softmax(Tensor(x)).data
        b = T.softmax(Tensor(x + 123.456)).data
        assert np.max(np.abs(a - b)) < 1e-12

    def test_rows_sum_to_one(self):
        x = np.random.default_rng(2).standard_normal((3, 6)) * 10
        out = T.softmax(Tensor(x), axis=-1).data
        assert np.max(np.abs(out.sum(axis=-1) - 1.0)) < 1e-12

    def test_large_values_do_not_overflow(self):
        out = T.softmax(Tensor([1000.0, 1000.0])).data
        assert np.allclose(out, [0.5, 0.5])

    def test_finite_difference(self):
        x = _leaf(np.random.default_rng(3).standard_normal((2, 4)))
        assert finite_diff_check(lambda: _weighted_sum(T.softmax(x)), [x]) < 1e-6


class TestLayerNorm:
    """Per-row standardization then affine."""

    def test_constant_row_maps_to_zero(self):
        out = T.layer_norm(Tensor([[3.0, 3.0, 3.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        assert np.array_equal(out.data, np.zeros((1, 3)))

    def test_unit_variance_row(self):
        out = T.layer_norm(Tensor([1.0, -1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
        assert np.allclose(out.data, [1.0, -1.0], atol=1e-5)

    def test_zero_gain_gives_bias(self):
        bias = np.array([0.1, -0.2, 0.3])
        out = T.layer_norm(
            Tensor(np.random.default_rng(0).standard_normal((2, 3))),
            Tensor(np.zeros(3)),
            Tensor(bias),
        )
        assert np.array_equal(out.data, np.broadcast_to(bias, (2, 3)))

    def test_finite_difference(self):
        rng = np.random.default_rng(4)
        x = _leaf(rng.standard_normal((3, 4)), 'x')
        gain = _leaf(rng.uniform(0.5, 1.5, 4), 'gain')
        bias = _leaf(rng.standard_normal(4), 'bias')
        err = finite_diff_check(lambda: _weighted_sum(T.layer_norm(x, gain, bias)), [x, gain, bias])
        assert err < 1e-6


class TestOtherPrimitives:
    """Gradients of the remaining primitives."""

    def test_matmul_and_transpose(self):
        rng = np.random.default_rng(5)
        a = _leaf(rng.standard_normal((2, 3, 4)), 'a')
        b = _leaf(rng.standard_normal((2, 3, 4)), 'b')

        def loss():
            return _weighted_sum(T.matmul(a, T.transpose(b, (0, 2, 1))))

        assert finite_diff_check(loss, [a, b]) < 1e-6

    def test_softplus(self):
        x = _leaf([-3.0, 0.0, 2.0, 40.0])
        assert T.softplus(Tensor([0.0])).data[0] == pytest.approx(math.log(2.0), abs=1e-15)
        assert finite_diff_check(lambda: _weighted_sum(T.softplus(x)), [x]) < 1e-6

    def test_masked_fill_blocks_gradient(self):
        x = _leaf([1.0, 2.0, 3.0])
        keep = np.array([True, False, True])
        with Tape() as tape:
            loss = T.sum_all(T.masked_fill(x, keep, -5.0))
        backward(loss, tape)
        assert np.array_equal(x.grad, [1.0, 0.0, 1.0])

    def test_reshape_mean_and_broadcast_add(self):
        rng = np.random.default_rng(6)
        x = _leaf(rng.standard_normal((2, 3)), 'x')
        b = _leaf(rng.standard_normal(3), 'b')

        def loss():
            y = T.add(T.matmul(T.reshape(x, (3, 2)), Tensor(np.ones((2, 3)))), b)
            return T.mean_all(T.mul(y, y))

        assert finite_diff_check(loss, [x, b]) < 1e-6

    def test_broadcast_mismatch_raises(self):
        with pytest.raises(DimensionError):
            T.add(Tensor(np.ones(3)), Tensor(np.ones(2)))


class TestBackward:
    """backward() contract and accumulation."""

    def test_sum_gives_all_ones(self):
        x = _leaf(np.random.default_rng(0).standard_normal((2, 3)))
        with Tape() as tape:
            loss = T.sum_all(x)
        grads = backward(loss, tape)
        assert np.array_equal(grads['x'], np.ones((2, 3)))

    def test_non_scalar_loss_is_rejected(self):
        x = _leaf([1.0, 2.0])
        with Tape() as tape:
            out = T.scale(x, 2.0)
        with pytest.raises(ContractError):
            backward(out, tape)

    def test_loss_off_tape_is_rejected(self):
        x = _leaf([1.0, 2.0])
        loss = T.sum_all(x)
        with pytest.raises(ContractError):
            backward(loss, Tape())

    def test_gradient_shapes_match_parameters(self):
        config = ModelConfig(d_model=4, n_heads=2, n_layers=1, seq_len=5)
        model = TimeSeriesTransformer.initialize(config, seed=0)
        inputs = np.random.default_rng(0).standard_normal((2, 5))
        with Tape() as tape:
            loss = nll_loss(model.forward(inputs), inputs)
        grads = backward(loss, tape)
        assert set(grads) == set(model.params)
        for name, grad in grads.items():
            assert grad.shape == model.params[name].shape

    def test_backward_is_deterministic(self):
        config = ModelConfig(d_model=4, n_heads=2, n_layers=1, seq_len=5)
        inputs = np.random.default_rng(1).standard_normal((3, 5))
        results = []
        for _ in range(2):
            model = TimeSeriesTransformer.initialize(config, seed=3)
            with Tape() as tape:
                loss = nll_loss(model.forward(inputs), inputs)
            results.append((loss.item(), backward(loss, tape)))
        assert results[0][0] == results[1][0]
        for name in results[0][1]:
            assert np.array_equal(results[0][1][name], results[1][1][name])


class TestFiniteDiffCheck:
    """The gradient oracle itself."""

    def test_quadratic(self):
        x = _leaf([1.0])
        assert finite_diff_check(lambda: T.sum_all(T.mul(x, x)), [x], h=1e-5) < 1e-8

    def test_rejects_non_positive_step(self):
        from utils.error_handler import ArgumentError

        x = _leaf([1.0])
        with pytest.raises(ArgumentError):
            finite_diff_check(lambda: T.sum_all(x), [x], h=0.0)

    def test_restores_parameter_values(self):
        x = _leaf([1.0, -2.0])
        finite_diff_check(lambda: _weighted_sum(T.mul(x, x)), [x])
        assert np.array_equal(x.data, [1.0, -2.0])

    def test_rejects_non_positive_floor(self):
        from utils.error_handler import ArgumentError

        x = _leaf([1.0])
        with pytest.raises(ArgumentError):
            finite_diff_check(lambda: T.sum_all(x), [x], floor=0.0)

    def test_gradients_below_roundoff_pass(self):
        """Elements with gradients near 1e-8 are judged against the floor, not their own size."""
        x = _leaf(np.linspace(-1.0, 1.0, 6))
        offset = Tensor(np.full(6, 0.1 / 6))

        def loss():
            return T.sum_all(T.add(T.scale(T.mul(x, x), 1e-8), offset))

        assert finite_diff_check(loss, [x], h=1e-5) < 1e-4

    def test_wrong_gradient_is_still_caught(self):
        x = _leaf([0.5, -1.5, 2.0])

        def loss():
            def backward_fn(g):
                return (g * 3.0 * x.data,)  # true gradient is 2x

            value = np.asarray(float(np.sum(x.data**2)))
            return T.custom_op('bad_square', (x,), value, backward_fn)

        assert finite_diff_check(loss, [x]) > 0.1

    def test_full_model_nll(self):
        """Two-layer d_model=8 model over 16 steps: analytic and central-difference gradients agree."""
        config = ModelConfig(d_model=8, n_heads=2, n_layers=2, seq_len=16)
        model = TimeSeriesTransformer.initialize(config, seed=11)
        rng = np.random.default_rng(12)
        inputs = rng.standard_normal((2, 16))
        targets = rng.standard_normal((2, 16))

        def loss():
            return nll_loss(model.forward(inputs), targets)

        assert finite_diff_check(loss, model.parameters(), h=1e-5) < 1e-4
