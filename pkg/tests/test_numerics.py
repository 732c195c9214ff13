import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from causalrec.errors import ContractError, DimensionError, NumericError, TapeError
from causalrec.numerics import Tape, Tensor, gradcheck, ops


def leaf(x):
    return Tensor(np.asarray(x, dtype=float), requires_grad=True)


class TestTensor:
    def test_data_is_float64_copy(self):
        src = np.array([1, 2, 3])
        t = Tensor(src)
        src[0] = 9
        assert t.data.dtype == np.float64
        assert t.data[0] == 1.0

    def test_grad_shape_matches_data(self):
        t = leaf(np.zeros((2, 3)))
        assert t.grad.shape == t.shape

    def test_non_finite_forward_is_an_error(self):
        with pytest.raises(NumericError):
            ops.div(Tensor([1.0]), Tensor([0.0]))


class TestTape:
    def test_reverse_visit_order(self):
        x = leaf([1.0, 2.0])
        with Tape() as tape:
            a = ops.mul(x, 2.0)
            b = ops.add(a, 1.0)
            loss = ops.sum(b)
        tape.backward(loss)
        assert tape.visit_order == sorted(tape.visit_order, reverse=True)
        assert tape.visit_order == list(range(len(tape) - 1, -1, -1))

    def test_second_backward_raises(self):
        x = leaf([1.0])
        with Tape() as tape:
            loss = ops.sum(ops.mul(x, x))
        tape.backward(loss)
        with pytest.raises(TapeError):
            tape.backward(loss)

    def test_non_scalar_loss_rejected(self):
        x = leaf([1.0, 2.0])
        with Tape() as tape:
            y = ops.mul(x, 3.0)
        with pytest.raises(ContractError):
            tape.backward(y)

    def test_sum_gradient_is_ones(self):
        x = leaf(np.arange(6.0).reshape(2, 3))
        with Tape() as tape:
            loss = ops.sum(x)
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_no_recording_outside_tape(self):
        y = ops.add(leaf([1.0]), 1.0)
        assert not y.requires_grad


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(ops.matmul(np.eye(2), a).data, a)

    def test_row_times_column(self):
        assert ops.matmul([[1.0, 2.0]], [[3.0], [4.0]]).data.tolist() == [[11.0]]

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ops.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_sum_gradient_matches_ones_bt(self, rng):
        a, b = rng.standard_normal((4, 3)), rng.standard_normal((3, 5))
        A = leaf(a)
        with Tape() as tape:
            loss = ops.sum(ops.matmul(A, Tensor(b)))
        tape.backward(loss)
        np.testing.assert_allclose(A.grad, np.ones((4, 5)) @ b.T, rtol=1e-12)
        assert gradcheck(lambda x, y: ops.matmul(x, y), [a, b]) < 1e-4


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(ops.softmax_rows(np.zeros(3)).data, [1 / 3] * 3)

    def test_masked_entry(self):
        np.testing.assert_array_equal(ops.softmax_rows(np.array([-np.inf, 0.0])).data, [0.0, 1.0])

    def test_hand_values(self):
        e = [math.exp(v) for v in (1, 2, 3)]
        expected = [v / sum(e) for v in e]
        got = ops.softmax_rows(np.array([1.0, 2.0, 3.0])).data
        np.testing.assert_allclose(got, expected, atol=1e-12)
        np.testing.assert_allclose(got, [0.09003, 0.24473, 0.66524], atol=1e-5)

    def test_fully_masked_row_is_zero(self):
        out = ops.softmax_rows(np.full((2, 3), -np.inf)).data
        assert np.all(out == 0.0)

    def test_nan_rejected(self):
        with pytest.raises(NumericError):
            ops.softmax_rows(np.array([np.nan, 1.0]))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)))
    def test_rows_sum_to_one(self, x):
        y = ops.softmax_rows(x).data
        assert np.all(y >= 0)
        np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (4,), elements=st.floats(-20, 20)), st.floats(-100, 100))
    def test_shift_invariant(self, x, c):
        np.testing.assert_allclose(ops.softmax_rows(x).data, ops.softmax_rows(x + c).data, atol=1e-12)


class TestLayerNorm:
    def test_constant_row_collapses_to_bias(self):
        out = ops.layer_norm(np.ones(4), np.ones(4), np.zeros(4)).data
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_standardises(self):
        out = ops.layer_norm(np.array([-1.0, 1.0]), np.ones(2), np.zeros(2), eps=1e-12).data
        np.testing.assert_allclose(out, [-1.0, 1.0], atol=1e-9)

    def test_affine(self):
        out = ops.layer_norm(np.array([0.0, 2.0]), np.full(2, 2.0), np.ones(2), eps=1e-12).data
        np.testing.assert_allclose(out, [-1.0, 3.0], atol=1e-9)

    def test_needs_two_features(self):
        with pytest.raises(ContractError):
            ops.layer_norm(np.ones((3, 1)), np.ones(1), np.zeros(1))

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (2, 6), elements=st.floats(-10, 10)))
    def test_zero_mean_rows(self, x):
        if np.ptp(x, axis=1).min() < 1e-3:
            return
        y = ops.layer_norm(x, np.ones(6), np.zeros(6)).data
        np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-9)
        var = x.var(axis=1)
        np.testing.assert_allclose(y.var(axis=1), var / (var + 1e-8), rtol=1e-9)


class TestDropout:
    def test_p_zero_is_identity(self, rng):
        x = rng.standard_normal((3, 4))
        np.testing.assert_array_equal(ops.dropout(x, 0.0, True, rng).data, x)

    def test_eval_mode_is_identity(self, rng):
        x = rng.standard_normal((3, 4))
        np.testing.assert_array_equal(ops.dropout(x, 0.7, False, rng).data, x)

    def test_inverted_scaling_preserves_mean(self, rng):
        out = ops.dropout(np.ones(100_000), 0.5, True, rng).data
        assert 0.98 <= out.mean() <= 1.02

    def test_bad_rate(self, rng):
        with pytest.raises(ContractError):
            ops.dropout(np.ones(3), 1.0, True, rng)


class TestExpm:
    def test_zero(self):
        np.testing.assert_array_equal(ops.expm_array(np.zeros((3, 3))), np.eye(3))

    def test_nilpotent(self):
        np.testing.assert_allclose(ops.expm_array(np.array([[0.0, 1.0], [0.0, 0.0]])), [[1, 1], [0, 1]], atol=1e-15)

    def test_involution(self):
        c, s = math.cosh(1.0), math.sinh(1.0)
        got = ops.expm_array(np.array([[0.0, 1.0], [1.0, 0.0]]))
        np.testing.assert_allclose(got, [[c, s], [s, c]], atol=1e-12)

    @pytest.mark.parametrize("scale", [0.01, 0.3, 1.0, 4.0, 12.0])
    def test_matches_scipy(self, rng, scale):
        m = scale * rng.standard_normal((6, 6))
        ref = scipy.linalg.expm(m)
        np.testing.assert_allclose(ops.expm_array(m), ref, rtol=1e-10, atol=1e-12 * np.abs(ref).max())

    def test_commuting_exponent_adds(self, rng):
        a = rng.standard_normal((4, 4)) * 0.5
        np.testing.assert_allclose(
            ops.expm_array(2 * a), ops.expm_array(a) @ ops.expm_array(a), rtol=1e-10, atol=1e-12
        )

    def test_overflow_is_reported(self):
        with pytest.raises(NumericError):
            ops.expm_array(np.full((2, 2), 1e4))

    def test_gradient(self, rng):
        m = rng.uniform(-0.5, 0.5, (4, 4))
        assert gradcheck(lambda x: ops.expm(x), [m]) < 1e-6


@pytest.mark.parametrize(
    "fn,shapes",
    [
        (lambda a, b: ops.mul(a, b), [(3, 4), (4,)]),
        (lambda a, b: ops.div(a, b), [(2, 3), (2, 3)]),
        (lambda a: ops.log_sigmoid(a), [(5,)]),
        (lambda a: ops.mean(a, axis=0), [(3, 2)]),
        (lambda a: ops.transpose(a), [(2, 5)]),
        (lambda a: ops.getitem(a, (slice(None), 1)), [(3, 4)]),
        (lambda a: ops.trace(a), [(4, 4)]),
    ],
)
def test_elementary_gradients(rng, fn, shapes):
    inputs = [rng.uniform(0.5, 1.5, s) for s in shapes]
    assert gradcheck(fn, inputs) < 1e-6


def test_take_rows_scatters_gradient():
    table = leaf(np.arange(8.0).reshape(4, 2))
    with Tape() as tape:
        loss = ops.sum(ops.take_rows(table, np.array([1, 1, 3])))
    tape.backward(loss)
    np.testing.assert_array_equal(table.grad, [[0, 0], [2, 2], [0, 0], [1, 1]])


def test_take_rows_rejects_out_of_range():
    with pytest.raises(ContractError):
        ops.take_rows(np.ones((3, 2)), np.array([3]))


def test_log_sigmoid_is_stable():
    out = ops.log_sigmoid(np.array([-800.0, 0.0, 800.0])).data
    np.testing.assert_allclose(out, [-800.0, -math.log(2.0), 0.0], atol=1e-12)
