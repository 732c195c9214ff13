import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from causalrec.causal import (
    CausalState,
    acyclicity_penalty,
    batch_covariance,
    dag_loss,
    edge_list,
    extract_relation_matrix,
    l1_penalty,
    matrix_from_text,
    matrix_to_text,
    update_multipliers,
)
from causalrec.errors import ContractError, DimensionError
from causalrec.numerics import Tape, Tensor, gradcheck
from causalrec.scmlab import is_dag


class TestCovariance:
    def test_zero(self):
        assert np.all(batch_covariance(np.zeros((3, 4, 2))).W.data == 0)

    def test_single_sample_outer_product(self):
        W = batch_covariance(np.array([[[1.0], [2.0]]])).W.data
        np.testing.assert_array_equal(W, [[1.0, 2.0], [2.0, 4.0]])

    def test_independent_positions(self, rng):
        W = batch_covariance(rng.standard_normal((1000, 3, 1))).W.data
        off = W[~np.eye(3, dtype=bool)]
        assert np.all(np.abs(off) < 0.1)
        assert np.all(np.abs(np.diag(W) - 1.0) < 0.1)

    def test_rank_checked(self):
        with pytest.raises(DimensionError):
            batch_covariance(np.zeros((3, 4)))

    def test_gradient(self, rng):
        assert gradcheck(lambda z: batch_covariance(z).W, [rng.standard_normal((3, 4, 2))]) < 1e-6

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (4, 3, 2), elements=st.floats(-5, 5)))
    def test_symmetric_psd(self, z):
        W = batch_covariance(z).W.data
        np.testing.assert_allclose(W, W.T)
        assert np.linalg.eigvalsh(W).min() > -1e-9


class TestAcyclicity:
    def test_zero(self):
        assert acyclicity_penalty(np.zeros((3, 3))).data == 0.0

    def test_nilpotent(self):
        assert abs(float(acyclicity_penalty(np.array([[0.0, 1.0], [0.0, 0.0]])).data)) < 1e-15

    def test_two_cycle(self):
        h = float(acyclicity_penalty(np.array([[0.0, 1.0], [1.0, 0.0]])).data)
        assert abs(h - (2 * math.cosh(1.0) - 2)) < 1e-12
        assert abs(h - 1.08616) < 1e-5

    def test_gradient_vanishes_at_zero(self):
        W = Tensor(np.zeros((3, 3)), requires_grad=True)
        with Tape() as tape:
            h = acyclicity_penalty(W)
        tape.backward(h)
        assert np.all(W.grad == 0)

    def test_gradient_random(self, rng):
        W = rng.uniform(-0.5, 0.5, (4, 4))
        assert gradcheck(acyclicity_penalty, [W], eps=1e-4) < 1e-3

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 5))
    def test_zero_exactly_on_dags(self, seed, n):
        rng = np.random.default_rng(seed)
        support = rng.random((n, n)) < 0.4
        np.fill_diagonal(support, False)
        W = support * rng.uniform(0.1, 1.0, (n, n)) * rng.choice([-1, 1], (n, n))
        h = float(acyclicity_penalty(W).data)
        assert h >= -1e-12
        if is_dag(support):
            assert h < 1e-10
        else:
            assert h > 1e-7


class TestL1:
    def test_values(self):
        assert l1_penalty(np.zeros((2, 2))).data == 0
        assert l1_penalty(np.array([[0.0, -2.0], [3.0, 0.0]])).data == 5.0

    def test_matches_abs_sum(self, rng):
        W = rng.standard_normal((5, 5))
        assert float(l1_penalty(W).data) == float(np.sum(np.abs(W)))


class TestDagLoss:
    def test_zero_h(self):
        loss, hs = dag_loss([np.zeros((3, 3))], CausalState(n=3, rho=5.0, beta_mult=2.0))
        assert float(loss.data) == 0.0 and hs == [0.0]

    def test_formula(self):
        # h = 2cosh(1) - 2 for the 2-cycle; scale W so h is one
        c = math.acosh(1.5)
        W = np.array([[0.0, math.sqrt(c)], [math.sqrt(c), 0.0]])
        loss, hs = dag_loss([W], CausalState(n=2, rho=2.0, beta_mult=0.5))
        assert abs(hs[0] - 1.0) < 1e-12
        assert abs(float(loss.data) - 1.5) < 1e-12

    def test_sum_over_matrices(self):
        c = math.acosh(1.1)
        W = np.array([[0.0, math.sqrt(c)], [math.sqrt(c), 0.0]])
        loss, hs = dag_loss([np.zeros((2, 2)), W], CausalState(n=2, rho=1.0, beta_mult=0.0))
        assert abs(hs[1] - 0.2) < 1e-12
        assert abs(float(loss.data) - 0.02) < 1e-12


class TestRelationMatrix:
    def test_zero(self):
        assert np.all(extract_relation_matrix(np.zeros((3, 3))) == 0)

    def test_threshold(self):
        W = np.array([[0.0, 0.95, 0.5], [0.05, 0.0, 0.0], [0.0, 0.0, 0.0]])
        R = extract_relation_matrix(W, 0.9)
        assert R.sum() == 1 and R[0, 1] == 1

    def test_tiny_tau_gives_support(self, rng):
        W = rng.standard_normal((5, 5)) * (rng.random((5, 5)) < 0.5)
        R = extract_relation_matrix(W, 1e-12)
        want = (W != 0).astype(float)
        np.fill_diagonal(want, 0)
        np.testing.assert_array_equal(R, want)

    def test_tau_must_be_positive(self):
        with pytest.raises(ContractError):
            extract_relation_matrix(np.ones((2, 2)), 0.0)


class TestMultipliers:
    def test_zero_violation_still_escalates(self):
        s = update_multipliers(CausalState(n=2, rho=1.0, beta_mult=0.7), [0.0])
        assert s.beta_mult == 0.7 and s.rho == 10.0

    def test_beta_step(self):
        s = update_multipliers(CausalState(n=2, rho=1.0, beta_mult=0.0), [0.3])
        assert s.beta_mult == pytest.approx(0.3)

    def test_no_escalation_after_progress(self):
        s = update_multipliers(CausalState(n=2, rho=4.0, kappa_prev=1.0), [0.1])
        assert s.rho == 4.0 and s.kappa_prev == pytest.approx(0.1)

    def test_cap(self):
        s = update_multipliers(CausalState(n=2, rho=50.0, rho_max=100.0), [1.0])
        assert s.rho == 100.0

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 10), min_size=1, max_size=15))
    def test_monotone(self, kappas):
        s = CausalState(n=2)
        for k in kappas:
            new = update_multipliers(s, [k])
            assert new.rho >= s.rho and new.beta_mult >= s.beta_mult
            s = new

    def test_end_epoch_refreshes_R(self):
        s = CausalState(n=3, tau=0.5)
        s.observe(np.array([[0, 1.0, 0], [0, 0, 0.2], [0, 0, 0]]), 0.0)
        s.observe(np.array([[0, 3.0, 0], [0, 0, 0.2], [0, 0, 0]]), 0.0)
        new = s.end_epoch()
        assert new.W[0, 1] == 2.0
        assert new.R.tolist() == [[0, 1, 0], [0, 0, 0], [0, 0, 0]]
        assert new.epoch_h == []


def test_matrix_text_round_trip(rng):
    M = rng.standard_normal((4, 4))
    np.testing.assert_array_equal(matrix_from_text(matrix_to_text(M)), M)


def test_edge_list_follows_R():
    W = np.array([[0.0, 0.4], [0.9, 0.0]])
    assert edge_list(W, np.array([[0, 0], [1, 0]])) == [(1, 0, 0.9)]
