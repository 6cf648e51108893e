"""Augmented-Lagrangian solver: derivatives, inner/outer loops, determinism."""

import numpy as np
import pytest

from lrsdp.factorization import FactorizedPoint
from lrsdp.model import BlockStructure
from lrsdp.solver import (
    InfeasibleError,
    LagrangianState,
    SolverConfig,
    al_hessian_vector,
    al_solve,
    al_value_grad,
    inner_minimize,
)
from lrsdp.apps import build_integer_quadratic, generate_random
from lrsdp.oracle import oracle_solve

from helpers import (
    iqm_cost,
    indefinite_trace_sdp,
    make_problem,
    mixed_instance,
    point_axpy,
    point_dot,
    random_direction,
    random_factor_point,
    trivial_sdp,
)


def kink_safe(problem, point, lam, rho, margin=1e-3):
    """Avoid sampling right on a clipped-multiplier switch."""
    from lrsdp.dense import densify
    from lrsdp.factorization import lift
    from lrsdp.model import apply_map

    dp = densify(problem)
    c = apply_map(problem, lift(point)) - dp.b
    shifted = lam - rho * c
    ineq = ~dp.eq_mask
    return not np.any(np.abs(shifted[ineq]) < margin)


class TestValueGrad:
    def test_unconstrained_unit_column(self):
        prob = make_problem((2,), 1, 0, [np.eye(2)], [], [])
        y = FactorizedPoint((np.array([[1.0], [0.0]]),), (), np.zeros(0))
        val, grad = al_value_grad(prob, y, np.zeros(0), 0.0)
        assert val == pytest.approx(1.0)
        np.testing.assert_allclose(grad.factors[0], [[2.0], [0.0]])

    def test_feasible_point_reduces_to_lagrangian_gradient(self):
        prob = trivial_sdp()
        y = FactorizedPoint((np.array([[1.0], [0.0]]),), (), np.zeros(0))
        lam = np.array([0.3])
        _, grad = al_value_grad(prob, y, lam, 5.0)
        # c = 0, so the penalty contributes nothing: grad = 2 (C - lam A) Y
        s = np.eye(2) - lam[0] * np.array([[1.0, 0.0], [0.0, 0.0]])
        np.testing.assert_allclose(grad.factors[0], 2.0 * s @ y.factors[0], atol=1e-14)

    def test_gradient_matches_finite_differences(self):
        h = 1e-5
        checked = 0
        seed = 0
        while checked < 12:
            seed += 1
            problem, ranks = mixed_instance(seed)
            rng = np.random.default_rng(seed)
            point = random_factor_point(problem, ranks, seed)
            lam = rng.standard_normal(problem.m)
            rho = 2.0
            if not kink_safe(problem, point, lam, rho):
                continue
            checked += 1
            _, grad = al_value_grad(problem, point, lam, rho)
            for dseed in range(2):
                d = random_direction(problem, ranks, 100 * seed + dseed)
                fp, _ = al_value_grad(problem, point_axpy(point, d, h), lam, rho)
                fm, _ = al_value_grad(problem, point_axpy(point, d, -h), lam, rho)
                slope = (fp - fm) / (2.0 * h)
                exact = point_dot(grad, d)
                assert abs(slope - exact) <= 1e-6 * (1.0 + abs(exact))


class TestHessianVector:
    def test_unconstrained_identity_cost(self):
        prob = make_problem((3,), 1, 0, [np.eye(3)], [], [])
        rng = np.random.default_rng(0)
        y = FactorizedPoint((rng.standard_normal((3, 2)),), (), np.zeros(0))
        u = FactorizedPoint((rng.standard_normal((3, 2)),), (), np.zeros(0))
        hu = al_hessian_vector(prob, y, np.zeros(0), 1.0, u)
        np.testing.assert_allclose(hu.factors[0], 2.0 * u.factors[0], atol=1e-14)

    def test_zero_direction(self):
        prob = trivial_sdp()
        y = FactorizedPoint((np.eye(2),), (), np.zeros(0))
        u = FactorizedPoint((np.zeros((2, 2)),), (), np.zeros(0))
        hu = al_hessian_vector(prob, y, np.array([0.5]), 3.0, u)
        assert np.all(hu.factors[0] == 0.0)

    def test_matches_gradient_differences(self):
        h = 1e-5
        checked = 0
        seed = 50
        while checked < 8:
            seed += 1
            problem, ranks = mixed_instance(seed)
            rng = np.random.default_rng(seed)
            point = random_factor_point(problem, ranks, seed)
            lam = rng.standard_normal(problem.m)
            rho = 2.0
            if not kink_safe(problem, point, lam, rho):
                continue
            checked += 1
            d = random_direction(problem, ranks, 7 * seed)
            e = random_direction(problem, ranks, 7 * seed + 1)
            hd = al_hessian_vector(problem, point, lam, rho, d)
            _, gp = al_value_grad(problem, point_axpy(point, d, h), lam, rho)
            _, gm = al_value_grad(problem, point_axpy(point, d, -h), lam, rho)
            slope = (point_dot(gp, e) - point_dot(gm, e)) / (2.0 * h)
            exact = point_dot(hd, e)
            assert abs(slope - exact) <= 1e-5 * (1.0 + abs(exact))


class TestInnerMinimize:
    def test_stationary_start_returns_same_point(self):
        prob = trivial_sdp()
        y = FactorizedPoint((np.array([[1.0], [0.0]]),), (), np.zeros(0))
        st = LagrangianState(y, np.array([1.0]), 10.0, 1.0, 0.0, 0.0)
        out = inner_minimize(prob, st, SolverConfig())
        np.testing.assert_array_equal(out.point.factors[0], y.factors[0])
        assert out.stationarity <= 1e-10

    def test_feasible_start_converges_tightly(self):
        prob = trivial_sdp()
        rng = np.random.default_rng(0)
        y0 = rng.standard_normal((2, 2))
        y0[0] /= np.linalg.norm(y0[0])  # X_11 = 1: feasible start
        st = LagrangianState(
            FactorizedPoint((y0,), (), np.zeros(0)), np.array([1.0]), 10.0, 0.0, 0.0, 1.0
        )
        out = inner_minimize(prob, st, SolverConfig())
        assert out.stationarity <= 1e-8

    def test_escapes_flat_saddle(self):
        prob = make_problem((2,), 1, 0, [np.diag([1.0, -1.0])], [], [])
        y0 = FactorizedPoint((np.zeros((2, 1)),), (), np.zeros(0))
        st = LagrangianState(y0, np.zeros(0), 1.0, 0.0, 0.0, 0.0)
        out = inner_minimize(prob, st, SolverConfig(max_inner=15))
        assert out.objective < -1e-6  # strictly left the saddle


class TestOuterLoop:
    def test_trivial_sdp(self):
        state, trace = al_solve(trivial_sdp(), [2], SolverConfig(seed=0))
        assert state.objective == pytest.approx(1.0, abs=1e-6)
        np.testing.assert_allclose(state.lam, [1.0], atol=1e-6)
        assert state.infeasibility <= 1e-8
        assert state.stationarity <= 1e-8

    def test_indefinite_cost_with_trace_constraint(self):
        state, _ = al_solve(indefinite_trace_sdp(), [2], SolverConfig(seed=0))
        assert state.objective == pytest.approx(-1.0, abs=1e-6)

    def test_iqm_matches_oracle(self):
        built = build_integer_quadratic(iqm_cost(1.0, -0.8, 0.16))
        target = oracle_solve(built.problem).objective
        state, _ = al_solve(built.problem, [2], SolverConfig(seed=0))
        assert abs(state.objective - target) <= 1e-5 * (1.0 + abs(target))

    def test_inequality_multipliers_stay_nonnegative(self):
        for seed in range(5):
            prob = generate_random(BlockStructure((4,), 1, 0), 5, "EEIII", seed)
            state, _ = al_solve(prob, [3], SolverConfig(seed=seed))
            ineq = prob.inequality_indices()
            assert np.all(state.lam[ineq] >= 0.0)

    def test_complementarity_at_convergence(self):
        from lrsdp.factorization import lift
        from lrsdp.model import apply_map

        for seed in range(5):
            prob = generate_random(BlockStructure((4,), 1, 0), 6, "EEEIII", seed + 20)
            state, _ = al_solve(prob, [3], SolverConfig(seed=seed))
            c = apply_map(prob, lift(state.point)) - prob.b
            for i in prob.inequality_indices():
                assert abs(state.lam[i] * c[i]) <= 1e-6 * (1.0 + abs(state.lam[i]))

    def test_determinism(self):
        prob = generate_random(BlockStructure((5,), 1, 0), 4, "EEEE", 3)
        s1, t1 = al_solve(prob, [3], SolverConfig(seed=5))
        s2, t2 = al_solve(prob, [3], SolverConfig(seed=5))
        np.testing.assert_array_equal(s1.point.factors[0], s2.point.factors[0])
        assert t1 == t2

    def test_infeasible_detection(self):
        e11 = np.array([[1.0, 0.0], [0.0, 0.0]])
        prob = make_problem(
            (2,), 1, 0, [np.eye(2)], [],
            [([e11], [], 1.0, "E"), ([e11], [], 2.0, "E")],
        )
        with pytest.raises(InfeasibleError):
            al_solve(prob, [2], SolverConfig(seed=0))

    def test_multi_block_with_free_variables(self):
        for seed in range(3):
            prob = generate_random(BlockStructure((4, 3), 2, 2), 6, "EEEEEI", seed + 40)
            state, _ = al_solve(prob, [3, 3], SolverConfig(seed=seed))
            target = oracle_solve(prob).objective
            assert abs(state.objective - target) <= 1e-4 * (1.0 + abs(target))
