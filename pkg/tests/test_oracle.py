"""Interior-point reference solver and the 2x2 grid oracle."""

import numpy as np
import pytest

from lrsdp.certification import Multipliers, active_set, certify
from lrsdp.factorization import factor
from lrsdp.model import BlockStructure
from lrsdp.oracle import (
    MaxIterationsError,
    NotStrictlyFeasibleError,
    brute_force_2x2,
    min_active_violation,
    oracle_solve,
)
from lrsdp.apps import build_integer_quadratic, generate_random

from helpers import correlation_sdp, indefinite_trace_sdp, iqm_cost, make_problem, trivial_sdp


class TestInteriorPoint:
    def test_trivial(self):
        sol = oracle_solve(trivial_sdp())
        assert sol.objective == pytest.approx(1.0, abs=1e-7)
        np.testing.assert_allclose(sol.lam, [1.0], atol=1e-7)
        assert abs(sol.gap) <= 1e-7

    def test_indefinite_trace(self):
        sol = oracle_solve(indefinite_trace_sdp())
        assert sol.objective == pytest.approx(-1.0, abs=1e-7)

    def test_iqm_matches_grid_oracle(self):
        built = build_integer_quadratic(iqm_cost(1.0, -0.8, 0.16))
        sol = oracle_solve(built.problem)
        grid = brute_force_2x2(built.problem)
        assert abs(sol.objective - grid) <= 1e-6

    def test_weak_duality_and_block_psd(self):
        for seed in range(8):
            prob = generate_random(BlockStructure((4,), 1, 0), 5, "EEEII", seed + 400)
            sol = oracle_solve(prob)
            scale = 1.0 + abs(sol.objective)
            assert sol.dual_objective <= sol.objective + 1e-7 * scale
            for block in sol.X.psd_blocks:
                assert np.linalg.eigvalsh(block.to_dense()).min() >= -1e-9 * scale

    def test_inequality_multipliers_nonnegative(self):
        prob = generate_random(BlockStructure((4,), 1, 0), 6, "EEIIII", 77)
        sol = oracle_solve(prob)
        for i in prob.inequality_indices():
            assert sol.lam[i] >= -1e-9

    def test_solution_certifies_after_refactoring(self):
        for seed in range(3):
            prob = generate_random(BlockStructure((6,), 1, 0), 5, "EEEEE", seed + 11)
            sol = oracle_solve(prob)
            w = np.linalg.eigvalsh(sol.X.psd_blocks[0].to_dense())
            nrank = int(np.sum(w > 1e-7 * w[-1]))
            pt = factor(sol.X, [nrank], psd_tol=1e-6)
            mult = Multipliers(sol.lam, active_set(prob, pt), "FromSolver")
            cert = certify(prob, pt, mult, cert_tol=1e-4)
            assert cert.verdict == "GlobalOptimal"

    def test_infeasible_problem_reports(self):
        e11 = np.array([[1.0, 0.0], [0.0, 0.0]])
        prob = make_problem(
            (2,), 1, 0, [np.eye(2)], [],
            [([e11], [], 1.0, "E"), ([e11], [], 2.0, "E")],
        )
        with pytest.raises((NotStrictlyFeasibleError, MaxIterationsError)):
            oracle_solve(prob)

    def test_deterministic(self):
        prob = generate_random(BlockStructure((5, 3), 2, 1), 6, "EEEEEI", 5)
        s1 = oracle_solve(prob)
        s2 = oracle_solve(prob)
        assert s1.objective == s2.objective
        np.testing.assert_array_equal(s1.lam, s2.lam)


class TestBruteForce2x2:
    def test_trivial(self):
        assert brute_force_2x2(trivial_sdp()) == pytest.approx(1.0, abs=1e-5)

    def test_correlation_extreme(self):
        assert brute_force_2x2(correlation_sdp()) == pytest.approx(-1.0, abs=1e-5)

    def test_unbounded_detected(self):
        prob = make_problem((2,), 1, 0, [np.diag([1.0, -1.0])], [], [])
        assert brute_force_2x2(prob, grid=500, refine_rounds=1) == -np.inf

    def test_agreement_with_interior_point(self):
        kinds_pool = ["EII", "EE", "EEI", "III", "EEE"]
        for seed in range(20):
            kinds = kinds_pool[seed % len(kinds_pool)]
            prob = generate_random(BlockStructure((2,), 1, 0), len(kinds), kinds, seed + 800)
            grid = brute_force_2x2(prob, grid=2000, refine_rounds=3)
            sol = oracle_solve(prob)
            assert abs(grid - sol.objective) <= 1e-5 * (1.0 + abs(sol.objective))

    def test_unsupported_shape(self):
        prob = generate_random(BlockStructure((3,), 1, 0), 2, "EE", 0)
        with pytest.raises(ValueError, match="unsupported shape"):
            brute_force_2x2(prob)


class TestActiveSubsetFeasibility:
    def test_forced_active_inequality(self):
        built = build_integer_quadratic(iqm_cost(1.0, -0.8, 0.16))
        # the single inequality can be made active (e.g. at the corner point)
        v = min_active_violation(built.problem, (1,))
        assert v <= 1e-7

    def test_conflicting_rows_report_violation(self):
        e11 = np.array([[1.0, 0.0], [0.0, 0.0]])
        prob = make_problem(
            (2,), 1, 0, [np.eye(2)], [],
            [([e11], [], 1.0, "E"), ([e11], [], 3.0, "I")],
        )
        # forcing the inequality active contradicts the equality by 2
        v = min_active_violation(prob, (1,))
        assert v >= 0.9
