import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rosguard.acceptance import KINDS, random_instance
from rosguard.errors import TooLarge
from rosguard.gllr_exact import (
    ExactConfig,
    branch_and_bound,
    solve_bruteforce,
    solve_exact,
    v_t_exact,
)
from rosguard.model import SystemModel
from rosguard.problem import (
    BOUND_ONLY,
    ITER_LIMIT,
    OPTIMAL,
    EvidenceConfig,
    EvidenceProblem,
    build_problem,
    check_solution,
)
from rosguard.scenarios import IEEE14_H, ieee14_sets
from rosguard.uncertainty import EllipsoidSet, PolyhedralSet, RobustConstraintData


def _loose(x, rho_L=0.5, rho_U=2.0, sigma2=1.0):
    M = len(x)
    cons = [RobustConstraintData(1e6, PolyhedralSet.box_around(np.zeros(M), 0.1))]
    return EvidenceProblem(np.asarray(x, float), rho_L, rho_U, sigma2, cons)


def _grid_minimum(prob, step=0.005):
    """Dense grid oracle for M <= 2: every sign/support pattern, magnitudes on a grid."""
    mags = np.append(np.arange(prob.rho_L, prob.rho_U, step), prob.rho_U)
    axis = np.concatenate([[0.0], mags, -mags])
    best = np.inf
    for mu in itertools.product(axis, repeat=prob.M):
        mu = np.array(mu)
        ok = all(max(c.set.max_linear(mu), c.set.max_linear(-mu)) <= c.epsilon + 1e-12 for c in prob.constraints)
        if ok:
            best = min(best, prob.objective(mu))
    return best


def test_zero_residual_gives_zero():
    prob = _loose(np.zeros(4))
    for sol in (solve_bruteforce(prob), branch_and_bound(prob)):
        assert sol.objective == 0.0 and not sol.u.any()
    assert branch_and_bound(prob).nodes == 1
    assert v_t_exact(prob) == 0.0


def test_two_coordinate_example():
    prob = _loose([1.0, 0.2])
    for sol in (solve_bruteforce(prob), branch_and_bound(prob)):
        assert sol.objective == pytest.approx(-0.5, abs=1e-8)
        assert np.allclose(sol.u, [1, 0])
        assert np.allclose(sol.mu, [1.0, 0.0], atol=1e-6)
    assert v_t_exact(prob) == pytest.approx(0.5, abs=1e-8)
    assert _grid_minimum(prob) == pytest.approx(-0.5, abs=1e-6)


def test_tight_epsilon_forces_empty_support():
    # every nonzero in-band mu has |h^T mu| > 0 for some h in the ball
    cons = [RobustConstraintData(0.0, EllipsoidSet(np.array([1.0, 0.5]), 0.2))]
    prob = EvidenceProblem(np.array([1.5, -1.0]), 0.5, 2.0, 1.0, cons)
    assert _grid_minimum(prob) == 0.0
    sol = branch_and_bound(prob)
    assert sol.objective == 0.0 and not sol.u.any()


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_bruteforce_matches_grid_on_two_dims(seed):
    rng = np.random.default_rng(seed)
    prob = random_instance(rng, KINDS[seed % 3], M=2, N=1)
    grid = _grid_minimum(prob, step=0.01)
    brute = solve_bruteforce(prob).objective
    # the grid only sees a subset of feasible points; leaf QPs are accurate to ~1e-8
    assert brute <= grid + 1e-7 * (1 + abs(grid))
    assert grid - brute <= 0.05 * (prob.rho_U + np.abs(prob.x_tilde).max()) / prob.sigma2


def test_degenerate_band_forces_magnitude():
    prob = _loose([1.3, -0.9, 0.1], rho_L=1.0, rho_U=1.0)
    sol = branch_and_bound(prob)
    nz = np.abs(sol.mu) > 1e-9
    assert np.allclose(np.abs(sol.mu[nz]), 1.0)
    assert sol.objective == pytest.approx(solve_bruteforce(prob).objective, abs=1e-9)


def test_build_problem_ieee14_shapes_and_column_space():
    model = SystemModel(IEEE14_H, 1.0)
    cfg = EvidenceConfig(0.5, 2.0)
    prob = build_problem(model, ieee14_sets("polyhedral"), IEEE14_H @ np.array([1.0, 2.0, -1.0]), cfg)
    assert prob.M == 5 and prob.N == 3
    assert np.linalg.norm(prob.x_tilde) < 1e-8
    sol = branch_and_bound(prob)
    assert sol.objective == 0.0 and not sol.u.any()
    sol = solve_bruteforce(build_problem(model, ieee14_sets("polyhedral"), np.ones(5), cfg))
    assert len(sol.duals) == 3 and all(len(d) == 2 for d in sol.duals)


def test_bruteforce_size_limit():
    with pytest.raises(TooLarge):
        solve_bruteforce(_loose(np.zeros(9)))


@pytest.mark.parametrize("kind", KINDS)
def test_bnb_matches_bruteforce_and_passes_checker(kind):
    rng = np.random.default_rng(hash(kind) % 2 ** 32)
    for _ in range(25):
        prob = random_instance(rng, kind)
        a, b = solve_bruteforce(prob), branch_and_bound(prob)
        assert abs(a.objective - b.objective) <= 1e-5
        assert b.status == OPTIMAL and b.bound <= b.objective + 1e-9
        assert abs(b.objective - b.bound) <= 1e-6 * (1 + abs(b.objective)) + 1e-9
        assert check_solution(prob, a) == []
        assert check_solution(prob, b) == []


def test_gap_inf_returns_root_bound():
    rng = np.random.default_rng(5)
    prob = random_instance(rng, "polyhedral", M=5)
    sol = branch_and_bound(prob, gap_tol=np.inf)
    assert sol.status == BOUND_ONLY
    assert sol.bound <= solve_bruteforce(prob).objective + 1e-9


def test_node_limit_reports_iter_limit_with_valid_bound():
    rng = np.random.default_rng(8)
    for _ in range(20):
        prob = random_instance(rng, "ellipsoid", M=7)
        sol = branch_and_bound(prob, node_limit=2)
        exact = solve_bruteforce(prob).objective
        assert sol.bound <= exact + 1e-8
        assert sol.objective >= exact - 1e-8
        if sol.status == ITER_LIMIT:
            return
    pytest.skip("no instance needed more than two nodes")


def test_incumbent_warm_start_does_not_change_answer():
    rng = np.random.default_rng(9)
    for _ in range(10):
        prob = random_instance(rng, "dnorm", M=6)
        cold = branch_and_bound(prob)
        warm = branch_and_bound(prob, incumbent=cold.mu)
        assert warm.objective == pytest.approx(cold.objective, abs=1e-9)
        junk = branch_and_bound(prob, incumbent=np.full(6, 10.0))
        assert junk.objective == pytest.approx(cold.objective, abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10 ** 6), grow=st.floats(1.0, 5.0))
def test_monotone_in_epsilon(seed, grow):
    rng = np.random.default_rng(seed)
    prob = random_instance(rng, KINDS[seed % 3], M=int(rng.integers(2, 6)))
    bigger = EvidenceProblem(prob.x_tilde, prob.rho_L, prob.rho_U, prob.sigma2,
                             [RobustConstraintData(c.epsilon * grow, c.set) for c in prob.constraints])
    assert v_t_exact(bigger) >= v_t_exact(prob) - 1e-9


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10 ** 6), c=st.floats(0.1, 10.0))
def test_sigma2_scaling(seed, c):
    rng = np.random.default_rng(seed)
    prob = random_instance(rng, KINDS[seed % 3], M=int(rng.integers(2, 6)))
    a = solve_exact(prob)
    b = solve_exact(prob.with_sigma2(prob.sigma2 * c))
    assert v_t_exact(prob.with_sigma2(prob.sigma2 * c)) == pytest.approx(v_t_exact(prob) / c, rel=1e-6, abs=1e-9)
    assert b.objective * c == pytest.approx(a.objective, rel=1e-6, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_evidence_between_zero_and_energy(seed):
    rng = np.random.default_rng(seed)
    prob = random_instance(rng, KINDS[seed % 3])
    v = -solve_exact(prob).objective
    assert -1e-12 <= v <= prob.energy_bound() + 1e-9


def test_exact_config_methods():
    prob = _loose([1.0, 0.2])
    assert solve_exact(prob, ExactConfig(method="brute")).objective == pytest.approx(-0.5)
    with pytest.raises(ValueError):
        solve_exact(prob, ExactConfig(method="nope"))


def test_checker_flags_broken_solutions():
    prob = _loose([1.0, 0.2])
    sol = branch_and_bound(prob)
    sol.u = np.array([0.5, 0.0])
    assert check_solution(prob, sol)
    sol = branch_and_bound(prob)
    sol.mu_minus = sol.mu_minus + 0.3
    assert "complementarity" in check_solution(prob, sol)
