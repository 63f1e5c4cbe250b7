import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rosguard.acceptance import KINDS, random_instance
from rosguard.errors import Diverged
from rosguard.gllr_exact import solve_bruteforce, v_t_exact
from rosguard.gllr_relaxed import (
    SolverSchedule,
    box_relaxation,
    box_relaxation_bound,
    build_socp,
    lagrangian_state,
    relaxed_objective,
    socp_relaxation,
    solve_lagrangian,
    v_t_relaxed,
    v_t_relaxed_batch,
)
from rosguard.problem import OPTIMAL, EvidenceProblem
from rosguard.uncertainty import PolyhedralSet, RobustConstraintData


def _loose(x, rho_L=0.5, rho_U=2.0):
    M = len(x)
    cons = [RobustConstraintData(1e6, PolyhedralSet.box_around(np.zeros(M), 0.1))]
    return EvidenceProblem(np.asarray(x, float), rho_L, rho_U, 1.0, cons)


def test_build_socp_keeps_problem_and_bounds():
    prob = _loose([1.0, -0.3, 0.0]).restrict(1, u=1).restrict(2, b=0)
    inst = build_socp(prob)
    assert inst.M == 3 and inst.perspective
    lo, hi = inst.u_bounds()
    assert np.array_equal(lo, [0, 1, 0]) and np.array_equal(hi, [1, 1, 1])
    lo, hi = inst.b_bounds()
    assert np.array_equal(lo, [0, 0, 0]) and np.array_equal(hi, [1, 1, 0])


def test_integral_point_has_exact_objective():
    # at binary u and phi = mu^2 the relaxed objective is the exact one
    rng = np.random.default_rng(0)
    prob = random_instance(rng, "ellipsoid", M=4)
    mu = np.array([0.0, 0.7, 0.0, -1.1])
    assert relaxed_objective(prob, mu, mu * mu) == pytest.approx(prob.objective(mu), abs=1e-15)
    assert relaxed_objective(prob, mu) == pytest.approx(prob.objective(mu), abs=1e-15)


def test_lagrangian_zero_residual_returns_zero_quickly():
    sol = solve_lagrangian(_loose(np.zeros(5)))[0]
    assert sol.objective == pytest.approx(0.0, abs=1e-12)
    assert np.abs(sol.mu).max() <= 1e-9
    assert sol.nodes <= 5
    assert v_t_relaxed(_loose(np.zeros(5))) == 0.0


def test_lagrangian_initial_state():
    st0 = lagrangian_state(_loose([1.0, 2.0]))
    assert np.isfinite(st0.loss).all()
    assert all(not np.any(v) for v in st0.multipliers.values())


def test_batch_is_pure():
    rng = np.random.default_rng(1)
    prob = random_instance(rng, "polyhedral", M=5)
    alone = solve_lagrangian(prob)[0]
    many = solve_lagrangian(None, batch=[prob] * 64)
    for s in many:
        assert np.array_equal(s.mu_plus, alone.mu_plus) and np.array_equal(s.mu_minus, alone.mu_minus)
        assert s.objective == alone.objective


def _stream_like(rng, kind, M, n):
    """n problems sharing one structure and differing in the residual, as on a stream."""
    base = random_instance(rng, kind, M=M)
    return [EvidenceProblem(rng.normal(0, 1.5, M), base.rho_L, base.rho_U, base.sigma2, base.constraints)
            for _ in range(n)]


def test_batch_results_do_not_depend_on_company():
    rng = np.random.default_rng(2)
    probs = _stream_like(rng, "ellipsoid", 4, 9)
    together = v_t_relaxed_batch(probs)
    alone = np.array([v_t_relaxed(p) for p in probs])
    assert np.array_equal(together, alone)


@pytest.mark.parametrize("kind", KINDS)
def test_precise_schedule_matches_conic(kind):
    rng = np.random.default_rng(10 + KINDS.index(kind))
    sched = SolverSchedule.precise()
    for _ in range(15):
        prob = random_instance(rng, kind, M=int(rng.integers(2, 7)))
        ref = socp_relaxation(prob, fast=False).objective
        got = solve_lagrangian(prob, sched)[0]
        assert abs(got.objective - ref) <= 1e-3 * (1 + abs(ref))
        assert got.info["robust_violation"] <= 1e-3


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_relaxed_evidence_dominates_exact(seed):
    rng = np.random.default_rng(seed)
    prob = random_instance(rng, KINDS[seed % 3], M=int(rng.integers(2, 6)))
    assert v_t_relaxed(prob, SolverSchedule.precise()) >= v_t_exact(prob) - 1e-3


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_box_soc_exact_ordering(seed):
    rng = np.random.default_rng(seed)
    prob = random_instance(rng, KINDS[seed % 3], M=int(rng.integers(2, 6)), fixings=True)
    box = box_relaxation(prob, fast=False).objective
    soc = socp_relaxation(prob, fast=False).objective
    exact = solve_bruteforce(prob).objective
    assert box <= soc + 1e-6 * (1 + abs(soc))
    assert soc <= exact + 1e-6 * (1 + abs(exact))


def test_strict_gap_example():
    # band collapsed to one magnitude, sign fixed: box relaxes to 0.4, perspective does not
    prob = _loose([0.4], rho_L=1.0, rho_U=1.0).restrict(0, b=0)
    assert box_relaxation_bound(prob) == pytest.approx(-0.08, abs=1e-6)
    assert socp_relaxation(prob).objective == pytest.approx(0.0, abs=1e-6)
    assert socp_relaxation(prob, fast=False).objective == pytest.approx(0.0, abs=1e-6)
    assert solve_bruteforce(prob).objective == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("kind", KINDS)
def test_lagrangian_output_is_in_bounds(kind):
    rng = np.random.default_rng(20 + KINDS.index(kind))
    probs = _stream_like(rng, kind, 5, 10)
    for p, s in zip(probs, solve_lagrangian(None, batch=probs)):
        assert np.all(s.u >= -1e-12) and np.all(s.u <= 1 + 1e-12)
        assert np.all(s.b >= -1e-12) and np.all(s.b <= 1 + 1e-12)
        assert np.all(s.mu_plus >= -1e-12) and np.all(s.mu_minus >= -1e-12)
        assert np.all(s.mu_plus <= p.rho_U + 1e-9) and np.all(s.mu_minus <= p.rho_U + 1e-9)
        for d in s.duals:
            if d is not None:
                assert np.all(d[0] >= -1e-12) and np.all(d[1] >= -1e-12)


def test_status_optimal_only_below_kkt_tol():
    rng = np.random.default_rng(4)
    probs = _stream_like(rng, "dnorm", 4, 10)
    sched = SolverSchedule(kkt_tol=1e-4)
    for s in solve_lagrangian(None, sched, batch=probs):
        assert (s.status == OPTIMAL) == (s.info["kkt"] < 1e-4)


def test_huge_steps_diverge():
    # the projection keeps the primal bounded, so only the penalty term can blow up
    prob = EvidenceProblem(np.array([3.0, -2.0, 1.0]), 0.5, 2.0, 1.0,
                           [RobustConstraintData(0.01, PolyhedralSet.box_around(np.zeros(3), 0.1))])
    sched = SolverSchedule(primal_steps=[1e12] * 10, dual_steps=[1e12] * 10, backtrack=False, momentum=False)
    with pytest.raises(Diverged):
        solve_lagrangian(prob, sched)


def test_schedule_constructors():
    s = SolverSchedule.coarse()
    assert s.K == 10 and s.eps_stop == 0.01
    assert np.allclose(s.primal_steps, 0.05 * 0.9 ** np.arange(10))
    assert np.allclose(s.dual_steps, 0.1 * 0.95 ** np.arange(10))
    with pytest.raises(ValueError):
        SolverSchedule(primal_steps=[1.0], dual_steps=[1.0] * 10)
    with pytest.raises(ValueError):
        SolverSchedule(primal_steps=[-1.0] * 10)


def test_closed_form_agrees_with_conic():
    rng = np.random.default_rng(6)
    hits = 0
    for _ in range(60):
        prob = random_instance(rng, KINDS[hits % 3], M=4, fixings=True)
        fast = socp_relaxation(prob)
        if fast.info["path"] != "closed-form":
            continue
        hits += 1
        assert fast.objective == pytest.approx(socp_relaxation(prob, fast=False).objective, abs=1e-6)
    assert hits >= 5
