import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rosguard.errors import DimMismatch, InfeasibleDual, InfeasibleSet
from rosguard.uncertainty import (
    DNormSet,
    EllipsoidSet,
    PolyhedralSet,
    RobustConstraintData,
    diameter,
    dual_certificate,
    dual_feasible_bound,
    epsilon_guideline,
    sum_largest_abs,
    support_function,
)


def _sets(M, rng):
    c = rng.uniform(-1, 1, M)
    D = np.vstack([np.eye(M), -np.eye(M), np.ones((1, M))])
    d = np.concatenate([c + 0.3, 0.3 - c, [c.sum() + 0.2]])
    return [
        PolyhedralSet.box_around(c, 0.1),
        PolyhedralSet(D, d),
        EllipsoidSet(c, 0.36),
        DNormSet(c, min(2, M), 0.5),
    ]


def test_zero_direction_gives_zero():
    rng = np.random.default_rng(0)
    for s in _sets(4, rng):
        assert support_function(s, np.zeros(4)) == pytest.approx(0.0, abs=1e-12)


def test_ellipsoid_support_example():
    s = EllipsoidSet(np.zeros(5), 0.36)
    assert support_function(s, [3, 4, 0, 0, 0]) == pytest.approx(1.8)


def test_box_support_is_scaled_l1_and_matches_vertex_enumeration():
    rng = np.random.default_rng(1)
    c = rng.normal(size=4)
    s = PolyhedralSet.box_around(c, 0.1)
    for _ in range(20):
        mu = rng.normal(size=4)
        assert support_function(s, mu) == pytest.approx(0.1 * np.abs(mu).sum(), abs=1e-12)
        # oracle: all 2^4 corners of the box
        corners = np.array([c + 0.1 * np.array(sg) for sg in itertools.product((-1, 1), repeat=4)])
        assert support_function(s, mu) == pytest.approx(((corners - c) @ mu).max(), abs=1e-12)


def test_dnorm_support_sums_largest_entries():
    s = DNormSet(np.zeros(5), 2, 0.5)
    assert support_function(s, [1, -3, 2, 0, 0.5]) == pytest.approx(0.5 * 5)
    assert sum_largest_abs([1, -3, 2], 0) == 0


def test_general_polyhedron_support_against_lp_vertices():
    rng = np.random.default_rng(2)
    s = _sets(3, rng)[1]
    V = s.vertices
    assert V is not None
    for _ in range(20):
        mu = rng.normal(size=3)
        assert support_function(s, mu) == pytest.approx((V @ mu).max() - s.center @ mu, abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6), M=st.integers(2, 6))
def test_support_is_sound_against_samples(seed, M):
    rng = np.random.default_rng(seed)
    mu = rng.normal(size=M)
    for s in _sets(M, rng):
        H = s.sample(2000, rng)
        assert np.all([s.contains(h, tol=1e-7) for h in H[:50]])
        assert support_function(s, mu) >= ((H - s.center) @ mu).max() - 1e-9


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6), a=st.floats(0.01, 100))
def test_support_positively_homogeneous(seed, a):
    rng = np.random.default_rng(seed)
    mu = rng.normal(size=4)
    for s in _sets(4, rng):
        assert support_function(s, a * mu) == pytest.approx(a * support_function(s, mu), rel=1e-9, abs=1e-9)


def test_dual_bound_examples():
    rng = np.random.default_rng(3)
    box = PolyhedralSet.box_around(rng.normal(size=4), 0.2)
    assert dual_feasible_bound(box, np.zeros(8), np.zeros(4)) == 0.0
    mu = np.abs(rng.normal(size=4))
    p = dual_certificate(box, mu)
    assert dual_feasible_bound(box, p, mu) == pytest.approx(support_function(box, mu) + box.center @ mu, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_random_feasible_dual_bounds_samples(seed):
    rng = np.random.default_rng(seed)
    s = _sets(3, rng)[1]
    p = rng.exponential(size=s.R)
    mu = s.D.T @ p
    bound = dual_feasible_bound(s, p, mu)
    H = s.sample(10_000, rng)
    assert bound >= (H @ mu).max() - 1e-9
    opt = dual_certificate(s, mu)
    assert opt @ s.d <= bound + 1e-9
    assert opt @ s.d == pytest.approx(s.max_linear(mu), abs=1e-7)


def test_dual_bound_rejects_infeasible_certificates():
    box = PolyhedralSet.box_around(np.zeros(2), 1.0)
    with pytest.raises(InfeasibleDual):
        dual_feasible_bound(box, [-1, 0, 0, 0], [0, 0])
    with pytest.raises(InfeasibleDual):
        dual_feasible_bound(box, [1, 0, 0, 0], [0, 0])
    with pytest.raises(DimMismatch):
        dual_feasible_bound(box, [1, 0], [0, 0])


def test_diameter_examples():
    assert diameter(EllipsoidSet(np.zeros(5), 0.36)) == pytest.approx(0.72)
    assert diameter(PolyhedralSet.box_around(np.zeros(4), 0.1)) == pytest.approx(0.4)
    assert diameter(PolyhedralSet.box_around(np.ones(3), 0.0)) == 0.0
    assert diameter(DNormSet(np.zeros(5), 4, 0.5)) == pytest.approx(2.0)


def test_polyhedral_diameter_matches_sampled_distances():
    rng = np.random.default_rng(4)
    s = _sets(3, rng)[1]
    H = s.sample(3000, rng)
    far = np.sqrt(((H[:300, None] - H[None, :300]) ** 2).sum(-1)).max()
    assert diameter(s) >= far - 1e-9


def test_epsilon_guideline_examples():
    assert epsilon_guideline(EllipsoidSet(np.zeros(5), 0.36), 1.0, 5) == pytest.approx(0.72 * np.sqrt(5))
    assert epsilon_guideline(EllipsoidSet(np.zeros(5), 0.36), 1.0, 5) == pytest.approx(1.6100, abs=1e-4)
    assert epsilon_guideline(EllipsoidSet(np.zeros(5), 0.0), 1.0, 5) == 0.0
    assert epsilon_guideline(PolyhedralSet.box_around(np.zeros(4), 0.1), 2.0, 4) == pytest.approx(1.6)
    with pytest.raises(ValueError):
        epsilon_guideline(EllipsoidSet(np.zeros(2), 1.0), 0.0, 2)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_guideline_covers_pairwise_differences(seed):
    rng = np.random.default_rng(seed)
    M, rho_H = 4, 1.5
    for s in _sets(M, rng):
        eps = epsilon_guideline(s, rho_H, M)
        A, B = s.sample(500, rng), s.sample(500, rng)
        mu = rng.uniform(-rho_H, rho_H, size=(500, M))
        assert np.abs(((A - B) * mu).sum(1)).max() <= eps + 1e-9


def test_set_validation():
    with pytest.raises(InfeasibleSet):
        PolyhedralSet.box([1.0, 0.0], [0.0, 1.0])
    with pytest.raises(ValueError):
        EllipsoidSet(np.zeros(2), -1.0)
    with pytest.raises(ValueError):
        DNormSet(np.zeros(2), 3, 0.1)
    with pytest.raises(ValueError):
        RobustConstraintData(-1.0, EllipsoidSet(np.zeros(2), 1.0))
    with pytest.raises(DimMismatch):
        support_function(EllipsoidSet(np.zeros(2), 1.0), np.ones(3))


def test_unbounded_polyhedron_rejected():
    with pytest.raises(Exception):
        PolyhedralSet(np.array([[1.0, 0.0]]), np.array([1.0]))
