from pathlib import Path

import numpy as np
import pytest

from rosguard.model import orthogonal_projector, residual
from rosguard.scenarios import (
    IEEE14_C,
    IEEE14_CENTERS,
    IEEE14_H,
    appendix_dump,
    builtin,
    ieee14_region4,
    ieee14_sets,
    in_band_vector,
    mimo_blockage,
    noiseless,
    random_system,
    residual_scale,
)

FIXTURE = Path(__file__).parent / "fixtures" / "ieee14_region4.txt"


def test_ieee14_values():
    assert IEEE14_H.shape == (5, 3)
    assert IEEE14_H[0].tolist() == [-1.0, 3.0, -1.0]
    assert IEEE14_H[:, 2].tolist() == [-1.0, 0.0, -1.0, 1.0, 2.0]
    assert np.linalg.matrix_rank(IEEE14_H) == 3
    assert IEEE14_C[1][0] == 3.5 and IEEE14_C[1][5] == -2.5
    assert IEEE14_CENTERS[2].tolist() == [-1.1, 0.2, -0.6, 0.7, 2.0]
    e = ieee14_sets("ellipsoid")[0]
    assert e.radius == 0.36
    d = ieee14_sets("dnorm")[0]
    assert (d.kappa, d.u_hat) == (4, 0.5)
    with pytest.raises(ValueError):
        ieee14_sets("sphere")


def test_ieee14_polyhedral_sets_contain_printed_columns():
    assert ieee14_region4("polyhedral").membership() == [True, True, True]


def test_ieee14_ellipsoid_centres_do_not_cover_printed_columns():
    # the printed matrix and the printed centres disagree by more than the radius;
    # the detector uses the centres as its nominal model for this kind
    spec = ieee14_region4("ellipsoid")
    assert spec.membership() == [False, False, False]
    dist = np.linalg.norm(IEEE14_H - np.column_stack(IEEE14_CENTERS), axis=0)
    assert np.all(dist > 0.36)
    assert np.allclose(spec.model.H, np.column_stack(IEEE14_CENTERS))


def test_ieee14_default_band_and_injection():
    spec = ieee14_region4("polyhedral", seed=3)
    assert (spec.detector_cfg.rho_L, spec.detector_cfg.rho_U) == (0.5, 2.0)
    mu = spec.meta["mu"]
    nz = np.abs(mu) > 1e-12
    assert nz.any() and np.all((np.abs(mu[nz]) >= 0.5 - 1e-9) & (np.abs(mu[nz]) <= 2.0 + 1e-9))
    assert np.abs(IEEE14_H.T @ mu).max() <= 1e-9


def test_fixture_matches_dump():
    assert FIXTURE.read_text() == appendix_dump()


def test_random_system_properties():
    spec = random_system(8, seed=1)
    assert set(np.unique(spec.H_true)) <= {-1.0, 0.0, 1.0}
    assert spec.model.H.shape == (8, 4)
    assert np.abs(spec.model.H - spec.H_true).max() <= 0.1
    assert all(spec.membership())
    again = random_system(8, seed=1)
    assert np.array_equal(again.model.H, spec.model.H) and np.array_equal(again.meta["mu"], spec.meta["mu"])
    assert not np.array_equal(random_system(8, seed=2).model.H, spec.model.H)
    with pytest.raises(ValueError):
        random_system(1)


@pytest.mark.parametrize("M", [4, 8, 16, 32])
def test_random_system_injection_is_in_band_residual(M):
    spec = random_system(M, seed=0)
    mu = spec.meta["mu"]
    proj = orthogonal_projector(spec.model)
    assert np.allclose(residual(proj, mu), mu, atol=1e-9)
    a = np.abs(mu[np.abs(mu) > 1e-12])
    assert a.size and a.min() >= 0.5 - 1e-9 and a.max() <= 2.0 + 1e-9


def test_in_band_vector_support_size_and_failure():
    rng = np.random.default_rng(0)
    H = rng.normal(size=(10, 2))
    mu = in_band_vector(H, 1.0, 3.0, rng, support_size=4)
    assert np.count_nonzero(mu) == 4
    assert np.abs(H.T @ mu).max() <= 1e-9
    with pytest.raises(RuntimeError):
        # a single coordinate cannot be orthogonal to a column that is nonzero there
        in_band_vector(np.ones((3, 1)), 1.0, 2.0, rng, support_size=1, attempts=5)


def test_mimo_shapes_and_blockage():
    spec = mimo_blockage()
    assert spec.model.H.shape == (4, 2)
    assert np.allclose(spec.meta["dH"][:2], -0.5 * spec.model.H[:2])
    assert not spec.meta["dH"][2:].any()
    X = spec.stream(5, seed=0)
    assert X.shape == (5, 4)


def test_mimo_zero_gain_has_no_change():
    spec = noiseless(mimo_blockage(blockage_gain=0.0))
    X = spec.stream(20, seed=1)
    proj = orthogonal_projector(spec.model)
    assert max(np.linalg.norm(residual(proj, x)) for x in X) <= 1e-5
    with pytest.raises(ValueError):
        mimo_blockage(blockage_gain=1.5)


def test_residual_scale_zero_when_true_matrix_is_nominal():
    assert residual_scale(ieee14_region4("polyhedral")) == pytest.approx(0.0, abs=1e-9)
    assert residual_scale(ieee14_region4("ellipsoid")) > 0.1


def test_builtin_lookup():
    assert builtin("random-6").model.M == 6
    assert builtin("ieee14-dnorm").set_kind == "dnorm"
    with pytest.raises(KeyError):
        builtin("nope")


def test_stream_seed_and_change_time_override():
    spec = ieee14_region4("polyhedral", t_a=None)
    a = spec.stream(30, seed=1)
    b = spec.stream(30, seed=1, t_a=10)
    assert np.array_equal(a[:9], b[:9]) and not np.allclose(a[9:], b[9:])
