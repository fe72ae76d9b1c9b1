import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from guidedspde.amari import AmariModel, CustomDrift, TimeGrid, ZeroDrift
from guidedspde.observation import ObservationScheme, Problem, build_local_average_operator, generate_dataset
from guidedspde.spectral import LinearDynamics, SpectralGrid
from guidedspde.ukf import UkfState, psd_sqrt, run_ukf, sigma_points, ukf_predict, ukf_update

from oracles import kalman_filter, ou_transition


def test_zero_covariance_points_collapse():
    st_ = UkfState(np.array([1.0, -2.0, 0.5]), np.zeros((3, 3)))
    pts, wm, wc = sigma_points(st_)
    np.testing.assert_array_equal(pts, np.tile(st_.mean, (7, 1)))
    assert wm.sum() == pytest.approx(1.0, abs=1e-9)


def test_unit_spread_points():
    # alpha = 1, kappa = -1 gives M + lambda = 1 for M = 2
    st_ = UkfState(np.array([0.5, 1.0]), np.eye(2), alpha=1.0, kappa=-1.0)
    pts, wm, _ = sigma_points(st_)
    expected = np.array([[0.5, 1.0], [1.5, 1.0], [0.5, 2.0], [-0.5, 1.0], [0.5, 0.0]])
    np.testing.assert_allclose(pts, expected, atol=1e-15)
    assert wm.sum() == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_unscented_moments_exact_for_gaussian(M, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(M, M))
    st_ = UkfState(rng.normal(size=M), A @ A.T + 0.1 * np.eye(M))
    pts, wm, wc = sigma_points(st_)
    assert wm.sum() == pytest.approx(1.0, abs=1e-6)
    mean = st_.mean + wm[1:] @ (pts[1:] - st_.mean)
    np.testing.assert_allclose(mean, st_.mean, atol=1e-10)
    d = pts - st_.mean
    np.testing.assert_allclose((d * wc[:, None]).T @ d, st_.cov, rtol=1e-6, atol=1e-8)


def test_psd_sqrt_singular_and_indefinite():
    C = np.array([[1.0, 1.0], [1.0, 1.0]])
    S = psd_sqrt(C)
    np.testing.assert_allclose(S @ S.T, C, atol=1e-12)
    with pytest.raises(np.linalg.LinAlgError):
        psd_sqrt(np.diag([1.0, -1.0]))


def test_predict_zero_drift_matches_ou():
    dyn = LinearDynamics(np.array([1.0, 0.5, 2.0]), np.array([0.3, 0.2, 0.1]))
    rng = np.random.default_rng(1)
    A = rng.normal(size=(3, 3))
    st_ = UkfState(rng.normal(size=3), A @ A.T)
    out = ukf_predict(st_, 0.05, 20, dyn, ZeroDrift())
    s, v = ou_transition(dyn.a, dyn.q, 1.0)
    np.testing.assert_allclose(out.mean, s * st_.mean, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(out.cov, s[:, None] * st_.cov * s[None, :] + np.diag(v), rtol=1e-8, atol=1e-12)


def test_predict_noise_free_contraction():
    dyn = LinearDynamics(np.array([1.0, 0.5]), np.zeros(2))
    st_ = UkfState(np.array([1.0, 2.0]), np.diag([2.0, 3.0]))
    out = ukf_predict(st_, 0.1, 1, dyn, ZeroDrift())
    np.testing.assert_allclose(np.diag(out.cov), np.diag(st_.cov) * np.exp(-2 * dyn.a * 0.1), rtol=1e-10)
    np.testing.assert_allclose(out.mean, np.exp(-dyn.a * 0.1) * st_.mean, rtol=1e-9)


def test_update_limits():
    st_ = UkfState(np.array([0.3, -0.4]), np.array([[1.0, 0.2], [0.2, 0.5]]))
    far = ObservationScheme(np.eye(2), 1e12 * np.eye(2))
    out, _ = ukf_update(st_, far, np.array([5.0, 5.0]))
    np.testing.assert_allclose(out.mean, st_.mean, atol=1e-6)
    np.testing.assert_allclose(out.cov, st_.cov, atol=1e-6)
    exact = ObservationScheme(np.eye(2), 1e-12 * np.eye(2))
    out, _ = ukf_update(st_, exact, np.array([5.0, -1.0]))
    np.testing.assert_allclose(out.mean, [5.0, -1.0], atol=1e-8)
    np.testing.assert_allclose(out.cov, out.cov.T, atol=0)


def _linear_problem(n=10):
    M, m = 8, 3
    grid = SpectralGrid(2 * np.pi, M)
    L = build_local_average_operator(grid, [-2.0, 0.0, 2.0], 0.5)
    dyn = LinearDynamics(np.ones(M), 0.4 * np.linspace(1.0, 0.2, M))
    times = 0.5 * np.arange(1, n + 1)
    y = np.random.default_rng(2).normal(scale=0.5, size=(n, m))
    scheme = ObservationScheme(L, 0.05 * np.eye(m), times)
    return Problem(dyn, ZeroDrift(), scheme, y, TimeGrid.from_step(times, 0.05), np.linspace(-1, 1, M), grid=grid)


def test_linear_run_equals_kalman():
    p = _linear_problem()
    r = run_ukf(p)
    means, covs, loglik = kalman_filter(p.x0, np.zeros((8, 8)), p.dynamics.a, p.dynamics.q, p.scheme.L,
                                        p.scheme.Sigma, p.times, p.y)
    np.testing.assert_allclose(r.means, means, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(r.covariances, covs, rtol=1e-8, atol=1e-10)
    assert r.log_evidence == pytest.approx(loglik, rel=1e-8)
    for C in r.covariances:
        np.testing.assert_array_equal(C, C.T)
        assert np.linalg.eigvalsh(C).min() >= -1e-10


def test_nonlinear_run_is_finite_and_tracks_errors():
    ds, _ = generate_dataset(AmariModel(M=32, delta=0.5), [1.0, 2.0, 3.0], 0.1, seed=1, m=5)
    r = run_ukf(ds.problem())
    assert r.flavor == "ukf"
    assert np.all(np.isfinite(r.means)) and r.errors.shape == (3,)


def test_custom_drift_moves_mean():
    dyn = LinearDynamics(np.ones(2), np.zeros(2))
    st_ = UkfState(np.zeros(2), np.zeros((2, 2)))
    out = ukf_predict(st_, 0.1, 10, dyn, CustomDrift(lambda x: np.ones_like(x)))
    np.testing.assert_allclose(out.mean, 1 - np.exp(-1.0), rtol=1e-12)
