"""Unscented Kalman filter on the spectral mode state."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .filtering import FilterResult
from .io import relative_error
from .observation import ObservationScheme, Problem
from .spectral import LinearDynamics, ou_step_variance, phi_factors, semigroup_factors

_JITTER = 1e-10


@dataclass
class UkfState:
    mean: np.ndarray
    cov: np.ndarray
    alpha: float = 1e-3
    beta: float = 2.0
    kappa: float = 0.0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        M = self.mean.size
        if self.cov.shape != (M, M):
            raise ValueError("covariance shape does not match the mean")

    @property
    def M(self) -> int:
        return self.mean.size

    @property
    def lam(self) -> float:
        return self.alpha ** 2 * (self.M + self.kappa) - self.M

    def weights(self):
        """Mean and covariance weights of the ``2M + 1`` sigma points."""
        c = self.M + self.lam
        wm = np.full(2 * self.M + 1, 0.5 / c)
        wc = wm.copy()
        wm[0] = self.lam / c
        wc[0] = self.lam / c + 1 - self.alpha ** 2 + self.beta
        return wm, wc


def psd_sqrt(C) -> np.ndarray:
    """Lower factor ``S`` with ``S S^T = C``; Cholesky, with an eigen fallback for singular ``C``."""
    C = 0.5 * (C + C.T)
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(C)
    if w.min() < -_JITTER * max(1.0, np.abs(w).max()):
        raise np.linalg.LinAlgError(f"covariance is indefinite (min eigenvalue {w.min():.3e})")
    return V * np.sqrt(np.clip(w, 0, None))


def sigma_points(state: UkfState):
    """``(points, wm, wc)`` with points of shape ``(2M + 1, M)``."""
    c = state.M + state.lam
    S = psd_sqrt(c * state.cov)
    pts = np.empty((2 * state.M + 1, state.M))
    pts[0] = state.mean
    pts[1:state.M + 1] = state.mean + S.T
    pts[state.M + 1:] = state.mean - S.T
    wm, wc = state.weights()
    return pts, wm, wc


def _moments(points, wm, wc):
    center = points[0]
    mean = center + wm[1:] @ (points[1:] - center)
    d = points - mean
    cov = (d * wc[:, None]).T @ d
    return mean, 0.5 * (cov + cov.T)


def ukf_predict(state: UkfState, dt: float, steps: int, dynamics: LinearDynamics, drift) -> UkfState:
    """Propagate through ``steps`` deterministic exponential-Euler substeps of size ``dt``.

    Process noise ``diag(q (1 - e^{-2 a dt}) / (2a))`` is added after each substep.
    """
    s = semigroup_factors(dynamics, dt)
    ph = phi_factors(dynamics, dt)
    v = ou_step_variance(dynamics, dt)
    for _ in range(steps):
        pts, wm, wc = sigma_points(state)
        pts = s * pts if drift.is_zero else s * pts + ph * drift(pts)
        mean, cov = _moments(pts, wm, wc)
        cov[np.diag_indices_from(cov)] += v
        state = replace(state, mean=mean, cov=cov)
    return state


def ukf_update(state: UkfState, scheme: ObservationScheme, y):
    """Exact Kalman update for the linear observation; returns ``(state, log predictive density)``."""
    L = scheme.L
    PLt = state.cov @ L.T
    S = L @ PLt + scheme.Sigma
    try:
        cS = cho_factor(S, lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("innovation covariance is not positive definite") from exc
    r = np.asarray(y, dtype=float) - L @ state.mean
    mean = state.mean + PLt @ cho_solve(cS, r)
    cov = state.cov - PLt @ cho_solve(cS, PLt.T)
    cov = 0.5 * (cov + cov.T)
    logdet = 2 * np.sum(np.log(np.diag(cS[0])))
    loglik = -0.5 * (r.size * np.log(2 * np.pi) + logdet + r @ cho_solve(cS, r))
    return replace(state, mean=mean, cov=cov), float(loglik)


def run_ukf(problem: Problem, alpha: float = 1e-3, beta: float = 2.0, kappa: float = 0.0,
            cov0=None) -> FilterResult:
    """Filter all observations; ``cov0`` defaults to zero (known initial state)."""
    M = problem.dynamics.size
    cov0 = np.zeros((M, M)) if cov0 is None else cov0
    state = UkfState(problem.x0.copy(), cov0, alpha, beta, kappa)
    tg = problem.time_grid
    means = np.empty((tg.n, M))
    covs = np.empty((tg.n, M, M))
    log_ev = 0.0
    for i in range(1, tg.n + 1):
        state = ukf_predict(state, tg.step(i), int(tg.substeps[i - 1]), problem.dynamics, problem.drift)
        state, ll = ukf_update(state, problem.scheme, problem.y[i - 1])
        log_ev += ll
        means[i - 1] = state.mean
        covs[i - 1] = state.cov
    errors = None
    if problem.truth is not None:
        errors = np.array([relative_error(means[k], problem.truth[k]) for k in range(tg.n)])
    return FilterResult("ukf", problem.times.copy(), means, np.full(tg.n, np.nan), [], log_ev, errors,
                        None, covs)
