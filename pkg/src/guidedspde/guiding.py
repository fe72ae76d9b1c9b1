"""Guiding functions ``g(t, x)`` and their scores ``G = grad_x log g``.

Three interchangeable evaluators share the interface

    score(t, x, interval=None)   -> array (..., M)
    log_g(t, x, interval=None)   -> array (...)
    aux_rates                    -> rates of the auxiliary linear dynamics

``interval`` (1-based) selects the piece ``(t_{i-1}, t_i]`` explicitly, which is
how right limits ``g(t_{i-1}+, x)`` are requested.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh

from .io import write_dump
from .observation import ObservationScheme
from .spectral import LinearDynamics, convolution_factors, semigroup_factors

_LOG2PI = np.log(2 * np.pi)


class GaussianBlock:
    """``x -> f(y; S_tau-weighted L x, B + L Q_tau L^T)`` for lags ``tau`` before an anchor time."""

    def __init__(self, L, B, y, dynamics: LinearDynamics):
        self.L = np.atleast_2d(np.asarray(L, dtype=float))
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        self.y = np.asarray(y, dtype=float)
        self.dynamics = dynamics
        self.p = self.L.shape[0]
        try:
            cB = np.linalg.cholesky(self.B)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("block covariance is not positive definite") from exc
        self.logdet_B = 2 * np.sum(np.log(np.diag(cB)))
        self.rate = dynamics.uniform_rate
        self._cache = None
        if self.rate is not None:
            C = (self.L * dynamics.q) @ self.L.T
            lam, V = eigh(C, self.B)
            self.lam = np.clip(lam, 0.0, None)
            self.W = V.T @ self.L
            self.vy = V.T @ self.y
            self._V = V

    def _lag_factors(self, tau):
        return (float(np.exp(-self.rate * tau)),
                float(tau) if self.rate == 0 else -np.expm1(-2 * self.rate * tau) / (2 * self.rate))

    def R(self, tau) -> np.ndarray:
        """Covariance of the stacked observations given the state at lag ``tau``."""
        v = self.dynamics.q * convolution_factors(self.dynamics, tau)
        return self.B + (self.L * v) @ self.L.T

    def _general(self, tau):
        cache = self._cache
        if cache is not None and cache[0] == tau:
            return cache[1]
        Lt = self.L * semigroup_factors(self.dynamics, tau)
        R = self.R(tau)
        chol = cho_factor(R, lower=True)
        logdet = 2 * np.sum(np.log(np.diag(chol[0])))
        data = (Lt, chol, logdet)
        self._cache = (tau, data)
        return data

    def _fast(self, tau, x):
        s, rho = self._lag_factors(tau)
        z = self.vy - s * (x @ self.W.T)
        den = 1.0 + rho * self.lam
        return s, z, z / den, np.sum(np.log(den))

    def log_g(self, tau, x):
        x = np.asarray(x, dtype=float)
        if self.rate is not None:
            _, z, d, logden = self._fast(tau, x)
            return -0.5 * (self.p * _LOG2PI + self.logdet_B + logden + np.sum(z * d, axis=-1))
        Lt, chol, logdet = self._general(tau)
        r = self.y - x @ Lt.T
        flat = r.reshape(-1, self.p)
        quad = np.sum(cho_solve(chol, flat.T).T * flat, axis=-1).reshape(r.shape[:-1])
        return -0.5 * (self.p * _LOG2PI + logdet + quad)

    def score(self, tau, x):
        x = np.asarray(x, dtype=float)
        if self.rate is not None:
            s, _, d, _ = self._fast(tau, x)
            return s * (d @ self.W)
        Lt, chol, _ = self._general(tau)
        r = self.y - x @ Lt.T
        flat = r.reshape(-1, self.p)
        return (cho_solve(chol, flat.T).T @ Lt).reshape(x.shape)


class _PiecewiseGuide:
    """Shared bookkeeping for guides defined piecewise on ``(t_{i-1}, t_i]``."""

    tol = 1e-9

    def __init__(self, times, aux_dynamics: LinearDynamics):
        self.times = np.asarray(times, dtype=float)
        self.aux_dynamics = aux_dynamics

    @property
    def aux_rates(self) -> np.ndarray:
        return self.aux_dynamics.a

    @property
    def n(self) -> int:
        return self.times.size

    def start(self, i: int) -> float:
        return 0.0 if i == 1 else float(self.times[i - 2])

    def locate(self, t: float, interval: int | None = None) -> int:
        scale = self.tol * max(1.0, float(self.times[-1]))
        if interval is None:
            if t < -scale or t > self.times[-1] + scale:
                raise ValueError(f"t = {t} lies outside [0, {self.times[-1]}]")
            return int(min(np.searchsorted(self.times, t - scale, side="left"), self.n - 1)) + 1
        if not 1 <= interval <= self.n:
            raise ValueError(f"interval {interval} out of range 1..{self.n}")
        if t < self.start(interval) - scale or t > self.times[interval - 1] + scale:
            raise ValueError(f"t = {t} lies outside interval {interval}")
        return interval


class OneStepGuide(_PiecewiseGuide):
    """Guide toward the next observation only: on ``(t_{i-1}, t_i]`` it is
    ``g_i(t, x) = f(y_i; L S_{t_i - t} x, Sigma + L Q_{t_i - t} L^T)``.

    ``aux_dynamics`` defaults to the model dynamics; passing rates zero gives
    the Brownian-auxiliary guide used by GPF-II.
    """

    def __init__(self, scheme: ObservationScheme, y, times, dynamics: LinearDynamics,
                 aux_dynamics: LinearDynamics | None = None):
        aux = aux_dynamics or dynamics
        super().__init__(times, aux)
        y = np.atleast_2d(np.asarray(y, dtype=float))
        self.blocks = [GaussianBlock(scheme.L, scheme.Sigma, y[i], aux) for i in range(self.n)]

    def log_g(self, t, x, interval=None):
        i = self.locate(t, interval)
        return self.blocks[i - 1].log_g(max(self.times[i - 1] - t, 0.0), x)

    def score(self, t, x, interval=None):
        i = self.locate(t, interval)
        return self.blocks[i - 1].score(max(self.times[i - 1] - t, 0.0), x)


def onestep_guide(scheme, y, times, dynamics) -> OneStepGuide:
    return OneStepGuide(scheme, y, times, dynamics)


def gpf2_guide(scheme, y, times, dynamics) -> OneStepGuide:
    """One-step guide built from a driftless (``A = 0``) auxiliary process."""
    return OneStepGuide(scheme, y, times, dynamics, dynamics.with_rates(0.0))


class DirectGuide(_PiecewiseGuide):
    """Full-observation guide assembled by the backward information-filter recursion.

    On interval ``i`` the stacked operator is ``[L; L S_{t_{i+1}-t_i}; ...; L S_{t_n-t_i}]``
    and the anchor covariance is ``blockdiag(Sigma, R^+_{t_i})``.
    """

    def __init__(self, scheme: ObservationScheme, y, times, dynamics: LinearDynamics):
        super().__init__(times, dynamics)
        y = np.atleast_2d(np.asarray(y, dtype=float))
        n = self.n
        blocks = [None] * n
        L_next = y_next = None
        for i in range(n, 0, -1):
            if i == n:
                L_stack, B, y_plus = scheme.L, scheme.Sigma, y[n - 1]
            else:
                lag = self.times[i] - self.times[i - 1]
                nxt = blocks[i]
                R_plus = nxt.R(lag)
                L_stack = np.vstack([scheme.L, L_next * semigroup_factors(dynamics, lag)])
                m = scheme.m
                B = np.zeros((m + R_plus.shape[0],) * 2)
                B[:m, :m] = scheme.Sigma
                B[m:, m:] = R_plus
                y_plus = np.concatenate([y[i - 1], y_next])
            try:
                blocks[i - 1] = GaussianBlock(L_stack, B, y_plus, dynamics)
            except np.linalg.LinAlgError as exc:
                raise np.linalg.LinAlgError(f"covariance on interval {i} is not positive definite") from exc
            L_next, y_next = L_stack, y_plus
        self.blocks = blocks

    def log_g(self, t, x, interval=None):
        i = self.locate(t, interval)
        return self.blocks[i - 1].log_g(max(self.times[i - 1] - t, 0.0), x)

    def score(self, t, x, interval=None):
        i = self.locate(t, interval)
        return self.blocks[i - 1].score(max(self.times[i - 1] - t, 0.0), x)

    def R(self, t, interval=None) -> np.ndarray:
        i = self.locate(t, interval)
        return self.blocks[i - 1].R(max(self.times[i - 1] - t, 0.0))


def build_direct_guide(scheme, y, times, dynamics) -> DirectGuide:
    return DirectGuide(scheme, y, times, dynamics)


def _riccati_rhs(U, V, a, q):
    UQ = U * q
    dU = -(a[:, None] * U + U * a[None, :] + UQ @ U)
    dV = -(a * V + UQ @ V)
    dc = -0.5 * (np.dot(np.diag(U), q) - np.dot(q * V, V))
    return dU, dV, dc


_RK4_MAX_STEP = 0.5


def _rk4_step(U, V, c, h, a, q):
    k1 = _riccati_rhs(U, V, a, q)
    k2 = _riccati_rhs(U + 0.5 * h * k1[0], V + 0.5 * h * k1[1], a, q)
    k3 = _riccati_rhs(U + 0.5 * h * k2[0], V + 0.5 * h * k2[1], a, q)
    k4 = _riccati_rhs(U + h * k3[0], V + h * k3[1], a, q)
    U = U + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    V = V + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    c = c + h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    return U, V, c


class RiccatiGuide(_PiecewiseGuide):
    """Guide parametrised as ``log g = c_t + <V_t, x> - <x, U_t x>/2``.

    ``(U, V, c)`` are integrated backward in time with classical RK4 on the
    supplied time grid, substepping where the quadratic term is stiff; dense
    ``U`` is kept at every grid time, so memory is ``O(n_steps M^2)``.
    """

    def __init__(self, scheme: ObservationScheme, y, time_grid, dynamics: LinearDynamics):
        if scheme.times is not None and not np.allclose(scheme.times, time_grid.times):
            raise ValueError("time grid does not contain the observation times")
        super().__init__(time_grid.times, dynamics)
        self.time_grid = time_grid
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if y.shape[0] != time_grid.n:
            raise ValueError("one observation per grid observation time is required")
        a, q = dynamics.a, dynamics.q
        Sinv = scheme.sigma_inv
        J_U = scheme.L.T @ Sinv @ scheme.L
        M = scheme.L.shape[1]
        U = np.zeros((M, M))
        V = np.zeros(M)
        c = 0.0
        zero = np.zeros(M)
        self.U, self.V, self.c = [None] * self.n, [None] * self.n, [None] * self.n
        for i in range(self.n, 0, -1):
            U = U + J_U
            V = V + scheme.L.T @ (Sinv @ y[i - 1])
            c = c + float(scheme.log_density(zero, y[i - 1]))
            N = int(time_grid.substeps[i - 1])
            h = time_grid.step(i)
            Us = np.empty((N + 1, M, M))
            Vs = np.empty((N + 1, M))
            cs = np.empty(N + 1)
            Us[N], Vs[N], cs[N] = U, V, c
            for k in range(N, 0, -1):
                # substep so that h times the stiffness of U Q U stays inside the RK4 stability region
                rate = np.abs(U * q).sum(axis=1).max() + 2 * a.max()
                n_sub = max(1, int(np.ceil(h * rate / _RK4_MAX_STEP)))
                for _ in range(n_sub):
                    U, V, c = _rk4_step(U, V, c, h / n_sub, a, q)
                U = 0.5 * (U + U.T)
                Us[k - 1], Vs[k - 1], cs[k - 1] = U, V, c
            self.U[i - 1], self.V[i - 1], self.c[i - 1] = Us, Vs, cs

    def _index(self, t, interval):
        i = self.locate(t, interval)
        k = int(round((t - self.start(i)) / self.time_grid.step(i)))
        return i, min(max(k, 0), int(self.time_grid.substeps[i - 1]))

    def state(self, t, interval=None):
        """``(U_t, V_t, c_t)`` at the nearest stored grid time."""
        i, k = self._index(t, interval)
        return self.U[i - 1][k], self.V[i - 1][k], self.c[i - 1][k]

    def score(self, t, x, interval=None):
        U, V, _ = self.state(t, interval)
        return V - np.asarray(x, dtype=float) @ U

    def log_g(self, t, x, interval=None):
        U, V, c = self.state(t, interval)
        x = np.asarray(x, dtype=float)
        return c + x @ V - 0.5 * np.sum((x @ U) * x, axis=-1)

    def dump(self, path):
        """Write the ``(U, V, c)`` trajectories (interval by interval) as a binary dump."""
        arrays = {}
        for i in range(self.n):
            arrays[f"U_{i + 1}"] = self.U[i]
            arrays[f"V_{i + 1}"] = self.V[i]
            arrays[f"c_{i + 1}"] = self.c[i]
            arrays[f"t_{i + 1}"] = self.start(i + 1) + self.time_grid.step(i + 1) * np.arange(
                self.time_grid.substeps[i] + 1)
        return write_dump(path, arrays)


def build_riccati_guide(scheme, y, time_grid, dynamics) -> RiccatiGuide:
    return RiccatiGuide(scheme, y, time_grid, dynamics)


def riccati_mode_closed_form(a: float, q: float, u_terminal: float, tau: float) -> float:
    """Exact scalar Riccati solution ``tau`` time units before the terminal time."""
    if not u_terminal > 0:
        raise ValueError("terminal value must be positive")
    if tau < 0:
        raise ValueError("lag must be nonnegative")
    x = 2 * a * tau
    decay = np.exp(-x)
    # tau (1 - e^{-x}) / x, written so that tiny or subnormal rates do not underflow to zero
    growth = tau if x == 0 else tau * (-np.expm1(-x) / x)
    return float(decay / (1 / u_terminal + q * growth))
