"""Amari neural-field nonlinearity, drift objects and the exponential-Euler integrator."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .spectral import (LinearDynamics, SpectralGrid, convolution_factors, phi_factors,
                       semigroup_factors)


@dataclass(frozen=True)
class AmariParams:
    amp: float = 4.0
    B: float = 1.5
    eta: float = 10.0
    zeta: float = 0.5
    delta: float = 0.0

    def __post_init__(self):
        if not self.B > 0:
            raise ValueError(f"B must be positive, got {self.B}")
        for name in ("amp", "eta", "zeta"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")

    def replace(self, **changes) -> "AmariParams":
        return replace(self, **changes)


def activation(params: AmariParams, x):
    """Shifted sigmoid with ``f(0) = 0``."""
    # logistic(z) = (1 + tanh(z / 2)) / 2; tanh is much faster than expit in numpy and the
    # difference form makes f(0) = 0 exactly
    half_zeta = 0.5 * params.zeta
    return 0.5 * (np.tanh(0.5 * params.eta * np.asarray(x) - half_zeta) - np.tanh(-half_zeta))


def connectivity(params: AmariParams, r):
    """Difference-of-Gaussians kernel as a function of the distance ``r``."""
    r = np.asarray(r, dtype=float)
    c = params.amp / np.sqrt(np.pi)
    return c * np.exp(-(r - params.delta) ** 2) - c / params.B * np.exp(-((r - params.delta) / params.B) ** 2)


def kernel_table(params: AmariParams, grid: SpectralGrid) -> np.ndarray:
    """Kernel at the wrapped displacements ``min(k, M - k) dx``, ``k = 0..M-1``."""
    k = np.arange(grid.M)
    return connectivity(params, grid.dx * np.minimum(k, grid.M - k))


def build_kernel(params: AmariParams, grid: SpectralGrid) -> np.ndarray:
    """Real FFT of the tabulated kernel."""
    return np.fft.rfft(kernel_table(params, grid))


class ZeroDrift:
    is_zero = True

    def __call__(self, modes):
        return np.zeros_like(np.asarray(modes, dtype=float))


class AmariDrift:
    """``F(x)(xi) = int k_F(|xi - xi'|) f(x(xi')) dxi'`` on the periodic grid."""

    is_zero = False

    def __init__(self, params: AmariParams, grid: SpectralGrid):
        self.params = params
        self.grid = grid
        self.kernel_hat = build_kernel(params, grid)
        # The kernel is even, so convolution scales each cos/sin pair by the same real factor
        # and the whole map reduces to two dense products in mode space.
        eye = np.eye(grid.M)
        self._synth = grid.to_field(eye)
        scale = grid.dx * self.kernel_hat.real[grid.mode_index]
        self._analysis = grid.to_modes(eye) * scale

    def apply_field(self, field):
        fx = activation(self.params, field)
        return self.grid.dx * np.fft.irfft(self.kernel_hat * np.fft.rfft(fx, axis=-1), n=self.grid.M, axis=-1)

    def __call__(self, modes):
        return activation(self.params, np.asarray(modes, dtype=float) @ self._synth) @ self._analysis

    def with_params(self, params: AmariParams) -> "AmariDrift":
        return AmariDrift(params, self.grid)


class CustomDrift:
    """Drift given directly as a map on mode vectors."""

    is_zero = False

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray]):
        self.fn = fn

    def __call__(self, modes):
        return np.asarray(self.fn(np.asarray(modes, dtype=float)), dtype=float)


def apply_F(drift, field, grid: SpectralGrid | None = None):
    """Evaluate the drift on a grid field and return a grid field."""
    if isinstance(drift, AmariDrift):
        return drift.apply_field(field)
    if grid is None:
        raise ValueError("a grid is needed to evaluate a mode-space drift on a field")
    return grid.to_field(drift(grid.to_modes(field)))


@dataclass(frozen=True)
class TimeGrid:
    """Observation times ``t_1 < ... < t_n`` (with ``t_0 = 0``) and substeps per interval."""

    times: np.ndarray
    substeps: np.ndarray

    def __post_init__(self):
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        if times.ndim != 1 or times.size == 0:
            raise ValueError("need at least one observation time")
        if times[0] <= 0 or np.any(np.diff(times) <= 0):
            raise ValueError("observation times must be positive and strictly increasing")
        substeps = np.broadcast_to(np.asarray(self.substeps, dtype=int), times.shape).copy()
        if np.any(substeps < 1):
            raise ValueError("substeps must be >= 1")
        times.flags.writeable = False
        substeps.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "substeps", substeps)

    @classmethod
    def from_step(cls, times, dt: float, rtol: float = 1e-6) -> "TimeGrid":
        """Grid whose step on each interval is (as close as possible to) ``dt``."""
        times = np.asarray(times, dtype=float)
        lengths = np.diff(np.concatenate([[0.0], times]))
        n = np.maximum(np.rint(lengths / dt).astype(int), 1)
        if np.any(np.abs(n * dt - lengths) > rtol * lengths):
            raise ValueError(f"step {dt} does not divide the observation intervals {lengths}")
        return cls(times, n)

    @property
    def n(self) -> int:
        return self.times.size

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def start(self, i: int) -> float:
        """Left end of interval ``i`` (1-based)."""
        return 0.0 if i == 1 else float(self.times[i - 2])

    def step(self, i: int) -> float:
        return (self.times[i - 1] - self.start(i)) / self.substeps[i - 1]

    def step_times(self, i: int) -> np.ndarray:
        """Left-endpoint times of the steps on interval ``i``."""
        return self.start(i) + self.step(i) * np.arange(self.substeps[i - 1])

    @property
    def n_steps(self) -> int:
        return int(self.substeps.sum())

    def offsets(self) -> np.ndarray:
        """Index of the first step of each interval in the global step array."""
        return np.concatenate([[0], np.cumsum(self.substeps)])

    def all_times(self) -> np.ndarray:
        """All grid times from 0 to T (length n_steps + 1)."""
        parts = [self.step_times(i) for i in range(1, self.n + 1)]
        return np.concatenate(parts + [[self.T]])


def exp_euler_step(state, delta, drift_value, guide_value, noise, dynamics: LinearDynamics):
    """One exponential-Euler step of the (guided) mild formulation, per mode.

    ``x' = e^{-a delta} x + phi(delta) (F + q G) + sqrt(v(delta)) z``
    """
    if not delta > 0:
        raise ValueError("step size must be positive")
    state = np.asarray(state, dtype=float)
    for arr in (drift_value, noise) + ((guide_value,) if guide_value is not None else ()):
        if np.shape(arr)[-1] != state.shape[-1]:
            raise ValueError("length mismatch between state and step inputs")
    forcing = np.asarray(drift_value, dtype=float)
    if guide_value is not None:
        forcing = forcing + dynamics.q * guide_value
    return (semigroup_factors(dynamics, delta) * state + phi_factors(dynamics, delta) * forcing
            + np.sqrt(dynamics.q * convolution_factors(dynamics, delta)) * noise)


def simulate_path(x0, t0: float, dt: float, noise, drift, dynamics: LinearDynamics, guide=None,
                  interval: int | None = None, keep_path: bool = True):
    """Integrate over ``noise.shape[-2]`` steps of size ``dt`` starting at ``t0``.

    ``x0`` has shape ``(..., M)`` and ``noise`` shape ``(..., N, M)`` (standard
    normals).  The guide score is evaluated at the left end of each step; when
    the guide uses auxiliary rates different from the model rates, the linear
    mismatch ``(a_aux - a) x`` is added to the Girsanov integrand.

    Returns ``(path, log_psi)`` with ``path`` of shape ``(..., N + 1, M)`` (or
    just the end state when ``keep_path`` is False).
    """
    x = np.array(x0, dtype=float)
    noise = np.asarray(noise, dtype=float)
    nsteps = noise.shape[-2]
    if noise.shape[-1] != x.shape[-1]:
        raise ValueError("noise and state dimensions differ")
    s = semigroup_factors(dynamics, dt)
    ph = phi_factors(dynamics, dt)
    sd = np.sqrt(dynamics.q * convolution_factors(dynamics, dt))
    q = dynamics.q
    log_psi = np.zeros(x.shape[:-1])
    mismatch = None
    if guide is not None:
        aux = np.asarray(guide.aux_rates, dtype=float)
        if np.any(aux != dynamics.a):
            mismatch = aux - dynamics.a
    track_psi = guide is not None and (not drift.is_zero or mismatch is not None)
    if keep_path:
        path = np.empty(x.shape[:-1] + (nsteps + 1, x.shape[-1]))
        path[..., 0, :] = x
    for k in range(nsteps):
        t = t0 + k * dt
        f = drift(x) if not drift.is_zero else None
        forcing = f
        if guide is not None:
            g = guide.score(t, x, interval=interval)
            forcing = q * g if f is None else f + q * g
            if track_psi:
                integrand = np.zeros_like(x) if f is None else f
                if mismatch is not None:
                    integrand = integrand + mismatch * x
                log_psi = log_psi + dt * np.sum(integrand * g, axis=-1)
        x = s * x + sd * noise[..., k, :] if forcing is None else s * x + ph * forcing + sd * noise[..., k, :]
        if keep_path:
            path[..., k + 1, :] = x
    return (path if keep_path else x), log_psi


@dataclass(frozen=True)
class AmariModel:
    """Full parameter set of the stochastic Amari case study."""

    domain_length: float = 20 * np.pi
    M: int = 256
    amp: float = 4.0
    B: float = 1.5
    eta: float = 10.0
    zeta: float = 0.5
    delta: float = 0.0
    sigma0: float = 3e5
    rho0: float = 5e-5
    eta0: float = 1.0
    rate: float = 1.0
    scaled_frequencies: bool = False

    @property
    def params(self) -> AmariParams:
        return AmariParams(self.amp, self.B, self.eta, self.zeta, self.delta)

    def grid(self) -> SpectralGrid:
        return SpectralGrid(self.domain_length, self.M)

    def dynamics(self) -> LinearDynamics:
        from .spectral import matern_spectrum
        grid = self.grid()
        q = matern_spectrum(self.sigma0, self.rho0, self.eta0, 1, grid, self.scaled_frequencies)
        return LinearDynamics(np.full(self.M, self.rate), q)

    def drift(self, params: AmariParams | None = None) -> AmariDrift:
        return AmariDrift(params or self.params, self.grid())

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def replace(self, **changes) -> "AmariModel":
        return replace(self, **changes)
