"""Periodic one-dimensional spectral discretisation.

State vectors are stored as ``M`` real coefficients with respect to the
orthonormal real Fourier basis of :math:`L^2(D)` on ``D = [-|D|/2, |D|/2)``::

    index 0          constant mode   1/sqrt(|D|)
    index 2l-1, 2l   sqrt(2/|D|) cos(2 pi l xi/|D|), sqrt(2/|D|) sin(2 pi l xi/|D|)
    index M-1        Nyquist cosine  cos(pi M xi/|D|)/sqrt(|D|)

All linear operators of the model (semigroup, noise covariance) are diagonal
in this basis, so they are represented by per-coefficient arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SpectralGrid:
    """Uniform periodic grid with ``M`` nodes and the matching real Fourier basis."""

    domain_length: float
    M: int

    def __post_init__(self):
        if not self.domain_length > 0:
            raise ValueError(f"domain_length must be positive, got {self.domain_length}")
        M = int(self.M)
        if M < 4 or M & (M - 1):
            raise ValueError(f"M must be a power of two >= 4, got {self.M}")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "domain_length", float(self.domain_length))

    @property
    def dx(self) -> float:
        return self.domain_length / self.M

    @property
    def nodes(self) -> np.ndarray:
        return -0.5 * self.domain_length + self.dx * np.arange(self.M)

    @property
    def mode_index(self) -> np.ndarray:
        """Frequency index ``l`` carried by each coefficient."""
        return mode_index(self.M)

    @property
    def mode_kind(self) -> np.ndarray:
        """'c' or 's' per coefficient (the constant and Nyquist modes are cosines)."""
        kind = np.full(self.M, "c")
        kind[2:self.M - 1:2] = "s"
        return kind

    def basis(self, xi) -> np.ndarray:
        """Evaluate all basis functions at points ``xi``; shape ``(len(xi), M)``."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        D = self.domain_length
        l = self.mode_index
        k = 2 * np.pi * l / D
        out = np.where(self.mode_kind == "s",
                       np.sqrt(2 / D) * np.sin(np.outer(xi, k)),
                       np.sqrt(2 / D) * np.cos(np.outer(xi, k)))
        out[:, 0] = 1 / np.sqrt(D)
        out[:, -1] = np.cos(np.pi * self.M * xi / D) / np.sqrt(D)
        return out

    # The node offset -|D|/2 turns into a factor (-1)^l on the DFT coefficients.
    def _scales(self):
        half = self.M // 2
        l = np.arange(half + 1)
        sign = np.where(l % 2 == 0, 1.0, -1.0)
        D = self.domain_length
        s = self.dx * np.sqrt(2 / D) * sign
        s[0] = self.dx / np.sqrt(D)
        s[half] = self.dx / np.sqrt(D) * sign[half]
        return s

    def modes_from_rfft(self, c: np.ndarray) -> np.ndarray:
        """Convert unnormalised ``rfft`` coefficients of a field to mode coefficients."""
        s = self._scales()
        half = self.M // 2
        out = np.empty(c.shape[:-1] + (self.M,))
        out[..., 0] = s[0] * c[..., 0].real
        out[..., 1:self.M - 1:2] = s[1:half] * c[..., 1:half].real
        out[..., 2:self.M - 1:2] = -s[1:half] * c[..., 1:half].imag
        out[..., self.M - 1] = s[half] * c[..., half].real
        return out

    def rfft_from_modes(self, modes: np.ndarray) -> np.ndarray:
        s = self._scales()
        half = self.M // 2
        c = np.zeros(modes.shape[:-1] + (half + 1,), dtype=complex)
        c[..., 0] = modes[..., 0] / s[0]
        c[..., 1:half] = (modes[..., 1:self.M - 1:2] - 1j * modes[..., 2:self.M - 1:2]) / s[1:half]
        c[..., half] = modes[..., self.M - 1] / s[half]
        return c

    def to_modes(self, field: np.ndarray) -> np.ndarray:
        """Grid values -> basis coefficients (works along the last axis)."""
        field = np.asarray(field, dtype=float)
        if field.shape[-1] != self.M:
            raise ValueError(f"expected trailing length {self.M}, got {field.shape[-1]}")
        return self.modes_from_rfft(np.fft.rfft(field, axis=-1))

    def to_field(self, modes: np.ndarray) -> np.ndarray:
        """Basis coefficients -> grid values (works along the last axis)."""
        modes = np.asarray(modes, dtype=float)
        if modes.shape[-1] != self.M:
            raise ValueError(f"expected trailing length {self.M}, got {modes.shape[-1]}")
        return np.fft.irfft(self.rfft_from_modes(modes), n=self.M, axis=-1)

    def inner(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """L2(D) inner product of two grid fields (rectangle rule)."""
        return self.dx * np.sum(np.asarray(x) * np.asarray(y), axis=-1)


def mode_index(M: int) -> np.ndarray:
    l = (np.arange(M) + 1) // 2
    l[-1] = M // 2
    return l


def build_grid(domain_length: float, M: int) -> SpectralGrid:
    return SpectralGrid(domain_length, M)


@dataclass(frozen=True)
class LinearDynamics:
    """Diagonal linear part ``A = -diag(a)`` and noise covariance ``Q = diag(q)``.

    Rates ``a`` may be zero (Brownian auxiliary dynamics); the semigroup and
    convolution formulas below take the corresponding limits.
    """

    a: np.ndarray
    q: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        if a.shape != q.shape:
            if a.size == 1:
                a = np.full(q.shape, a.item())
            else:
                raise ValueError("a and q must have the same length")
        if np.any(a < 0):
            raise ValueError("rates a must be nonnegative")
        if np.any(q < 0):
            raise ValueError("noise spectrum q must be nonnegative")
        a.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "q", q)

    @property
    def size(self) -> int:
        return self.a.size

    @property
    def uniform_rate(self) -> float | None:
        """The common rate if all ``a_l`` coincide, else None."""
        if np.all(self.a == self.a[0]):
            return float(self.a[0])
        return None

    def with_rates(self, a) -> "LinearDynamics":
        return LinearDynamics(np.broadcast_to(np.asarray(a, dtype=float), self.q.shape).copy(), self.q)


def _check_lag(delta):
    if np.any(np.asarray(delta) < 0):
        raise ValueError(f"time lag must be nonnegative, got {delta}")


def semigroup_factors(dynamics: LinearDynamics, delta: float) -> np.ndarray:
    """Per-mode ``exp(-a_l delta)``."""
    _check_lag(delta)
    return np.exp(-dynamics.a * delta)


def phi_factors(dynamics: LinearDynamics, delta: float) -> np.ndarray:
    """Per-mode ``(1 - exp(-a_l delta)) / a_l``, equal to ``delta`` when ``a_l = 0``."""
    _check_lag(delta)
    a = dynamics.a
    out = np.full(a.shape, float(delta))
    nz = a > 0
    out[nz] = -np.expm1(-a[nz] * delta) / a[nz]
    return out


def convolution_factors(dynamics: LinearDynamics, delta: float) -> np.ndarray:
    """Per-mode ``(1 - exp(-2 a_l delta)) / (2 a_l)`` (``delta`` when ``a_l = 0``)."""
    _check_lag(delta)
    a = dynamics.a
    out = np.full(a.shape, float(delta))
    nz = a > 0
    out[nz] = -np.expm1(-2 * a[nz] * delta) / (2 * a[nz])
    return out


def ou_step_variance(dynamics: LinearDynamics, delta: float) -> np.ndarray:
    """Variance of the stochastic convolution of each mode over a lag ``delta``."""
    return dynamics.q * convolution_factors(dynamics, delta)


def matern_spectrum(sigma0: float, rho0: float, eta0: float, d: int, grid: SpectralGrid,
                    scaled_frequencies: bool = False) -> np.ndarray:
    """Matern-type eigenvalues ``sigma0^2 (rho0^-2 + w_l^2)^-(d/2 + eta0)`` per coefficient.

    ``w_l = 2 pi l`` by default; with ``scaled_frequencies`` the torus frequency
    ``2 pi l / |D|`` is used instead.
    """
    if not (sigma0 > 0 and rho0 > 0 and eta0 > 0):
        raise ValueError("sigma0, rho0 and eta0 must be positive")
    w = 2 * np.pi * grid.mode_index.astype(float)
    if scaled_frequencies:
        w = w / grid.domain_length
    return sigma0 ** 2 * (rho0 ** -2 + w ** 2) ** -(d / 2 + eta0)
