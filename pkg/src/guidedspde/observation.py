"""Local-average observations, Gaussian observation densities and datasets."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .amari import AmariModel, TimeGrid, simulate_path
from .spectral import LinearDynamics, SpectralGrid


class ObservationScheme:
    """Linear Gaussian observation ``y = L x + N(0, Sigma)`` in mode coordinates."""

    def __init__(self, L, Sigma, times=None, centers=None, width=None):
        self.L = np.atleast_2d(np.asarray(L, dtype=float))
        self.Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
        m = self.L.shape[0]
        if self.Sigma.shape != (m, m):
            raise ValueError(f"Sigma must be {m}x{m}, got {self.Sigma.shape}")
        if not np.allclose(self.Sigma, self.Sigma.T):
            raise ValueError("Sigma must be symmetric")
        try:
            self._chol = cho_factor(self.Sigma, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ValueError("Sigma is not positive definite") from exc
        self.times = None if times is None else np.asarray(times, dtype=float)
        self.centers = None if centers is None else np.asarray(centers, dtype=float)
        self.width = width
        self.logdet_sigma = 2 * np.sum(np.log(np.diag(self._chol[0])))

    @property
    def m(self) -> int:
        return self.L.shape[0]

    @property
    def sigma_inv(self) -> np.ndarray:
        return cho_solve(self._chol, np.eye(self.m))

    def observe(self, x, rng):
        x = np.asarray(x, dtype=float)
        z = rng.standard_normal(x.shape[:-1] + (self.m,))
        return x @ self.L.T + z @ np.linalg.cholesky(self.Sigma).T

    def log_density(self, x, y):
        """``log f(y; L x, Sigma)`` for a batch of states ``x``."""
        r = np.asarray(y, dtype=float) - np.asarray(x, dtype=float) @ self.L.T
        flat = r.reshape(-1, self.m)
        quad = np.sum(cho_solve(self._chol, flat.T).T * flat, axis=-1)
        out = -0.5 * (self.m * np.log(2 * np.pi) + self.logdet_sigma + quad)
        return out.reshape(r.shape[:-1])


def build_local_average_operator(grid: SpectralGrid, centers, width: float) -> np.ndarray:
    """Rows ``<1_{D_j}/|D_j|, e_l>`` from exact antiderivatives of the basis functions."""
    centers = np.atleast_1d(np.asarray(centers, dtype=float))
    if not width > 0:
        raise ValueError("cell width must be positive")
    lo, hi = centers - width / 2, centers + width / 2
    half = grid.domain_length / 2
    tol = 1e-12 * grid.domain_length
    if np.any(lo < -half - tol) or np.any(hi > half + tol):
        raise ValueError("observation cells must lie inside the domain")
    order = np.argsort(centers)
    if np.any(lo[order][1:] < hi[order][:-1] - tol):
        raise ValueError("observation cells overlap")
    D = grid.domain_length
    L = np.empty((centers.size, grid.M))
    l = grid.mode_index.astype(float)
    k = 2 * np.pi * l / D
    kind = grid.mode_kind
    for j in range(centers.size):
        a, b = lo[j], hi[j]
        with np.errstate(divide="ignore", invalid="ignore"):
            cos_int = (np.sin(k * b) - np.sin(k * a)) / k
            sin_int = (np.cos(k * a) - np.cos(k * b)) / k
        row = np.sqrt(2 / D) * np.where(kind == "s", sin_int, cos_int)
        row[0] = (b - a) / np.sqrt(D)
        kn = np.pi * grid.M / D
        row[-1] = (np.sin(kn * b) - np.sin(kn * a)) / kn / np.sqrt(D)
        L[j] = row / width
    return L


def equally_spaced_centers(domain_length: float, m: int) -> np.ndarray:
    """Centres of ``m`` equal partitions of the domain."""
    return -domain_length / 2 + (np.arange(m) + 0.5) * domain_length / m


def lql_matrix(scheme: ObservationScheme, dynamics: LinearDynamics) -> np.ndarray:
    L = scheme.L
    return (L * dynamics.q) @ L.T


@dataclass
class Problem:
    """Everything the filters and samplers need: model pieces, observations, time grid."""

    dynamics: LinearDynamics
    drift: object
    scheme: ObservationScheme
    y: np.ndarray
    time_grid: TimeGrid
    x0: np.ndarray
    truth: np.ndarray | None = None
    grid: SpectralGrid | None = None

    def __post_init__(self):
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if self.y.shape != (self.time_grid.n, self.scheme.m):
            raise ValueError(f"y has shape {self.y.shape}, expected {(self.time_grid.n, self.scheme.m)}")
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.x0.shape != (self.dynamics.size,):
            raise ValueError("x0 does not match the state dimension")

    @property
    def times(self) -> np.ndarray:
        return self.time_grid.times

    def with_drift(self, drift) -> "Problem":
        return Problem(self.dynamics, drift, self.scheme, self.y, self.time_grid, self.x0, self.truth, self.grid)


DATASET_KEYS = ("domain_length", "M", "times", "cell_centers", "cell_width", "sigma_scale",
                "y", "theta_true", "seed", "dt")


@dataclass
class Dataset:
    domain_length: float
    M: int
    times: np.ndarray
    cell_centers: np.ndarray
    cell_width: float
    sigma_scale: float
    y: np.ndarray
    theta_true: dict
    seed: int | None = None
    dt: float | None = None
    x0: np.ndarray | None = None
    x_true: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.cell_centers = np.asarray(self.cell_centers, dtype=float)
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if self.y.shape != (self.times.size, self.cell_centers.size):
            raise ValueError(f"y has shape {self.y.shape}, expected "
                             f"{(self.times.size, self.cell_centers.size)}")
        if self.x_true is not None:
            self.x_true = np.asarray(self.x_true, dtype=float)
            if self.x_true.shape != (self.times.size, self.M):
                raise ValueError("x_true must have one mode vector per observation time")
        if self.x0 is not None:
            self.x0 = np.asarray(self.x0, dtype=float)
            if self.x0.shape != (self.M,):
                raise ValueError("x0 must have length M")

    @property
    def n(self) -> int:
        return self.times.size

    def grid(self) -> SpectralGrid:
        return SpectralGrid(self.domain_length, self.M)

    def model(self, **overrides) -> AmariModel:
        fields = {k: v for k, v in self.theta_true.items() if k in AmariModel.__dataclass_fields__}
        fields.update(domain_length=self.domain_length, M=self.M)
        fields.update(overrides)
        return AmariModel(**fields)

    def scheme(self) -> ObservationScheme:
        L = build_local_average_operator(self.grid(), self.cell_centers, self.cell_width)
        return ObservationScheme(L, self.sigma_scale * np.eye(self.cell_centers.size), self.times,
                                 self.cell_centers, self.cell_width)

    def problem(self, dt: float | None = None, **model_overrides) -> Problem:
        model = self.model(**model_overrides)
        dt = dt or self.dt
        if dt is None:
            raise ValueError("a time step is required")
        x0 = self.x0 if self.x0 is not None else np.zeros(self.M)
        return Problem(model.dynamics(), model.drift(), self.scheme(), self.y,
                       TimeGrid.from_step(self.times, dt), x0, self.x_true, model.grid())

    def subsample(self, every: int) -> "Dataset":
        """Keep every ``every``-th observation, always ending at the final time."""
        if every < 1:
            raise ValueError("every must be >= 1")
        sel = slice(every - 1, None, every)
        return Dataset(self.domain_length, self.M, self.times[sel], self.cell_centers, self.cell_width,
                       self.sigma_scale, self.y[sel], dict(self.theta_true), self.seed, self.dt,
                       self.x0, None if self.x_true is None else self.x_true[sel])

    def to_json(self) -> dict:
        doc = {
            "domain_length": float(self.domain_length),
            "M": int(self.M),
            "times": self.times.tolist(),
            "cell_centers": self.cell_centers.tolist(),
            "cell_width": float(self.cell_width),
            "sigma_scale": float(self.sigma_scale),
            "y": self.y.tolist(),
            "theta_true": dict(self.theta_true),
            "seed": self.seed,
            "dt": self.dt,
        }
        if self.x0 is not None:
            doc["x0"] = self.x0.tolist()
        if self.x_true is not None:
            doc["x_true"] = self.x_true.tolist()
        return doc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1), encoding="utf-8")

    @classmethod
    def from_json(cls, doc: dict) -> "Dataset":
        missing = [k for k in DATASET_KEYS if k not in doc]
        if missing:
            raise ValueError(f"dataset is missing keys {missing}")
        extra = set(doc) - set(DATASET_KEYS) - {"x0", "x_true"}
        if extra:
            raise ValueError(f"unknown dataset keys {sorted(extra)}")
        return cls(doc["domain_length"], doc["M"], doc["times"], doc["cell_centers"], doc["cell_width"],
                   doc["sigma_scale"], doc["y"], doc["theta_true"], doc["seed"], doc["dt"],
                   doc.get("x0"), doc.get("x_true"))

    @classmethod
    def load(cls, path) -> "Dataset":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValueError(f"malformed dataset file {path}: {exc}") from exc
        return cls.from_json(doc)

    def write_csv(self, path, header: bool = False) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            if header:
                w.writerow([f"y{j + 1}" for j in range(self.y.shape[1])])
            for row in self.y:
                w.writerow([repr(float(v)) for v in row])


def generate_dataset(model: AmariModel, times, dt: float, seed: int, m: int = 15, cell_width: float = 1.0,
                     sigma_scale: float = 0.01, centers=None, x0=None):
    """Forward-simulate the Amari model and observe it.

    Returns ``(dataset, path)`` where ``path`` holds the true mode coefficients at
    every grid time (shape ``(n_steps + 1, M)``).
    """
    grid = model.grid()
    dyn = model.dynamics()
    drift = model.drift()
    tg = TimeGrid.from_step(times, dt)
    x0 = np.zeros(model.M) if x0 is None else np.asarray(x0, dtype=float)
    centers = equally_spaced_centers(grid.domain_length, m) if centers is None else np.asarray(centers)
    L = build_local_average_operator(grid, centers, cell_width)
    scheme = ObservationScheme(L, sigma_scale * np.eye(len(centers)), tg.times, centers, cell_width)

    ss = np.random.SeedSequence(seed)
    path_rng, obs_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    noise = path_rng.standard_normal((tg.n_steps, model.M))
    segments = [x0[None, :]]
    x = x0
    offsets = tg.offsets()
    for i in range(1, tg.n + 1):
        seg, _ = simulate_path(x, tg.start(i), tg.step(i), noise[offsets[i - 1]:offsets[i]], drift, dyn)
        segments.append(seg[1:])
        x = seg[-1]
    path = np.concatenate(segments)
    x_obs = path[offsets[1:]]
    y = scheme.observe(x_obs, obs_rng)
    theta = model.to_dict()
    for k in ("domain_length", "M"):
        theta.pop(k)
    ds = Dataset(grid.domain_length, model.M, tg.times, centers, cell_width, sigma_scale, y, theta,
                 seed, dt, x0, x_obs)
    return ds, path
