"""Guided particle filtering with adaptive tempering and pCN move steps.

Three proposal flavours are provided:

``gpf1``
    guided by the one-step-ahead Ornstein-Uhlenbeck likelihood of the next
    observation (auxiliary dynamics share the model's linear part);
``gpf2``
    guided by the one-step likelihood of a driftless auxiliary process;
``bootstrap``
    unguided forward simulation weighted by the observation density.

At every observation time the weighted cloud is brought to the filtering
distribution by tempering (adaptive inverse temperatures chosen so the
incremental ESS is ``alpha J``), resampling, and pCN moves on the per-particle
Wiener increments of the current interval.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .amari import simulate_path
from .guiding import gpf2_guide, onestep_guide
from .io import relative_error, write_matrix_csv
from .observation import Problem

logger = logging.getLogger(__name__)

FLAVORS = ("gpf1", "gpf2", "bootstrap")

# stream kinds for counter-based random number derivation
_PROPAGATE, _MOVE, _RESAMPLE = 0, 1, 2


def stream(seed: int, kind: int, interval: int, stage: int, particle: int = 0) -> np.random.Generator:
    """Independent Philox stream keyed by ``(seed, kind, interval, stage, particle)``."""
    ss = np.random.SeedSequence(seed, spawn_key=(kind, interval, stage, particle))
    return np.random.Generator(np.random.Philox(ss))


def ess(log_weights) -> float:
    """Effective sample size ``1 / sum w^2`` of (unnormalised) log-weights."""
    lw = np.asarray(log_weights, dtype=float)
    if not np.any(np.isfinite(lw)):
        raise ValueError("all weights are zero")
    w = np.exp(lw - np.max(lw))
    w /= w.sum()
    return float(1.0 / np.sum(w ** 2))


def normalize_log_weights(log_weights) -> np.ndarray:
    lw = np.asarray(log_weights, dtype=float)
    if not np.any(np.isfinite(lw)):
        raise ValueError("all weights are zero")
    w = np.exp(lw - np.max(lw))
    return w / w.sum()


def systematic_resample(weights, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Systematic resampling; returns ``n`` (default ``len(weights)``) sorted parent indices."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-8:
        raise ValueError("weights must be nonnegative and sum to one")
    J = w.size if n is None else int(n)
    u = (rng.uniform() + np.arange(J)) / J
    idx = np.searchsorted(np.cumsum(w), u, side="right")
    return np.minimum(idx, w.size - 1)


def adapt_temperature(log_lambda, psi: float, alpha: float, J: int | None = None,
                      tol: float = 1e-6, max_iter: int = 60) -> float:
    """Smallest ``psi' in (psi, 1]`` with incremental ESS ``<= alpha J`` (1 if none)."""
    if not 0 <= psi < 1:
        raise ValueError("current temperature must lie in [0, 1)")
    lam = np.asarray(log_lambda, dtype=float)
    J = lam.size if J is None else J
    target = alpha * J
    finite = lam[np.isfinite(lam)]
    if finite.size == lam.size and np.ptp(lam) == 0:
        return 1.0
    if ess((1.0 - psi) * lam) >= target:
        return 1.0
    lo, hi = psi, 1.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if ess((mid - psi) * lam) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return hi


@dataclass
class FilterConfig:
    flavor: str = "gpf1"
    J: int = 100
    alpha: float = 0.75
    n_move: int = 30
    beta: float = 0.1
    seed: int = 0
    tempering: bool = True
    resample_threshold: float = 0.5
    workers: int = 1
    keep_paths: bool = True

    def __post_init__(self):
        if self.flavor not in FLAVORS:
            raise ValueError(f"unknown flavor {self.flavor!r}; expected one of {FLAVORS}")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0 <= self.beta <= 1:
            raise ValueError("beta must lie in [0, 1]")
        if self.J < 1 or self.n_move < 0:
            raise ValueError("J must be positive and n_move nonnegative")


@dataclass
class ParticleCloud:
    """Particles for the current interval.

    ``start`` holds the states at ``t_{i-1}``, ``noise`` the standard normals
    that drive each particle over the interval, ``x`` the states at ``t_i``.
    """

    x: np.ndarray
    log_w: np.ndarray
    start: np.ndarray | None = None
    noise: np.ndarray | None = None
    log_lambda: np.ndarray | None = None
    path: np.ndarray | None = None

    @property
    def J(self) -> int:
        return self.x.shape[0]

    def weights(self) -> np.ndarray:
        return normalize_log_weights(self.log_w)

    def take(self, idx) -> "ParticleCloud":
        def pick(a):
            return None if a is None else a[idx]
        return ParticleCloud(self.x[idx], np.zeros(len(idx)), pick(self.start), pick(self.noise),
                             pick(self.log_lambda), pick(self.path))


@dataclass
class TemperSchedule:
    psi: list = field(default_factory=lambda: [0.0])
    acceptance: list = field(default_factory=list)
    ess: list = field(default_factory=list)
    post_ess: list = field(default_factory=list)


class Propagator:
    """Simulates one interval for a batch of particles and returns ``log Lambda``."""

    def __init__(self, problem: Problem, flavor: str, workers: int = 1, keep_paths: bool = True):
        self.problem = problem
        self.flavor = flavor
        self.workers = max(int(workers), 1)
        self.keep_paths = keep_paths
        p = problem
        if flavor == "gpf1":
            self.guide = onestep_guide(p.scheme, p.y, p.times, p.dynamics)
        elif flavor == "gpf2":
            self.guide = gpf2_guide(p.scheme, p.y, p.times, p.dynamics)
        else:
            self.guide = None

    def _run(self, i, start, noise):
        tg = self.problem.time_grid
        p = self.problem
        path, log_psi = simulate_path(start, tg.start(i), tg.step(i), noise, p.drift, p.dynamics,
                                      self.guide, interval=i, keep_path=self.keep_paths)
        end = path[..., -1, :] if self.keep_paths else path
        if self.guide is None:
            log_lam = p.scheme.log_density(end, p.y[i - 1])
        else:
            log_lam = self.guide.log_g(tg.start(i), start, interval=i) + log_psi
        return end, log_lam, (path if self.keep_paths else None)

    def __call__(self, i, start, noise):
        if self.workers == 1 or start.shape[0] < 2 * self.workers:
            return self._run(i, start, noise)
        chunks = np.array_split(np.arange(start.shape[0]), self.workers)
        with ThreadPoolExecutor(self.workers) as ex:
            parts = list(ex.map(lambda c: self._run(i, start[c], noise[c]), chunks))
        end = np.concatenate([r[0] for r in parts])
        lam = np.concatenate([r[1] for r in parts])
        path = None if not self.keep_paths else np.concatenate([r[2] for r in parts])
        return end, lam, path


def _draw(seed, kind, i, stage, J, shape):
    return np.stack([stream(seed, kind, i, stage, j).standard_normal(shape) for j in range(J)])


def gpf_interval(cloud: ParticleCloud, i: int, propagate: Propagator, config: FilterConfig):
    """Propagate the cloud over interval ``i`` and attach ``log Lambda``.

    Returns the updated cloud (weights not yet multiplied in) and the
    incremental log-evidence estimate.
    """
    tg = propagate.problem.time_grid
    shape = (int(tg.substeps[i - 1]), cloud.x.shape[1])
    noise = _draw(config.seed, _PROPAGATE, i, 0, cloud.J, shape)
    start = cloud.x
    end, log_lam, path = propagate(i, start, noise)
    new = ParticleCloud(end, cloud.log_w.copy(), start, noise, log_lam, path)
    log_ev = logsumexp(cloud.log_w + log_lam) - logsumexp(cloud.log_w)
    return new, float(log_ev)


def temper_and_move(cloud: ParticleCloud, i: int, propagate: Propagator, config: FilterConfig):
    """Adaptive tempering, resampling and pCN moves at observation time ``t_i``.

    The incoming cloud must be evenly weighted and carry ``log_lambda`` and
    the interval noise records.  Returns ``(cloud, schedule, log_evidence)``.
    """
    J = cloud.J
    sched = TemperSchedule()
    psi = 0.0
    log_ev = 0.0
    stage = 0
    rho = np.sqrt(1.0 - config.beta ** 2)
    while psi < 1.0:
        stage += 1
        new_psi = adapt_temperature(cloud.log_lambda, psi, config.alpha, J)
        incr = (new_psi - psi) * cloud.log_lambda
        log_ev += float(logsumexp(incr) - np.log(J))
        w = normalize_log_weights(incr)
        sched.ess.append(float(1.0 / np.sum(w ** 2)))
        idx = systematic_resample(w, stream(config.seed, _RESAMPLE, i, stage))
        cloud = cloud.take(idx)
        sched.post_ess.append(ess(cloud.log_w))
        psi = new_psi
        gens = [stream(config.seed, _MOVE, i, stage, j) for j in range(J)]
        accepted = 0
        prop_noise = np.empty_like(cloud.noise)
        log_u = np.empty(J)
        for _ in range(config.n_move):
            for j, g in enumerate(gens):
                g.standard_normal(out=prop_noise[j])
                log_u[j] = np.log(g.uniform())
            prop_noise *= config.beta
            prop_noise += rho * cloud.noise
            end, log_lam, path = propagate(i, cloud.start, prop_noise)
            acc = log_u < psi * (log_lam - cloud.log_lambda)
            accepted += int(acc.sum())
            cloud.x[acc] = end[acc]
            cloud.noise[acc] = prop_noise[acc]
            cloud.log_lambda[acc] = log_lam[acc]
            if cloud.path is not None:
                cloud.path[acc] = path[acc]
        sched.psi.append(psi)
        sched.acceptance.append(accepted / (J * config.n_move) if config.n_move else float("nan"))
    cloud.log_w = np.full(J, -np.log(J))
    return cloud, sched, log_ev


@dataclass
class FilterResult:
    flavor: str
    times: np.ndarray
    means: np.ndarray
    ess: np.ndarray
    schedules: list
    log_evidence: float
    errors: np.ndarray | None = None
    mean_paths: list | None = field(default=None, repr=False)
    covariances: np.ndarray | None = field(default=None, repr=False)

    def mean_path(self) -> np.ndarray | None:
        """Filtered path estimate on the whole grid (interval pieces concatenated)."""
        if not self.mean_paths:
            return None
        return np.concatenate([self.mean_paths[0][:1]] + [p[1:] for p in self.mean_paths])

    def to_json(self) -> dict:
        return {
            "flavor": self.flavor,
            "times": self.times.tolist(),
            "means": self.means.tolist(),
            "ess": self.ess.tolist(),
            "schedules": [asdict(s) if isinstance(s, TemperSchedule) else s for s in self.schedules],
            "log_evidence": self.log_evidence,
            "errors": None if self.errors is None else self.errors.tolist(),
        }

    def save(self, out_dir, prefix: str | None = None) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        prefix = prefix or self.flavor
        files = {"json": out / f"{prefix}_result.json", "means": out / f"{prefix}_means.csv"}
        files["json"].write_text(json.dumps(self.to_json(), indent=1), encoding="utf-8")
        write_matrix_csv(files["means"], np.column_stack([self.times, self.means]))
        if self.errors is not None:
            files["errors"] = out / f"{prefix}_errors.csv"
            write_matrix_csv(files["errors"], np.column_stack([self.times, self.errors]), header=["t", "rel_error"])
        return files


def run_filter(problem: Problem, config: FilterConfig | None = None) -> FilterResult:
    """Run the particle filter over all observation times of ``problem``."""
    config = config or FilterConfig()
    propagate = Propagator(problem, config.flavor, config.workers, config.keep_paths)
    J = config.J
    cloud = ParticleCloud(np.tile(problem.x0, (J, 1)), np.full(J, -np.log(J)))
    n = problem.time_grid.n
    means = np.empty((n, problem.dynamics.size))
    ess_trace = np.empty(n)
    schedules, mean_paths = [], []
    log_ev = 0.0
    for i in range(1, n + 1):
        cloud, incr = gpf_interval(cloud, i, propagate, config)
        ess_trace[i - 1] = ess(cloud.log_w + cloud.log_lambda)
        if config.tempering:
            cloud, sched, incr = temper_and_move(cloud, i, propagate, config)
        else:
            cloud.log_w = cloud.log_w + cloud.log_lambda
            cloud.log_w -= logsumexp(cloud.log_w)
            sched = TemperSchedule(psi=[0.0, 1.0])
            if ess(cloud.log_w) < config.resample_threshold * J:
                idx = systematic_resample(cloud.weights(), stream(config.seed, _RESAMPLE, i, 0))
                cloud = cloud.take(idx)
                cloud.log_w = np.full(J, -np.log(J))
        log_ev += incr
        w = cloud.weights()
        means[i - 1] = w @ cloud.x
        if cloud.path is not None:
            mean_paths.append(np.tensordot(w, cloud.path, axes=1))
        schedules.append(sched)
        logger.debug("t=%g ess=%.1f stages=%d", problem.times[i - 1], ess_trace[i - 1], len(sched.psi) - 1)
    errors = None
    if problem.truth is not None:
        errors = np.array([relative_error(means[k], problem.truth[k]) for k in range(n)])
    return FilterResult(config.flavor, problem.times.copy(), means, ess_trace, schedules, log_ev, errors,
                        mean_paths or None)
