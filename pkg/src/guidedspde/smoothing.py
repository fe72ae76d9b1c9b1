"""Path-space pCN smoothing with Gibbs updates for the initial state and drift parameters.

The guided solution map ``Gamma(x0, W, theta)`` turns an initial state and a
full record of standard normals into a guided path and its log-weight
``log Psi``.  The sampler alternates

* a pCN proposal on the noise record accepted with ``Psi' / Psi``,
* (optionally) a pCN proposal on ``x0`` under a Gaussian reference measure,
* one-coordinate random-walk Metropolis steps on each drift parameter with
  adaptive log step sizes.
"""

from __future__ import annotations

import csv
from collections import deque
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .amari import AmariDrift, AmariParams, TimeGrid, simulate_path
from .guiding import build_direct_guide
from .io import write_dump
from .observation import Problem
from .spectral import LinearDynamics

logger = logging.getLogger(__name__)

THETA_NAMES = ("eta", "zeta", "amp", "delta")
THETA_BOUNDS = {"eta": (0.0, 15.0), "zeta": (0.0, 3.0), "amp": (0.0, 8.0), "delta": (0.0, 1.0)}


def solution_map(x0, W, drift, guide, dynamics: LinearDynamics, time_grid: TimeGrid, keep_path: bool = True):
    """Guided path on the whole grid and its accumulated ``log Psi``.

    ``W`` has shape ``(n_steps, M)``; the path has shape ``(n_steps + 1, M)``
    (or is ``None`` when ``keep_path`` is False).
    """
    W = np.asarray(W, dtype=float)
    if W.shape != (time_grid.n_steps, dynamics.size):
        raise ValueError(f"noise record has shape {W.shape}, expected {(time_grid.n_steps, dynamics.size)}")
    off = time_grid.offsets()
    x = np.asarray(x0, dtype=float)
    parts = [x[None]] if keep_path else None
    log_psi = 0.0
    for i in range(1, time_grid.n + 1):
        seg, lp = simulate_path(x, time_grid.start(i), time_grid.step(i), W[off[i - 1]:off[i]], drift,
                                dynamics, guide, interval=i, keep_path=keep_path)
        log_psi += float(lp)
        if keep_path:
            parts.append(seg[1:])
            x = seg[-1]
        else:
            x = seg
    return (np.concatenate(parts) if keep_path else None), log_psi


def pcn_propose(W, beta: float, rng: np.random.Generator):
    """``sqrt(1 - beta^2) W + beta Z`` with fresh standard normals ``Z``."""
    if not 0 < beta <= 1:
        raise ValueError("beta must lie in (0, 1]")
    W = np.asarray(W, dtype=float)
    return np.sqrt(1 - beta ** 2) * W + beta * rng.standard_normal(W.shape)


def amari_drift_factory(base: AmariParams, grid) -> Callable[[dict], AmariDrift]:
    """Drift builder for parameter dictionaries over a subset of ``AmariParams`` fields."""
    def make(theta: dict) -> AmariDrift:
        return AmariDrift(base.replace(**theta), grid)
    return make


@dataclass
class SmootherConfig:
    N: int = 1000
    burn_in: int = 500
    beta: float = 0.1
    beta0: float = 0.1
    x0_known: bool = True
    infer_theta: bool = True
    thinning: int = 10
    seed: int = 0
    s0: float = 1.0
    target: float = 0.234
    keep_last: int = 1000
    max_samples: int = 50
    theta_dependent_guide: bool = False

    def __post_init__(self):
        if not 0 < self.beta <= 1 or not 0 < self.beta0 <= 1:
            raise ValueError("pCN step sizes must lie in (0, 1]")
        if self.N < 1 or not 0 <= self.burn_in < self.N:
            raise ValueError("need N >= 1 and 0 <= burn_in < N")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")


@dataclass
class ChainState:
    W: np.ndarray
    x0: np.ndarray
    theta: dict
    path: np.ndarray
    log_psi: float
    log_g0: float
    S: dict = field(default_factory=dict)


class Smoother:
    """Holds the fixed ingredients of the sampler and performs individual updates.

    Parameters
    ----------
    problem : Problem
        Model pieces and data; ``problem.drift`` is ignored when a
        ``drift_factory`` is supplied.
    drift_factory : callable, optional
        Maps a parameter dictionary to a drift object.
    bounds : dict, optional
        Uniform prior box per parameter; the update order follows its keys.
    guide_factory : callable, optional
        Rebuilds the guide for a parameter dictionary.  Only consulted when
        ``theta_dependent_guide`` is set; by default one guide is built.
    nu0_var : array, optional
        Variances of the Gaussian reference measure for ``x0``; defaults to
        the stationary variances ``q / (2a)``.
    log_rho : callable, optional
        Log density of the initial law against the reference measure
        (default: zero).
    """

    def __init__(self, problem: Problem, config: SmootherConfig, drift_factory=None, bounds=None,
                 guide=None, guide_factory=None, nu0_var=None, log_rho=None):
        self.problem = problem
        self.config = config
        self.bounds = dict(THETA_BOUNDS if bounds is None else bounds)
        self.names = tuple(self.bounds)
        self.drift_factory = drift_factory or (lambda theta: problem.drift)
        self.guide_factory = guide_factory
        if guide is None:
            guide = build_direct_guide(problem.scheme, problem.y, problem.times, problem.dynamics)
        self.guide = guide
        dyn = problem.dynamics
        if nu0_var is None:
            if np.any(dyn.a <= 0):
                raise ValueError("stationary reference variances need positive rates; pass nu0_var")
            nu0_var = dyn.q / (2 * dyn.a)
        self.nu0_sd = np.sqrt(np.asarray(nu0_var, dtype=float))
        self.log_rho = log_rho or (lambda x: 0.0)

    def _guide_for(self, theta):
        if self.config.theta_dependent_guide and self.guide_factory is not None:
            return self.guide_factory(theta)
        return self.guide

    def evaluate(self, x0, W, theta):
        """``(path, log_psi, log_g0)`` for the given inputs."""
        guide = self._guide_for(theta)
        path, lp = solution_map(x0, W, self.drift_factory(theta), guide, self.problem.dynamics,
                                self.problem.time_grid)
        return path, lp, float(guide.log_g(0.0, x0, interval=1))

    def init_chain(self, theta: dict, x0=None, rng=None) -> ChainState:
        rng = rng or np.random.default_rng(self.config.seed)
        x0 = self.problem.x0 if x0 is None else np.asarray(x0, dtype=float)
        W = rng.standard_normal((self.problem.time_grid.n_steps, self.problem.dynamics.size))
        theta = {k: float(theta[k]) for k in self.names}
        path, lp, lg = self.evaluate(x0, W, theta)
        S = {k: float(self.config.s0) for k in self.names}
        return ChainState(W, x0.copy(), theta, path, lp, lg, S)

    def in_support(self, theta) -> bool:
        return all(lo <= theta[k] <= hi for k, (lo, hi) in self.bounds.items())

    def path_update(self, chain: ChainState, rng) -> bool:
        W = pcn_propose(chain.W, self.config.beta, rng)
        guide = self._guide_for(chain.theta)
        path, lp = solution_map(chain.x0, W, self.drift_factory(chain.theta), guide, self.problem.dynamics,
                                self.problem.time_grid)
        if np.log(rng.uniform()) < lp - chain.log_psi:
            chain.W, chain.path, chain.log_psi = W, path, lp
            return True
        return False

    def x0_update(self, chain: ChainState, rng) -> bool:
        b = self.config.beta0
        x0 = np.sqrt(1 - b ** 2) * chain.x0 + b * self.nu0_sd * rng.standard_normal(chain.x0.shape)
        path, lp, lg = self.evaluate(x0, chain.W, chain.theta)
        lr_new, lr_old = self.log_rho(x0), self.log_rho(chain.x0)
        if not (np.isfinite(lr_new) and np.isfinite(lr_old)):
            raise FloatingPointError("initial-law density is not finite")
        log_ratio = (lr_new + lg + lp) - (lr_old + chain.log_g0 + chain.log_psi)
        if np.log(rng.uniform()) < log_ratio:
            chain.x0, chain.path, chain.log_psi, chain.log_g0 = x0, path, lp, lg
            return True
        return False

    def theta_update(self, chain: ChainState, name: str, rng, j: int, step_scale: float | None = None) -> bool:
        """One adaptive random-walk step on ``theta[name]`` at sweep ``j`` (1-based)."""
        scale = np.exp(chain.S[name]) if step_scale is None else step_scale
        theta = dict(chain.theta)
        theta[name] = chain.theta[name] + scale * rng.standard_normal()
        u = rng.uniform()
        accept_prob = 0.0
        if self.in_support(theta):
            path, lp, lg = self.evaluate(chain.x0, chain.W, theta)
            log_ratio = lp - chain.log_psi
            if self.config.theta_dependent_guide:
                log_ratio += lg - chain.log_g0
            accept_prob = float(np.exp(min(0.0, log_ratio)))
        accepted = u < accept_prob
        if accepted:
            chain.theta, chain.path, chain.log_psi, chain.log_g0 = theta, path, lp, lg
        if step_scale is None:
            chain.S[name] += j ** (-2.0 / 3.0) * (accept_prob - self.config.target)
        return accepted

    def check_cache(self, chain: ChainState) -> bool:
        """Recompute path, ``log Psi`` and ``log g(0, x0)`` and compare bit-exactly."""
        path, lp, lg = self.evaluate(chain.x0, chain.W, chain.theta)
        return np.array_equal(path, chain.path) and lp == chain.log_psi and lg == chain.log_g0

    def run(self, theta0: dict, x0=None) -> "SmootherResult":
        cfg = self.config
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed)))
        chain = self.init_chain(theta0, x0, rng)
        names = self.names if cfg.infer_theta else ()
        trace = np.empty((cfg.N, len(self.names)))
        log_psi = np.empty(cfg.N)
        flags = ("path",) + (() if cfg.x0_known else ("x0",)) + tuple(names)
        acc = {k: np.zeros(cfg.N, dtype=bool) for k in flags}
        L = self.problem.scheme.L
        localized, samples = [], deque(maxlen=cfg.max_samples)
        tail_start = max(cfg.burn_in, cfg.N - cfg.keep_last)
        path_sum = np.zeros_like(chain.path)
        for it in range(cfg.N):
            acc["path"][it] = self.path_update(chain, rng)
            if not cfg.x0_known:
                acc["x0"][it] = self.x0_update(chain, rng)
            for name in names:
                acc[name][it] = self.theta_update(chain, name, rng, it + 1)
            trace[it] = [chain.theta[k] for k in self.names]
            log_psi[it] = chain.log_psi
            if it >= tail_start:
                path_sum += chain.path
            if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thinning == 0:
                localized.append(chain.path @ L.T)
                samples.append(chain.path.copy())
            if (it + 1) % max(cfg.N // 10, 1) == 0:
                logger.info("iteration %d/%d theta=%s", it + 1, cfg.N, chain.theta)
        return SmootherResult(self.names, trace, log_psi, acc, cfg.burn_in, path_sum / (cfg.N - tail_start),
                              np.array(localized), np.array(list(samples)), self.problem.time_grid.all_times(),
                              chain, cfg.infer_theta)


def run_smoother(problem: Problem, config: SmootherConfig | None = None, theta0: dict | None = None,
                 drift_factory=None, bounds=None, x0=None, **kwargs) -> "SmootherResult":
    """Run the sampler; ``theta0`` defaults to the prior-box midpoints."""
    config = config or SmootherConfig()
    bounds = dict(THETA_BOUNDS if bounds is None else bounds)
    if drift_factory is None and isinstance(problem.drift, AmariDrift):
        drift_factory = amari_drift_factory(problem.drift.params, problem.drift.grid)
        if theta0 is None and not config.infer_theta:
            theta0 = {k: getattr(problem.drift.params, k) for k in bounds}
    if theta0 is None:
        theta0 = {k: 0.5 * (lo + hi) for k, (lo, hi) in bounds.items()}
    sm = Smoother(problem, config, drift_factory, bounds, **kwargs)
    return sm.run(theta0, x0)


@dataclass
class SmootherResult:
    names: tuple
    trace: np.ndarray
    log_psi: np.ndarray
    accepts: dict
    burn_in: int
    mean_path: np.ndarray
    localized: np.ndarray
    samples: np.ndarray = field(repr=False)
    times: np.ndarray = field(repr=False)
    final: ChainState = field(repr=False)
    infer_theta: bool = True

    def posterior(self) -> dict:
        post = self.trace[self.burn_in:]
        out = {}
        for k, name in enumerate(self.names):
            entry = {"mean": float(post[:, k].mean()), "std": float(post[:, k].std(ddof=1)) if len(post) > 1 else 0.0}
            if name in self.accepts:
                entry["acceptance"] = float(self.accepts[name].mean())
            out[name] = entry
        return out

    def acceptance(self) -> dict:
        return {k: float(v.mean()) for k, v in self.accepts.items()}

    def summary(self) -> dict:
        return {"iterations": int(self.trace.shape[0]), "burn_in": self.burn_in,
                "parameters": self.posterior(), "acceptance": self.acceptance(),
                "final_theta": dict(self.final.theta)}

    def save(self, out_dir, prefix: str = "chain") -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {k: out / f"{prefix}_{k}" for k in ("trace.csv", "summary.json", "localized.csv", "paths.bin")}
        with open(files["trace.csv"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            flags = list(self.accepts)
            w.writerow(["iter", *self.names, "log_psi", *[f"accept_{k}" for k in flags]])
            for it in range(self.trace.shape[0]):
                w.writerow([it + 1, *[repr(float(v)) for v in self.trace[it]], repr(float(self.log_psi[it])),
                            *[int(self.accepts[k][it]) for k in flags]])
        files["summary.json"].write_text(json.dumps(self.summary(), indent=1), encoding="utf-8")
        with open(files["localized.csv"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            m = self.localized.shape[-1] if self.localized.size else 0
            w.writerow(["sample", "t", *[f"cell{j + 1}" for j in range(m)]])
            for s, block in enumerate(self.localized):
                for t, row in zip(self.times, block):
                    w.writerow([s, repr(float(t)), *[repr(float(v)) for v in row]])
        write_dump(files["paths.bin"], {"times": self.times, "mean_path": self.mean_path, "samples": self.samples})
        return files
