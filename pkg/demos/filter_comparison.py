"""Guided, bootstrap and unscented filters on a small Amari run.

A reduced version of the filtering experiment (64 modes, 10 observation
times, 50 particles) that finishes in a few seconds.  Relative errors of
the filtered mean are printed per observation time.
"""
import time

import numpy as np

from guidedspde.amari import AmariModel
from guidedspde.filtering import FilterConfig, run_filter
from guidedspde.observation import generate_dataset
from guidedspde.ukf import run_ukf

ds, _ = generate_dataset(AmariModel(M=64, delta=0.5), np.arange(1, 11) * 1.0, dt=0.05, seed=2)
problem = ds.problem()

errors = {}
for flavor in ("gpf1", "gpf2", "bootstrap"):
    t0 = time.perf_counter()
    r = run_filter(problem, FilterConfig(flavor=flavor, J=50, n_move=10, seed=2, keep_paths=False))
    stages = np.mean([len(s.psi) - 1 for s in r.schedules])
    print(f"{flavor:9s} {time.perf_counter() - t0:5.1f}s, {stages:.1f} tempering stages per step on average")
    errors[flavor] = r.errors
errors["ukf"] = run_ukf(problem).errors

print("\n   t  " + "  ".join(f"{k:>9s}" for k in errors))
for k, t in enumerate(ds.times):
    print(f"{t:4.0f}  " + "  ".join(f"{errors[f][k]:9.3f}" for f in errors))
