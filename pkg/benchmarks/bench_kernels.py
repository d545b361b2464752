#!/usr/bin/env python3
"""Benchmark the compiled trial kernel against the pure-numpy fallback.

Runs identical seeded trials of the builtin scenario through both backends,
reports wall time per backend, the speedup, and the worst trajectory
disagreement (the backends share draws bit-for-bit; log-beliefs may differ
by accumulated rounding only).

Usage: python benchmarks/bench_kernels.py [--trials 20] [--steps 2000]
"""

import argparse
import time

import numpy as np

from nonbayes import _kernel, _kernel_py  # noqa: F401  (import error = no compiled kernel)
from nonbayes.learning import cdf_table, derive_trial_seed, initial_state, log_likelihood_table
from nonbayes.scenario import paper_fig1_scenario


def bench(impl, args_list):
    t0 = time.perf_counter()
    out = [impl.evolve_trial(*args) for args in args_list]
    return time.perf_counter() - t0, out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--record-every", type=int, default=10)
    ap.add_argument("--seed", type=int, default=20240)
    ns = ap.parse_args()

    scenario = paper_fig1_scenario()
    model = scenario.model
    logb0 = np.asarray(initial_state(scenario.priors).log_beliefs)
    weights = scenario.schedule.weight_array()
    log_lik = log_likelihood_table(model)
    cdf, sizes = cdf_table(model)
    args_list = [
        (logb0, weights, log_lik, cdf, sizes, derive_trial_seed(ns.seed, t),
         ns.steps, ns.record_every)
        for t in range(ns.trials)
    ]

    # warm-up (first-call overheads out of the timing)
    _kernel.evolve_trial(*args_list[0])
    _kernel_py.evolve_trial(*args_list[0])

    t_cy, out_cy = bench(_kernel, args_list)
    t_py, out_py = bench(_kernel_py, args_list)

    dev = 0.0
    for (_, rec_c, drw_c), (_, rec_p, drw_p) in zip(out_cy, out_py):
        assert np.array_equal(drw_c, drw_p), "backends disagree on draws"
        dev = max(dev, float(np.max(np.abs(rec_c - rec_p))))

    steps_total = ns.trials * ns.steps
    print(f"workload: {ns.trials} trials x {ns.steps} steps "
          f"(n={model.n}, m={model.m})")
    print(f"  cython : {t_cy:8.3f} s   ({1e9 * t_cy / steps_total:8.1f} ns/step)")
    print(f"  python : {t_py:8.3f} s   ({1e9 * t_py / steps_total:8.1f} ns/step)")
    print(f"  speedup: {t_py / t_cy:.1f}x")
    print(f"  max |log-belief| disagreement over all trajectories: {dev:.3e}")


if __name__ == "__main__":
    main()
