"""Shared builders for randomized models, schedules, and scenarios."""

import numpy as np
import pytest

from nonbayes.graph import DirectedGraphSnapshot, GraphSchedule, WeightMatrix
from nonbayes.scenario import RunConfig, make_scenario
from nonbayes.theory import LikelihoodModel


def random_distribution(rng, size, floor=0.05):
    """Random distribution with entries bounded away from zero."""
    v = floor + rng.random(size)
    return v / v.sum()


def random_model(rng, n=None, m=None, alphabet_max=4, floor=0.05):
    n = n if n is not None else int(rng.integers(1, 6))
    m = m if m is not None else int(rng.integers(2, 5))
    hypotheses = tuple(f"theta{p + 1}" for p in range(m))
    alphabets, liks, dists = [], [], []
    for _ in range(n):
        s = int(rng.integers(2, alphabet_max + 1))
        alphabets.append(tuple(range(s)))
        liks.append(np.stack([random_distribution(rng, s, floor) for _ in range(m)]))
        dists.append(random_distribution(rng, s, floor))
    return LikelihoodModel(
        hypotheses=hypotheses,
        alphabets=tuple(alphabets),
        likelihoods=tuple(liks),
        true_dists=tuple(dists),
    )


def random_schedule(rng, n=None, B=None, scheme=None):
    """B-connected cyclic schedule with period B.

    Every aligned window covers the whole template, so the union over each
    window is the template union, which is built around a Hamiltonian cycle
    and therefore strongly connected.
    """
    n = n if n is not None else int(rng.integers(2, 9))
    B = B if B is not None else int(rng.integers(1, 4))
    scheme = scheme if scheme is not None else str(
        rng.choice(["general", "doubly_stochastic", "lazy_metropolis"])
    )
    order = rng.permutation(n) + 1
    cycle = [(int(order[i]), int(order[(i + 1) % n])) for i in range(n)]
    per_step = [set() for _ in range(B)]
    symmetric = scheme in ("doubly_stochastic", "lazy_metropolis")
    for e in cycle:
        step = int(rng.integers(0, B))
        per_step[step].add(e)
        if symmetric:
            per_step[step].add((e[1], e[0]))
    n_extra = int(rng.integers(0, n))
    for _ in range(n_extra):
        j, i = int(rng.integers(1, n + 1)), int(rng.integers(1, n + 1))
        if j == i:
            continue
        step = int(rng.integers(0, B))
        per_step[step].add((j, i))
        if symmetric:
            per_step[step].add((i, j))
    snapshots = [DirectedGraphSnapshot(n, frozenset(edges)) for edges in per_step]
    probe = GraphSchedule.from_snapshots(snapshots, scheme, 1.0, B)
    eta = min(m.min_positive_entry() for m in probe.matrices)
    return GraphSchedule.from_snapshots(snapshots, scheme, eta, B)


def random_scenario(rng, n=None, m=None, K=200, trials=5, scheme=None):
    model = random_model(rng, n=n, m=m)
    schedule = random_schedule(rng, n=model.n, scheme=scheme)
    priors = np.stack([random_distribution(rng, model.m, 0.05) for _ in range(model.n)])
    run = RunConfig(steps=K, trials=trials, master_seed=int(rng.integers(1, 2**31)))
    return make_scenario("random", model, priors, schedule, run)


def single_agent_scenario(rng, m=None, K=1000):
    return random_scenario(rng, n=1, m=m, K=K, scheme="general")


def fixed_matrix_schedule(matrices, eta, B, matrix_class):
    """Schedule around explicit matrices (for hand-built mixing chains)."""
    n = matrices[0].shape[0]
    snaps = []
    for a in matrices:
        edges = {(j + 1, i + 1) for i in range(n) for j in range(n) if a[i, j] > 0}
        snaps.append(DirectedGraphSnapshot(n, frozenset(edges)))
    return GraphSchedule(
        snapshots=tuple(snaps),
        matrices=tuple(WeightMatrix(a) for a in matrices),
        declared_eta=eta,
        declared_B=B,
        matrix_class=matrix_class,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(42)
