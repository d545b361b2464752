"""Pure-numpy trial kernel: the reference twin of the compiled one.

Semantics shared by both backends:

* Belief updates run in log space. The geometric-aggregation term for agent i
  and hypothesis p is the weighted sum of neighbor log-beliefs; its addends
  are summed in ascending value order, which makes the result independent of
  agent labeling (bit-exact permutation equivariance) and slightly more
  accurate than left-to-right accumulation.
* A zero weight on a minus-infinity log-belief contributes nothing (the
  neighbor is not consulted); a positive weight on one pins the aggregate to
  minus infinity (a zero prior stays zero).
* Signal draws are counter-hashed from (seed, step, agent) and mapped through
  the inverse CDF of the agent's true distribution, so both backends produce
  identical draw sequences.
"""

from __future__ import annotations

import numpy as np

from ._hash import draw_uniform_block


class KernelError(ValueError):
    """A belief update produced NaN (invalid inputs upstream)."""


def aggregate_log_beliefs(a: np.ndarray, logb: np.ndarray) -> np.ndarray:
    """Weighted log-belief mix sum_j a[i,j] * logb[j,p], addends sorted ascending."""
    with np.errstate(invalid="ignore"):  # 0 * -inf marks an unconsulted zero belief
        prod = a[:, :, None] * logb[None, :, :]
    silent = (a[:, :, None] == 0.0) & np.isneginf(logb)[None, :, :]
    prod[np.broadcast_to(silent, prod.shape)] = 0.0
    prod.sort(axis=1)
    return prod.sum(axis=1)


def logsumexp_rows(x: np.ndarray) -> np.ndarray:
    mx = x.max(axis=1)
    with np.errstate(invalid="ignore"):
        s = np.exp(x - mx[:, None]).sum(axis=1)
    return mx + np.log(s)


def update_step(a: np.ndarray, logb: np.ndarray, log_lik_step: np.ndarray) -> np.ndarray:
    """One belief update: aggregate, add log-likelihoods, renormalize rows."""
    v = aggregate_log_beliefs(a, logb) + log_lik_step
    out = v - logsumexp_rows(v)[:, None]
    return out


def sample_outcomes(cdf: np.ndarray, sizes: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF outcomes for uniforms u of shape (steps, n)."""
    steps, n = u.shape
    out = np.empty((steps, n), dtype=np.int64)
    for i in range(n):
        size = int(sizes[i])
        out[:, i] = np.minimum(
            np.searchsorted(cdf[i, :size], u[:, i], side="right"), size - 1
        )
    return out


def recorded_steps(K: int, record_every: int) -> np.ndarray:
    ks = {0}
    ks.update(range(record_every, K + 1, record_every))
    if K > 0:
        ks.add(K)
    return np.array(sorted(ks), dtype=np.int64)


def evolve_trial(
    log_b0: np.ndarray,
    weights: np.ndarray,
    log_lik: np.ndarray,
    cdf: np.ndarray,
    sizes: np.ndarray,
    seed: int,
    K: int,
    record_every: int,
    draws: np.ndarray | None = None,
):
    """Run K belief updates from log_b0 under a periodic weight schedule.

    log_b0:   (n, m) row-normalized log beliefs
    weights:  (P, n, n) one period of row-stochastic matrices; step t uses t mod P
    log_lik:  (n, s_max, m) log likelihood of outcome s under hypothesis p
    cdf:      (n, s_max) inclusive cumulative true distributions
    sizes:    (n,) alphabet sizes
    draws:    optional (K, n) outcome indices; sampled from the counter hash
              when omitted

    Returns (recorded_ks, recorded_log_beliefs, draws).
    """
    n, m = log_b0.shape
    period = weights.shape[0]
    if K < 0:
        raise ValueError(f"K must be nonnegative, got {K}")
    if record_every < 1:
        raise ValueError(f"record_every must be >= 1, got {record_every}")
    if draws is None:
        if K > 0:
            u = draw_uniform_block(seed, np.arange(K, dtype=np.uint64), n)
            draws = sample_outcomes(cdf, sizes, u)
        else:
            draws = np.empty((0, n), dtype=np.int64)
    else:
        draws = np.asarray(draws, dtype=np.int64)
        if draws.shape != (K, n):
            raise ValueError(f"draws must have shape ({K}, {n}), got {draws.shape}")

    ks = recorded_steps(K, record_every)
    rec = np.empty((len(ks), n, m), dtype=np.float64)
    rec[0] = log_b0
    r = 1
    logb = np.array(log_b0, dtype=np.float64)
    agents = np.arange(n)
    for t in range(K):
        a = weights[t % period]
        logb = update_step(a, logb, log_lik[agents, draws[t]])
        bad = np.isnan(logb)
        if bad.any():
            i, p = map(int, np.argwhere(bad)[0])
            raise KernelError(
                f"belief update produced NaN at step {t + 1} for agent {i + 1}, "
                f"hypothesis index {p}"
            )
        if r < len(ks) and t + 1 == ks[r]:
            rec[r] = logb
            r += 1
    return ks, rec, draws
