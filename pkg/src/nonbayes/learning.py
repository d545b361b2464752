"""Belief dynamics in log space, signal sampling, and single-trial runs.

The update combines a weighted geometric aggregation of neighbor beliefs with
a local likelihood reweighting, all in log space: beliefs of order
exp(-rate * k) are routine at the horizons studied here and would underflow
probability space near k ~ 3000.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from ._hash import counter_hash, draw_uniform_block
from ._kernel_py import KernelError, sample_outcomes, update_step
from .graph import WeightMatrix
from .theory import LikelihoodModel

ROW_NORM_TOL = 1e-9
RECORD_EVERY_DENSE_LIMIT = 1000  # record every step up to this K, every 10th beyond


class LearningError(ValueError):
    """Invalid belief state or dynamics input."""


@dataclass(frozen=True)
class BeliefState:
    """Per-agent log-beliefs over the hypothesis set at one step."""

    log_beliefs: np.ndarray
    step: int

    def __post_init__(self):
        a = np.asarray(self.log_beliefs, dtype=np.float64).copy()
        if a.ndim != 2:
            raise LearningError(f"log_beliefs must be 2-d, got shape {a.shape}")
        if np.isnan(a).any():
            raise LearningError("log_beliefs contain NaN")
        a.setflags(write=False)
        object.__setattr__(self, "log_beliefs", a)

    @property
    def beliefs(self) -> np.ndarray:
        return np.exp(self.log_beliefs)

    def normalization_error(self) -> float:
        from ._kernel_py import logsumexp_rows

        return float(np.max(np.abs(logsumexp_rows(np.asarray(self.log_beliefs)))))


@dataclass(frozen=True)
class SignalDraw:
    """Outcome indices observed by each agent at one step."""

    outcomes: np.ndarray
    step: int

    def __post_init__(self):
        a = np.asarray(self.outcomes, dtype=np.int64).copy()
        a.setflags(write=False)
        object.__setattr__(self, "outcomes", a)


@dataclass(frozen=True)
class LogRatioState:
    """log(mu^i(theta) / mu^i(theta_star)) per agent and hypothesis."""

    phi: np.ndarray
    reference: object
    step: int


def initial_state(priors: np.ndarray) -> BeliefState:
    """Log-space belief state from prior probability rows (zeros allowed)."""
    priors = np.asarray(priors, dtype=np.float64)
    if priors.ndim != 2:
        raise LearningError(f"priors must be 2-d, got shape {priors.shape}")
    if np.any(priors < 0.0):
        raise LearningError("priors must be nonnegative")
    err = np.max(np.abs(priors.sum(axis=1) - 1.0))
    if err > ROW_NORM_TOL:
        raise LearningError(f"prior rows must sum to 1 (max error {err:.3e})")
    with np.errstate(divide="ignore"):
        logb = np.log(priors)
    from ._kernel_py import logsumexp_rows

    logb = logb - logsumexp_rows(logb)[:, None]
    return BeliefState(log_beliefs=logb, step=0)


def log_likelihood_table(model: LikelihoodModel) -> np.ndarray:
    """(n, s_max, m) table of log l_i(s | theta), padded past each alphabet."""
    s_max = max(len(a) for a in model.alphabets)
    table = np.zeros((model.n, s_max, model.m), dtype=np.float64)
    for i, lik in enumerate(model.likelihoods):
        table[i, : lik.shape[1], :] = np.log(lik).T
    return table


def cdf_table(model: LikelihoodModel) -> tuple:
    """Inclusive per-agent CDFs of the true distributions, padded with 1."""
    s_max = max(len(a) for a in model.alphabets)
    cdf = np.ones((model.n, s_max), dtype=np.float64)
    sizes = np.empty(model.n, dtype=np.int64)
    for i, f in enumerate(model.true_dists):
        cdf[i, : len(f)] = np.cumsum(f)
        sizes[i] = len(f)
    return cdf, sizes


def sample_signals(model: LikelihoodModel, trial_seed: int, k: int) -> SignalDraw:
    """Deterministic draw for step k: inverse CDF applied to counter-hashed uniforms."""
    cdf, sizes = cdf_table(model)
    u = draw_uniform_block(trial_seed, np.array([k], dtype=np.uint64), model.n)
    outcomes = sample_outcomes(cdf, sizes, u)[0]
    return SignalDraw(outcomes=outcomes, step=k)


def sample_signal_block(model: LikelihoodModel, trial_seed: int, steps: int) -> np.ndarray:
    """Outcome indices for steps 0..steps-1, shape (steps, n)."""
    cdf, sizes = cdf_table(model)
    u = draw_uniform_block(trial_seed, np.arange(steps, dtype=np.uint64), model.n)
    return sample_outcomes(cdf, sizes, u)


def update_beliefs(
    state: BeliefState,
    weights,
    draw: SignalDraw,
    model: LikelihoodModel,
) -> BeliefState:
    """One step of the aggregate-then-reweight update, row-normalized."""
    a = weights.entries if isinstance(weights, WeightMatrix) else np.asarray(weights, dtype=np.float64)
    n, m = state.log_beliefs.shape
    if a.shape != (n, n):
        raise LearningError(f"weight matrix shape {a.shape} does not match {n} agents")
    if model.n != n or model.m != m:
        raise LearningError("model dimensions do not match the belief state")
    ll = np.empty((n, m), dtype=np.float64)
    for i in range(n):
        ll[i] = np.log(model.likelihoods[i][:, draw.outcomes[i]])
    out = update_step(a, np.asarray(state.log_beliefs), ll)
    bad = np.isnan(out)
    if bad.any():
        i, p = map(int, np.argwhere(bad)[0])
        raise KernelError(
            f"belief update produced NaN for agent {i + 1}, hypothesis "
            f"{model.hypotheses[p]!r} at step {state.step + 1}"
        )
    return BeliefState(log_beliefs=out, step=state.step + 1)


def log_ratio(state: BeliefState, model: LikelihoodModel, theta_star) -> LogRatioState:
    """Log-belief ratios against a reference hypothesis (its column is zero)."""
    idx = model.hypothesis_index(theta_star)
    logb = np.asarray(state.log_beliefs)
    ref = logb[:, idx]
    if np.any(np.isneginf(ref)):
        i = int(np.nonzero(np.isneginf(ref))[0][0])
        raise LearningError(
            f"agent {i + 1} has zero belief on reference hypothesis {theta_star!r}; "
            "log ratios require a positive prior on every optimal hypothesis"
        )
    return LogRatioState(phi=logb - ref[:, None], reference=theta_star, step=state.step)


def default_record_every(K: int) -> int:
    return 1 if K <= RECORD_EVERY_DENSE_LIMIT else 10


@dataclass(frozen=True)
class TrajectoryRecord:
    """Recorded log-belief time series of one trial."""

    trial_seed: int
    K: int
    record_every: int
    ks: np.ndarray
    log_beliefs: np.ndarray
    hypotheses: tuple
    draws: np.ndarray | None = None
    trial: int = 0

    def beliefs(self) -> np.ndarray:
        return np.exp(self.log_beliefs)

    def hypothesis_index(self, theta) -> int:
        try:
            return self.hypotheses.index(theta)
        except ValueError:
            raise LearningError(f"unknown hypothesis {theta!r}") from None

    def phi(self, theta, theta_star) -> np.ndarray:
        """Log-ratio series phi_k^i(theta) vs a reference hypothesis; shape (R, n)."""
        p = self.hypothesis_index(theta)
        q = self.hypothesis_index(theta_star)
        ref = self.log_beliefs[:, :, q]
        if np.any(np.isneginf(ref)):
            raise LearningError(
                f"reference hypothesis {theta_star!r} has zero belief somewhere in the record"
            )
        return self.log_beliefs[:, :, p] - ref


def run_trial(
    scenario,
    trial_seed: int,
    K: int,
    record_every: int | None = None,
    draws: np.ndarray | None = None,
    keep_draws: bool = False,
) -> TrajectoryRecord:
    """Evolve one trial for K steps and record the belief trajectory.

    `scenario` is anything exposing .model, .schedule, and .priors. The
    trajectory is bit-reproducible for fixed (scenario, trial_seed, K) on a
    given kernel backend; supply `draws` to replay externally chosen signals.
    """
    model = scenario.model
    schedule = scenario.schedule
    if K < 0:
        raise LearningError(f"K must be nonnegative, got {K}")
    if record_every is None:
        record_every = default_record_every(K)
    if record_every < 1:
        raise LearningError(f"record_every must be >= 1, got {record_every}")
    state0 = initial_state(np.asarray(scenario.priors, dtype=np.float64))
    cdf, sizes = cdf_table(model)
    ks, rec, used_draws = kernels.evolve_trial(
        np.asarray(state0.log_beliefs),
        schedule.weight_array(),
        log_likelihood_table(model),
        cdf,
        sizes,
        int(trial_seed),
        int(K),
        int(record_every),
        draws,
    )
    return TrajectoryRecord(
        trial_seed=int(trial_seed),
        K=int(K),
        record_every=int(record_every),
        ks=ks,
        log_beliefs=rec,
        hypotheses=tuple(model.hypotheses),
        draws=used_draws if (keep_draws or draws is not None) else None,
    )


def derive_trial_seed(master_seed: int, trial: int) -> int:
    """Per-trial seed from the run's master seed (counter-hash derivation)."""
    return counter_hash(master_seed, trial)


def write_trajectory_csv(records, path, per_trial: bool = False) -> list:
    """Persist records as CSV (trial, k, agent, hypothesis, belief, log_belief).

    One combined file by default; per_trial=True writes one file per record
    next to `path` using its stem. Returns the paths written.
    """
    import os

    def rows(rec):
        beliefs = rec.beliefs()
        for r, k in enumerate(rec.ks):
            for i in range(beliefs.shape[1]):
                for p, theta in enumerate(rec.hypotheses):
                    yield (
                        rec.trial,
                        int(k),
                        i + 1,
                        theta,
                        beliefs[r, i, p],
                        rec.log_beliefs[r, i, p],
                    )

    header = "trial,k,agent,hypothesis,belief,log_belief\n"

    def dump(fh, recs):
        fh.write(header)
        for rec in recs:
            for trial, k, agent, theta, b, lb in rows(rec):
                fh.write(f"{trial},{k},{agent},{theta},{b:.17g},{lb:.17g}\n")

    path = str(path)
    written = []
    if per_trial:
        stem, ext = os.path.splitext(path)
        for rec in records:
            p = f"{stem}_trial{rec.trial:05d}{ext or '.csv'}"
            with open(p, "w") as fh:
                dump(fh, [rec])
            written.append(p)
    else:
        with open(path, "w") as fh:
            dump(fh, records)
        written.append(path)
    return written
