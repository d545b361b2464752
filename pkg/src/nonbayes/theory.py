"""Statistical quantities driving the learning rate.

Everything here is closed-form: KL divergences between finite distributions,
the per-agent best-hypothesis sets and their intersection, the divergence-gap
vectors H(theta), the mixing constants (C, lambda, delta) per matrix class,
and the full rate certificate (gamma1, gamma2, N(rho)) behind the
exp(-k*gamma2/2 + gamma1) belief envelope. Natural log throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

KL_SUM_TOL = 1e-10
MODEL_SUM_TOL = 1e-12
TIES_TOL = 1e-9
GAP_REFERENCE_TOL = 1e-10
LAZY_METROPOLIS_LAMBDA_CONSTANT = 71.0  # spectral-gap constant for lazy Metropolis chains

_EXP_OVERFLOW = 709.0  # exp() overflows float64 just above this


class TheoryError(ValueError):
    """Invalid statistical input (bad distribution, empty target set, zero prior)."""


@dataclass(frozen=True)
class LikelihoodModel:
    """Per-agent signal alphabets, likelihood tables, and true distributions.

    likelihoods[i] has shape (m, |alphabet_i|): row p is the distribution
    agent i would see under hypothesis p. All likelihood entries must be
    strictly positive (uniformly positive likelihoods); true distributions
    may contain zeros.
    """

    hypotheses: tuple
    alphabets: tuple
    likelihoods: tuple
    true_dists: tuple

    def __post_init__(self):
        if len(self.hypotheses) < 1:
            raise TheoryError("need at least one hypothesis")
        if len(set(self.hypotheses)) != len(self.hypotheses):
            raise TheoryError("hypothesis labels must be unique")
        if not (len(self.alphabets) == len(self.likelihoods) == len(self.true_dists)):
            raise TheoryError("per-agent field lengths disagree")
        if len(self.alphabets) < 1:
            raise TheoryError("need at least one agent")
        m = len(self.hypotheses)
        liks = []
        dists = []
        for i, (alpha_i, lik, f) in enumerate(
            zip(self.alphabets, self.likelihoods, self.true_dists)
        ):
            lik = np.asarray(lik, dtype=np.float64)
            f = np.asarray(f, dtype=np.float64)
            s = len(alpha_i)
            if s < 1:
                raise TheoryError(f"agent {i + 1}: empty signal alphabet")
            if lik.shape != (m, s):
                raise TheoryError(
                    f"agent {i + 1}: likelihood table shape {lik.shape} != ({m}, {s})"
                )
            if f.shape != (s,):
                raise TheoryError(f"agent {i + 1}: true distribution length {f.shape} != {s}")
            if np.any(lik <= 0.0):
                raise TheoryError(
                    f"agent {i + 1}: likelihood table has a non-positive entry; "
                    "likelihoods must be uniformly positive"
                )
            if np.any(f < 0.0):
                raise TheoryError(f"agent {i + 1}: true distribution has a negative entry")
            row_err = np.max(np.abs(lik.sum(axis=1) - 1.0))
            if row_err > MODEL_SUM_TOL:
                raise TheoryError(
                    f"agent {i + 1}: likelihood row sums off by {row_err:.3e}"
                )
            if abs(f.sum() - 1.0) > MODEL_SUM_TOL:
                raise TheoryError(
                    f"agent {i + 1}: true distribution sums to {f.sum()!r}"
                )
            lik = lik.copy()
            f = f.copy()
            lik.setflags(write=False)
            f.setflags(write=False)
            liks.append(lik)
            dists.append(f)
        object.__setattr__(self, "hypotheses", tuple(self.hypotheses))
        object.__setattr__(self, "alphabets", tuple(tuple(a) for a in self.alphabets))
        object.__setattr__(self, "likelihoods", tuple(liks))
        object.__setattr__(self, "true_dists", tuple(dists))

    @property
    def n(self) -> int:
        return len(self.alphabets)

    @property
    def m(self) -> int:
        return len(self.hypotheses)

    @property
    def alpha(self) -> float:
        """Smallest likelihood entry across all agents and hypotheses."""
        return min(float(lik.min()) for lik in self.likelihoods)

    def hypothesis_index(self, theta) -> int:
        try:
            return self.hypotheses.index(theta)
        except ValueError:
            raise TheoryError(f"unknown hypothesis {theta!r}") from None

    def divergence_table(self) -> np.ndarray:
        """d(f^i || l_i(.|theta)) for every agent i and hypothesis theta; shape (n, m)."""
        out = np.empty((self.n, self.m), dtype=np.float64)
        for i in range(self.n):
            for p in range(self.m):
                out[i, p] = kl_divergence(self.true_dists[i], self.likelihoods[i][p])
        return out


def kl_divergence(p, q) -> float:
    """Kullback-Leibler divergence sum_i p_i log(p_i / q_i), natural log.

    Zero-probability terms of p contribute nothing; q must be positive
    wherever p is (infinite divergence is rejected, not returned).
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise TheoryError(f"p and q must be 1-d of equal length, got {p.shape}, {q.shape}")
    if np.any(p < 0.0) or np.any(q < 0.0):
        raise TheoryError("distributions must be nonnegative")
    if abs(p.sum() - 1.0) > KL_SUM_TOL or abs(q.sum() - 1.0) > KL_SUM_TOL:
        raise TheoryError(
            f"inputs must be normalized: sums are {p.sum()!r}, {q.sum()!r}"
        )
    support = p > 0.0
    if np.any(q[support] == 0.0):
        i = int(np.nonzero(support & (q == 0.0))[0][0])
        raise TheoryError(
            f"q[{i}] = 0 where p[{i}] > 0: divergence is infinite (unsupported)"
        )
    ps = p[support]
    return float(np.sum(ps * np.log(ps / q[support])))


@dataclass(frozen=True)
class OptimalSets:
    """Per-agent best-hypothesis sets and their network-wide intersection."""

    per_agent: tuple
    common: frozenset
    divergences: np.ndarray

    @property
    def assumption_ok(self) -> bool:
        """True when some hypothesis is a best fit for every agent simultaneously."""
        return len(self.common) > 0


def optimal_hypothesis_sets(model: LikelihoodModel, ties_tol: float = TIES_TOL) -> OptimalSets:
    """Argmin-divergence sets per agent and their intersection.

    Any hypothesis within ties_tol of an agent's minimum divergence is
    included (exact ties are the normal idiom for observationally equivalent
    hypotheses). An empty intersection is flagged, not raised.
    """
    table = model.divergence_table()
    per_agent = []
    for i in range(model.n):
        best = table[i].min()
        per_agent.append(
            frozenset(
                model.hypotheses[p] for p in range(model.m) if table[i, p] <= best + ties_tol
            )
        )
    common = frozenset.intersection(*per_agent)
    return OptimalSets(per_agent=tuple(per_agent), common=common, divergences=table)


def divergence_gap(model: LikelihoodModel, theta, theta_star, ties_tol: float = TIES_TOL) -> np.ndarray:
    """Per-agent divergence gap H(theta) relative to an optimal hypothesis.

    [H(theta)]_i = d(f^i || l_i(.|theta)) - d(f^i || l_i(.|theta_star)).
    The result must not depend on which optimal hypothesis anchors it, and
    that independence is asserted across the whole intersection set.
    """
    sets = optimal_hypothesis_sets(model, ties_tol)
    if theta_star not in sets.common:
        raise TheoryError(
            f"{theta_star!r} is not in the common optimal set {sorted(map(str, sets.common))}"
        )
    p = model.hypothesis_index(theta)
    table = sets.divergences
    gaps = {
        star: table[:, p] - table[:, model.hypothesis_index(star)] for star in sets.common
    }
    ref = gaps[theta_star]
    for star, g in gaps.items():
        dev = float(np.max(np.abs(g - ref)))
        if dev > GAP_REFERENCE_TOL:
            raise TheoryError(
                f"gap vector for {theta!r} differs by {dev:.3e} between anchors "
                f"{theta_star!r} and {star!r}; optimal set is inconsistent"
            )
    return ref


@dataclass(frozen=True)
class RateConstants:
    C: float
    lam: float
    delta_bound: float


def rate_constants(
    matrix_class: str,
    n: int,
    B: int,
    eta: float,
    lazy_metropolis_lambda_constant: float = LAZY_METROPOLIS_LAMBDA_CONSTANT,
) -> RateConstants:
    """Contraction constants (C, lambda) and the delta lower bound per matrix class.

    general:            C = 2,       lambda = (1 - eta^(nB))^(1/B),      delta >= eta^(nB)
    doubly_stochastic:  C = sqrt(2), lambda = (1 - eta/(4 n^2))^(1/B),   delta = 1
    lazy_metropolis:    C = sqrt(2), lambda = 1 - 1/(c n^2),             delta = 1

    The lazy-Metropolis constant c is not pinned by the underlying theory;
    it is exposed as a parameter (default 71, a published value for lazy
    Metropolis chains) and the general-case constants remain the guaranteed
    fallback.
    """
    if not (0.0 < eta <= 1.0):
        raise TheoryError(f"eta must be in (0, 1], got {eta}")
    if n < 1 or B < 1:
        raise TheoryError(f"need n >= 1 and B >= 1, got n={n}, B={B}")
    if matrix_class == "general":
        return RateConstants(C=2.0, lam=(1.0 - eta ** (n * B)) ** (1.0 / B), delta_bound=eta ** (n * B))
    if matrix_class == "doubly_stochastic":
        return RateConstants(
            C=math.sqrt(2.0), lam=(1.0 - eta / (4.0 * n * n)) ** (1.0 / B), delta_bound=1.0
        )
    if matrix_class == "lazy_metropolis":
        c = lazy_metropolis_lambda_constant
        if c <= 0:
            raise TheoryError(f"lazy Metropolis lambda constant must be positive, got {c}")
        return RateConstants(C=math.sqrt(2.0), lam=1.0 - 1.0 / (c * n * n), delta_bound=1.0)
    raise TheoryError(f"unknown matrix class {matrix_class!r}")


def onset_time(gamma2: float, alpha: float, rho: float) -> int:
    """Smallest integer step count after which the belief envelope holds
    with confidence 1 - rho: ceil(8 log(alpha)^2 log(1/rho) / gamma2^2 + 1)."""
    if not (0.0 < rho < 1.0):
        raise TheoryError(f"confidence rho must be in (0, 1), got {rho}")
    if math.isinf(gamma2):
        return 1
    return int(math.ceil(8.0 * math.log(alpha) ** 2 * math.log(1.0 / rho) / gamma2**2 + 1.0))


@dataclass(frozen=True)
class RateCertificate:
    """Closed-form convergence certificate for one scenario.

    delta records the value actually used (the larger of the class bound and
    any measured value, both kept for provenance). H_vectors maps every
    suboptimal hypothesis label to its per-agent gap vector.
    """

    matrix_class: str
    n: int
    B: int
    eta: float
    alpha: float
    C: float
    lam: float
    delta: float
    delta_bound: float
    delta_empirical: float | None
    delta_source: str
    gamma1: float
    gamma2: float
    N_of_rho: dict
    H_vectors: dict
    optimal: tuple
    suboptimal: tuple
    lazy_metropolis_lambda_constant: float = LAZY_METROPOLIS_LAMBDA_CONSTANT
    general_fallback: RateConstants | None = None

    def onset(self, rho: float) -> int:
        if rho in self.N_of_rho:
            return self.N_of_rho[rho]
        return onset_time(self.gamma2, self.alpha, rho)

    def as_dict(self) -> dict:
        out = {
            "matrix_class": self.matrix_class,
            "n": self.n,
            "B": self.B,
            "eta": self.eta,
            "alpha": self.alpha,
            "C": self.C,
            "lambda": self.lam,
            "delta": self.delta,
            "delta_bound": self.delta_bound,
            "delta_empirical": self.delta_empirical,
            "delta_source": self.delta_source,
            "gamma1": self.gamma1,
            "gamma2": self.gamma2,
            "N_of_rho": {repr(r): v for r, v in sorted(self.N_of_rho.items())},
            "H_vectors": {str(t): [float(x) for x in v] for t, v in self.H_vectors.items()},
            "optimal": [str(t) for t in self.optimal],
            "suboptimal": [str(t) for t in self.suboptimal],
            "lazy_metropolis_lambda_constant": self.lazy_metropolis_lambda_constant,
        }
        if self.general_fallback is not None:
            out["general_fallback"] = {
                "C": self.general_fallback.C,
                "lambda": self.general_fallback.lam,
                "delta_bound": self.general_fallback.delta_bound,
            }
        return out


def build_certificate(
    model: LikelihoodModel,
    matrix_class: str,
    B: int,
    eta: float,
    priors: np.ndarray,
    rho_list,
    delta_empirical: float | None = None,
    ties_tol: float = TIES_TOL,
    lazy_metropolis_lambda_constant: float = LAZY_METROPOLIS_LAMBDA_CONSTANT,
) -> RateCertificate:
    """Assemble the full rate certificate for a model + schedule parameters.

    gamma1 = max over (theta_star, theta) pairs of
             [ max_i log(prior_i(theta)/prior_i(theta_star)) + C ||H(theta)||_1 / (1-lambda) ]
    gamma2 = (delta/n) min over suboptimal theta of ||H(theta)||_1

    delta is the class bound unless a larger measured value is supplied, in
    which case the measured (tighter) value is used; both are recorded.
    """
    n = model.n
    priors = np.asarray(priors, dtype=np.float64)
    if priors.shape != (n, model.m):
        raise TheoryError(f"priors must have shape ({n}, {model.m}), got {priors.shape}")
    sets = optimal_hypothesis_sets(model, ties_tol)
    if not sets.common:
        raise TheoryError(
            "no hypothesis is a best fit for every agent (common optimal set is empty); "
            "the certificate is undefined"
        )
    star_idx = [model.hypothesis_index(t) for t in sorted(sets.common, key=str)]
    for i in range(n):
        for p in star_idx:
            if priors[i, p] <= 0.0:
                raise TheoryError(
                    f"agent {i + 1} has zero prior on optimal hypothesis "
                    f"{model.hypotheses[p]!r}; priors on every optimal hypothesis must be positive"
                )

    consts = rate_constants(
        matrix_class, n, B, eta, lazy_metropolis_lambda_constant=lazy_metropolis_lambda_constant
    )
    if delta_empirical is not None and delta_empirical > consts.delta_bound:
        delta, source = float(delta_empirical), "empirical"
    else:
        delta, source = consts.delta_bound, "bound"

    suboptimal = tuple(t for t in model.hypotheses if t not in sets.common)
    anchor = model.hypotheses[star_idx[0]]
    h_vectors = {t: divergence_gap(model, t, anchor, ties_tol) for t in suboptimal}

    if suboptimal:
        h_norms = {t: float(np.abs(h).sum()) for t, h in h_vectors.items()}
        gamma2 = (delta / n) * min(h_norms.values())
        gamma1 = -math.inf
        with np.errstate(divide="ignore"):
            for p_star in star_idx:
                for t in suboptimal:
                    p = model.hypothesis_index(t)
                    prior_term = float(np.max(np.log(priors[:, p]) - np.log(priors[:, p_star])))
                    gamma1 = max(
                        gamma1,
                        prior_term + consts.C * h_norms[t] / (1.0 - consts.lam),
                    )
    else:
        # every hypothesis is optimal: nothing decays, the envelope is trivial
        gamma2 = math.inf
        gamma1 = 0.0

    alpha = model.alpha
    n_of_rho = {float(r): onset_time(gamma2, alpha, float(r)) for r in rho_list}
    # the lazy-Metropolis lambda rests on an unpinned constant; keep the
    # guaranteed general-case constants alongside it
    fallback = (
        rate_constants("general", n, B, eta) if matrix_class == "lazy_metropolis" else None
    )
    return RateCertificate(
        matrix_class=matrix_class,
        n=n,
        B=B,
        eta=eta,
        alpha=alpha,
        C=consts.C,
        lam=consts.lam,
        delta=delta,
        delta_bound=consts.delta_bound,
        delta_empirical=None if delta_empirical is None else float(delta_empirical),
        delta_source=source,
        gamma1=gamma1,
        gamma2=gamma2,
        N_of_rho=n_of_rho,
        H_vectors=h_vectors,
        optimal=tuple(sorted(sets.common, key=str)),
        suboptimal=suboptimal,
        lazy_metropolis_lambda_constant=lazy_metropolis_lambda_constant,
        general_fallback=fallback,
    )


def bound_curve(cert: RateCertificate, k: int) -> float:
    """Belief envelope exp(-k gamma2 / 2 + gamma1) at step k.

    May exceed 1 (vacuous) for small k; callers report the crossover
    2 gamma1 / gamma2 rather than clamping.
    """
    if k < 0:
        raise TheoryError(f"step must be nonnegative, got {k}")
    return bound_exponent_value(cert.gamma1, cert.gamma2, k)


def bound_exponent(gamma1: float, gamma2: float, k) -> np.ndarray:
    """log of the belief envelope at steps k (vectorized)."""
    k = np.asarray(k, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        e = gamma1 - 0.5 * k * gamma2
    if math.isinf(gamma2):
        e = np.where(k == 0.0, gamma1, -math.inf)
    return e


def bound_exponent_value(gamma1: float, gamma2: float, k: int) -> float:
    e = gamma1 if k == 0 else gamma1 - 0.5 * k * gamma2
    if e > _EXP_OVERFLOW:
        return math.inf
    return math.exp(e)
