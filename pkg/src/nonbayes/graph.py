"""Time-varying directed graphs, mixing matrices, and their backward products.

A schedule is a finite template of graph snapshots repeated cyclically, each
snapshot paired with a row-stochastic weight matrix derived from a weighting
scheme. The module validates the connectivity/weight contract (uniform
positive entries, positive diagonals, B-window strong connectivity), computes
backward products A_{k:t} = A_k ... A_{t+1} A_t, estimates their limit
vectors, and measures the column-sum floor delta.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

ROW_SUM_TOL = 1e-12
PRODUCT_ROW_TOL = 1e-10
RENORM_EVERY = 100  # drift in long products is multiplicative; re-anchor rows

SCHEMES = ("general", "doubly_stochastic", "lazy_metropolis")


class GraphError(ValueError):
    """Invalid graph, scheme, or schedule input."""


class ConvergenceError(RuntimeError):
    """A truncated matrix product failed to reach the requested row agreement."""

    def __init__(self, message: str, achieved_spread: float, horizon: int):
        super().__init__(message)
        self.achieved_spread = achieved_spread
        self.horizon = horizon


@dataclass(frozen=True)
class DirectedGraphSnapshot:
    """One communication round: edge (j, i) means j sends to i. Nodes are 1-based."""

    node_count: int
    edges: frozenset

    def __post_init__(self):
        if self.node_count < 1:
            raise GraphError("graph must have at least one node")
        object.__setattr__(self, "edges", frozenset(tuple(e) for e in self.edges))
        for j, i in self.edges:
            if not (1 <= j <= self.node_count and 1 <= i <= self.node_count):
                raise GraphError(f"edge ({j}, {i}) outside node range 1..{self.node_count}")

    def in_neighbors(self, i: int) -> set:
        return {j for (j, tgt) in self.edges if tgt == i and j != i}

    def undirected_neighbors(self, i: int) -> set:
        return {j for (j, tgt) in self.edges if tgt == i and j != i} | {
            tgt for (j, tgt) in self.edges if j == i and tgt != i
        }

    def asymmetric_edge(self):
        """First directed edge without its reverse, or None if symmetric."""
        for j, i in sorted(self.edges):
            if j != i and (i, j) not in self.edges:
                return (j, i)
        return None


@dataclass(frozen=True)
class WeightMatrix:
    """Nonnegative mixing matrix with unit row sums."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise GraphError(f"weight matrix must be square, got shape {a.shape}")
        if a.shape[0] < 1:
            raise GraphError("weight matrix must be at least 1x1")
        if np.any(a < -1e-15):
            raise GraphError("weight matrix has negative entries")
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def row_sum_error(self) -> float:
        return float(np.max(np.abs(self.entries.sum(axis=1) - 1.0)))

    def min_positive_entry(self) -> float:
        pos = self.entries[self.entries > 0.0]
        return float(pos.min()) if pos.size else 0.0

    def is_doubly_stochastic(self, tol: float = ROW_SUM_TOL) -> bool:
        col_err = float(np.max(np.abs(self.entries.sum(axis=0) - 1.0)))
        return self.row_sum_error() <= tol and col_err <= tol


@dataclass(frozen=True)
class LimitVector:
    """Stochastic vector the rows of A_{k:t} converge to as k grows."""

    phi: np.ndarray
    origin_time: int
    truncation_horizon: int

    def __post_init__(self):
        v = np.asarray(self.phi, dtype=np.float64).copy()
        v.setflags(write=False)
        object.__setattr__(self, "phi", v)


def build_weight_matrix(graph: DirectedGraphSnapshot, scheme: str) -> WeightMatrix:
    """Derive mixing weights for one snapshot.

    general: row i splits weight equally over its in-neighborhood including a
    self-loop (added implicitly if absent). lazy_metropolis (and
    doubly_stochastic, which is the same construction): off-diagonal
    1 / (2 max(d_i, d_j)) per undirected edge, diagonal absorbs the remainder;
    requires a symmetric edge set.
    """
    if scheme not in SCHEMES:
        raise GraphError(f"unknown weighting scheme {scheme!r}; expected one of {SCHEMES}")
    n = graph.node_count
    a = np.zeros((n, n), dtype=np.float64)

    if scheme == "general":
        for i in range(1, n + 1):
            nbrs = sorted(graph.in_neighbors(i) | {i})
            w = 1.0 / len(nbrs)
            for j in nbrs:
                a[i - 1, j - 1] = w
        return WeightMatrix(a)

    bad = graph.asymmetric_edge()
    if bad is not None:
        raise GraphError(
            f"scheme {scheme!r} needs a symmetric edge set, but edge {bad} has no reverse"
        )
    deg = {i: len(graph.undirected_neighbors(i)) for i in range(1, n + 1)}
    for j, i in graph.edges:
        if j == i:
            continue
        a[i - 1, j - 1] = 1.0 / (2.0 * max(deg[i], deg[j]))
    for i in range(n):
        a[i, i] = 1.0 - a[i].sum()
    return WeightMatrix(a)


@dataclass(frozen=True)
class GraphSchedule:
    """Cyclic schedule of snapshots and their weight matrices.

    The finite template repeated with the stated period is the whole
    (deterministic) sequence, so every for-all-k property reduces to one
    period. declared_eta and declared_B are contract values checked by
    validate_assumption_graph, not inferred.
    """

    snapshots: tuple
    matrices: tuple
    declared_eta: float
    declared_B: int
    matrix_class: str

    def __post_init__(self):
        if not self.snapshots:
            raise GraphError("schedule needs at least one snapshot")
        if not (0.0 < self.declared_eta <= 1.0):
            raise GraphError(f"declared eta must be in (0, 1], got {self.declared_eta}")
        if self.declared_B < 1:
            raise GraphError(f"declared B must be >= 1, got {self.declared_B}")
        if self.matrix_class not in SCHEMES:
            raise GraphError(f"unknown matrix class {self.matrix_class!r}")
        ns = {s.node_count for s in self.snapshots}
        if len(ns) != 1:
            raise GraphError(f"snapshots disagree on node count: {sorted(ns)}")
        object.__setattr__(self, "snapshots", tuple(self.snapshots))
        object.__setattr__(self, "matrices", tuple(self.matrices))

    @classmethod
    def from_snapshots(
        cls,
        snapshots: Sequence[DirectedGraphSnapshot],
        matrix_class: str,
        declared_eta: float,
        declared_B: int,
    ) -> "GraphSchedule":
        mats = tuple(build_weight_matrix(s, matrix_class) for s in snapshots)
        return cls(tuple(snapshots), mats, declared_eta, declared_B, matrix_class)

    @property
    def period(self) -> int:
        return len(self.snapshots)

    @property
    def node_count(self) -> int:
        return self.snapshots[0].node_count

    def snapshot_at(self, k: int) -> DirectedGraphSnapshot:
        return self.snapshots[k % self.period]

    def matrix_at(self, k: int) -> np.ndarray:
        return self.matrices[k % self.period].entries

    def weight_array(self) -> np.ndarray:
        """All period matrices stacked as (period, n, n), for the trial kernels."""
        return np.stack([m.entries for m in self.matrices])


@dataclass(frozen=True)
class ValidationIssue:
    check: str
    k: int
    i: int | None
    j: int | None
    detail: str

    def as_dict(self) -> dict:
        return {"check": self.check, "k": self.k, "i": self.i, "j": self.j, "detail": self.detail}


@dataclass(frozen=True)
class ValidationReport:
    horizon: int
    issues: tuple = field(default_factory=tuple)
    warnings: tuple = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.issues

    def as_dicts(self) -> list:
        return [v.as_dict() for v in self.issues]


def _reachable(n: int, adjacency: dict, start: int) -> set:
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in adjacency.get(u, ()):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def union_strongly_connected(snapshots: Iterable[DirectedGraphSnapshot]) -> bool:
    """Strong connectivity of the union graph, by reachability from and to node 1."""
    snapshots = list(snapshots)
    n = snapshots[0].node_count
    fwd: dict = {}
    rev: dict = {}
    for s in snapshots:
        for j, i in s.edges:
            fwd.setdefault(j, set()).add(i)
            rev.setdefault(i, set()).add(j)
    nodes = set(range(1, n + 1))
    return _reachable(n, fwd, 1) == nodes and _reachable(n, rev, 1) == nodes


def validate_assumption_graph(schedule: GraphSchedule, horizon: int) -> ValidationReport:
    """Check the connectivity/weight contract over [0, horizon).

    (a) unit row sums, (b) positive diagonals, (c) every positive entry at
    least declared_eta, (d) every full window [kB, (k+1)B-1] within the
    horizon has a strongly connected union graph. Violations are collected,
    never raised.
    """
    if horizon < schedule.declared_B:
        raise GraphError(
            f"horizon {horizon} shorter than declared B={schedule.declared_B}"
        )
    issues = []
    eta = schedule.declared_eta
    for k in range(horizon):
        a = schedule.matrix_at(k)
        n = a.shape[0]
        row_err = np.abs(a.sum(axis=1) - 1.0)
        for i in np.nonzero(row_err > ROW_SUM_TOL)[0]:
            issues.append(
                ValidationIssue(
                    "row_stochastic", k, int(i) + 1, None,
                    f"row sum off by {row_err[i]:.3e}",
                )
            )
        for i in range(n):
            if a[i, i] <= 0.0:
                issues.append(
                    ValidationIssue(
                        "positive_diagonal", k, i + 1, i + 1,
                        f"diagonal entry is {a[i, i]!r}",
                    )
                )
        low = (a > 0.0) & (a < eta - 1e-12)
        for i, j in zip(*np.nonzero(low)):
            issues.append(
                ValidationIssue(
                    "eta_floor", k, int(i) + 1, int(j) + 1,
                    f"positive entry {a[i, j]:.6g} below declared eta {eta:.6g}",
                )
            )
    b = schedule.declared_B
    for w in range(horizon // b):
        window = [schedule.snapshot_at(k) for k in range(w * b, (w + 1) * b)]
        if not union_strongly_connected(window):
            issues.append(
                ValidationIssue(
                    "window_connectivity", w * b, None, None,
                    f"union over steps [{w * b}, {(w + 1) * b - 1}] is not strongly connected",
                )
            )
    return ValidationReport(horizon=horizon, issues=tuple(issues))


def _renormalize_rows(p: np.ndarray) -> None:
    p /= p.sum(axis=1, keepdims=True)


def backward_product(schedule: GraphSchedule, t: int, k: int) -> WeightMatrix:
    """A_{k:t} = A_k ... A_{t+1} A_t; with t = k this is A_k itself."""
    if t < 0 or t > k:
        raise GraphError(f"backward product needs 0 <= t <= k, got t={t}, k={k}")
    p = schedule.matrix_at(t).copy()
    for s in range(t + 1, k + 1):
        p = schedule.matrix_at(s) @ p
        if (s - t) % RENORM_EVERY == 0:
            _renormalize_rows(p)
    return WeightMatrix(p)


def _row_spread(p: np.ndarray) -> float:
    return float(np.max(p.max(axis=0) - p.min(axis=0)))


def estimate_limit_vector(
    schedule: GraphSchedule,
    t: int,
    tolerance: float,
    horizon_cap: int = 100_000,
) -> LimitVector:
    """Estimate the limit vector of A_{k:t} by iterating until rows agree.

    Rows of later products are convex combinations of the current rows, so the
    limit lies in their convex hull: once the rows agree within `tolerance`
    per column, every row (and their mean) is within `tolerance` of the limit.
    """
    if tolerance <= 0.0:
        raise GraphError(f"tolerance must be positive, got {tolerance}")
    p = schedule.matrix_at(t).copy()
    k = t
    while _row_spread(p) > tolerance:
        if k - t >= horizon_cap:
            raise ConvergenceError(
                f"rows of A_(k:{t}) still spread {_row_spread(p):.3e} after "
                f"{horizon_cap} steps; schedule likely violates the connectivity contract",
                achieved_spread=_row_spread(p),
                horizon=horizon_cap,
            )
        k += 1
        p = schedule.matrix_at(k) @ p
        if (k - t) % RENORM_EVERY == 0:
            _renormalize_rows(p)
    return LimitVector(phi=p.mean(axis=0), origin_time=t, truncation_horizon=k)


def limit_vector_chain(
    schedule: GraphSchedule,
    t_max: int,
    tolerance: float,
    horizon_cap: int = 100_000,
) -> list:
    """Limit vectors for t = 0..t_max from a single truncated-product estimate.

    Since A_{k:t} = A_{k:t+1} A_t, the limits satisfy phi_t' = phi_{t+1}' A_t;
    estimating at t_max and multiplying downward is exact up to the top
    estimate's error (the maps are nonexpansive in l1).
    """
    top = estimate_limit_vector(schedule, t_max, tolerance, horizon_cap)
    chain = [top]
    phi = top.phi
    for t in range(t_max - 1, -1, -1):
        phi = schedule.matrix_at(t).T @ phi
        chain.append(LimitVector(phi=phi, origin_time=t, truncation_horizon=top.truncation_horizon))
    chain.reverse()
    return chain


def _delta_from(schedule: GraphSchedule, start: int, horizon: int) -> float:
    p = schedule.matrix_at(start).copy()
    delta = float(p.sum(axis=0).min())
    for k in range(start + 1, start + horizon):
        p = schedule.matrix_at(k) @ p
        if (k - start) % RENORM_EVERY == 0:
            _renormalize_rows(p)
        delta = min(delta, float(p.sum(axis=0).min()))
    return delta


def compute_delta(schedule: GraphSchedule, horizon: int) -> tuple:
    """Measured column-sum floor of the backward products, plus eta^(nB).

    The infimum runs over products started at every residue of the cycle,
    not just at step 0: the limit vector of the products from step t is
    floored by the column sums of products from step t, and a floor measured
    from a single start does not bound the shifted limits. For a cyclic
    schedule the start residues exhaust all shifts. The measured value must
    dominate the declared lower bound; a gap signals a schedule whose
    declared (eta, B) do not describe it.
    """
    if horizon < 1:
        raise GraphError(f"horizon must be >= 1, got {horizon}")
    n = schedule.node_count
    bound = schedule.declared_eta ** (n * schedule.declared_B)
    delta = min(_delta_from(schedule, s, horizon) for s in range(schedule.period))
    if delta < bound - 1e-12:
        raise GraphError(
            f"measured delta {delta:.6g} falls below declared bound eta^(nB) = {bound:.6g}; "
            "declared eta/B are inconsistent with the schedule"
        )
    return delta, bound
