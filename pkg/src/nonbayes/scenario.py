"""Scenario ingestion: YAML config files, validation, and the builtin scenario.

A scenario bundles the statistical model (agents, hypotheses, likelihood
tables, true distributions), the priors, the graph schedule, and the run
parameters. Configs are YAML with a versioned schema; `paper-fig1` names the
shipped 6-agent switching-graph reproduction scenario. Parsing materializes
everything (uniform priors become explicit rows, builtin graphs become
explicit edge lists), so a scenario round-trips through serialization to an
identical canonical form.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .graph import (
    DirectedGraphSnapshot,
    GraphError,
    GraphSchedule,
    ValidationReport,
    validate_assumption_graph,
)
from .theory import LikelihoodModel, OptimalSets, TheoryError, optimal_hypothesis_sets

SCHEMA_VERSION = 1
PRIOR_SUM_TOL = 1e-9
BUILTIN_NAMES = ("paper-fig1",)


class ScenarioError(ValueError):
    """Config parse or validation failure, addressed to the offending field."""


@dataclass(frozen=True)
class RunConfig:
    steps: int = 1800
    trials: int = 500
    master_seed: int = 20240
    record_every: int | None = None
    rho_list: tuple = (0.05, 0.1, 0.2)

    def __post_init__(self):
        if self.steps < 0:
            raise ScenarioError(f"run.steps must be nonnegative, got {self.steps}")
        if self.trials < 1:
            raise ScenarioError(f"run.trials must be >= 1, got {self.trials}")
        if self.record_every is not None and self.record_every < 1:
            raise ScenarioError(f"run.record_every must be >= 1, got {self.record_every}")
        for r in self.rho_list:
            if not (0.0 < r < 1.0):
                raise ScenarioError(f"run.rho entries must be in (0, 1), got {r}")
        object.__setattr__(self, "rho_list", tuple(float(r) for r in self.rho_list))


@dataclass(frozen=True)
class ScenarioValidation:
    """Collected validator outcomes attached to a parsed scenario."""

    graph_report: ValidationReport
    optimal_sets: OptimalSets
    warnings: tuple = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return self.graph_report.ok


@dataclass(frozen=True)
class Scenario:
    name: str
    model: LikelihoodModel
    priors: np.ndarray
    schedule: GraphSchedule
    run: RunConfig
    validation: ScenarioValidation

    def __post_init__(self):
        p = np.asarray(self.priors, dtype=np.float64).copy()
        p.setflags(write=False)
        object.__setattr__(self, "priors", p)

    def canonical_dict(self) -> dict:
        model = self.model
        agents = []
        for i in range(model.n):
            agents.append(
                {
                    "alphabet": list(model.alphabets[i]),
                    "true_dist": [float(x) for x in model.true_dists[i]],
                    "likelihoods": {
                        str(theta): [float(x) for x in model.likelihoods[i][p]]
                        for p, theta in enumerate(model.hypotheses)
                    },
                }
            )
        steps = [
            {"edges": sorted([list(e) for e in snap.edges])}
            for snap in self.schedule.snapshots
        ]
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "hypotheses": [str(t) for t in model.hypotheses],
            "agents": agents,
            "priors": [[float(x) for x in row] for row in self.priors],
            "graph": {
                "scheme": self.schedule.matrix_class,
                "eta": float(self.schedule.declared_eta),
                "B": int(self.schedule.declared_B),
                "steps": steps,
            },
            "run": {
                "steps": self.run.steps,
                "trials": self.run.trials,
                "master_seed": self.run.master_seed,
                "record_every": self.run.record_every,
                "rho": list(self.run.rho_list),
            },
        }

    def scenario_hash(self) -> str:
        payload = json.dumps(self.canonical_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.canonical_dict(), sort_keys=True)


def make_scenario(
    name: str,
    model: LikelihoodModel,
    priors,
    schedule: GraphSchedule,
    run: RunConfig,
) -> Scenario:
    """Assemble and validate a scenario; raises on hard violations.

    Hard: dimension mismatches, malformed priors, zero prior on any common
    optimal hypothesis (positive-prior requirement). Soft (warning): empty
    common optimal set, which leaves certificates undefined but simulation
    well-posed. Graph-contract violations are collected in the report rather
    than raised, so `validate` can print them all.
    """
    if schedule.node_count != model.n:
        raise ScenarioError(
            f"graph has {schedule.node_count} nodes but the model has {model.n} agents"
        )
    p = _materialize_priors(priors, model)
    sets = optimal_hypothesis_sets(model)
    warnings = []
    if not sets.common:
        warnings.append(
            "no hypothesis is optimal for every agent; certificates are undefined "
            "(simulation still runs)"
        )
    else:
        for theta in sorted(sets.common, key=str):
            idx = model.hypothesis_index(theta)
            zero = np.nonzero(p[:, idx] <= 0.0)[0]
            if zero.size:
                raise ScenarioError(
                    f"priors: agent {int(zero[0]) + 1} has zero prior on optimal "
                    f"hypothesis {theta!r}; priors must be positive on every common "
                    "optimal hypothesis"
                )
    horizon = 2 * math.lcm(schedule.period, schedule.declared_B)
    report = validate_assumption_graph(schedule, horizon)
    validation = ScenarioValidation(
        graph_report=report, optimal_sets=sets, warnings=tuple(warnings)
    )
    return Scenario(
        name=name, model=model, priors=p, schedule=schedule, run=run, validation=validation
    )


def _materialize_priors(priors, model: LikelihoodModel) -> np.ndarray:
    if isinstance(priors, str):
        if priors != "uniform":
            raise ScenarioError(f"priors: unknown shorthand {priors!r} (only 'uniform')")
        return np.full((model.n, model.m), 1.0 / model.m)
    p = np.asarray(priors, dtype=np.float64)
    if p.shape != (model.n, model.m):
        raise ScenarioError(
            f"priors: expected {model.n} rows of {model.m} entries, got shape {p.shape}"
        )
    if np.any(p < 0.0):
        raise ScenarioError("priors: entries must be nonnegative")
    sums = p.sum(axis=1)
    bad = np.nonzero(np.abs(sums - 1.0) > PRIOR_SUM_TOL)[0]
    if bad.size:
        raise ScenarioError(
            f"priors: row {int(bad[0]) + 1} sums to {sums[bad[0]]!r}, expected 1"
        )
    return p / sums[:, None]


# ----------------------------------------------------------------------
# YAML parsing
# ----------------------------------------------------------------------


def _expect_map(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ScenarioError(f"{path}: expected a mapping, got {type(value).__name__}")
    return value


def _expect_list(value, path: str) -> list:
    if not isinstance(value, list):
        raise ScenarioError(f"{path}: expected a list, got {type(value).__name__}")
    return value


def _require(d: dict, key: str, path: str):
    if key not in d:
        raise ScenarioError(f"{path}: missing required field {key!r}")
    return d[key]


def _float_row(value, path: str) -> list:
    row = _expect_list(value, path)
    try:
        return [float(x) for x in row]
    except (TypeError, ValueError):
        raise ScenarioError(f"{path}: entries must be numbers") from None


def _parse_model(doc: dict) -> LikelihoodModel:
    hypotheses = [str(t) for t in _expect_list(_require(doc, "hypotheses", "<root>"), "hypotheses")]
    agents = _expect_list(_require(doc, "agents", "<root>"), "agents")
    if not agents:
        raise ScenarioError("agents: at least one agent is required")
    alphabets, liks, dists = [], [], []
    for i, a in enumerate(agents):
        path = f"agents[{i + 1}]"
        a = _expect_map(a, path)
        alphabet = _expect_list(_require(a, "alphabet", path), f"{path}.alphabet")
        f = _float_row(_require(a, "true_dist", path), f"{path}.true_dist")
        if abs(sum(f) - 1.0) > PRIOR_SUM_TOL:
            raise ScenarioError(f"{path}.true_dist: sums to {sum(f)!r}, expected 1")
        table_cfg = _expect_map(_require(a, "likelihoods", path), f"{path}.likelihoods")
        table = []
        for theta in hypotheses:
            if theta not in table_cfg:
                raise ScenarioError(f"{path}.likelihoods: missing row for hypothesis {theta!r}")
            row = _float_row(table_cfg[theta], f"{path}.likelihoods.{theta}")
            if len(row) != len(alphabet):
                raise ScenarioError(
                    f"{path}.likelihoods.{theta}: {len(row)} entries for an alphabet of "
                    f"size {len(alphabet)}"
                )
            s = sum(row)
            if abs(s - 1.0) > PRIOR_SUM_TOL:
                raise ScenarioError(f"{path}.likelihoods.{theta}: sums to {s!r}, expected 1")
            table.append([x / s for x in row])
        extra = set(table_cfg) - set(hypotheses)
        if extra:
            raise ScenarioError(f"{path}.likelihoods: unknown hypothesis {sorted(extra)[0]!r}")
        total = sum(f)
        alphabets.append(tuple(alphabet))
        liks.append(np.array(table))
        dists.append(np.array([x / total for x in f]))
    try:
        return LikelihoodModel(
            hypotheses=tuple(hypotheses),
            alphabets=tuple(alphabets),
            likelihoods=tuple(liks),
            true_dists=tuple(dists),
        )
    except TheoryError as exc:
        raise ScenarioError(f"agents: {exc}") from exc


def _parse_graph(doc: dict, n: int) -> GraphSchedule:
    g = _expect_map(_require(doc, "graph", "<root>"), "graph")
    if "builtin" in g:
        if g["builtin"] not in BUILTIN_NAMES:
            raise ScenarioError(f"graph.builtin: unknown builtin {g['builtin']!r}")
        schedule = paper_fig1_schedule()
        if schedule.node_count != n:
            raise ScenarioError(
                f"graph.builtin: {g['builtin']} has {schedule.node_count} nodes, "
                f"scenario has {n} agents"
            )
        return schedule
    scheme = str(_require(g, "scheme", "graph"))
    eta = float(_require(g, "eta", "graph"))
    b = int(_require(g, "B", "graph"))
    undirected = bool(g.get("undirected", False))
    steps_cfg = _expect_list(_require(g, "steps", "graph"), "graph.steps")
    if not steps_cfg:
        raise ScenarioError("graph.steps: at least one step is required")
    snapshots = []
    for k, step in enumerate(steps_cfg):
        path = f"graph.steps[{k}]"
        step = _expect_map(step, path)
        edges = set()
        for e in _expect_list(_require(step, "edges", path), f"{path}.edges"):
            e = _expect_list(e, f"{path}.edges")
            if len(e) != 2:
                raise ScenarioError(f"{path}.edges: edge {e!r} is not a pair")
            j, i = int(e[0]), int(e[1])
            edges.add((j, i))
            if undirected:
                edges.add((i, j))
        try:
            snapshots.append(DirectedGraphSnapshot(node_count=n, edges=frozenset(edges)))
        except GraphError as exc:
            raise ScenarioError(f"{path}: {exc}") from exc
    try:
        return GraphSchedule.from_snapshots(snapshots, scheme, eta, b)
    except GraphError as exc:
        raise ScenarioError(f"graph: {exc}") from exc


def _parse_run(doc: dict) -> RunConfig:
    r = doc.get("run", {})
    if r is None:
        r = {}
    r = _expect_map(r, "run")
    defaults = RunConfig()
    rho = r.get("rho", list(defaults.rho_list))
    if not isinstance(rho, list):
        rho = [rho]
    return RunConfig(
        steps=int(r.get("steps", defaults.steps)),
        trials=int(r.get("trials", defaults.trials)),
        master_seed=int(r.get("master_seed", defaults.master_seed)),
        record_every=None if r.get("record_every") is None else int(r["record_every"]),
        rho_list=tuple(float(x) for x in rho),
    )


def parse_scenario_text(text: str, source: str = "<string>") -> Scenario:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{source}: not valid YAML: {exc}") from exc
    if doc is None:
        raise ScenarioError(f"{source}: empty document")
    doc = _expect_map(doc, "<root>")
    if "builtin" in doc:
        if doc["builtin"] not in BUILTIN_NAMES:
            raise ScenarioError(f"builtin: unknown scenario {doc['builtin']!r}")
        overrides = {}
        if "run" in doc and doc["run"] is not None:
            run = _parse_run(doc)
            overrides = {
                "steps": run.steps,
                "trials": run.trials,
                "master_seed": run.master_seed,
                "record_every": run.record_every,
                "rho_list": run.rho_list,
            }
            # only override what the document actually sets
            r = _expect_map(doc["run"], "run")
            keymap = {
                "steps": "steps",
                "trials": "trials",
                "master_seed": "master_seed",
                "record_every": "record_every",
                "rho": "rho_list",
            }
            overrides = {keymap[k]: overrides[keymap[k]] for k in r if k in keymap}
        return paper_fig1_scenario(**overrides)
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioError(
            f"schema_version: expected {SCHEMA_VERSION}, got {version!r}"
        )
    model = _parse_model(doc)
    schedule = _parse_graph(doc, model.n)
    run = _parse_run(doc)
    priors = doc.get("priors", "uniform")
    name = str(doc.get("name", "scenario"))
    return make_scenario(name, model, priors, schedule, run)


def parse_scenario(path) -> Scenario:
    """Load, parse, and validate a scenario file (or a builtin name)."""
    if str(path) in BUILTIN_NAMES:
        return paper_fig1_scenario()
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read scenario file: {exc}") from exc
    return parse_scenario_text(text, source=str(path))


# ----------------------------------------------------------------------
# Builtin: 6-agent switching graph with one informative agent
# ----------------------------------------------------------------------


def paper_fig1_model() -> LikelihoodModel:
    """Six agents, binary signals with f = (0.1, 0.9) everywhere.

    Agent 1 can tell the two hypotheses apart ((0.2, 0.8) vs (0.9, 0.1));
    agents 2-6 see fair coins under both, i.e. observationally equivalent
    hypotheses. Only the first hypothesis is optimal network-wide.
    """
    informative = np.array([[0.2, 0.8], [0.9, 0.1]])
    uninformative = np.array([[0.5, 0.5], [0.5, 0.5]])
    return LikelihoodModel(
        hypotheses=("theta1", "theta2"),
        alphabets=tuple((0, 1) for _ in range(6)),
        likelihoods=(informative,) + (uninformative,) * 5,
        true_dists=tuple(np.array([0.1, 0.9]) for _ in range(6)),
    )


def _sym(pairs) -> frozenset:
    edges = set()
    for a, b in pairs:
        edges.add((a, b))
        edges.add((b, a))
    return frozenset(edges)


def paper_fig1_schedule(
    scheme: str = "doubly_stochastic", eta: float = 1.0 / 6.0, b: int = 2
) -> GraphSchedule:
    """Two alternating snapshots whose union is connected over every 2-window.

    The 1-2 link switches on and off every step, and the links among agents
    2-6 change every step; each snapshot alone is disconnected. Lazy
    Metropolis weights on the symmetrized snapshots (doubly stochastic); the
    smallest positive weight is 1/6, at agent 2's three even-step links.
    """
    even = DirectedGraphSnapshot(6, _sym([(1, 2), (2, 3), (2, 6), (4, 5)]))
    odd = DirectedGraphSnapshot(6, _sym([(3, 4), (5, 6)]))
    return GraphSchedule.from_snapshots((even, odd), scheme, eta, b)


def paper_fig1_scenario(**run_overrides) -> Scenario:
    """The shipped reproduction scenario with its default run parameters."""
    run_fields = {"steps", "trials", "master_seed", "record_every", "rho_list"}
    bad = set(run_overrides) - run_fields
    if bad:
        raise ScenarioError(f"unknown run override(s): {sorted(bad)}")
    run = RunConfig(**run_overrides)
    return make_scenario(
        name="paper-fig1",
        model=paper_fig1_model(),
        priors="uniform",
        schedule=paper_fig1_schedule(),
        run=run,
    )
