"""Graph schedules, weight schemes, backward products, limit vectors, delta."""

import numpy as np
import pytest

from nonbayes.graph import (
    ConvergenceError,
    DirectedGraphSnapshot,
    GraphError,
    GraphSchedule,
    backward_product,
    build_weight_matrix,
    compute_delta,
    estimate_limit_vector,
    limit_vector_chain,
    union_strongly_connected,
    validate_assumption_graph,
)
from nonbayes.scenario import paper_fig1_schedule

from conftest import fixed_matrix_schedule, random_schedule


def _sym(pairs):
    out = set()
    for a, b in pairs:
        out.add((a, b))
        out.add((b, a))
    return frozenset(out)


class TestBuildWeightMatrix:
    def test_two_node_lazy_metropolis(self):
        """Both nodes have degree 1, so every entry is 1/(2*1) = 1/2."""
        g = DirectedGraphSnapshot(2, _sym([(1, 2)]) | {(1, 1), (2, 2)})
        w = build_weight_matrix(g, "lazy_metropolis")
        np.testing.assert_array_equal(w.entries, [[0.5, 0.5], [0.5, 0.5]])

    @pytest.mark.parametrize("scheme", ["general", "lazy_metropolis", "doubly_stochastic"])
    def test_single_node(self, scheme):
        g = DirectedGraphSnapshot(1, frozenset())
        w = build_weight_matrix(g, scheme)
        np.testing.assert_array_equal(w.entries, [[1.0]])

    def test_three_node_directed_cycle_general(self):
        """Each node hears itself plus one in-neighbor: two entries of 1/2 per row."""
        g = DirectedGraphSnapshot(3, frozenset({(1, 2), (2, 3), (3, 1)}))
        w = build_weight_matrix(g, "general")
        for i in range(3):
            row = w.entries[i]
            assert sorted(row[row > 0]) == [0.5, 0.5]
            assert row[i] == 0.5

    def test_self_loops_added_implicitly(self):
        g_with = DirectedGraphSnapshot(2, _sym([(1, 2)]) | {(1, 1), (2, 2)})
        g_without = DirectedGraphSnapshot(2, _sym([(1, 2)]))
        for scheme in ("general", "lazy_metropolis"):
            np.testing.assert_array_equal(
                build_weight_matrix(g_with, scheme).entries,
                build_weight_matrix(g_without, scheme).entries,
            )

    def test_asymmetric_edge_rejected_for_symmetric_schemes(self):
        g = DirectedGraphSnapshot(3, frozenset({(1, 2), (2, 3), (3, 2)}))
        with pytest.raises(GraphError, match=r"\(1, 2\)"):
            build_weight_matrix(g, "lazy_metropolis")
        build_weight_matrix(g, "general")  # fine for the directed scheme

    def test_empty_graph_rejected(self):
        with pytest.raises(GraphError):
            DirectedGraphSnapshot(0, frozenset())

    def test_doubly_stochastic_scheme_is_doubly_stochastic(self, rng):
        for _ in range(20):
            sched = random_schedule(rng, scheme="doubly_stochastic")
            for w in sched.matrices:
                assert w.is_doubly_stochastic(1e-12)

    def test_row_sums_exact(self, rng):
        for _ in range(20):
            sched = random_schedule(rng)
            for w in sched.matrices:
                assert w.row_sum_error() <= 1e-12


class TestValidateAssumptionGraph:
    def test_paper_fig1_passes_all_checks(self):
        report = validate_assumption_graph(paper_fig1_schedule(), horizon=8)
        assert report.ok, report.as_dicts()

    def test_zero_diagonal_flagged_at_its_step(self):
        """Matrix with a zero diagonal entry at step 3 of a 4-step cycle."""
        good = np.array([[0.5, 0.5], [0.5, 0.5]])
        bad = np.array([[0.0, 1.0], [0.5, 0.5]])
        sched = fixed_matrix_schedule([good, good, good, bad], eta=0.5, B=4,
                                      matrix_class="general")
        report = validate_assumption_graph(sched, horizon=4)
        flagged = [v for v in report.issues if v.check == "positive_diagonal"]
        assert flagged and flagged[0].k == 3 and flagged[0].i == 1

    def test_unreachable_node_fails_every_window(self):
        # no path from node 2 back to node 1
        g = DirectedGraphSnapshot(2, frozenset({(1, 2), (1, 1), (2, 2)}))
        sched = GraphSchedule.from_snapshots([g], "general", 0.4, 1)
        report = validate_assumption_graph(sched, horizon=6)
        bad = [v for v in report.issues if v.check == "window_connectivity"]
        assert len(bad) == 6

    def test_eta_floor_violation_reported_with_indices(self):
        a = np.array([[0.9, 0.1], [0.5, 0.5]])
        sched = fixed_matrix_schedule([a], eta=0.3, B=1, matrix_class="general")
        report = validate_assumption_graph(sched, horizon=2)
        low = [v for v in report.issues if v.check == "eta_floor"]
        assert [(v.k, v.i, v.j) for v in low] == [(0, 1, 2), (1, 1, 2)]

    def test_report_serializes_with_fixed_fields(self):
        a = np.array([[0.9, 0.1], [0.5, 0.5]])
        sched = fixed_matrix_schedule([a], eta=0.3, B=1, matrix_class="general")
        report = validate_assumption_graph(sched, horizon=1)
        for d in report.as_dicts():
            assert set(d) == {"check", "k", "i", "j", "detail"}

    def test_horizon_below_B_rejected(self):
        with pytest.raises(GraphError):
            validate_assumption_graph(paper_fig1_schedule(), horizon=1)


class TestBackwardProduct:
    def test_t_equals_k_returns_single_matrix(self):
        sched = paper_fig1_schedule()
        for k in (0, 1, 5):
            np.testing.assert_array_equal(
                backward_product(sched, k, k).entries, sched.matrix_at(k)
            )

    def test_identity_schedule_stays_identity(self):
        eye2 = np.eye(2)
        sched = fixed_matrix_schedule([eye2], eta=1.0, B=1, matrix_class="general")
        p = backward_product(sched, 0, 17).entries
        np.testing.assert_array_equal(p, eye2)

    def test_paper_fig1_rows_coalesce(self):
        """Row spread shrinks monotonically toward the limit vector; with the
        sparse lazy-Metropolis weights it passes 1e-3 near k ~ 100."""
        sched = paper_fig1_schedule()
        spreads = []
        for k in (20, 60, 100):
            p = backward_product(sched, 0, k).entries
            spreads.append(float(np.max(p.max(axis=0) - p.min(axis=0))))
        assert spreads[0] > spreads[1] > spreads[2]
        assert spreads[2] < 1e-3

    def test_row_stochastic_closure(self, rng):
        for _ in range(10):
            sched = random_schedule(rng)
            t = int(rng.integers(0, 5))
            k = t + int(rng.integers(0, 60))
            w = backward_product(sched, t, k)
            assert w.row_sum_error() <= 1e-10

    def test_t_greater_than_k_rejected(self):
        with pytest.raises(GraphError):
            backward_product(paper_fig1_schedule(), 3, 2)


class TestLimitVectors:
    def test_doubly_stochastic_limit_is_uniform(self):
        lv = estimate_limit_vector(paper_fig1_schedule(), 0, 1e-10)
        np.testing.assert_allclose(lv.phi, np.full(6, 1 / 6), atol=1e-10)

    def test_single_node(self):
        g = DirectedGraphSnapshot(1, frozenset())
        sched = GraphSchedule.from_snapshots([g], "general", 1.0, 1)
        lv = estimate_limit_vector(sched, 0, 1e-12)
        np.testing.assert_array_equal(lv.phi, [1.0])

    def test_fixed_chain_left_eigenvector(self):
        """pi' A = pi' for A = [[3/4, 1/4], [1/2, 1/2]] solves to (2/3, 1/3)."""
        a = np.array([[0.75, 0.25], [0.5, 0.5]])
        sched = fixed_matrix_schedule([a], eta=0.25, B=1, matrix_class="general")
        lv = estimate_limit_vector(sched, 0, 1e-12)
        np.testing.assert_allclose(lv.phi, [2 / 3, 1 / 3], atol=1e-11)

    def test_estimate_is_stochastic(self, rng):
        for _ in range(10):
            sched = random_schedule(rng)
            t = int(rng.integers(0, 4))
            lv = estimate_limit_vector(sched, t, 1e-11)
            assert abs(lv.phi.sum() - 1.0) <= 1e-10
            assert np.all(lv.phi >= 0.0)

    def test_chain_matches_direct_estimates(self, rng):
        for _ in range(5):
            sched = random_schedule(rng)
            chain = limit_vector_chain(sched, 6, 1e-12)
            for t in (0, 3, 6):
                direct = estimate_limit_vector(sched, t, 1e-12)
                np.testing.assert_allclose(chain[t].phi, direct.phi, atol=1e-10)

    def test_nonconverging_schedule_raises_with_spread(self):
        eye2 = np.eye(2)
        sched = fixed_matrix_schedule([eye2], eta=1.0, B=1, matrix_class="general")
        with pytest.raises(ConvergenceError) as exc:
            estimate_limit_vector(sched, 0, 1e-6, horizon_cap=50)
        assert exc.value.achieved_spread == 1.0

    def test_tolerance_must_be_positive(self):
        with pytest.raises(GraphError):
            estimate_limit_vector(paper_fig1_schedule(), 0, 0.0)


class TestComputeDelta:
    def test_doubly_stochastic_delta_is_one(self):
        d, bound = compute_delta(paper_fig1_schedule(), horizon=50)
        assert abs(d - 1.0) <= 1e-12
        assert bound == pytest.approx((1 / 6) ** 12, rel=1e-12)

    def test_single_node(self):
        g = DirectedGraphSnapshot(1, frozenset())
        sched = GraphSchedule.from_snapshots([g], "general", 0.5, 3)
        d, bound = compute_delta(sched, horizon=10)
        assert d == 1.0
        assert bound == pytest.approx(0.5**3)

    def test_paper_fig1_general_weights(self):
        """Row-stochastic (not doubly) weights on the same switching graph."""
        sched = paper_fig1_schedule(scheme="general")
        d, bound = compute_delta(sched, horizon=50)
        assert d >= (1 / 6) ** 12
        assert d < 1.0 + 1e-12

    def test_lemma2_floor_on_random_schedules(self, rng):
        for _ in range(10):
            sched = random_schedule(rng)
            d, bound = compute_delta(sched, horizon=120)
            assert d >= bound - 1e-12
            chain = limit_vector_chain(sched, 5, 1e-11)
            for lv in chain:
                assert np.all(lv.phi >= d / sched.node_count - 1e-9)

    def test_bad_horizon_rejected(self):
        with pytest.raises(GraphError):
            compute_delta(paper_fig1_schedule(), horizon=0)


class TestScheduleBasics:
    def test_generator_determinism(self):
        sched = paper_fig1_schedule()
        for k in range(7):
            a1 = sched.matrix_at(k)
            a2 = sched.matrix_at(k)
            assert a1 is a2 or np.array_equal(a1, a2)

    def test_union_connectivity_helper(self):
        sched = paper_fig1_schedule()
        assert union_strongly_connected(sched.snapshots)
        assert not union_strongly_connected([sched.snapshots[1]])

    def test_declared_eta_must_be_in_range(self):
        g = DirectedGraphSnapshot(2, _sym([(1, 2)]))
        with pytest.raises(GraphError):
            GraphSchedule.from_snapshots([g], "general", 0.0, 1)
        with pytest.raises(GraphError):
            GraphSchedule.from_snapshots([g], "general", 0.5, 0)

    def test_entries_are_read_only(self):
        sched = paper_fig1_schedule()
        with pytest.raises(ValueError):
            sched.matrices[0].entries[0, 0] = 2.0
