import itertools
import json
import math

import numpy as np
import pytest

import oracles
from conftest import clustered_graph
from expansionlab.bounds import (
    C_CAP,
    LabelingTable,
    TheoremCheckReport,
    check_conversions,
    check_lemma_pop_denoise,
    check_lemma_unsup,
    check_theorem_additive,
    check_theorem_additive_all,
    check_theorem_denoise,
    check_theorem_unsup,
    denoise_bound,
    denoise_setting,
    end_to_end_rhs,
    generalization_rhs,
    qualifying_instances,
    random_instance,
    reports_to_jsonl,
    reverify,
    unsup_bound,
    unsup_setting,
    verify_instance,
)
from expansionlab.dataspace import FinitePopulation, TransformSpec, build_neighborhood_graph, measure_separation
from expansionlab.expansion import minimal_additive_q
from expansionlab.nets import FeedforwardNet, random_net
from expansionlab.objectives import Pseudolabeler, err, robust_regularizer
from expansionlab.selftrain import brute_force_min_pl, brute_force_min_unsup


def _planted(seed=3, sizes=(6, 6), flips=1):
    """Clustered instance with the lightest ``flips`` points of each class mislabeled."""
    graph = clustered_graph(seed, sizes=sizes)
    pop = graph.population
    assignment = pop.labels.copy()
    k = pop.num_classes
    for i in range(k):
        members = pop.class_indices(i)
        light = members[np.argsort(pop.masses[members])[:flips]]
        assignment[light] = (i + 1) % k
    return graph, Pseudolabeler(assignment, pop)


def _instance_with(pred, start=0):
    for s in range(start, start + 2000):
        graph, pl = random_instance(s)
        ds, us = denoise_setting(graph, pl), unsup_setting(graph)
        if ds.ok and us.ok and pred(graph, pl, ds, us):
            return graph, pl, ds, us
    raise AssertionError("no instance found")


def _lists(graph):
    return graph.b_adj.tolist(), graph.masses.tolist(), graph.labels.tolist()


class TestClosedForms:
    def test_denoise_examples(self):
        assert denoise_bound(5, 0.2, 0) == pytest.approx(0.1)
        assert denoise_bound(3, 0, 0) == 0
        # 2/3 * 0.3 + 8/3 * 0.01
        assert denoise_bound(4, 0.3, 0.01) == pytest.approx(0.2 + 0.08 / 3)

    def test_unsup_examples(self):
        assert unsup_bound(2, 0.1) == pytest.approx(0.2)
        assert unsup_bound(1.5, 0.1) == pytest.approx(0.3)
        assert unsup_bound(7, 0) == 0
        assert unsup_bound(11, 0.1) == pytest.approx(0.2)

    @pytest.mark.parametrize("fn", [lambda c: denoise_bound(c, 0.1, 0.1), lambda c: unsup_bound(c, 0.1)])
    def test_c_must_exceed_one(self, fn):
        with pytest.raises(ValueError):
            fn(1.0)


class TestReport:
    def test_holds_iff_slack_within_tolerance(self):
        assert TheoremCheckReport("unsup_lemma", "checked", 0.5, 0.5 - 1e-13).holds
        assert not TheoremCheckReport("unsup_lemma", "checked", 0.5, 0.5 - 1e-11).holds
        r = TheoremCheckReport("unsup_lemma", "checked", 0.1, 0.3)
        assert r.slack == pytest.approx(0.2)

    def test_refused_has_no_verdict(self):
        graph, pl = _planted()
        bad = Pseudolabeler((pl.population.labels + 1) % 2, pl.population)
        r = check_theorem_denoise(graph, bad)
        assert r.status == "refused" and r.holds is None and r.slack is None
        assert "1/3" in r.reason
        assert json.loads(r.to_json())["holds"] is None

    def test_json_round_trip_and_reverify(self):
        graph, pl = _planted()
        for r in verify_instance(graph, pl):
            d = json.loads(r.to_json())
            assert d["schema_version"] == 1
            assert reverify(d)
            assert TheoremCheckReport.from_dict(d).to_json() == r.to_json()

    def test_tampered_report_fails_reverify(self):
        graph, pl = _planted()
        r = check_theorem_denoise(graph, pl)
        d = r.to_dict()
        d["rhs"] += 0.01
        assert not reverify(d)
        d = r.to_dict()
        d["inputs"]["a_bar"] = 0.4
        assert not reverify(d)

    def test_advisory_flag(self):
        graph, pl = _planted()
        exact = check_theorem_denoise(graph, pl, minimizer_mode="exact")
        local = check_theorem_denoise(graph, pl, minimizer_mode="local")
        assert not exact.advisory
        assert local.advisory and local.exactness["minimizer_exact"] is False

    def test_jsonl_one_line_per_report(self):
        graph, pl = _planted()
        reports = verify_instance(graph, pl)
        text = reports_to_jsonl(reports)
        lines = text.splitlines()
        assert len(lines) == len(reports)
        assert [json.loads(x)["theorem"] for x in lines] == [r.theorem for r in reports]


class TestLabelingTable:
    def test_rows_and_robust(self):
        graph, _ = _planted(sizes=(4, 4))
        t = LabelingTable(graph)
        assert t.rows.shape == (2**8, 8)
        assert len({tuple(r) for r in t.rows}) == 2**8
        np.testing.assert_allclose(t.robust, robust_regularizer(graph, t.rows), atol=1e-15)

    def test_minimizers_match_search(self):
        graph, pl = _planted(seed=5, sizes=(5, 5))
        t = LabelingTable(graph)
        a = t.min_pl(pl, 4.0)
        b = brute_force_min_pl(graph, pl, 4.0, mode="exact")
        np.testing.assert_array_equal(a.labeling, b.labeling)
        assert a.value == b.value
        a = t.min_unsup(2.5)
        b = brute_force_min_unsup(graph, 2.5, mode="exact")
        np.testing.assert_array_equal(a.labeling, b.labeling)

    def test_cap(self):
        graph, _ = _planted(sizes=(4, 4))
        with pytest.raises(ValueError):
            LabelingTable(graph, cap=100)


class TestDenoiseChecks:
    def test_planted_twelve_points_holds(self):
        graph, pl = _planted(sizes=(6, 6))
        ds = denoise_setting(graph, pl)
        assert ds.ok and 0 < ds.a_bar < 1 / 3 and ds.c_bar > 3
        r = check_theorem_denoise(graph, pl)
        assert r.status == "checked" and r.holds
        b_adj, masses, truth = _lists(graph)
        g, val = oracles.min_pl_enumerate(b_adj, masses, truth, pl.assignment.tolist(), 2, ds.c)
        assert r.lhs == pytest.approx(sum(m for m, a, t in zip(masses, g, truth) if a != t), abs=1e-12)
        assert r.rhs == pytest.approx(2 / (ds.c - 1) * pl.err + 2 * ds.c / (ds.c - 1) * measure_separation(graph))

    def test_c_is_min_of_inverse_abar_and_certified(self):
        graph, pl = _planted(sizes=(6, 6))
        ds = denoise_setting(graph, pl)
        assert ds.c == pytest.approx(min(1 / ds.a_bar, ds.c_bar))
        ok, worst = oracles.mult_expansion(graph.n_adj.tolist(), graph.labels.tolist(), graph.masses.tolist(), ds.a_bar, ds.c_bar)
        assert ok

    def test_clean_pseudolabels(self):
        graph = clustered_graph(2, sizes=(5, 5))
        pl = Pseudolabeler(graph.labels.copy(), graph.population)
        r = check_theorem_denoise(graph, pl)
        assert r.inputs["a_bar"] == 0 and r.inputs["c"] == C_CAP
        assert r.holds
        if r.inputs["mu"] == 0:
            assert r.lhs == 0

    def test_small_c_bar_refused(self):
        graph, pl = _planted(sizes=(6, 6))
        r = check_theorem_denoise(graph, pl, c_bar=2.5)
        assert r.status == "refused"
        assert "does not exceed 3" in r.reason

    def test_uncertified_expansion_refused(self):
        # a chain: the end point's neighborhood is only two points
        pts = np.column_stack([np.arange(8) * 0.9, np.zeros(8)])
        pts[4:, 0] += 10
        pop = FinitePopulation(pts, np.full(8, 1 / 8), np.repeat([0, 1], 4), 2)
        graph = build_neighborhood_graph(pop, TransformSpec(0.5, overlap="witnessed"))
        assignment = pop.labels.copy()
        assignment[0] = 1
        pl = Pseudolabeler(assignment, pop)
        assert check_theorem_denoise(graph, pl).status == "refused"
        r = check_theorem_denoise(graph, pl, c_bar=3.5)
        assert r.status == "refused" and "not certified" in r.reason

    def test_lemma_worst_slack_matches_loop(self):
        graph, pl = _planted(seed=7, sizes=(4, 4))
        r = check_lemma_pop_denoise(graph, pl)
        c = r.inputs["c"]
        b_adj, masses, truth = _lists(graph)
        worst = math.inf
        for g in itertools.product(range(2), repeat=graph.n):
            e = sum(m for m, a, t in zip(masses, g, truth) if a != t)
            worst = min(worst, oracles.pl_objective_loop(b_adj, masses, truth, pl.assignment.tolist(), g, c) - e)
        assert r.slack == pytest.approx(worst, abs=1e-12)
        assert r.holds

    def test_lemma_ground_truth_slack(self):
        graph, pl = _planted(seed=7, sizes=(4, 4))
        c = denoise_setting(graph, pl).c
        t = LabelingTable(graph)
        j = int(np.flatnonzero((t.rows == graph.labels).all(axis=1))[0])
        slack = t.pl_values(pl, c)[j] - t.err[j]
        # L(G*) - err(G*) reduces to the denoising bound itself
        assert slack == pytest.approx(denoise_bound(c, pl.err, measure_separation(graph)), abs=1e-12)

    def test_lemma_refused_when_not_qualifying(self):
        graph, pl = _planted()
        bad = Pseudolabeler((pl.population.labels + 1) % 2, pl.population)
        assert check_lemma_pop_denoise(graph, bad).status == "refused"


class TestUnsupChecks:
    def test_ground_truth_feasible_case(self):
        graph, _, _, _ = _instance_with(lambda g, p, d, u: u.mu == 0)
        r = check_theorem_unsup(graph)
        assert r.status == "checked" and r.holds
        assert r.lhs == 0 and r.rhs == 0

    def test_planted_with_positive_separation(self):
        graph, _, _, us = _instance_with(lambda g, p, d, u: u.mu > 0)
        r = check_theorem_unsup(graph)
        assert r.holds and r.rhs > 0
        g, val = oracles.min_unsup_enumerate(*_lists(graph)[:2], graph.population.num_classes, us.c)
        assert r.inputs["robust"] == pytest.approx(val, abs=1e-12)
        assert r.lhs == pytest.approx(
            oracles.err_unsup(g, graph.labels.tolist(), graph.masses.tolist(), graph.population.num_classes), abs=1e-12
        )

    def test_refusal_when_classes_too_light(self):
        # two touching classes: separation mass is large compared with the lighter class
        pts = np.array([[0.0, 0], [0.5, 0], [1.0, 0], [1.4, 0]])
        pop = FinitePopulation(pts, np.array([0.3, 0.3, 0.2, 0.2]), np.array([0, 0, 1, 1]), 2)
        graph = build_neighborhood_graph(pop, TransformSpec(0.6, overlap="witnessed"))
        r = check_theorem_unsup(graph)
        assert r.status == "refused"
        assert "rho" in r.reason

    def test_refusal_without_expansion(self):
        # class 0 split into two far pieces
        pts = np.array([[0.0, 0], [10.0, 0], [20.0, 0], [20.5, 0]])
        pop = FinitePopulation(pts, np.full(4, 0.25), np.array([0, 0, 1, 1]), 2)
        graph = build_neighborhood_graph(pop, TransformSpec(1.0, overlap="witnessed"))
        r = check_theorem_unsup(graph)
        assert r.status == "refused"

    def test_lemma_over_all_feasible(self):
        graph, _, _, us = _instance_with(lambda g, p, d, u: u.mu > 0)
        r = check_lemma_unsup(graph)
        assert r.holds
        b_adj, masses, truth = _lists(graph)
        k = graph.population.num_classes
        thr = max(2 / (us.c - 1), 2)
        worst = math.inf
        for g in itertools.product(range(k), repeat=graph.n):
            rob = oracles.robust_loop(b_adj, masses, g)
            if min(sum(m for m, a in zip(masses, g) if a == y) for y in range(k)) > thr * rob:
                worst = min(worst, max(us.c / (us.c - 1), 2) * rob - oracles.err_unsup(g, truth, masses, k))
        assert r.slack == pytest.approx(worst, abs=1e-12)


class TestAdditiveChecks:
    def test_perfect_pseudolabels(self):
        graph = clustered_graph(6, sizes=(5, 5))
        if measure_separation(graph) > 0:
            pytest.skip("instance not separated")
        pl = Pseudolabeler(graph.labels.copy(), graph.population)
        r = check_theorem_additive(graph, pl, 0.0, 0.0, graph.labels)
        assert r.status == "checked" and r.lhs == 0 and r.rhs == pytest.approx(0.0)

    def test_all_labelings_meeting_hypothesis(self):
        graph, pl, _, _ = _instance_with(lambda g, p, d, u: d.a_bar > 0)
        q = minimal_additive_q(graph, pl.mistake_set, 0.0)
        r = check_theorem_additive_all(graph, pl, q, 0.0)
        assert r.status in ("checked", "skipped")
        b_adj, masses, truth = _lists(graph)
        plist = pl.assignment.tolist()
        k = graph.population.num_classes
        worst = math.inf
        for g in itertools.product(range(k), repeat=graph.n):
            bad = sum(m for i, m in enumerate(masses) if g[i] != plist[i] or any(b_adj[i][j] and g[j] != g[i] for j in range(graph.n)))
            if bad <= pl.err + 1e-12:
                dis = sum(m for m, a, b in zip(masses, g, plist) if a != b)
                e = sum(m for m, a, t in zip(masses, g, truth) if a != t)
                worst = min(worst, 2 * (q + oracles.robust_loop(b_adj, masses, g)) + dis - pl.err - e)
        if r.status == "checked":
            assert r.slack == pytest.approx(worst, abs=1e-12) and r.holds
        else:
            assert worst == math.inf

    def test_hypothesis_violation_skipped(self):
        graph, pl = _planted()
        q = minimal_additive_q(graph, pl.mistake_set, 0.0)
        g = (graph.labels + 1) % 2
        r = check_theorem_additive(graph, pl, q, 0.0, g)
        assert r.status == "skipped" and r.holds is None

    def test_uncertified_refused(self):
        graph, pl = _planted()
        r = check_theorem_additive(graph, pl, 0.0, 10.0, pl.assignment)
        assert r.status == "refused"


class TestConversions:
    def test_derived_certificates_pass(self):
        count = 0
        for _, graph, pl, ds, us in qualifying_instances(11, 15):
            for entry in check_conversions(graph, pl, ds, us):
                assert entry["holds"], entry
                count += 1
        assert count > 30

    def test_additive_conversion_against_loop(self):
        graph, pl, ds, us = _instance_with(lambda g, p, d, u: d.a_bar > 0)
        for entry in check_conversions(graph, pl, ds, us, xis=()):
            m_i = pl.class_mistake_set(entry["class"])
            ok, _ = oracles.additive_expansion(graph.n_adj.tolist(), graph.labels.tolist(), graph.masses.tolist(),
                                               m_i.tolist(), entry["q"], entry["alpha"])
            assert ok


class TestQualifyingInstances:
    def test_deterministic(self):
        a = [(d, g.population.masses.tolist(), p.assignment.tolist()) for d, g, p, _, _ in qualifying_instances(3, 5)]
        b = [(d, g.population.masses.tolist(), p.assignment.tolist()) for d, g, p, _, _ in qualifying_instances(3, 5)]
        assert a == b

    def test_sizes_within_limits(self):
        for _ in range(30):
            graph, pl = random_instance(_)
            assert graph.n <= 12 and graph.population.num_classes in (2, 3)

    def test_all_hold_and_reverify(self):
        n = 0
        for _, graph, pl, ds, us in qualifying_instances(21, 25):
            for r in verify_instance(graph, pl, ds, us):
                assert r.status in ("checked", "skipped")
                if r.status == "checked":
                    assert r.holds, r.to_dict()
                    assert reverify(r)
                n += 1
        assert n >= 125


def _net(scale=1.0):
    return random_net([2, 6, 3], seed=0, scale=scale)


class TestGeneralization:
    def test_huge_t_counts_every_point(self):
        out = generalization_rhs(_net(), np.array([0.1, 2.0, 5.0]), t=1e9)
        assert out["empirical"] == 1.0
        assert out["note"] == "up to unspecified universal constants"

    def test_complexity_linear_in_norms(self):
        m = np.linspace(0, 1, 50)
        a = generalization_rhs(_net(), m, 0.5)
        net2 = FeedforwardNet([2 * w for w in _net().weights], "softplus")
        b = generalization_rhs(net2, m, 0.5)
        assert b["complexity"] == pytest.approx(2 * a["complexity"])
        assert b["empirical"] == a["empirical"]

    def test_complexity_frozen_value(self):
        net = FeedforwardNet([np.array([[3.0, 4.0]]).T.reshape(2, 1).T.reshape(1, 2), np.array([[1.0], [0.0]])], "tanh")
        # widths (2, 1, 2): q = 1, d = 2, norms 5 and 1
        out = generalization_rhs(net, np.ones(4), t=2.0, delta=0.5)
        assert out["complexity"] == pytest.approx(math.log(4) * math.log(2) * 6.0 / (2.0 * 2.0))
        assert out["zeta"] == pytest.approx(math.sqrt((math.log(2) + 2 * math.log(4)) / 4))

    def test_large_n_terms_vanish(self):
        small = generalization_rhs(_net(), np.ones(100), 1.0)
        big = generalization_rhs(_net(), np.ones(10**6), 1.0)
        assert big["complexity"] < small["complexity"] / 10
        assert big["zeta"] < small["zeta"] / 10

    def test_monotone_in_t(self):
        m = np.random.default_rng(0).exponential(1.0, 200)
        ts = np.linspace(0.05, 5, 40)
        outs = [generalization_rhs(_net(), m, t) for t in ts]
        comp = [o["complexity"] for o in outs]
        emp = [o["empirical"] for o in outs]
        assert np.all(np.diff(comp) < 0)
        assert np.all(np.diff(emp) >= 0)

    def test_invalid_t(self):
        with pytest.raises(ValueError):
            generalization_rhs(_net(), np.ones(3), 0.0)


class TestEndToEnd:
    def test_pl_arithmetic(self):
        net = _net()
        rng = np.random.default_rng(1)
        rob, fit = rng.exponential(1, 300), rng.exponential(1, 300)
        c, err_pl = 5.0, 0.1
        out = end_to_end_rhs(net, rob, (0.5, 0.8), 0.05, c, "pl", pl_margins=fit, err_pl=err_pl)
        g = generalization_rhs(net, rob, 0.5, 0.05)
        comp = g["complexity"] + generalization_rhs(net, fit, 0.8, 0.05)["complexity"]
        zeta = math.sqrt((math.log(3 / 0.05) + 2 * math.log(300)) / 300) / (c - 1)
        b1 = 2 * np.mean(rob <= 0.5) + np.mean(fit <= 0.8) + comp + zeta
        b2 = 4 * np.mean(rob <= 0.5) + 3 * np.mean(fit <= 0.8) + comp + zeta
        assert out["B1"] == pytest.approx(b1)
        assert out["B2"] == pytest.approx(b2)
        assert out["bound"] == pytest.approx(max(b1 - err_pl, b2 - (3 - 4 / (c - 1)) * err_pl))
        assert out["zeta_single_term"] == pytest.approx(g["zeta"])

    def test_symmetric_t_coefficients(self):
        net = _net()
        m = np.full(50, 0.3)
        out = end_to_end_rhs(net, m, (1.0, 1.0), 0.05, 4.0, "pl", pl_margins=m, err_pl=0.0)
        rest = out["B1"] - 3.0
        assert out["B2"] - 7.0 == pytest.approx(rest)

    def test_unsup_arithmetic_and_condition(self):
        net = _net()
        rng = np.random.default_rng(2)
        rob = rng.exponential(1, 500)
        margins = rng.exponential(1, 500)
        preds = rng.integers(0, 3, 500)
        c = 3.0
        out = end_to_end_rhs(net, rob, 0.2, 0.05, c, "unsup", margins=margins, predictions=preds, u=[0.1, 0.2, 0.3])
        g = generalization_rhs(net, rob, 0.2, 0.05)
        zeta = math.sqrt((math.log(3 / 0.05) + 2 * math.log(500)) / 500) / (c - 1)
        assert out["bound"] == pytest.approx(2 * np.mean(rob <= 0.2) + g["complexity"] + zeta)
        mass0 = np.mean((preds == 0) & (margins >= 0.1))
        assert out["class_margin_mass"][0] == pytest.approx(mass0)
        assert out["condition_met"] == all(a >= b for a, b in zip(out["condition_lhs"], out["condition_rhs"]))

    def test_huge_margins_and_sample(self):
        net = _net()
        n = 10**6
        out = end_to_end_rhs(net, np.full(n, 1e6), (1e3, 1e3), 0.05, 5.0, "pl", pl_margins=np.full(n, 1e6), err_pl=0.0)
        assert out["bound"] < 0.05

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            end_to_end_rhs(_net(), np.ones(5), 1.0, mode="other")
