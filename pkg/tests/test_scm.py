import numpy as np
import pytest

from frontdoor.scm import (
    CapacityError,
    CausalGraph,
    ConditioningError,
    CptError,
    DiscreteSCM,
    IdentificationError,
    ScmError,
    ScmParseError,
    ancestral_sample,
    backdoor_estimate,
    check_frontdoor_criterion,
    format_scm,
    frontdoor_estimate,
    interventional,
    interventional_loglik,
    intervene,
    joint,
    mil_fit,
    observational_conditional,
    parse_scm,
)

from conftest import (
    REFERENCE_SCM_TEXT,
    brute_joint,
    brute_marginal,
    build_reference_scm,
    random_frontdoor_scm,
)


def single_node_scm(probs):
    g = CausalGraph()
    g.add_node("A", len(probs))
    return DiscreteSCM(g, {"A": probs})


class TestJoint:
    def test_single_bernoulli(self):
        d = joint(single_node_scm([0.7, 0.3]))
        assert d.variables == ("A",)
        np.testing.assert_allclose(d.probs, [0.7, 0.3])

    def test_two_fair_coins(self):
        g = CausalGraph()
        g.add_node("A", 2)
        g.add_node("B", 2)
        d = joint(DiscreteSCM(g, {"A": [0.5, 0.5], "B": [0.5, 0.5]}))
        np.testing.assert_allclose(d.probs, np.full((2, 2), 0.25))

    def test_chain_marginals_match_hand_products(self):
        g = CausalGraph()
        g.add_node("U", 2)
        g.add_node("X", 2)
        g.add_node("Z", 2)
        g.add_edge("U", "X")
        g.add_edge("X", "Z")
        pu = np.array([0.6, 0.4])
        px = np.array([[0.9, 0.1], [0.3, 0.7]])
        pz = np.array([[0.2, 0.8], [0.5, 0.5]])
        scm = DiscreteSCM(g, {"U": pu, "X": px, "Z": pz})
        d = joint(scm)
        assert abs(d.probs.sum() - 1.0) < 1e-12
        np.testing.assert_allclose(d.marginal(("X",)).probs, pu @ px, atol=1e-12)
        np.testing.assert_allclose(d.marginal(("Z",)).probs, pu @ px @ pz, atol=1e-12)

    def test_matches_brute_force_on_reference(self, reference_scm):
        d = joint(reference_scm)
        oracle = brute_joint(reference_scm)
        for assign, p in d.items():
            key = tuple(sorted(assign.items()))
            assert abs(p - oracle[key]) < 1e-14

    def test_capacity_guard(self):
        g = CausalGraph()
        for i in range(9):
            g.add_node(f"N{i}", 10)
        cpts = {f"N{i}": np.full(10, 0.1) for i in range(9)}
        with pytest.raises(CapacityError):
            joint(DiscreteSCM(g, cpts))

    def test_cpt_validation(self):
        g = CausalGraph()
        g.add_node("A", 2)
        with pytest.raises(CptError):
            DiscreteSCM(g, {"A": [0.7, 0.7]})
        with pytest.raises(CptError):
            DiscreteSCM(g, {"A": [1.2, -0.2]})


class TestObservationalConditional:
    def test_full_assignment_recovers_cpt_row(self, reference_scm):
        # Markov property: conditioning on every other node leaves the
        # CPT row of the target given its parents.
        d = observational_conditional(reference_scm, "Y", {"U": 1, "X": 0, "Z": 1})
        np.testing.assert_allclose(d.probs, reference_scm.cpts["Y"][1, 1], atol=1e-12)

    def test_reference_value(self, reference_scm):
        d = observational_conditional(reference_scm, "Y", {"X": 1})
        assert d.probs[1] == pytest.approx(0.76364, abs=1e-5)
        # exact fraction: 0.6 + 0.2 * 9/11
        assert d.probs[1] == pytest.approx(0.6 + 0.2 * 9 / 11, abs=1e-12)

    def test_condition_on_target_is_point_mass(self, reference_scm):
        d = observational_conditional(reference_scm, "Y", {"Y": 1})
        np.testing.assert_allclose(d.probs, [0.0, 1.0], atol=1e-15)

    def test_zero_probability_evidence(self):
        scm = single_node_scm([1.0, 0.0])
        with pytest.raises(ConditioningError):
            observational_conditional(scm, "A", {"A": 1})


class TestIntervene:
    def test_root_intervention_only_touches_root(self, reference_scm):
        m = intervene(reference_scm, {"U": 1})
        assert m.graph.parents("U") == ()
        np.testing.assert_allclose(m.cpts["U"], [0.0, 1.0])
        for node in ("X", "Z", "Y"):
            np.testing.assert_allclose(m.cpts[node], reference_scm.cpts[node])

    def test_do_x_removes_confounder_edge(self, reference_scm):
        m = intervene(reference_scm, {"X": 1})
        assert m.graph.parents("X") == ()
        assert "X" not in m.graph.children("U")
        assert m.graph.children("X") == ("Z",)

    def test_truncated_factorization(self, reference_scm):
        # Oracle: manual truncated product over non-intervened CPTs.
        m = intervene(reference_scm, {"X": 1})
        d = joint(m)
        for assign, p in d.items():
            if assign["X"] != 1:
                assert p == 0.0
                continue
            manual = (
                reference_scm.cpts["U"][assign["U"]]
                * reference_scm.cpts["Z"][assign["X"], assign["Z"]]
                * reference_scm.cpts["Y"][assign["Z"], assign["U"], assign["Y"]]
            )
            assert abs(p - manual) < 1e-14

    def test_idempotent(self, reference_scm):
        once = intervene(reference_scm, {"X": 1})
        twice = intervene(once, {"X": 1})
        assert once.graph.parents("X") == twice.graph.parents("X")
        for node in once.graph.nodes:
            np.testing.assert_array_equal(once.cpts[node], twice.cpts[node])

    def test_unknown_node(self, reference_scm):
        with pytest.raises(ScmError):
            intervene(reference_scm, {"Q": 0})


class TestInterventional:
    def test_exogenous_treatment_equals_observational(self):
        g = CausalGraph()
        g.add_node("X", 2)
        g.add_node("Y", 2)
        g.add_edge("X", "Y")
        scm = DiscreteSCM(g, {"X": [0.4, 0.6], "Y": [[0.9, 0.1], [0.2, 0.8]]})
        obs = observational_conditional(scm, "Y", {"X": 1})
        act = interventional(scm, "Y", {"X": 1})
        assert obs.tv(act) < 1e-12

    def test_reference_value(self, reference_scm):
        d = interventional(reference_scm, "Y", {"X": 1})
        assert abs(d.probs[1] - 0.7) < 1e-10

    def test_confounding_bias_visible(self, reference_scm):
        act = interventional(reference_scm, "Y", {"X": 1}).probs[1]
        obs = observational_conditional(reference_scm, "Y", {"X": 1}).probs[1]
        assert abs(act - 0.7) < 1e-10
        assert abs(obs - 0.76364) < 1e-5
        assert abs(act - obs) > 0.05


class TestBackdoor:
    def test_confounder_adjustment_matches_interventional(self, reference_scm):
        est = backdoor_estimate(reference_scm, "Y", "X", 1, ("U",))
        act = interventional(reference_scm, "Y", {"X": 1})
        assert est.tv(act) < 1e-10
        assert abs(est.probs[1] - 0.7) < 1e-10

    def test_empty_adjustment_exogenous(self):
        g = CausalGraph()
        g.add_node("X", 2)
        g.add_node("Y", 2)
        g.add_edge("X", "Y")
        scm = DiscreteSCM(g, {"X": [0.4, 0.6], "Y": [[0.9, 0.1], [0.2, 0.8]]})
        est = backdoor_estimate(scm, "Y", "X", 0, ())
        obs = observational_conditional(scm, "Y", {"X": 0})
        assert est.tv(obs) < 1e-12

    def test_omitted_confounder_is_biased(self, reference_scm):
        est = backdoor_estimate(reference_scm, "Y", "X", 1, ())
        act = interventional(reference_scm, "Y", {"X": 1})
        assert est.tv(act) > 0.05


class TestFrontdoor:
    def test_reference_estimate(self, reference_scm):
        est = frontdoor_estimate(reference_scm, "Y", "X", 1, "Z")
        act = interventional(reference_scm, "Y", {"X": 1})
        assert est.tv(act) < 1e-10
        assert abs(est.probs[1] - 0.7) < 1e-10

    def test_hand_inner_terms(self, reference_scm):
        # sum_x' p(x') P(Y=1|z,x') evaluates to 0.4 + 0.4 z, and the
        # mediator weights are (0.25, 0.75) under X=1.
        j = joint(reference_scm)
        p_x = j.marginal(("X",)).probs
        for z in (0, 1):
            inner = sum(
                p_x[xv] * j.condition({"Z": z, "X": xv}).marginal(("Y",)).probs[1]
                for xv in (0, 1)
            )
            assert inner == pytest.approx(0.4 + 0.4 * z, abs=1e-12)
        p_z = j.condition({"X": 1}).marginal(("Z",)).probs
        np.testing.assert_allclose(p_z, [0.25, 0.75], atol=1e-12)
        assert 0.25 * 0.4 + 0.75 * 0.8 == pytest.approx(0.7, abs=1e-15)

    def test_deterministic_copy_mediator(self):
        # Z copies X exactly.  The off-support (z, x') strata take the
        # drop-the-impossible-conjunct fallback, and with an exogenous
        # treatment the estimate still lands on the interventional truth.
        g = CausalGraph()
        g.add_node("X", 2)
        g.add_node("Z", 2)
        g.add_node("Y", 2)
        g.add_edge("X", "Z")
        g.add_edge("Z", "Y")
        scm = DiscreteSCM(
            g,
            {
                "X": [0.45, 0.55],
                "Z": [[1.0, 0.0], [0.0, 1.0]],
                "Y": [[0.8, 0.2], [0.1, 0.9]],
            },
        )
        for xv in range(2):
            est = frontdoor_estimate(scm, "Y", "X", xv, "Z")
            act = interventional(scm, "Y", {"X": xv})
            assert est.tv(act) < 1e-10

    def test_deterministic_mediator_with_confounding_stays_total(self):
        # With confounding on top of a degenerate mediator the target is
        # not identifiable; the estimator must still return a valid
        # distribution rather than crash.
        g = CausalGraph()
        g.add_node("U", 2, observed=False)
        g.add_node("X", 2)
        g.add_node("Z", 2)
        g.add_node("Y", 2)
        g.add_edge("U", "X")
        g.add_edge("U", "Y")
        g.add_edge("X", "Z")
        g.add_edge("Z", "Y")
        scm = DiscreteSCM(
            g,
            {
                "U": [0.5, 0.5],
                "X": [[0.7, 0.3], [0.2, 0.8]],
                "Z": [[1.0, 0.0], [0.0, 1.0]],
                "Y": [
                    [[0.8, 0.2], [0.5, 0.5]],
                    [[0.4, 0.6], [0.1, 0.9]],
                ],
            },
        )
        est = frontdoor_estimate(scm, "Y", "X", 1, "Z")
        assert est.probs.sum() == pytest.approx(1.0, abs=1e-10)
        assert np.all(est.probs >= 0)

    def test_criterion_violation_raises(self):
        # Z disconnected from X while X hits Y directly.
        g = CausalGraph()
        g.add_node("X", 2)
        g.add_node("Z", 2)
        g.add_node("Y", 2)
        g.add_edge("X", "Y")
        g.add_edge("Z", "Y")
        scm = DiscreteSCM(
            g,
            {
                "X": [0.5, 0.5],
                "Z": [0.5, 0.5],
                "Y": [[[0.9, 0.1], [0.6, 0.4]], [[0.5, 0.5], [0.2, 0.8]]],
            },
        )
        with pytest.raises(IdentificationError, match=r"\(i\)"):
            frontdoor_estimate(scm, "Y", "X", 1, "Z")


def fig_2b_graph():
    g = CausalGraph()
    g.add_node("D", 2, observed=False)
    g.add_node("U", 2, observed=False)
    g.add_node("X", 2)
    g.add_node("Z", 2)
    g.add_node("Y", 2)
    for c in ("D", "U"):
        g.add_edge(c, "X")
        g.add_edge(c, "Y")
    g.add_edge("X", "Z")
    g.add_edge("Z", "Y")
    return g


class TestCriterion:
    def test_mediated_confounded_graph_passes(self):
        report = check_frontdoor_criterion(fig_2b_graph(), "X", "Y", "Z")
        assert report.holds
        assert report.failed_conditions == ()

    def test_direct_edge_fails_interception(self):
        g = fig_2b_graph()
        g.add_edge("X", "Y")
        report = check_frontdoor_criterion(g, "X", "Y", "Z")
        assert not report.holds
        assert report.failed_conditions == ("i",)
        assert not report.interception

    def test_confounded_mediator_fails_clearance(self):
        g = fig_2b_graph()
        g.add_edge("U", "Z")
        report = check_frontdoor_criterion(g, "X", "Y", "Z")
        assert not report.holds
        assert "iii" in report.failed_conditions
        assert not report.treatment_to_mediator_clear
        # the witness is the unblocked back-door route through U
        assert "U" in report.witnesses["iii"]

    def test_mediator_outcome_backdoor_fails_blocking(self):
        # A confounder into the mediator and the outcome that the
        # treatment cannot block.
        g = CausalGraph()
        g.add_node("W", 2, observed=False)
        g.add_node("X", 2)
        g.add_node("Z", 2)
        g.add_node("Y", 2)
        g.add_edge("X", "Z")
        g.add_edge("Z", "Y")
        g.add_edge("W", "Z")
        g.add_edge("W", "Y")
        report = check_frontdoor_criterion(g, "X", "Y", "Z")
        assert not report.holds
        assert report.failed_conditions == ("ii",)

    def test_collider_on_backdoor_route_keeps_it_blocked(self):
        # X <- U -> C <- V -> Z: C is a collider, unconditioned, so the
        # route stays blocked and the criterion holds.
        g = CausalGraph()
        g.add_node("U", 2, observed=False)
        g.add_node("V", 2, observed=False)
        g.add_node("C", 2)
        g.add_node("X", 2)
        g.add_node("Z", 2)
        g.add_node("Y", 2)
        g.add_edge("U", "X")
        g.add_edge("U", "C")
        g.add_edge("V", "C")
        g.add_edge("V", "Z")
        g.add_edge("X", "Z")
        g.add_edge("Z", "Y")
        report = check_frontdoor_criterion(g, "X", "Y", "Z")
        assert report.treatment_to_mediator_clear


class TestPropertyIdentities:
    def test_frontdoor_matches_interventional_on_random_models(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            scm = random_frontdoor_scm(rng)
            for xv in range(scm.graph.domain("X")):
                est = frontdoor_estimate(scm, "Y", "X", xv, "Z")
                act = interventional(scm, "Y", {"X": xv})
                assert est.tv(act) < 1e-10

    def test_backdoor_matches_interventional_on_random_models(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            scm = random_frontdoor_scm(rng, observed_confounder=True)
            conf = tuple(n for n in scm.graph.nodes if n not in ("X", "Y", "Z"))
            for xv in range(scm.graph.domain("X")):
                est = backdoor_estimate(scm, "Y", "X", xv, conf)
                act = interventional(scm, "Y", {"X": xv})
                assert est.tv(act) < 1e-10

    def test_observational_differs_from_interventional_usually(self):
        rng = np.random.default_rng(13)
        differing = 0
        trials = 60
        for _ in range(trials):
            scm = random_frontdoor_scm(rng)
            obs = observational_conditional(scm, "Y", {"X": 0})
            act = interventional(scm, "Y", {"X": 0})
            if obs.tv(act) > 1e-6:
                differing += 1
        assert differing > trials // 2


class TestMilFit:
    def test_recovers_reference_interventional(self, reference_scm):
        rng = np.random.default_rng(123)
        draws = ancestral_sample(reference_scm, 1_000_000, rng)
        samples = np.stack([draws["X"], draws["Y"], draws["Z"]], axis=1)
        fit = mil_fit(samples, (2, 2, 2))
        for xv in range(2):
            act = interventional(reference_scm, "Y", {"X": xv}).probs
            tv = 0.5 * np.abs(fit.do_table[xv] - act).sum()
            assert tv < 0.01

    def test_loglik_close_to_oracle(self, reference_scm):
        rng = np.random.default_rng(123)
        draws = ancestral_sample(reference_scm, 1_000_000, rng)
        samples = np.stack([draws["X"], draws["Y"], draws["Z"]], axis=1)
        fit = mil_fit(samples, (2, 2, 2))
        oracle_table = np.stack(
            [interventional(reference_scm, "Y", {"X": xv}).probs for xv in range(2)]
        )
        got = interventional_loglik(fit.do_table, samples[:, 0], samples[:, 1])
        want = interventional_loglik(oracle_table, samples[:, 0], samples[:, 1])
        assert abs(got - want) / abs(want) < 0.005

    def test_loglik_additivity(self):
        table = np.array([[0.3, 0.7], [0.6, 0.4]])
        xs = np.array([0, 1, 1, 0, 1])
        ys = np.array([1, 0, 1, 0, 0])
        total = interventional_loglik(table, xs, ys)
        singles = sum(
            interventional_loglik(table, [x], [y]) for x, y in zip(xs, ys)
        )
        assert total == pytest.approx(singles, rel=1e-12)

    def test_empty_cell_uniform_fallback(self):
        # z=1 never observed: P(y|z=1, x') must fall back to uniform.
        samples = np.array([[0, 0, 0], [1, 1, 0], [0, 1, 0], [1, 0, 0]])
        fit = mil_fit(samples, (2, 2, 2))
        np.testing.assert_allclose(fit.p_y_given_zx[1], 0.5)
        np.testing.assert_allclose(fit.do_table.sum(axis=1), 1.0, atol=1e-12)

    def test_deterministic_model_recovered_exactly_without_pseudocounts(self):
        # X uniform, Z copies X, Y copies Z: observational triples pin the
        # interventional table exactly once each cell is seen.
        rng = np.random.default_rng(5)
        xs = rng.integers(0, 2, size=50)
        samples = np.stack([xs, xs, xs], axis=1)  # (x, y, z) with y=z=x
        fit = mil_fit(samples, (2, 2, 2), pseudocount=0.0)
        np.testing.assert_allclose(fit.do_table, np.eye(2), atol=1e-12)

    def test_validation_errors(self):
        with pytest.raises(ScmError, match="empty"):
            mil_fit(np.empty((0, 3), dtype=int), (2, 2, 2))
        with pytest.raises(ScmError, match="never observed"):
            mil_fit(np.array([[0, 0, 0]]), (2, 2, 2))


class TestTextFormat:
    def test_parse_reference(self, reference_scm):
        parsed = parse_scm(REFERENCE_SCM_TEXT)
        assert parsed.graph.nodes == reference_scm.graph.nodes
        assert not parsed.graph.observed("U")
        for node in parsed.graph.nodes:
            np.testing.assert_allclose(
                parsed.cpts[node], reference_scm.cpts[node], atol=1e-12
            )

    def test_round_trip(self, reference_scm):
        text = format_scm(reference_scm)
        again = parse_scm(text)
        for node in reference_scm.graph.nodes:
            np.testing.assert_array_equal(again.cpts[node], reference_scm.cpts[node])
            assert again.graph.parents(node) == reference_scm.graph.parents(node)

    @pytest.mark.parametrize(
        "text,fragment",
        [
            ("node A", "node takes"),
            ("node A 2\nnode A 2", "duplicate"),
            ("edge A B", "not a node"),
            ("node A 2\ncpt A 0.5", "probabilities"),
            ("node A 2\ncpt A 0.5 0.6", "sum to 1"),
            ("node A 2\ncpt A 0.5 0.5\ncpt A 0.5 0.5", "duplicate cpt"),
            ("node A 2", "incomplete"),
            ("widget A 2", "unknown directive"),
        ],
    )
    def test_parse_errors_name_the_problem(self, text, fragment):
        with pytest.raises(ScmParseError, match=fragment):
            parse_scm(text)

    def test_cycle_rejected(self):
        g = CausalGraph()
        g.add_node("A", 2)
        g.add_node("B", 2)
        g.add_edge("A", "B")
        with pytest.raises(ScmError, match="cycle"):
            g.add_edge("B", "A")


class TestSampling:
    def test_marginals_match_brute_force(self, reference_scm):
        rng = np.random.default_rng(99)
        draws = ancestral_sample(reference_scm, 200_000, rng)
        for node in reference_scm.graph.nodes:
            want = brute_marginal(reference_scm, node)
            got = np.bincount(draws[node], minlength=2) / 200_000
            np.testing.assert_allclose(got, want, atol=5e-3)
