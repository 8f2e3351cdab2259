import numpy as np
import pytest

from controlroom.did import (
    AbnormalityMonitor,
    ChanceNode,
    DecisionNode,
    InfluenceDiagram,
    InterSliceLink,
    ProcedureLibrary,
    ProcedureStep,
    UtilityNode,
    ValueInterval,
    best_action,
    detect_abnormality,
    diagram_from_dict,
    diagram_to_dict,
    expected_utility,
    posterior,
    prune_procedure,
    recommend_interval,
    unroll,
    validate_diagram,
)
from controlroom.errors import (
    ConfigError,
    CptRowNotNormalized,
    CyclicGraph,
    UnknownActuator,
    UnknownHypothesis,
    ZeroProbabilityEvidence,
)

from oracles import (
    oracle_best_action,
    oracle_expected_utility,
    oracle_posterior,
    random_decisions,
    random_diagram,
    random_evidence,
)


def two_node_chain():
    return InfluenceDiagram([
        ChanceNode("A", ("a0", "a1"), (), {(): (0.7, 0.3)}),
        ChanceNode("B", ("b0", "b1"), ("A",),
                   {("a0",): (0.8, 0.2), ("a1",): (0.1, 0.9)}),
    ])


def decision_diagram():
    return InfluenceDiagram([
        ChanceNode("h", ("h1", "h2"), (), {(): (0.7, 0.3)}),
        DecisionNode("act", ("a1", "a2")),
        UtilityNode("u", ("act", "h"), {
            ("a1", "h1"): 10.0, ("a1", "h2"): 0.0,
            ("a2", "h1"): 2.0, ("a2", "h2"): 8.0,
        }),
    ])


class TestValidate:
    def test_valid_chain(self):
        assert validate_diagram(two_node_chain())

    def test_unnormalized_row(self):
        d = InfluenceDiagram([
            ChanceNode("A", ("a0", "a1"), (), {(): (0.6, 0.3)}),
        ])
        with pytest.raises(CptRowNotNormalized):
            validate_diagram(d)

    def test_cycle_detected(self):
        d = InfluenceDiagram([
            ChanceNode("A", ("a0",), ("C",), {("c0",): (1.0,)}),
            ChanceNode("B", ("b0",), ("A",), {("a0",): (1.0,)}),
            ChanceNode("C", ("c0",), ("B",), {("b0",): (1.0,)}),
        ])
        with pytest.raises(CyclicGraph):
            validate_diagram(d)


class TestPosterior:
    def test_no_evidence_root_is_prior(self):
        d = two_node_chain()
        assert posterior(d, {}, "A") == pytest.approx({"a0": 0.7, "a1": 0.3})

    def test_bayes_rule_hand_oracle(self):
        # P(A=1)=0.3, P(B=1|A=1)=0.9, P(B=1|A=0)=0.2, evidence B=1.
        d = InfluenceDiagram([
            ChanceNode("A", ("a0", "a1"), (), {(): (0.7, 0.3)}),
            ChanceNode("B", ("b0", "b1"), ("A",),
                       {("a0",): (0.8, 0.2), ("a1",): (0.1, 0.9)}),
        ])
        post = posterior(d, {"B": "b1"}, "A")
        assert post["a1"] == pytest.approx(0.27 / 0.41)

    def test_zero_probability_evidence(self):
        d = InfluenceDiagram([
            ChanceNode("A", ("a0", "a1"), (), {(): (1.0, 0.0)}),
        ])
        with pytest.raises(ZeroProbabilityEvidence):
            posterior(d, {"A": "a1"}, "A")

    def test_sums_to_one(self):
        d = two_node_chain()
        post = posterior(d, {"B": "b0"}, "A")
        assert sum(post.values()) == pytest.approx(1.0, abs=1e-9)


class TestExpectedUtility:
    def test_degenerate_posterior(self):
        d = InfluenceDiagram([
            ChanceNode("h", ("h1", "h2"), (), {(): (1.0, 0.0)}),
            DecisionNode("act", ("a1",)),
            UtilityNode("u", ("act", "h"),
                        {("a1", "h1"): 5.5, ("a1", "h2"): -3.0}),
        ])
        assert expected_utility(d, {"act": "a1"}, {}) == pytest.approx(5.5)

    def test_enumeration_oracle(self):
        d = decision_diagram()
        # EU(a1) = 10*0.7 + 0*0.3 = 7.0
        assert expected_utility(d, {"act": "a1"}, {}) == pytest.approx(7.0)
        assert expected_utility(d, {"act": "a2"}, {}) == pytest.approx(3.8)

    def test_shift_invariance(self):
        d = decision_diagram()
        shifted = InfluenceDiagram([
            d.chance["h"],
            d.decisions["act"],
            UtilityNode("u", ("act", "h"), {
                k: v + 100.0 for k, v in d.utilities["u"].table.items()
            }),
        ])
        for act in ("a1", "a2"):
            assert expected_utility(shifted, {"act": act}, {}) == pytest.approx(
                expected_utility(d, {"act": act}, {}) + 100.0)


class TestBestAction:
    def test_argmax(self):
        d = decision_diagram()
        action, eu = best_action(d, {})
        assert action == {"act": "a1"}
        assert eu == pytest.approx(7.0)

    def test_tie_breaks_to_first_option(self):
        d = InfluenceDiagram([
            ChanceNode("h", ("h1",), (), {(): (1.0,)}),
            DecisionNode("act", ("a1", "a2")),
            UtilityNode("u", ("act",), {("a1",): 4.0, ("a2",): 4.0}),
        ])
        action, _ = best_action(d, {})
        assert action == {"act": "a1"}

    def test_positive_scaling_invariance(self):
        d = decision_diagram()
        scaled = InfluenceDiagram([
            d.chance["h"],
            d.decisions["act"],
            UtilityNode("u", ("act", "h"), {
                k: 3.5 * v for k, v in d.utilities["u"].table.items()
            }),
        ])
        assert best_action(scaled, {})[0] == best_action(d, {})[0]


class TestUnroll:
    def markov_template(self):
        return InfluenceDiagram([
            ChanceNode("X", ("x0", "x1"), (), {(): (1.0, 0.0)}),
        ])

    def link(self):
        return InterSliceLink("X", ("X",), {
            ("x0",): (0.9, 0.1), ("x1",): (0.1, 0.9),
        })

    def test_horizon_one_is_identity(self):
        template = two_node_chain()
        flat = unroll(template, 1)
        assert set(flat.nodes) == {"A@0", "B@0"}
        assert flat.chance["A@0"].cpt == template.chance["A"].cpt

    def test_node_count(self):
        template = InfluenceDiagram([
            ChanceNode("A", ("a0",), (), {(): (1.0,)}),
            ChanceNode("B", ("b0",), ("A",), {("a0",): (1.0,)}),
            ChanceNode("C", ("c0",), (), {(): (1.0,)}),
            ChanceNode("D", ("d0",), (), {(): (1.0,)}),
        ])
        flat = unroll(template, 3)
        assert len(flat.nodes) == 12
        assert validate_diagram(flat)

    def test_markov_chain_matrix_power(self):
        # Marginal of slice index k equals prior times the k-th power of
        # the transition matrix.
        flat = unroll(self.markov_template(), 3, [self.link()])
        prior = np.array([1.0, 0.0])
        A = np.array([[0.9, 0.1], [0.1, 0.9]])
        for k in range(3):
            expected = prior @ np.linalg.matrix_power(A, k)
            post = posterior(flat, {}, f"X@{k}")
            assert post["x0"] == pytest.approx(expected[0], abs=1e-9)
            assert post["x1"] == pytest.approx(expected[1], abs=1e-9)

    def test_bad_horizon(self):
        with pytest.raises(ConfigError):
            unroll(self.markov_template(), 0)


class TestOracleEquivalence:
    def test_random_diagrams_match_brute_force(self):
        rng = np.random.default_rng(2024)
        checked = 0
        while checked < 60:
            d = random_diagram(rng)
            validate_diagram(d)
            decisions = random_decisions(d, rng)
            evidence = random_evidence(d, rng)
            query = str(rng.choice(list(d.chance.keys())))
            try:
                expected = oracle_posterior(d, evidence, query, decisions)
                got = posterior(d, evidence, query, decisions=decisions)
            except ZeroProbabilityEvidence:
                continue
            for s in expected:
                assert got[s] == pytest.approx(expected[s], abs=1e-9)
            if d.decisions:
                eu_oracle = oracle_expected_utility(d, decisions, evidence)
                eu = expected_utility(d, decisions, evidence)
                assert eu == pytest.approx(eu_oracle, abs=1e-9)
                a_star, eu_star = best_action(d, evidence)
                a_oracle, eu_o = oracle_best_action(d, evidence)
                assert a_star == a_oracle
                assert eu_star == pytest.approx(eu_o, abs=1e-9)
            checked += 1


class TestAbnormalityDetection:
    def hypo_diagram(self, p_high=0.85):
        # Posterior of "fail_a" equals p_high when symptom present.
        return InfluenceDiagram([
            ChanceNode("failure", ("none", "fail_a", "fail_b", "fail_c",
                                   "fail_d"), (),
                       {(): (0.2, 0.2, 0.2, 0.2, 0.2)}),
        ])

    def test_uniform_posterior_no_finding(self):
        d = self.hypo_diagram()
        finding = detect_abnormality(d, [{}, {}, {}], "failure")
        assert finding is None

    def test_debounced_firing(self):
        d = InfluenceDiagram([
            ChanceNode("failure", ("none", "pic"), (), {(): (0.5, 0.5)}),
            ChanceNode("symptom", ("no", "yes"), ("failure",),
                       {("none",): (0.95, 0.05), ("pic",): (0.15, 0.85)}),
        ])
        # posterior(pic | yes) = 0.85/(0.85+0.05) ~ 0.944
        stream = [{"symptom": "yes"}, {"symptom": "yes"}]
        finding = detect_abnormality(d, stream, "failure")
        assert finding is not None and finding.hypothesis == "pic"
        # one high sample then a low one: debounce blocks
        stream = [{"symptom": "yes"}, {"symptom": "no"}]
        assert detect_abnormality(d, stream, "failure") is None

    def test_monotone_in_trigger(self):
        d = InfluenceDiagram([
            ChanceNode("failure", ("none", "pic"), (), {(): (0.5, 0.5)}),
            ChanceNode("symptom", ("no", "yes"), ("failure",),
                       {("none",): (0.95, 0.05), ("pic",): (0.15, 0.85)}),
        ])
        stream = [{"symptom": "yes"}] * 4
        low = detect_abnormality(d, stream, "failure", trigger=0.9)
        high = detect_abnormality(d, stream, "failure", trigger=0.99)
        assert low is not None and high is None

    def test_release_debounce(self):
        d = InfluenceDiagram([
            ChanceNode("failure", ("none", "pic"), (), {(): (0.5, 0.5)}),
            ChanceNode("symptom", ("no", "yes"), ("failure",),
                       {("none",): (0.95, 0.05), ("pic",): (0.15, 0.85)}),
        ])
        monitor = AbnormalityMonitor(d, "failure", release_debounce=3)
        for t in range(2):
            monitor.update({"symptom": "yes"}, t)
        assert monitor.active is not None
        monitor.update({"symptom": "no"}, 2)
        monitor.update({"symptom": "no"}, 3)
        assert monitor.active is not None  # not yet released
        monitor.update({"symptom": "no"}, 4)
        assert monitor.active is None


class TestProcedures:
    def library(self):
        return ProcedureLibrary({
            "pic": (
                ProcedureStep("open mimic"),
                ProcedureStep("set feed", target_actuator="MmanNit_1",
                              expected_interval=(6.0, 8.0)),
                ProcedureStep("switch backup", target_actuator="MNitsel_1",
                              exclude={"backup_selected": ("yes",)}),
            ),
        })

    def test_all_applicable(self):
        steps = prune_procedure(self.library(), "pic", {})
        assert len(steps) == 3

    def test_exclusion(self):
        steps = prune_procedure(self.library(), "pic",
                                {"backup_selected": "yes"})
        assert [s.text for s in steps] == ["open mimic", "set feed"]

    def test_unknown_hypothesis(self):
        with pytest.raises(UnknownHypothesis):
            prune_procedure(self.library(), "bogus", {})

    def test_order_preserved(self):
        steps = prune_procedure(self.library(), "pic", {})
        assert [s.text for s in steps] == ["open mimic", "set feed",
                                           "switch backup"]


class TestRecommendInterval:
    def binned_diagram(self):
        return InfluenceDiagram([
            ChanceNode("h", ("h1", "h2"), (), {(): (0.5, 0.5)}),
            ChanceNode("sym", ("no", "yes"), ("h",),
                       {("h1",): (0.9, 0.1), ("h2",): (0.2, 0.8)}),
            DecisionNode("lever", ("b0", "b1", "b2"),
                         bins=((0.0, 0.2), (0.2, 0.5), (0.5, 1.0)),
                         actuator="MWpopOld_1"),
            UtilityNode("u", ("h", "lever"), {
                ("h1", "b0"): 1.0, ("h1", "b1"): 9.0, ("h1", "b2"): 0.0,
                ("h2", "b0"): 0.0, ("h2", "b1"): 1.0, ("h2", "b2"): 9.0,
            }),
        ])

    def test_middle_bin(self):
        d = self.binned_diagram()
        interval = recommend_interval(d, "h1", {"sym": "no"}, "MWpopOld_1")
        assert (interval.low, interval.high) == (0.2, 0.5)

    def test_evidence_shifts_to_last_bin(self):
        d = self.binned_diagram()
        interval = recommend_interval(d, "h2", {"sym": "yes"}, "MWpopOld_1")
        assert (interval.low, interval.high) == (0.5, 1.0)

    def test_single_bin(self):
        d = InfluenceDiagram([
            ChanceNode("h", ("h1",), (), {(): (1.0,)}),
            DecisionNode("lever", ("only",), bins=((0.3, 0.4),),
                         actuator="MmanNit_1"),
            UtilityNode("u", ("lever",), {("only",): 1.0}),
        ])
        interval = recommend_interval(d, "h1", {}, "MmanNit_1")
        assert (interval.low, interval.high) == (0.3, 0.4)

    def test_unknown_actuator(self):
        with pytest.raises(UnknownActuator):
            recommend_interval(self.binned_diagram(), "h1", {}, "nope")


class TestSerialization:
    def test_round_trip(self):
        d = decision_diagram()
        payload = diagram_to_dict(d, hypothesis_node="h")
        back, meta = diagram_from_dict(payload)
        assert meta["hypothesis_node"] == "h"
        assert set(back.nodes) == set(d.nodes)
        assert back.chance["h"].cpt == d.chance["h"].cpt
        assert back.utilities["u"].table == d.utilities["u"].table

    def test_interval_validation(self):
        with pytest.raises(ConfigError):
            ValueInterval(2.0, 1.0)
