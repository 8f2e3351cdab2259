import numpy as np
import pandas as pd
import pytest

from controlroom import analytics
from controlroom.analytics import (
    aggregate_participant,
    ai_vs_human_error,
    accuracy_mse,
    behavioral_measures,
    build_participant_table,
    correlation_graph,
    factor_analysis,
    minmax_by_scenario,
    normalize_toi,
    performance_class,
    recovery_status,
    report,
    sart_index,
    spam_index,
    tlx_index,
)
from controlroom.errors import (
    CohortTooSmall,
    EmptyGroup,
    MissingDimension,
    NoControlEvents,
    NoCriticalAlarm,
    NoSuggestionTicks,
    ZeroBaseline,
)
from controlroom.telemetry import AlarmEvent, EpisodeLog, HmiEvent, LogRecord, append_record


class TestNormalizeToi:
    def test_equal_values(self):
        assert normalize_toi(5.0, 5.0) == 1.0

    def test_ratio(self):
        assert normalize_toi(250.0, 200.0) == pytest.approx(1.25)

    def test_zero_baseline(self):
        with pytest.raises(ZeroBaseline):
            normalize_toi(10.0, 0.0)


class TestMinMax:
    def test_hand_scaling(self):
        table = pd.DataFrame({
            "participant_id": ["a", "b", "c"],
            "scenario_id": ["s1"] * 3,
            "m": [2.0, 4.0, 6.0],
        })
        out = minmax_by_scenario(table)
        assert list(out["m"]) == [0.0, 0.5, 1.0]

    def test_constant_column_maps_to_zero(self):
        table = pd.DataFrame({
            "participant_id": ["a", "b"],
            "scenario_id": ["s1"] * 2,
            "m": [3.0, 3.0],
        })
        out = minmax_by_scenario(table)
        assert list(out["m"]) == [0.0, 0.0]

    def test_groups_scaled_independently(self):
        table = pd.DataFrame({
            "participant_id": ["a", "b", "c", "d"],
            "scenario_id": ["s1", "s1", "s2", "s2"],
            "m": [1.0, 3.0, 3.0, 7.0],
        })
        out = minmax_by_scenario(table)
        # raw value 3.0 maps to 1.0 in s1 and 0.0 in s2
        assert out.loc[1, "m"] == 1.0
        assert out.loc[2, "m"] == 0.0

    def test_bounds_attained(self):
        rng = np.random.default_rng(0)
        table = pd.DataFrame({
            "participant_id": [f"p{i}" for i in range(20)],
            "scenario_id": ["s1"] * 10 + ["s2"] * 10,
            "m1": rng.normal(size=20),
            "m2": rng.uniform(5, 9, size=20),
        })
        out = minmax_by_scenario(table)
        for sid, block in out.groupby("scenario_id"):
            for c in ("m1", "m2"):
                assert block[c].min() == 0.0
                assert block[c].max() == 1.0


class TestAggregate:
    def test_mean_over_scenarios(self):
        table = pd.DataFrame({
            "participant_id": ["p"] * 3,
            "scenario_id": ["s1", "s2", "s3"],
            "m": [0.2, 0.4, 0.6],
        })
        out = aggregate_participant(table)
        assert out.loc[0, "m"] == pytest.approx(0.4)

    def test_single_row_passthrough(self):
        table = pd.DataFrame({
            "participant_id": ["p"], "scenario_id": ["s1"], "m": [0.7],
        })
        out = aggregate_participant(table)
        assert out.loc[0, "m"] == 0.7

    def test_missing_ignored_and_counted(self):
        table = pd.DataFrame({
            "participant_id": ["p", "p"],
            "scenario_id": ["s1", "s2"],
            "m": [0.4, np.nan],
        })
        out = aggregate_participant(table)
        assert out.loc[0, "m"] == pytest.approx(0.4)
        assert out.loc[0, "missing_count"] == 1

    def test_all_missing_stays_missing(self):
        table = pd.DataFrame({
            "participant_id": ["p", "p"],
            "scenario_id": ["s1", "s2"],
            "m": [np.nan, np.nan],
        })
        out = aggregate_participant(table)
        assert np.isnan(out.loc[0, "m"])


class TestQuestionnaires:
    def responses(self):
        q = {}
        q.update({d: 4.0 for d in analytics.TLX_DIMENSIONS})
        q.update({d: float(i + 1) for i, d in enumerate(analytics.SART_DIMENSIONS)})
        q.update({d: 5.0 for d in analytics.SPAM_DIMENSIONS})
        return q

    def test_tlx_mean(self):
        assert tlx_index(self.responses()) == 4.0

    def test_spam_mean(self):
        assert spam_index(self.responses()) == 5.0

    def test_sart_literal(self):
        # demand = 1+2+3 = 6; supply = 4+5+6+7 = 22 -> -16
        assert sart_index(self.responses(), mode="literal") == -16.0

    def test_sart_literal_hand_values(self):
        q = self.responses()
        for d, v in zip(analytics.SART_DIMENSIONS[:3], (5.0, 5.0, 5.0)):
            q[d] = v
        for d, v in zip(analytics.SART_DIMENSIONS[3:7], (5.0, 5.0, 5.0, 5.0)):
            q[d] = v
        assert sart_index(q, mode="literal") == 15.0 - 20.0

    def test_sart_standard(self):
        # understanding = 8+9+10 = 27; demand - supply = -16 -> 43
        assert sart_index(self.responses(), mode="standard") == 27.0 + 16.0

    def test_missing_dimension(self):
        q = self.responses()
        del q["effort"]
        with pytest.raises(MissingDimension):
            tlx_index(q)


def make_episode(group="GroupAI"):
    log = EpisodeLog("P01", group, "s1")
    for t in range(11):
        append_record(log, LogRecord(t=float(t), values={}))
    return log


class TestLogMeasures:
    def test_ai_error_zero_when_copying(self):
        log = make_episode()
        for i, rec in enumerate(log.records):
            rec.values["SRLA"] = 0.5
            rec.values["Human"] = 0.5
            rec.values["SRLA_vs_Human"] = 0.0
        assert ai_vs_human_error(log) == 0.0

    def test_ai_error_mean(self):
        log = make_episode()
        log.records[2].values.update(SRLA=0.5, Human=0.4, SRLA_vs_Human=0.1)
        log.records[3].values.update(SRLA=0.5, Human=0.2, SRLA_vs_Human=0.3)
        assert ai_vs_human_error(log) == pytest.approx(0.2)

    def test_group_n_no_suggestions(self):
        with pytest.raises(NoSuggestionTicks):
            ai_vs_human_error(make_episode("GroupN"))

    def test_accuracy_zero_when_prescribed(self):
        log = make_episode()
        log.hmi_events.append(HmiEvent(5.0, "manual_control",
                                       {"actuator": "MmanNit_1", "value": 6.5}))
        assert accuracy_mse(log, {"MmanNit_1": 6.5}) == 0.0

    def test_accuracy_mean_of_squares(self):
        log = make_episode()
        log.hmi_events.append(HmiEvent(5.0, "manual_control",
                                       {"actuator": "MmanNit_1", "value": 6.6}))
        log.hmi_events.append(HmiEvent(6.0, "manual_control",
                                       {"actuator": "MmanNit_1", "value": 6.4}))
        assert accuracy_mse(log, {"MmanNit_1": 6.5}) == pytest.approx(0.01)

    def test_accuracy_no_events(self):
        with pytest.raises(NoControlEvents):
            accuracy_mse(make_episode())


class TestBehavioral:
    def episode(self, cleared=True, action_ts=(110.0, 130.0)):
        log = EpisodeLog("P01", "GroupAI", "s1")
        for t in range(0, 301, 10):
            append_record(log, LogRecord(t=float(t), values={}))
        log.alarm_events.append(AlarmEvent("All2_01", "annunciated", 100.0,
                                           "critical"))
        if cleared:
            log.alarm_events.append(AlarmEvent("All2_01", "cleared", 250.0,
                                               "critical"))
        for t in action_ts:
            log.hmi_events.append(HmiEvent(t, "manual_control",
                                           {"actuator": "MmanNit_1",
                                            "value": 6.5}))
        return log

    def test_recovery_time(self):
        bm = behavioral_measures(self.episode(), expected_actuator="MmanNit_1")
        assert bm["recovery_time"] == 150.0
        assert not bm["recovery_censored"]

    def test_reaction_and_response(self):
        bm = behavioral_measures(self.episode(), expected_actuator="MmanNit_1")
        assert bm["reaction_time"] == 10.0
        assert bm["response_time"] == 30.0

    def test_never_cleared_censored(self):
        bm = behavioral_measures(self.episode(cleared=False),
                                 expected_actuator="MmanNit_1")
        assert bm["recovery_censored"]
        assert bm["recovery_time"] == 200.0  # episode end at 300

    def test_pre_annunciation_actions_excluded(self):
        bm = behavioral_measures(self.episode(action_ts=(50.0,)),
                                 expected_actuator="MmanNit_1")
        assert bm["reaction_censored"]

    def test_no_critical_alarm(self):
        log = EpisodeLog("P01", "GroupAI", "s1")
        append_record(log, LogRecord(t=0.0, values={}))
        with pytest.raises(NoCriticalAlarm):
            behavioral_measures(log)

    def test_ordering_when_uncensored(self):
        bm = behavioral_measures(self.episode(), expected_actuator="MmanNit_1")
        assert bm["reaction_time"] <= bm["response_time"] <= bm["recovery_time"]


class TestPerformanceClass:
    def test_tertiles(self):
        classes = performance_class({
            "a": (10.0, False), "b": (20.0, False), "c": (30.0, False),
        })
        assert classes == {"a": "optimal", "b": "good", "c": "poor"}

    def test_ties_go_to_better_class(self):
        classes = performance_class({
            "a": (10.0, False), "b": (10.0, False), "c": (10.0, False),
        })
        assert set(classes.values()) == {"optimal"}

    def test_censored_is_poor(self):
        classes = performance_class({
            "a": (10.0, False), "b": (20.0, False), "c": (30.0, True),
        })
        assert classes["c"] == "poor"

    def test_cohort_too_small(self):
        with pytest.raises(CohortTooSmall):
            performance_class({"a": (1.0, False)})


class TestRecoveryStatus:
    def test_optimal_without_annunciation(self):
        log = EpisodeLog("P01", "GroupAI", "s1")
        append_record(log, LogRecord(t=0.0, values={}))
        assert recovery_status(log) == "optimal"

    def test_good_when_cleared(self):
        log = EpisodeLog("P01", "GroupAI", "s1")
        append_record(log, LogRecord(t=0.0, values={}))
        log.alarm_events.append(AlarmEvent("All2_01", "annunciated", 10.0, "critical"))
        log.alarm_events.append(AlarmEvent("All2_01", "cleared", 60.0, "critical"))
        assert recovery_status(log) == "good"

    def test_poor_when_never_cleared(self):
        log = EpisodeLog("P01", "GroupAI", "s1")
        append_record(log, LogRecord(t=0.0, values={}))
        log.alarm_events.append(AlarmEvent("All2_01", "annunciated", 10.0, "critical"))
        assert recovery_status(log) == "poor"


class TestCorrelationGraph:
    def test_perfect_linear_pair(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=50)
        table = pd.DataFrame({"x": x, "y": 2 * x + 3.0,
                              "z": rng.normal(size=50)})
        graph = correlation_graph(table, threshold=0.4)
        weights = {(a, b): w for a, b, w in graph.edges}
        assert weights[("x", "y")] == pytest.approx(1.0)

    def test_no_spurious_edges_on_noise(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            table = pd.DataFrame(rng.normal(size=(200, 6)),
                                 columns=[f"m{i}" for i in range(6)])
            graph = correlation_graph(table, threshold=0.4)
            assert graph.edges == []

    def test_threshold_above_one_empty(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=30)
        table = pd.DataFrame({"x": x, "y": x})
        graph = correlation_graph(table, threshold=1.01)
        assert graph.edges == []

    def test_no_self_edges_and_symmetric_invariance(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=60)
        table = pd.DataFrame({"a": x, "b": -x + 0.1 * rng.normal(size=60),
                              "c": rng.normal(size=60)})
        g1 = correlation_graph(table, threshold=0.4)
        g2 = correlation_graph(table[["c", "b", "a"]], threshold=0.4)
        assert all(a != b for a, b, _ in g1.edges)
        pairs1 = {frozenset((a, b)) for a, b, _ in g1.edges}
        pairs2 = {frozenset((a, b)) for a, b, _ in g2.edges}
        assert pairs1 == pairs2


def planted_factor_table(n=500, p=15, k=5, noise=0.1, seed=0):
    rng = np.random.default_rng(seed)
    loadings = np.zeros((p, k))
    per = p // k
    for j in range(k):
        loadings[j * per:(j + 1) * per, j] = 0.9 + 0.05 * rng.random(per)
    factors = rng.normal(size=(n, k))
    X = factors @ loadings.T + noise * rng.normal(size=(n, p))
    return pd.DataFrame(X, columns=[f"v{i}" for i in range(p)])


class TestFactorAnalysis:
    def test_planted_five_factor_elbow(self):
        fm = factor_analysis(planted_factor_table())
        assert abs(fm.elbow - 5) <= 1

    def test_spherical_low_confidence(self):
        rng = np.random.default_rng(3)
        raw = rng.normal(size=(300, 6))
        centered = raw - raw.mean(axis=0)
        cov = centered.T @ centered / 299
        white = centered @ np.linalg.inv(np.linalg.cholesky(cov)).T
        table = pd.DataFrame(white, columns=[f"v{i}" for i in range(6)])
        fm = factor_analysis(table)
        assert fm.low_confidence
        # cumulative variance is linear for an exactly flat spectrum
        diffs = np.diff(fm.cumulative_variance)
        assert np.allclose(diffs, diffs[0], atol=1e-9)

    def test_second_differences_hand_arithmetic(self):
        cumvar = np.array([0.5, 0.8, 0.9, 0.95])
        second = np.diff(np.diff(cumvar))
        assert np.allclose(second, [-0.2, -0.05])
        assert int(np.argmax(second)) == 1

    def test_argmax_index_reported_verbatim(self):
        fm = factor_analysis(planted_factor_table())
        assert fm.argmax_index == int(np.argmax(fm.second_differences))
        assert fm.candidates["argmax_rule"] == fm.argmax_index + 2

    def test_trace_preserved(self):
        fm = factor_analysis(planted_factor_table(n=200, p=8, k=3))
        assert fm.eigenvalues.sum() == pytest.approx(8.0, abs=1e-8)

    def test_cumulative_variance_monotone(self):
        fm = factor_analysis(planted_factor_table(n=200, p=8, k=3))
        assert np.all(np.diff(fm.cumulative_variance) >= -1e-12)
        assert fm.cumulative_variance[-1] == pytest.approx(1.0)

    def test_loading_threshold_applied(self):
        fm = factor_analysis(planted_factor_table(), loading_threshold=0.4)
        for entries in fm.strong_loadings:
            assert all(abs(v) >= 0.4 for _n, v in entries)

    def test_implied_covariance_shape(self):
        fm = factor_analysis(planted_factor_table(n=200, p=8, k=3))
        sigma = fm.implied_covariance()
        assert sigma.shape == (8, 8)
        assert np.all(fm.psi >= 0)


class TestReport:
    def table(self, shift=0.0, n=10, seed=0):
        rng = np.random.default_rng(seed)
        return pd.DataFrame({
            "participant_id": [f"p{i}" for i in range(n)],
            "accuracy": rng.normal(0.5 + shift, 0.05, size=n),
            "consequence": ["safe_state"] * n,
        })

    def test_identical_groups_zero_difference(self):
        a = self.table()
        bundle = report(a, a.copy())
        assert bundle["metrics"]["accuracy"]["difference"] == pytest.approx(0.0)

    def test_planted_shift_recovered(self):
        bundle = report(self.table(seed=1, n=200),
                        self.table(shift=0.2, seed=2, n=200))
        assert bundle["metrics"]["accuracy"]["difference"] == pytest.approx(
            0.2, abs=0.03)

    def test_empty_group(self):
        with pytest.raises(EmptyGroup):
            report(self.table().iloc[:0], self.table())

    def test_consequence_frequencies(self):
        a = self.table()
        b = self.table(seed=3)
        b.loc[0, "consequence"] = "plant_shutdown"
        bundle = report(a, b)
        assert bundle["consequence_frequency"]["GroupAI"]["plant_shutdown"] == 1


class TestPipelineOnCohort:
    def test_participant_table_from_cohort(self, small_cohort_logs):
        logs, labels, _ctimes, quests = small_cohort_logs
        table = build_participant_table(logs, questionnaires=quests)
        assert len(table) == len(logs)
        assert {"recovery_time", "n_alarms", "consequence",
                "tlx_index"} <= set(table.columns)
        scaled = minmax_by_scenario(table)
        numeric = scaled.select_dtypes("number")
        assert numeric.max(numeric.columns.size and None).max() <= 1.0 + 1e-12
        agg = aggregate_participant(scaled)
        assert len(agg) == len(logs)  # one scenario per participant here
