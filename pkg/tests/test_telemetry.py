import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from controlroom.errors import NonMonotonicTime, ParseError, SchemaMismatch
from controlroom.telemetry import (
    BASE_COLUMNS,
    EpisodeLog,
    FailureLabel,
    LogRecord,
    OperatorProfile,
    append_record,
    concat_episodes,
    export_csv,
    import_csv,
    label_episode,
    logs_equal,
    quantize,
    synth_operator_act,
)


def make_log(n_records=0, columns=BASE_COLUMNS, seed=0):
    log = EpisodeLog("P01", "GroupAI", "s1", columns=columns)
    rng = np.random.default_rng(seed)
    for t in range(n_records):
        values = {c: quantize(rng.uniform(-10, 10)) for c in columns}
        append_record(log, LogRecord(t=float(t), values=values))
    return log


class TestAppendRecord:
    def test_first_record(self):
        log = make_log()
        append_record(log, LogRecord(t=0.0, values={"PSERB_1": 2.0}))
        assert len(log.records) == 1

    def test_srla_vs_human_recomputed(self):
        log = make_log()
        append_record(log, LogRecord(t=0.0, values={"Human": 0.4, "SRLA": 0.5}))
        assert log.records[0].values["SRLA_vs_Human"] == pytest.approx(0.1)

    def test_equal_time_rejected(self):
        log = make_log(1)
        with pytest.raises(NonMonotonicTime):
            append_record(log, LogRecord(t=0.0, values={}))

    def test_existing_error_column_kept(self):
        log = make_log()
        append_record(log, LogRecord(
            t=0.0, values={"Human": 0.4, "SRLA": 0.5, "SRLA_vs_Human": 0.3}))
        assert log.records[0].values["SRLA_vs_Hum" + "an"] == 0.3


class TestCsvRoundTrip:
    def test_three_record_round_trip(self):
        log = make_log(3)
        buf = io.BytesIO()
        n = export_csv(log, buf)
        assert n == len(buf.getvalue())
        buf.seek(0)
        back = import_csv(buf)
        assert logs_equal(log, back)

    def test_missing_column_schema_mismatch(self):
        log = make_log(2)
        buf = io.BytesIO()
        export_csv(log, buf)
        text = buf.getvalue().decode()
        text = text.replace("PSERB_1", "NOT_A_COLUMN")
        with pytest.raises(SchemaMismatch) as exc:
            import_csv(io.BytesIO(text.encode()))
        assert "PSERB_1" in exc.value.missing

    def test_shuffled_columns_identical_log(self):
        log = make_log(3)
        buf = io.BytesIO()
        export_csv(log, buf)
        lines = buf.getvalue().decode().splitlines()
        header_idx = next(i for i, l in enumerate(lines) if l.startswith("t,"))
        header = lines[header_idx].split(",")
        rng = np.random.default_rng(1)
        perm = [0] + list(1 + rng.permutation(len(header) - 1))
        shuffled = [",".join(l.split(",")[i] for i in perm)
                    for l in lines[header_idx:]]
        text = "\n".join(lines[:header_idx] + shuffled)
        back = import_csv(io.BytesIO(text.encode()))
        for rec_a, rec_b in zip(log.records, back.records):
            for c in log.columns:
                assert rec_a.values[c] == rec_b.values[c]

    def test_parse_error_line_number(self):
        text = "t,%s\n0.0,%s\nnot_a_number,%s\n" % (
            ",".join(BASE_COLUMNS),
            ",".join("0" for _ in BASE_COLUMNS),
            ",".join("0" for _ in BASE_COLUMNS),
        )
        with pytest.raises(ParseError):
            import_csv(io.BytesIO(text.encode()))

    def test_export_byte_stability(self):
        log = make_log(5, seed=3)
        a, b = io.BytesIO(), io.BytesIO()
        export_csv(log, a)
        export_csv(import_csv(io.BytesIO(a.getvalue())), b)
        assert a.getvalue() == b.getvalue()

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(min_value=-1e6, max_value=1e6,
                              allow_nan=False), min_size=1, max_size=8))
    def test_round_trip_property(self, values):
        log = EpisodeLog("PX", "GroupN", "s2", columns=BASE_COLUMNS)
        for t, v in enumerate(values):
            row = {c: quantize(v + i) for i, c in enumerate(BASE_COLUMNS)}
            append_record(log, LogRecord(t=float(t), values=row))
        buf = io.BytesIO()
        export_csv(log, buf)
        buf.seek(0)
        assert logs_equal(log, import_csv(buf))


class TestSyntheticOperatorOp:
    def presented(self, value=0.42):
        return {"actuator": "MWpopOld_1", "value": value,
                "interval": (0.2, 0.6)}

    def test_zero_noise_copies_suggestion(self):
        profile = OperatorProfile(follow_mode="ai_plus_drl",
                                  reaction_latency=5.0, compliance_sigma=0.0)
        action = synth_operator_act(
            profile, None, self.presented(), np.random.default_rng(0),
            pending_since=0.0, now=10.0,
        )
        assert action.value == pytest.approx(0.42)

    def test_none_mode_never_acts(self):
        profile = OperatorProfile(follow_mode="none")
        assert synth_operator_act(
            profile, None, self.presented(), np.random.default_rng(0),
            pending_since=0.0, now=100.0,
        ) is None

    def test_seeded_gaussian_reproducible(self):
        profile = OperatorProfile(follow_mode="ai_plus_drl",
                                  reaction_latency=0.0, compliance_sigma=0.05)
        draw = np.random.default_rng(42).normal(0.0, 0.05)
        action = synth_operator_act(
            profile, None, self.presented(), np.random.default_rng(42),
            pending_since=0.0, now=1.0,
        )
        assert action.value == pytest.approx(0.42 + draw)

    def test_latency_not_elapsed(self):
        profile = OperatorProfile(follow_mode="ai_plus_drl",
                                  reaction_latency=30.0)
        assert synth_operator_act(
            profile, None, self.presented(), np.random.default_rng(0),
            pending_since=0.0, now=10.0,
        ) is None

    def test_clamped_to_range(self):
        profile = OperatorProfile(follow_mode="ai_plus_drl",
                                  reaction_latency=0.0, compliance_sigma=0.0)
        action = synth_operator_act(
            profile, None, {"actuator": "MWpopOld_1", "value": 1.7,
                            "interval": (0.0, 1.0)},
            np.random.default_rng(0), pending_since=0.0, now=1.0,
            actuator_ranges={"MWpopOld_1": (0.0, 1.0)},
        )
        assert action.value == 1.0


class TestLabelEpisode:
    def log(self):
        return make_log(1)

    def test_safe(self):
        label = label_episode(self.log(), [])
        assert label == FailureLabel("P01", False, "none")

    def test_shutdown(self):
        label = label_episode(self.log(), [{"kind": "plant_shutdown", "t": 5.0}])
        assert label.failed and label.basis == "plant_shutdown"

    def test_severity_order(self):
        label = label_episode(self.log(), [
            {"kind": "plant_shutdown", "t": 5.0},
            {"kind": "reactor_overheating", "t": 9.0},
        ])
        assert label.basis == "reactor_overheating"

    def test_air_impurity_is_not_failure(self):
        label = label_episode(self.log(), [{"kind": "air_impurity", "t": 2.0}])
        assert not label.failed

    def test_pure_function(self):
        log = self.log()
        consequences = [{"kind": "plant_shutdown", "t": 5.0}]
        assert label_episode(log, consequences) == label_episode(log, consequences)


class TestConcatEpisodes:
    def test_row_counts(self):
        logs = [make_log(10), make_log(15, seed=1)]
        matrix, lengths = concat_episodes(logs, ["PSERB_1", "LSERB_1"])
        assert matrix.shape == (25, 2)
        assert lengths == [10, 15]

    def test_empty(self):
        matrix, lengths = concat_episodes([], ["PSERB_1"])
        assert matrix.shape == (0, 1) and lengths == []

    def test_column_order_follows_request(self):
        log = make_log(4)
        m1, _ = concat_episodes([log], ["PSERB_1", "LSERB_1"])
        m2, _ = concat_episodes([log], ["LSERB_1", "PSERB_1"])
        assert np.allclose(m1[:, 0], m2[:, 1])
        for i, rec in enumerate(log.records):
            assert m1[i, 0] == rec.values["PSERB_1"]

    def test_missing_column(self):
        with pytest.raises(SchemaMismatch):
            concat_episodes([make_log(2)], ["NOT_THERE"])

    @settings(max_examples=20, deadline=None)
    @given(st.lists(st.integers(min_value=1, max_value=12), min_size=1,
                    max_size=4))
    def test_total_rows_property(self, sizes):
        logs = [make_log(n, seed=i) for i, n in enumerate(sizes)]
        matrix, lengths = concat_episodes(logs, ["PSERB_1"])
        assert sum(lengths) == matrix.shape[0] == sum(sizes)
