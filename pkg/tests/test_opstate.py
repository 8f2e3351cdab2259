import numpy as np
import pytest

from controlroom.errors import (
    DegenerateData,
    InsufficientLabels,
    LabelMismatch,
    SchemaMismatch,
)
from controlroom.opstate import (
    HmmHyperparams,
    HmmModel,
    OnlineFilter,
    eval_accuracy,
    first_alert_time,
    fit_hmm,
    fit_preprocess,
    identify_failure_state,
    inverse_transform,
    load_model,
    pca_factor_loadings,
    predict_failure,
    save_model,
    sequence_loglik,
    state_posterior,
    transform,
)
from controlroom.telemetry import FailureLabel

from oracles import hand_forward


def hp(**overrides):
    base = dict(n_states=2, n_mix=1, n_decomp=2)
    base.update(overrides)
    return HmmHyperparams(**base)


class TestPreprocess:
    def test_identical_rows_degenerate(self):
        X = np.ones((10, 3))
        with pytest.raises(DegenerateData):
            fit_preprocess(X, hp())

    def test_rank_one_line(self):
        t = np.linspace(0, 1, 50)
        X = np.stack([2 * t, -3 * t], axis=1)
        pm = fit_preprocess(X, hp(n_decomp=1))
        share = pm.explained_variance[0] / pm.explained_variance.sum()
        assert share == pytest.approx(1.0, abs=1e-9)

    def test_full_rank_reconstruction(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(40, 6))
        pm = fit_preprocess(X, hp(n_decomp=6))
        Z = transform(pm, X)
        scaled = (X - pm.mean) / pm.std
        recon = inverse_transform(pm, Z)
        assert np.allclose(recon, scaled, atol=1e-8)

    def test_transform_of_mean_row_is_zero(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(30, 4))
        pm = fit_preprocess(X, hp(n_decomp=2))
        mean_row = X.mean(axis=0, keepdims=True)
        assert np.allclose(transform(pm, mean_row), 0.0, atol=1e-9)

    def test_components_orthonormal(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(60, 5))
        pm = fit_preprocess(X, hp(n_decomp=4))
        gram = pm.components @ pm.components.T
        assert np.allclose(gram, np.eye(gram.shape[0]), atol=1e-8)

    def test_permuted_columns_same_output(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(25, 4))
        names = ("a", "b", "c", "d")
        pm = fit_preprocess(X, hp(n_decomp=2), feature_names=names)
        perm = [2, 0, 3, 1]
        Z1 = transform(pm, X)
        Z2 = transform(pm, X[:, perm],
                       feature_names=[names[i] for i in perm])
        assert np.allclose(Z1, Z2)

    def test_missing_feature_schema_mismatch(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(25, 3))
        pm = fit_preprocess(X, hp(n_decomp=2),
                            feature_names=("a", "b", "c"))
        with pytest.raises(SchemaMismatch):
            transform(pm, X[:, :2], feature_names=("a", "b"))

    def test_line_projection_proportional_to_position(self):
        t = np.linspace(-1, 1, 21)
        X = np.stack([t, 2 * t], axis=1)
        pm = fit_preprocess(X, hp(n_decomp=1))
        Z = transform(pm, X)[:, 0]
        # collinear with position along the line
        corr = np.corrcoef(Z, t)[0, 1]
        assert abs(corr) == pytest.approx(1.0, abs=1e-9)


class TestFactorLoadings:
    def test_diagonal_covariance_axis_aligned(self):
        # exactly uncorrelated columns with distinct variances: the
        # components are the coordinate axes (standardization off so the
        # variance structure survives)
        rng = np.random.default_rng(5)
        raw = rng.normal(size=(200, 3))
        centered = raw - raw.mean(axis=0)
        cov = centered.T @ centered / (len(raw) - 1)
        white = centered @ np.linalg.inv(np.linalg.cholesky(cov)).T
        X = white * np.array([3.0, 2.0, 1.0])
        pm = fit_preprocess(X, hp(n_decomp=3, is_scalar=False))
        for comp in pm.components:
            assert np.max(np.abs(comp)) == pytest.approx(1.0, abs=1e-6)

    def test_planted_direction(self):
        rng = np.random.default_rng(6)
        base = rng.normal(size=(200, 1))
        X = 0.01 * rng.normal(size=(200, 5))
        X[:, 3] += base[:, 0] * 5
        pm = fit_preprocess(X, hp(n_decomp=2, is_scalar=False),
                            feature_names=("f0", "f1", "f2", "f3", "f4"))
        top = pca_factor_loadings(pm, top_k=1)[0]
        assert top["positive"][0][0] == "f3"

    def test_top_k_clipping(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(100, 25))
        pm = fit_preprocess(X, hp(n_decomp=4))
        report = pca_factor_loadings(pm, top_k=10)
        for entry in report:
            assert len(entry["positive"]) <= 10
            assert len(entry["negative"]) <= 10


def two_state_toy():
    """Hand-set 2-state model with 1-D unit-variance emissions."""
    return HmmModel(
        hp=hp(is_lr=False),
        initial=np.array([0.6, 0.4]),
        transition=np.array([[0.7, 0.3], [0.2, 0.8]]),
        weights=np.array([[1.0], [1.0]]),
        means=np.array([[[0.0]], [[3.0]]]),
        covariance=np.array([[1.0]]),
    )


def gaussian_pdf(x, mu):
    return np.exp(-0.5 * (x - mu) ** 2) / np.sqrt(2 * np.pi)


class TestForward:
    def test_single_observation_base_case(self):
        model = two_state_toy()
        x = np.array([[1.0]])
        filtered, _ = state_posterior(model, x)
        lik = np.array([gaussian_pdf(1.0, 0.0), gaussian_pdf(1.0, 3.0)])
        expected = model.initial * lik
        expected /= expected.sum()
        assert np.allclose(filtered[0], expected, atol=1e-12)

    def test_hand_forward_recursion(self):
        model = two_state_toy()
        xs = np.array([[0.5], [2.5], [3.1]])
        emissions = np.stack([
            [gaussian_pdf(x[0], 0.0), gaussian_pdf(x[0], 3.0)] for x in xs
        ])
        expected_alpha, expected_ll = hand_forward(
            model.initial, model.transition, emissions)
        filtered, _ = state_posterior(model, xs)
        assert np.allclose(filtered, expected_alpha, atol=1e-9)
        assert sequence_loglik(model, xs) == pytest.approx(expected_ll, abs=1e-9)

    def test_uninformative_emissions_follow_markov_prediction(self):
        model = two_state_toy()
        model.means = np.array([[[1.0]], [[1.0]]])  # identical emissions
        xs = np.array([[0.2], [0.4], [0.9]])
        filtered, prediction = state_posterior(model, xs)
        expected = model.initial.copy()
        assert np.allclose(filtered[0], expected, atol=1e-12)
        for _ in range(2):
            expected = expected @ model.transition
        assert np.allclose(filtered[-1], expected, atol=1e-12)
        assert np.allclose(prediction, expected @ model.transition, atol=1e-12)

    def test_prediction_is_posterior_times_transition(self):
        model = two_state_toy()
        xs = np.array([[0.5], [2.0]])
        filtered, prediction = state_posterior(model, xs)
        assert np.allclose(prediction, filtered[-1] @ model.transition)

    def test_online_filter_matches_batch(self):
        model = two_state_toy()
        xs = np.array([[0.5], [2.5], [3.1], [0.1]])
        filtered, _ = state_posterior(model, xs)
        online = OnlineFilter(model)
        for i, x in enumerate(xs):
            post = online.update(x)
            assert np.allclose(post, filtered[i], atol=1e-12)


class TestFitHmm:
    def test_single_state_transition_is_one(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(50, 2))
        model = fit_hmm(X, [50], hp(n_states=1, n_mix=1), seed=0, max_iter=5)
        assert np.allclose(model.transition, [[1.0]])

    def test_loglik_monotone(self):
        rng = np.random.default_rng(1)
        X = np.concatenate([
            rng.normal(-2, 1, size=(150, 2)), rng.normal(2, 1, size=(150, 2)),
        ])
        model = fit_hmm(X, [300], hp(), seed=0, max_iter=40)
        trace = np.array(model.loglik_trace)
        assert np.all(np.diff(trace) >= -1e-8)

    def test_parameter_recovery_planted(self):
        rng = np.random.default_rng(7)
        true_means = np.array([-5.0, 5.0])
        A = np.array([[0.95, 0.05], [0.0, 1.0]])
        seqs, lengths = [], []
        for _ in range(50):
            q = 0
            xs = []
            for _t in range(200):
                xs.append(rng.normal(true_means[q], 1.0))
                q = rng.choice(2, p=A[q])
            seqs.append(np.array(xs)[:, None])
            lengths.append(200)
        X = np.vstack(seqs)
        model = fit_hmm(X, lengths, hp(), seed=0)
        got = np.sort(model.means[:, 0, 0])
        assert np.allclose(got, true_means, atol=0.2)

    def test_left_right_zeros_preserved(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(400, 2)) + np.linspace(0, 4, 400)[:, None]
        model = fit_hmm(X, [200, 200], hp(n_states=3), seed=0, max_iter=30)
        lower = np.tril(model.transition, k=-1)
        assert np.allclose(lower, 0.0)
        rows = model.transition.sum(axis=1)
        assert np.allclose(rows, 1.0, atol=1e-9)

    def test_probability_vectors_sum_to_one(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(300, 2))
        # deliberately starved of iterations: best-so-far with a warning
        with pytest.warns(RuntimeWarning):
            model = fit_hmm(X, [300], hp(n_states=3, n_mix=2), seed=1,
                            max_iter=20)
        assert not model.converged
        assert model.initial.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.allclose(model.transition.sum(axis=1), 1.0, atol=1e-9)
        assert np.allclose(model.weights.sum(axis=1), 1.0, atol=1e-9)
        # tied covariance symmetric positive definite
        assert np.allclose(model.covariance, model.covariance.T)
        assert np.all(np.linalg.eigvalsh(model.covariance) > 0)


class TestFailurePrediction:
    def planted_model(self):
        # LR 2-state; state 1 far from state 0
        return HmmModel(
            hp=hp(n_states=2),
            initial=np.array([1.0, 0.0]),
            transition=np.array([[0.95, 0.05], [0.0, 1.0]]),
            weights=np.array([[1.0], [1.0]]),
            means=np.array([[[0.0]], [[6.0]]]),
            covariance=np.array([[1.0]]),
        )

    def episodes(self, rng, failed):
        """Failed episodes migrate to the high-mean state midway."""
        xs = []
        for t in range(100):
            mu = 6.0 if (failed and t >= 50) else 0.0
            xs.append(rng.normal(mu, 1.0))
        return np.array(xs)[:, None]

    def test_identify_planted_failure_state(self):
        rng = np.random.default_rng(4)
        episodes = [self.episodes(rng, failed=(i % 2 == 0)) for i in range(6)]
        labels = [FailureLabel(f"P{i}", i % 2 == 0, "plant_shutdown"
                               if i % 2 == 0 else "none") for i in range(6)]
        model = self.planted_model()
        assert identify_failure_state(model, episodes, labels) == 1

    def test_insufficient_labels(self):
        rng = np.random.default_rng(5)
        episodes = [self.episodes(rng, False) for _ in range(3)]
        labels = [FailureLabel(f"P{i}", False, "none") for i in range(3)]
        with pytest.raises(InsufficientLabels):
            identify_failure_state(self.planted_model(), episodes, labels)

    def test_tie_breaks_to_lowest_index(self):
        # separation identical (zero) for all states -> index 0
        rng = np.random.default_rng(6)
        episodes = [self.episodes(rng, False) for _ in range(4)]
        labels = [FailureLabel(f"P{i}", i % 2 == 0, "plant_shutdown"
                               if i % 2 == 0 else "none") for i in range(4)]
        model = self.planted_model()
        model.means = np.array([[[0.0]], [[0.0]]])  # indistinguishable
        assert identify_failure_state(model, episodes, labels) == 0

    def test_alert_replay(self):
        model = self.planted_model()
        rng = np.random.default_rng(7)
        stream = self.episodes(rng, failed=True)
        alerts = predict_failure(model, 1, stream, tau=0.7, k=5)
        fired = [a for a in alerts if a.fired]
        assert len(fired) == 1
        t0 = fired[0].t
        # the five alerts ending at the firing tick are all above tau
        window = [a for a in alerts if t0 - 4 <= a.t <= t0]
        assert all(a.failure_state_posterior >= 0.7 for a in window)

    def test_never_reaches_tau(self):
        model = self.planted_model()
        rng = np.random.default_rng(8)
        stream = self.episodes(rng, failed=False)
        alerts = predict_failure(model, 1, stream, tau=0.9, k=3)
        assert first_alert_time(alerts) is None

    def test_k1_tau0_fires_immediately(self):
        model = self.planted_model()
        stream = np.zeros((5, 1))
        alerts = predict_failure(model, 0, stream, tau=0.0, k=1)
        assert alerts[0].fired

    def test_monotone_in_tau(self):
        model = self.planted_model()
        rng = np.random.default_rng(9)
        stream = self.episodes(rng, failed=True)
        t_low = first_alert_time(predict_failure(model, 1, stream, tau=0.5, k=3))
        t_high = first_alert_time(predict_failure(model, 1, stream, tau=0.9, k=3))
        assert t_low is not None
        assert t_high is None or t_high >= t_low


class TestEvalAccuracy:
    def labels(self, n, failed_every=2):
        return {
            f"P{i}": FailureLabel(f"P{i}", i % failed_every == 0,
                                  "plant_shutdown" if i % failed_every == 0
                                  else "none")
            for i in range(n)
        }

    def test_all_correct(self):
        labels = self.labels(24)
        alerts = {p: (100.0 if l.failed else None) for p, l in labels.items()}
        metrics = eval_accuracy(alerts, labels)
        assert metrics["accuracy"] == 1.0

    def test_one_wrong_of_24(self):
        labels = self.labels(24)
        alerts = {p: (100.0 if l.failed else None) for p, l in labels.items()}
        alerts["P1"] = 50.0  # false positive
        metrics = eval_accuracy(alerts, labels)
        assert metrics["accuracy"] == pytest.approx(23 / 24)
        assert 0.957 < metrics["accuracy"] < 0.959

    def test_zero_true_positives(self):
        labels = self.labels(4)
        alerts = {p: None for p in labels}
        metrics = eval_accuracy(alerts, labels)
        assert metrics["recall"] == 0.0
        assert metrics["median_lead_time"] is None

    def test_lead_time(self):
        labels = {"P0": FailureLabel("P0", True, "plant_shutdown")}
        metrics = eval_accuracy({"P0": 100.0}, labels, {"P0": 400.0})
        assert metrics["median_lead_time"] == 300.0

    def test_label_mismatch(self):
        with pytest.raises(LabelMismatch):
            eval_accuracy({"P0": None}, self.labels(2))


class TestModelIo:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        X = np.concatenate([
            rng.normal(-2, 1, size=(100, 3)), rng.normal(2, 1, size=(100, 3)),
        ])
        pm = fit_preprocess(X, hp(n_decomp=2), feature_names=("a", "b", "c"))
        Z = transform(pm, X)
        model = fit_hmm(Z, [200], hp(), seed=0, max_iter=10)
        model.preprocess = pm
        model.feature_names = ("a", "b", "c")
        model.failure_state = 1
        model.feature_stride = 3
        path = tmp_path / "model.npz"
        save_model(model, path)
        back = load_model(path)
        assert back.failure_state == 1
        assert back.feature_stride == 3
        assert back.feature_names == ("a", "b", "c")
        assert np.allclose(back.transition, model.transition)
        assert np.allclose(back.preprocess.components, pm.components)
        xs = rng.normal(size=(5, 3))
        z = transform(back.preprocess, xs)
        f1, _ = state_posterior(model, transform(pm, xs))
        f2, _ = state_posterior(back, z)
        assert np.allclose(f1, f2)
