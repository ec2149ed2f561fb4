import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rankagg.core import InvalidParameterError
from rankagg.metrics import ideal_order, kendall_tau
from rankagg.rankers import LinearListRanker
from rankagg.training import (
    RankingDataset,
    TrainConfig,
    TrainingDivergedError,
    composite_loss,
    evaluate_loss,
    margin_loss,
    mse_loss,
    params_loss_and_grad,
    sort_relevance,
    synthetic_dataset,
    train_linear_ranker,
)


def fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def away_from_kinks(rng, k, delta):
    """Predictions whose pairwise gaps stay clear of the hinge at +-delta."""
    while True:
        pred = rng.standard_normal(k) * 2
        gaps = np.abs(np.abs(pred[:, None] - pred[None, :]) - delta)
        if gaps[~np.eye(k, dtype=bool)].min() > 1e-3:
            return pred


class TestMargin:
    def test_well_separated_is_zero(self):
        assert margin_loss([3.0, 1.5, 0.0], [2.0, 1.0, 0.0], delta=1.0) == 0.0

    def test_single_violation(self):
        assert margin_loss([0.0, 1.0], [1.0, 0.0], delta=0.0) == 1.0

    def test_large_gap(self):
        assert margin_loss([5.0, 0.0], [1.0, 0.0], delta=2.0) == 0.0

    def test_ties_in_truth_are_ignored(self):
        assert margin_loss([0.0, 5.0], [1.0, 1.0], delta=1.0) == 0.0

    def test_brute_force(self):
        rng = np.random.default_rng(0)
        pred, y = rng.standard_normal(6), rng.standard_normal(6)
        expected = sum(max(0.0, pred[j] - pred[i] + 0.5) for i in range(6) for j in range(6) if y[i] > y[j])
        assert margin_loss(pred, y, 0.5) == pytest.approx(expected)


class TestMse:
    def test_examples(self):
        assert mse_loss([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert mse_loss([1.0, 1.0], [0.0, 0.0]) == 1.0
        assert mse_loss([0.5, 0.0], [1.0, 0.0]) == 0.125


class TestComposite:
    def test_margin_and_mse_zero_at_truth(self):
        y = np.array([3.0, 1.5, 0.0])
        loss, grad = composite_loss(y, y, TrainConfig(loss_weights=(1, 0, 1)))
        assert loss == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_mse_gradient(self):
        pred, y = np.array([0.3, -1.2]), np.array([1.0, 0.5])
        _, grad = composite_loss(pred, y, TrainConfig(loss_weights=(0, 0, 1)))
        np.testing.assert_allclose(grad, (2 / 2) * (pred - y))
        assert rel_err(grad, fd_grad(lambda p: mse_loss(p, y), pred)) < 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_full_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        k = 5
        pred, y = away_from_kinks(rng, k, 1.0), rng.uniform(0, 2, k)
        cfg = TrainConfig()
        _, grad = composite_loss(pred, y, cfg)
        full = fd_grad(lambda p: composite_loss(p, y, cfg)[0], pred, h=1e-5)
        assert rel_err(grad, full) < 1e-4

    @given(k=st.sampled_from([3, 5, 10]), seed=st.integers(0, 2**31), delta=st.sampled_from([0.0, 0.5, 1.0]))
    @settings(max_examples=50, deadline=None)
    def test_margin_mse_gradients(self, k, seed, delta):
        rng = np.random.default_rng(seed)
        pred, y = away_from_kinks(rng, k, delta), rng.standard_normal(k)
        cfg = TrainConfig(delta=delta, loss_weights=(1, 0, 1))
        _, grad = composite_loss(pred, y, cfg)
        fd = fd_grad(lambda p: margin_loss(p, y, delta) + mse_loss(p, y), pred)
        assert rel_err(grad, fd) < 1e-5

    def test_negative_targets_shifted_for_sort_term(self):
        np.testing.assert_array_equal(sort_relevance([-1.0, 0.5, 2.0]), [0.0, 1.5, 3.0])
        np.testing.assert_array_equal(sort_relevance([0.2, 0.5]), [0.2, 0.5])

    def test_length_mismatch(self):
        with pytest.raises(InvalidParameterError):
            composite_loss([1.0, 2.0], [1.0])


class TestConfig:
    @pytest.mark.parametrize("kw", [{"delta": -1}, {"tau": 0}, {"lr": 0}, {"batch_size": 0},
                                    {"loss_weights": (1, 1)}, {"loss_weights": (1, -1, 1)}])
    def test_invalid(self, kw):
        with pytest.raises(InvalidParameterError):
            TrainConfig(**kw)


def test_parameter_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    d, k, B = 3, 4, 6
    q, X = rng.standard_normal((B, d)), rng.standard_normal((B, k, d))
    y = rng.standard_normal((B, k))
    params = rng.standard_normal(2 * d + 2) * 0.1
    cfg = TrainConfig(loss_weights=(0, 0, 1))
    _, grad = params_loss_and_grad(params, q, X, y, cfg)
    fd = fd_grad(lambda p: params_loss_and_grad(p, q, X, y, cfg)[0], params)
    assert rel_err(grad, fd) < 1e-6


class TestTraining:
    def test_zero_epochs_returns_initial(self):
        data = synthetic_dataset(20, 4, 3, seed=0)
        init = LinearListRanker.from_params(np.arange(8.0))
        np.testing.assert_array_equal(train_linear_ranker(data, TrainConfig(epochs=0), init).params, init.params)
        seeded = train_linear_ranker(data, TrainConfig(epochs=0, seed=5))
        np.testing.assert_array_equal(seeded.params, np.random.default_rng(5).normal(0, 0.01, 8))

    def test_deterministic(self):
        data = synthetic_dataset(100, 4, 3, seed=1)
        cfg = TrainConfig(epochs=2, seed=3)
        np.testing.assert_array_equal(train_linear_ranker(data, cfg).params, train_linear_ranker(data, cfg).params)

    def test_loss_decreases(self):
        data = synthetic_dataset(300, 5, 4, seed=2)
        cfg = TrainConfig(epochs=5)
        model = train_linear_ranker(data, cfg)
        start = LinearListRanker.from_params(np.random.default_rng(0).normal(0, 0.01, 10))
        assert evaluate_loss(model, data, cfg) < evaluate_loss(start, data, cfg)
        assert model.history[-1] < model.history[0]

    def test_learns_similarity_target(self):
        data = synthetic_dataset(2000, 5, 8, seed=0)
        model = train_linear_ranker(data, TrainConfig(epochs=5, seed=0))
        taus = [kendall_tau(ideal_order(model.scores(r.query, r.items)), ideal_order(r.y)) for r in data.records]
        assert np.mean(taus) >= 0.9

    def test_mixed_list_lengths(self):
        a, b = synthetic_dataset(40, 3, 2, seed=0), synthetic_dataset(40, 6, 2, seed=1)
        model = train_linear_ranker(RankingDataset(a.records + b.records), TrainConfig(epochs=2))
        assert model.d == 2

    def test_divergence_detected(self):
        data = synthetic_dataset(64, 4, 3, seed=0)
        with pytest.raises(TrainingDivergedError):
            train_linear_ranker(data, TrainConfig(lr=1e300, epochs=3, loss_weights=(0, 0, 1)))

    def test_empty_data(self):
        with pytest.raises(InvalidParameterError):
            train_linear_ranker(RankingDataset(()), TrainConfig())


def test_dataset_round_trip(tmp_path):
    data = synthetic_dataset(5, 3, 2, seed=0)
    data.dump(tmp_path / "d.jsonl")
    again = RankingDataset.load(tmp_path / "d.jsonl")
    for a, b in zip(data.records, again.records):
        np.testing.assert_array_equal(a.items, b.items)
        np.testing.assert_array_equal(a.y, b.y)


def test_dataset_bad_line():
    with pytest.raises(InvalidParameterError):
        RankingDataset.loads('{"query": [1.0], "items": [[1.0, 2.0]], "y": [0.0]}\n')
