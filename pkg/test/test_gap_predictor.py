import math

import numpy as np
import pytest

from interface.error import EmptyDataset, InvalidInterval, MissingOptimum
from interface.instance import THETA_KEYS, Family
from interface.predictor import FeatureConfig, LabeledTrace, TrainingConfig
from service.features import fit_norm
from service.gap_predictor import (
    batch_loss,
    build_batch,
    empirical_loss,
    gradient_check,
    init_model,
    predict_gap,
    predict_series,
    sample_weight,
    squash,
    train,
)
from utils.string import canonical_json

SMALL = FeatureConfig(windows=(1, 2, 3))


def _zero_model(feature_config=SMALL):
    model = init_model(feature_config, fit_norm(np.zeros((1, feature_config.dimension))), [8, 8], seed=0)
    return model.with_parameters([np.zeros_like(p) for p in model.parameters()])


def _dataset(solved):
    config = FeatureConfig(theta_keys=THETA_KEYS[Family.knapsack])
    return config, [LabeledTrace(trace=trace, theta_params=instance.theta_params) for instance, trace in solved]


def test_squash():
    assert squash(0.0, 0.0, 2.0) == 1.0
    assert squash(17.0, 3.0, 3.0) == 0.0
    assert squash(20.0, 0.0, 1.0) == pytest.approx(1.0, abs=1e-8)
    assert squash(1000.0, 0.0, 1.0) == 1.0
    assert squash(-1000.0, 0.0, 1.0) == 0.0


def test_squash_is_increasing():
    values = squash(np.linspace(-30, 30, 61), 2.0, 5.0)
    assert np.all(np.diff(values) >= 0)
    assert np.all((values >= 0) & (values <= 3.0))


@pytest.mark.parametrize("lower, upper", [(3.0, 2.0), (0.0, math.inf), (-math.inf, 1.0)])
def test_squash_rejects_bad_interval(lower, upper):
    with pytest.raises(InvalidInterval):
        squash(0.0, lower, upper)


def test_sample_weight():
    weights = sample_weight(np.asarray([0.1, 0.2, 0.2]), 1e-6)
    assert (weights / weights.sum()).tolist() == pytest.approx([0.5, 0.25, 0.25])
    assert sample_weight(0.0, 1e-6) == pytest.approx(1e6)


def test_single_sample_trace_has_unit_weight(make_trace):
    batch = build_batch([LabeledTrace(trace=make_trace([10.0], [8.0], z_star=9.0))], SMALL)
    assert batch.weights.tolist() == [1.0]


def test_batch_skips_samples_before_first_incumbent(make_trace):
    trace = make_trace([math.inf, 12.0, 10.0], [5.0, 8.0, 10.0], z_star=10.0)
    batch = build_batch([LabeledTrace(trace=trace)], SMALL)
    assert batch.targets.tolist() == [2.0, 0.0]
    assert batch.weights.sum() == pytest.approx(1.0)


def test_batch_weights_divide_by_trace_count(make_trace):
    dataset = [
        LabeledTrace(trace=make_trace([10.0], [8.0], z_star=9.0)),
        LabeledTrace(trace=make_trace([10.0, 9.5], [8.0, 9.0], z_star=9.0)),
    ]
    batch = build_batch(dataset, SMALL)
    assert batch.weights.sum() == pytest.approx(1.0)
    assert batch.weights[batch.trace_index == 0].sum() == pytest.approx(0.5)


def test_batch_requires_optimum(make_trace):
    with pytest.raises(MissingOptimum):
        build_batch([LabeledTrace(trace=make_trace([10.0], [8.0]))], SMALL)


def test_zero_model_predicts_interval_midpoint(make_trace):
    model = _zero_model()
    assert predict_gap(model, make_trace([10.0], [8.0]), 0) == 1.0
    assert predict_gap(model, make_trace([5.0], [5.0]), 0) == 0.0


def test_open_bounds_predict_the_cap(make_trace):
    model = _zero_model()
    trace = make_trace([math.inf, 10.0], [5.0, 8.0])
    # substituted upper = 5 + 1.0 * 5
    assert predict_gap(model, trace, 0) == 5.0
    assert predict_gap(model, trace, 1) == 1.0
    assert predict_series(model, trace).values == pytest.approx([5.0, 1.0])

    no_root = make_trace([math.inf, 10.0], [-math.inf, 8.0])
    assert predict_gap(model, no_root, 0) == 8.0


def test_empirical_loss_hand_computed(make_trace):
    model = _zero_model()
    config = TrainingConfig()
    # phi(0 | 8, 10) = 1 = U - z*
    assert empirical_loss(model, [LabeledTrace(trace=make_trace([10.0], [8.0], z_star=9.0))], config) == 0.0
    assert empirical_loss(model, [LabeledTrace(trace=make_trace([10.0], [8.0], z_star=8.5))], config) == pytest.approx(0.25)


def test_predictions_stay_in_interval(solved_knapsacks):
    config, dataset = _dataset(solved_knapsacks)
    model = train(dataset, TrainingConfig(epochs=3, validation_fraction=0.0), config)
    for item in dataset:
        series = predict_series(model, item.trace, item.theta_params)
        spans = item.trace.uppers - item.trace.lowers
        finite = np.isfinite(spans)
        assert np.all(series.value_array >= 0)
        assert np.all(series.value_array[finite] <= spans[finite] + 1e-9)
        # the gap closes at the end of a solved trace
        assert series.values[-1] == pytest.approx(0.0, abs=1e-9)


def test_zero_epochs_returns_initialization(solved_knapsacks):
    config, dataset = _dataset(solved_knapsacks)
    training = TrainingConfig(epochs=0, validation_fraction=0.0, seed=5)
    model = train(dataset, training, config)
    batch = build_batch(dataset, config)
    expected = init_model(config, fit_norm(batch.features), training.hidden_sizes, training.seed)
    assert model.weights == expected.weights
    assert model.biases == expected.biases
    assert model.history.train_loss == [batch_loss(expected, batch)]


def test_training_is_deterministic(solved_knapsacks):
    config, dataset = _dataset(solved_knapsacks)
    training = TrainingConfig(epochs=3, batch_size=32, seed=2)
    first = train(dataset, training, config)
    second = train(dataset, training, config)
    assert canonical_json(first) == canonical_json(second)


def test_training_reduces_loss(solved_knapsacks):
    config, dataset = _dataset(solved_knapsacks)
    model = train(dataset, TrainingConfig(epochs=20, batch_size=64, validation_fraction=0.0), config)
    history = model.history
    assert min(history.train_loss) < history.train_loss[0]
    assert history.train_loss[history.best_epoch] == min(history.train_loss)


@pytest.mark.slow
def test_training_overfits_toy_dataset(make_trace):
    dataset = [
        LabeledTrace(trace=make_trace([20.0, 14.0, 12.0, 11.0, 10.0], [6.0, 8.0, 9.0, 9.5, 10.0], z_star=10.0)),
        LabeledTrace(trace=make_trace([9.0, 7.0, 7.0, 6.0], [2.0, 4.0, 5.0, 6.0], z_star=6.0)),
    ]
    model = train(dataset, TrainingConfig(epochs=2000, step_size=1e-2, validation_fraction=0.0), SMALL)
    history = model.history
    assert min(history.train_loss) < 1e-3 * history.train_loss[0]


def test_train_rejects_empty_dataset():
    with pytest.raises(EmptyDataset):
        train([], TrainingConfig())


@pytest.mark.parametrize("seed", range(3))
def test_gradient_check_fresh_model(solved_knapsacks, seed):
    config, dataset = _dataset(solved_knapsacks)
    batch = build_batch(dataset, config)
    rows = np.random.default_rng(seed).choice(len(batch), size=min(40, len(batch)), replace=False)
    sample = batch.subset(rows)
    model = init_model(config, fit_norm(sample.features), [16, 16], seed)
    assert gradient_check(model, sample, seed=seed) < 1e-4


def test_gradient_check_zero_model(make_trace):
    batch = build_batch(
        [LabeledTrace(trace=make_trace([10.0, 9.5, 9.0], [8.0, 8.5, 9.0], z_star=9.0))], SMALL
    )
    assert gradient_check(_zero_model(), batch) < 1e-4


def test_gradient_check_preconditions(make_trace):
    batch = build_batch([LabeledTrace(trace=make_trace([10.0], [8.0], z_star=9.0))], SMALL)
    with pytest.raises(ValueError):
        gradient_check(_zero_model(), batch, subset_size=0)
    with pytest.raises(ValueError):
        gradient_check(_zero_model(), batch.subset(np.asarray([], dtype=np.int64)))
