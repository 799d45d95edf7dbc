import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from interface.error import EmptyDataset, InvalidInterval, MissingOptimum, NonFiniteLoss
from interface.predictor import (
    FeatureConfig,
    FeatureNorm,
    GapPredictorModel,
    LabeledTrace,
    TrainingConfig,
    TrainingHistory,
)
from interface.trace import BoundTrace, GapSeries
from service.features import featurize, featurize_trace, fit_norm, substituted_bounds
from utils.string import stable_hash

logger = logging.getLogger(__name__)

DEFAULT_WEIGHT_FLOOR = 1e-4
GRADIENT_STEP = 1e-5


def squash(x, lower, upper):
    """(u - l) * logistic(x): a value in [0, u - l], increasing in x."""
    lower_arr, upper_arr = np.asarray(lower, dtype=np.float64), np.asarray(upper, dtype=np.float64)
    if not (np.all(np.isfinite(lower_arr)) and np.all(np.isfinite(upper_arr))):
        raise InvalidInterval("squash interval must be finite")
    if np.any(lower_arr > upper_arr):
        raise InvalidInterval("squash interval has lower > upper")
    return (upper_arr - lower_arr) * expit(x)


@dataclass
class TrainingBatch:
    """Stacked training samples; ``weights`` already carry the 1/d factor."""

    features: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    targets: np.ndarray
    weights: np.ndarray
    trace_index: np.ndarray

    def __len__(self) -> int:
        return len(self.targets)

    def subset(self, rows: np.ndarray) -> "TrainingBatch":
        return TrainingBatch(
            features=self.features[rows],
            lower=self.lower[rows],
            upper=self.upper[rows],
            targets=self.targets[rows],
            weights=self.weights[rows],
            trace_index=self.trace_index[rows],
        )


def sample_weight(y: float | np.ndarray, y_min: float):
    return 1.0 / np.maximum(y, y_min)


def build_batch(
    dataset: list[LabeledTrace],
    feature_config: FeatureConfig,
    stride: int = 1,
    weight_floor: float = DEFAULT_WEIGHT_FLOOR,
) -> TrainingBatch:
    """Samples every ``stride`` ticks after the first incumbent, targets y = U - z*."""
    parts = []
    for index, item in enumerate(dataset):
        trace = item.trace
        if trace.z_star is None:
            raise MissingOptimum(trace.instance_id)
        keep = (trace.ticks % stride == 0) & np.isfinite(trace.uppers)
        if not keep.any():
            continue
        features = featurize_trace(trace, item.theta_params, feature_config)[keep]
        upper, lower = substituted_bounds(trace, feature_config.sentinel_span)
        targets = np.maximum(trace.uppers[keep] - trace.z_star, 0.0)
        weights = sample_weight(targets, weight_floor)
        parts.append((features, lower[keep], upper[keep], targets, weights / weights.sum(), index))

    if not parts:
        return TrainingBatch(
            features=np.zeros((0, feature_config.dimension)),
            lower=np.zeros(0),
            upper=np.zeros(0),
            targets=np.zeros(0),
            weights=np.zeros(0),
            trace_index=np.zeros(0, dtype=np.int64),
        )
    d = len(dataset)
    return TrainingBatch(
        features=np.vstack([p[0] for p in parts]),
        lower=np.concatenate([p[1] for p in parts]),
        upper=np.concatenate([p[2] for p in parts]),
        targets=np.concatenate([p[3] for p in parts]),
        weights=np.concatenate([p[4] for p in parts]) / d,
        trace_index=np.concatenate([np.full(len(p[3]), p[5], dtype=np.int64) for p in parts]),
    )


def init_model(
    feature_config: FeatureConfig,
    feature_norm: FeatureNorm,
    hidden_sizes: list[int],
    seed: int,
) -> GapPredictorModel:
    rng = np.random.default_rng(seed)
    layer_sizes = [feature_config.dimension, *hidden_sizes, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)).tolist())
        biases.append([0.0] * fan_out)
    return GapPredictorModel(
        layer_sizes=layer_sizes,
        weights=weights,
        biases=biases,
        feature_config=feature_config,
        feature_norm=feature_norm,
        rng_seed=seed,
        config_hash=stable_hash(feature_config),
    )


def _forward(params: list[np.ndarray], inputs: np.ndarray) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    """Raw network output h plus the activations and pre-activations of each layer."""
    activations = [inputs]
    pre_activations = []
    depth = len(params) // 2
    a = inputs
    for k in range(depth):
        z = a @ params[2 * k] + params[2 * k + 1]
        pre_activations.append(z)
        a = np.maximum(z, 0.0) if k < depth - 1 else z
        activations.append(a)
    return a[:, 0], activations, pre_activations


def _loss_and_gradient(
    params: list[np.ndarray], inputs: np.ndarray, batch: TrainingBatch
) -> tuple[float, list[np.ndarray]]:
    h, activations, pre_activations = _forward(params, inputs)
    span = batch.upper - batch.lower
    logistic = expit(h)
    residual = span * logistic - batch.targets
    loss = float(np.sum(batch.weights * residual**2))

    delta = (2.0 * batch.weights * residual * span * logistic * (1.0 - logistic))[:, None]
    grads: list[np.ndarray] = [np.empty(0)] * len(params)
    for k in reversed(range(len(params) // 2)):
        grads[2 * k] = activations[k].T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        if k > 0:
            # ReLU subgradient taken as 0 at the kink
            delta = (delta @ params[2 * k].T) * (pre_activations[k - 1] > 0)
    return loss, grads


def _loss(params: list[np.ndarray], inputs: np.ndarray, batch: TrainingBatch) -> float:
    h, _, _ = _forward(params, inputs)
    residual = squash(h, batch.lower, batch.upper) - batch.targets
    return float(np.sum(batch.weights * residual**2))


def batch_loss(model: GapPredictorModel, batch: TrainingBatch) -> float:
    if len(batch) == 0:
        return 0.0
    return _loss(model.parameters(), model.feature_norm.apply(batch.features), batch)


def _weight_floor(config: TrainingConfig) -> float:
    return config.weight_floor if config.weight_floor is not None else DEFAULT_WEIGHT_FLOOR


def empirical_loss(
    model: GapPredictorModel, dataset: list[LabeledTrace], config: TrainingConfig
) -> float:
    """(1/d) * sum over traces of the per-trace weighted squared error."""
    batch = build_batch(dataset, model.feature_config, config.stride, _weight_floor(config))
    return batch_loss(model, batch)


def _split_traces(count: int, fraction: float, rng: np.random.Generator) -> tuple[list[int], list[int]]:
    order = rng.permutation(count)
    held_out = int(math.floor(fraction * count)) if count > 1 else 0
    return sorted(order[held_out:].tolist()), sorted(order[:held_out].tolist())


def train(
    dataset: list[LabeledTrace],
    config: TrainingConfig,
    feature_config: FeatureConfig | None = None,
) -> GapPredictorModel:
    """Adam on the inverse-gap-weighted loss; returns the lowest-training-loss parameters."""
    if not dataset:
        raise EmptyDataset("no training traces")
    feature_config = feature_config or FeatureConfig()
    floor = _weight_floor(config)
    rng = np.random.default_rng(config.seed)

    train_ids, validation_ids = _split_traces(len(dataset), config.validation_fraction, rng)
    train_batch = build_batch([dataset[i] for i in train_ids], feature_config, config.stride, floor)
    validation_batch = build_batch(
        [dataset[i] for i in validation_ids], feature_config, config.stride, floor
    )
    if len(train_batch) == 0:
        raise EmptyDataset("training traces carry no samples after the first incumbent")

    model = init_model(feature_config, fit_norm(train_batch.features), config.hidden_sizes, config.seed)
    params = model.parameters()
    inputs = model.feature_norm.apply(train_batch.features)
    validation_inputs = model.feature_norm.apply(validation_batch.features)

    def validation_loss(current: list[np.ndarray]) -> float:
        if len(validation_batch) == 0:
            return 0.0
        return _loss(current, validation_inputs, validation_batch)

    initial = _loss(params, inputs, train_batch)
    history = TrainingHistory(train_loss=[initial], validation_loss=[validation_loss(params)])
    best_loss, best_params = initial, [p.copy() for p in params]

    first_moment = [np.zeros_like(p) for p in params]
    second_moment = [np.zeros_like(p) for p in params]
    step = 0
    size = len(train_batch)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(size)
        for start in range(0, size, config.batch_size):
            rows = order[start : start + config.batch_size]
            _, grads = _loss_and_gradient(params, inputs[rows], train_batch.subset(rows))
            scale = size / len(rows)
            step += 1
            for k, grad in enumerate(grads):
                grad = grad * scale
                first_moment[k] = config.beta1 * first_moment[k] + (1 - config.beta1) * grad
                second_moment[k] = config.beta2 * second_moment[k] + (1 - config.beta2) * grad**2
                m_hat = first_moment[k] / (1 - config.beta1**step)
                v_hat = second_moment[k] / (1 - config.beta2**step)
                params[k] = params[k] - config.step_size * m_hat / (np.sqrt(v_hat) + config.adam_eps)

        loss = _loss(params, inputs, train_batch)
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"training loss diverged at epoch {epoch} (last finite {history.train_loss[-1]:.6g})")
        history.train_loss.append(loss)
        history.validation_loss.append(validation_loss(params))
        if loss < best_loss:
            best_loss, best_params = loss, [p.copy() for p in params]
            history.best_epoch = epoch
        logger.debug("epoch %d: train %.6g validation %.6g", epoch, loss, history.validation_loss[-1])

    logger.info(
        "trained on %d samples from %d traces: loss %.6g -> %.6g",
        size, len(train_ids), initial, best_loss,
    )
    return model.with_parameters(best_params).model_copy(update={"history": history})


def _network_output(model: GapPredictorModel, features: np.ndarray) -> np.ndarray:
    h, _, _ = _forward(model.parameters(), model.feature_norm.apply(np.atleast_2d(features)))
    return h


def predict_gap(
    model: GapPredictorModel, trace: BoundTrace, tick: int, theta_params: dict[str, float] | None = None
) -> float:
    """phi(h(X(tick)) | L, U).

    While either bound is still a sentinel the answer is the cap U - L taken on
    the substituted bounds.
    """
    vector = featurize(trace, tick, theta_params or {}, model.feature_config)
    sample = trace.samples[trace.index_of(tick)]
    if not (math.isfinite(sample.upper) and math.isfinite(sample.lower)):
        return float(vector.upper - vector.lower)
    h = _network_output(model, vector.as_array())[0]
    return float(squash(h, vector.lower, vector.upper))


def predict_series(
    model: GapPredictorModel, trace: BoundTrace, theta_params: dict[str, float] | None = None
) -> GapSeries:
    features = featurize_trace(trace, theta_params or {}, model.feature_config)
    upper, lower = substituted_bounds(trace, model.feature_config.sentinel_span)
    values = squash(_network_output(model, features), lower, upper)
    open_bounds = ~(np.isfinite(trace.uppers) & np.isfinite(trace.lowers))
    values = np.where(open_bounds, upper - lower, values)
    return GapSeries.from_arrays(trace.ticks, values, trace.terminal_tick)


def gradient_check(
    model: GapPredictorModel,
    batch: TrainingBatch,
    subset_size: int = 50,
    seed: int = 0,
    step: float = GRADIENT_STEP,
) -> float:
    """Max relative error between backprop and central differences.

    Parameters whose +-step perturbation flips a ReLU are skipped, so the
    comparison never straddles a kink.
    """
    if subset_size < 1:
        raise ValueError("parameter subset must be nonempty")
    if len(batch) == 0:
        raise ValueError("gradient check needs a nonempty batch")
    params = model.parameters()
    inputs = model.feature_norm.apply(batch.features)
    loss, grads = _loss_and_gradient(params, inputs, batch)

    sizes = [p.size for p in params]
    offsets = np.cumsum([0, *sizes])
    rng = np.random.default_rng(seed)
    chosen = rng.choice(offsets[-1], size=min(subset_size, int(offsets[-1])), replace=False)

    def masks(current: list[np.ndarray]) -> list[np.ndarray]:
        _, _, pre = _forward(current, inputs)
        return [z > 0 for z in pre[:-1]]

    base_masks = masks(params)
    floor = 1e-6 * max(1.0, abs(loss))
    worst = 0.0
    for flat in sorted(int(i) for i in chosen):
        k = int(np.searchsorted(offsets, flat, side="right")) - 1
        position = np.unravel_index(flat - offsets[k], params[k].shape)
        losses = []
        stable = True
        for sign in (1.0, -1.0):
            shifted = [p.copy() for p in params]
            shifted[k][position] += sign * step
            if any((a != b).any() for a, b in zip(masks(shifted), base_masks)):
                stable = False
                break
            losses.append(_loss(shifted, inputs, batch))
        if not stable:
            continue
        numeric = (losses[0] - losses[1]) / (2 * step)
        analytic = float(grads[k][position])
        if analytic == 0.0 and numeric == 0.0:
            continue
        error = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), floor)
        worst = max(worst, error)
    return worst
