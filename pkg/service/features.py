import logging

import numpy as np

from interface.error import ParamOutOfRange, TickNotInTrace
from interface.predictor import FeatureConfig, FeatureNorm, FeatureVector
from interface.trace import BoundTrace
from utils.trace_math import algorithmic_gap_series

logger = logging.getLogger(__name__)

RELATIVE_GAP_CAP = 10.0


def substituted_bounds(trace: BoundTrace, sentinel_span: float) -> tuple[np.ndarray, np.ndarray]:
    """(upper, lower) with the +-inf sentinels replaced by finite stand-ins.

    Missing lower bounds take the root bound; a missing incumbent takes
    root bound + span * max(1, |root bound|).
    """
    uppers, lowers = trace.uppers, trace.lowers
    finite_lowers = lowers[np.isfinite(lowers)]
    root = float(finite_lowers[0]) if finite_lowers.size else 0.0
    lowers = np.where(np.isfinite(lowers), lowers, root)
    cap = root + sentinel_span * max(1.0, abs(root))
    uppers = np.where(np.isfinite(uppers), uppers, np.maximum(cap, lowers))
    return uppers, lowers


def _rolling_mean(ticks: np.ndarray, values: np.ndarray, window: int) -> np.ndarray:
    """Mean of the samples with tick in (t - window, t] for every sample tick t."""
    cumulative = np.concatenate([[0.0], np.cumsum(values)])
    start = np.searchsorted(ticks, ticks - window, side="right")
    stop = np.arange(1, len(ticks) + 1)
    return (cumulative[stop] - cumulative[start]) / (stop - start)


def theta_vector(theta_params: dict[str, float], keys: list[str]) -> np.ndarray:
    missing = [key for key in keys if key not in theta_params]
    if missing:
        raise ParamOutOfRange(f"theta_params lacks {', '.join(missing)}")
    return np.asarray([theta_params[key] for key in keys], dtype=np.float64)


def featurize_trace(
    trace: BoundTrace, theta_params: dict[str, float], config: FeatureConfig
) -> np.ndarray:
    """Raw (unnormalized) feature matrix, one row per trace sample."""
    ticks = trace.ticks
    uppers, lowers = substituted_bounds(trace, config.sentinel_span)
    columns = [uppers, lowers]
    for window in config.windows:
        columns.append(_rolling_mean(ticks, uppers, window))
        columns.append(_rolling_mean(ticks, lowers, window))

    incumbent_ticks = np.asarray([inc.tick for inc in trace.incumbents], dtype=np.int64)
    incumbent_count = np.searchsorted(incumbent_ticks, ticks, side="right")
    # before the first incumbent the count runs from tick 0
    since_incumbent = ticks
    if len(incumbent_ticks):
        last_incumbent = incumbent_ticks[np.maximum(incumbent_count - 1, 0)]
        since_incumbent = np.where(incumbent_count > 0, ticks - last_incumbent, ticks)
    gap = algorithmic_gap_series(trace).value_array
    relative_gap = np.clip(np.nan_to_num(gap, posinf=RELATIVE_GAP_CAP), 0.0, RELATIVE_GAP_CAP)

    columns += [
        ticks.astype(np.float64),
        trace.nodes.astype(np.float64),
        np.isinf(trace.uppers).astype(np.float64),
        relative_gap,
        incumbent_count.astype(np.float64),
        since_incumbent.astype(np.float64),
    ]
    features = np.column_stack(columns)
    theta = theta_vector(theta_params, config.theta_keys)
    return np.hstack([features, np.tile(theta, (len(ticks), 1))])


def featurize(
    trace: BoundTrace,
    tick: int,
    theta_params: dict[str, float],
    config: FeatureConfig,
    norm: FeatureNorm | None = None,
) -> FeatureVector:
    position = trace.index_of(tick)
    if position is None:
        raise TickNotInTrace(f"tick {tick} not in trace {trace.instance_id}")
    row = featurize_trace(trace, theta_params, config)[position]
    if norm is not None:
        row = norm.apply(row)
    return FeatureVector.from_array(row, len(config.windows), normalized=norm is not None)


def fit_norm(features: np.ndarray) -> FeatureNorm:
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    # constant columns are left unscaled
    std = np.where(std > 1e-12, std, 1.0)
    return FeatureNorm(mean=mean.tolist(), std=std.tolist())
