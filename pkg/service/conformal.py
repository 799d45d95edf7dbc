import logging
import math

import numpy as np

from interface.conformal import CalibrationResult, ConformalScore
from interface.error import EmptyScores, InvalidDelta, MissingOptimum, ParamOutOfRange, SeriesMismatch
from interface.trace import BEYOND_TRACE, BoundTrace, GapSeries
from utils.trace_math import (
    deterministic_stop_time,
    learned_stop_time,
    left_inverse,
    stop_or_terminal,
    true_gap,
    value_at,
)

logger = logging.getLogger(__name__)


def quantile_index(c: int, alpha: float) -> int:
    """Smallest n with (n + 1) / (c + 1) >= 1 - alpha, kept within [1, c]."""
    if c < 1:
        raise ParamOutOfRange("c must be at least 1")
    if not 0.0 < alpha < 1.0:
        raise ParamOutOfRange("alpha must lie in (0, 1)")
    n = math.ceil((1.0 - alpha) * (c + 1) - 1e-12) - 1
    return min(max(n, 1), c)


def conformal_score(
    true_gap_series: GapSeries, prediction_series: GapSeries, epsilon: float
) -> ConformalScore:
    """Rolling minimum of the predictions at the first truly epsilon-optimal tick."""
    if true_gap_series.ticks != prediction_series.ticks:
        raise SeriesMismatch("true gap and prediction series have different ticks")
    reached = left_inverse(true_gap_series, epsilon)
    if reached is BEYOND_TRACE:
        return ConformalScore(value=0.0, degenerate=True)
    position = true_gap_series.ticks.index(reached)
    return ConformalScore(value=float(np.min(prediction_series.value_array[: position + 1])))


def calibrate(
    scores: list[float] | list[ConformalScore], c: int, alpha: float, epsilon: float
) -> CalibrationResult:
    if not scores:
        raise EmptyScores("calibration needs at least one score")
    if len(scores) != c:
        raise ParamOutOfRange(f"expected {c} scores, got {len(scores)}")
    values = [s.value if isinstance(s, ConformalScore) else float(s) for s in scores]
    dropped = sum(1 for s in scores if isinstance(s, ConformalScore) and s.degenerate)
    n = quantile_index(c, alpha)
    kappa = sorted(values, reverse=True)[n - 1]
    return CalibrationResult(
        kappa=kappa,
        epsilon=epsilon,
        alpha=alpha,
        c=c,
        n=n,
        scores=values,
        dropped_count=dropped,
    )


def score_traces(
    traces: list[BoundTrace], predictions: list[GapSeries], epsilon: float
) -> list[ConformalScore]:
    scores = []
    for trace, prediction in zip(traces, predictions, strict=True):
        if trace.z_star is None:
            raise MissingOptimum(trace.instance_id)
        score = conformal_score(true_gap(trace, trace.z_star), prediction, epsilon)
        scores.append(score.model_copy(update={"instance_id": trace.instance_id}))
    return scores


def replay_calibration(
    traces: list[BoundTrace],
    predictions: list[GapSeries],
    kappa: float,
    epsilon: float,
    suboptimality_cap: float,
) -> tuple[float, float, int]:
    """Mean capped suboptimality, mean stop tick and max stop tick of the learned rule."""
    suboptimalities, stops = [], []
    for trace, prediction in zip(traces, predictions, strict=True):
        fallback = stop_or_terminal(trace, deterministic_stop_time(trace, epsilon))
        stop = learned_stop_time(prediction, kappa, fallback)
        gap = value_at(true_gap(trace, trace.z_star), stop)
        suboptimalities.append(min(gap, suboptimality_cap))
        stops.append(stop)
    return float(np.mean(suboptimalities)), float(np.mean(stops)), int(max(stops))


def calibrate_traces(
    traces: list[BoundTrace],
    predictions: list[GapSeries],
    alpha: float,
    epsilon: float,
    suboptimality_cap: float = 1.0,
) -> CalibrationResult:
    scores = score_traces(traces, predictions, epsilon)
    result = calibrate(scores, len(scores), alpha, epsilon)
    mean_suboptimality, mean_stop, max_stop = replay_calibration(
        traces, predictions, result.kappa, epsilon, suboptimality_cap
    )
    if result.dropped_count:
        logger.warning(
            "%d of %d calibration traces never reached epsilon=%g; scored 0",
            result.dropped_count, result.c, epsilon,
        )
    return result.model_copy(
        update={
            "calibration_mean_suboptimality": mean_suboptimality,
            "calibration_mean_stop_tick": mean_stop,
            "max_stop_tick": max_stop,
        }
    )


def _check_bound_args(c: int, delta: float) -> None:
    if c < 1:
        raise ParamOutOfRange("c must be at least 1")
    if not 0.0 < delta < 1.0:
        raise InvalidDelta(f"delta={delta} outside (0, 1)")


def expected_bound(empirical_mean: float, max_value: float, c: int, delta: float) -> float:
    """mean + max * sqrt(log(e c) / c) + max * sqrt(log(1/delta) / (2c))."""
    _check_bound_args(c, delta)
    if max_value < 0:
        raise ParamOutOfRange("max_value must be nonnegative")
    return (
        empirical_mean
        + max_value * math.sqrt(math.log(math.e * c) / c)
        + max_value * math.sqrt(math.log(1.0 / delta) / (2 * c))
    )


def success_bound(alpha: float, c: int, delta: float) -> float:
    _check_bound_args(c, delta)
    if not 0.0 < alpha < 1.0:
        raise ParamOutOfRange("alpha must lie in (0, 1)")
    return 1.0 - alpha - math.sqrt(math.log(2.0 / delta) / (2 * c))
