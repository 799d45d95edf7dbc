import math

import numpy as np

from interface.error import ZeroOptimum
from interface.trace import BEYOND_TRACE, BoundTrace, GapSeries, StopTick

OBJECTIVE_DECIMALS = 9


def clean_objective(value: float) -> float:
    """Objective value rounded to OBJECTIVE_DECIMALS places; infinities pass through.

    Rounding is monotone, so L <= z* <= U survives it when every bound goes
    through the same rounding.
    """
    if not math.isfinite(value):
        return float(value)
    # + 0.0 drops the sign of a negative zero
    return float(round(value, OBJECTIVE_DECIMALS)) + 0.0


def true_gap(trace: BoundTrace, z_star: float) -> GapSeries:
    """g(t) = (U(t) - z*) / |z*| per sample; +inf before the first incumbent."""
    if z_star == 0:
        raise ZeroOptimum(trace.instance_id)
    uppers = trace.uppers
    with np.errstate(invalid="ignore"):
        values = np.where(np.isinf(uppers), np.inf, (uppers - z_star) / abs(z_star))
    # U >= z* up to rounding
    values = np.maximum(values, 0.0)
    return GapSeries.from_arrays(trace.ticks, values, trace.terminal_tick)


def algorithmic_gap_series(trace: BoundTrace) -> GapSeries:
    uppers, lowers = trace.uppers, trace.lowers
    finite = np.isfinite(uppers) & np.isfinite(lowers)
    values = np.full(len(uppers), np.inf)
    closed = finite & (uppers == lowers)
    values[closed] = 0.0
    open_ = finite & ~closed & (lowers != 0)
    values[open_] = (uppers[open_] - lowers[open_]) / np.abs(lowers[open_])
    return GapSeries.from_arrays(trace.ticks, values, trace.terminal_tick)


def rolling_min(series: GapSeries) -> GapSeries:
    values = np.minimum.accumulate(series.value_array)
    return GapSeries.from_arrays(series.tick_array, values, series.terminal_tick)


def left_inverse(series: GapSeries, x: float, strict: bool = False) -> StopTick:
    """First tick whose value is <= x (< x when ``strict``), else BEYOND_TRACE."""
    values = series.value_array
    hits = values < x if strict else values <= x
    if not hits.any():
        return BEYOND_TRACE
    return series.ticks[int(np.argmax(hits))]


def deterministic_stop_time(trace: BoundTrace, epsilon: float) -> StopTick:
    return left_inverse(algorithmic_gap_series(trace), epsilon)


def learned_stop_time(prediction_series: GapSeries, kappa: float, fallback_tick: int) -> int:
    # strict: kappa = 0 never fires
    fired = left_inverse(prediction_series, kappa, strict=True)
    if fired is BEYOND_TRACE:
        return fallback_tick
    return min(fired, fallback_tick)


def stop_or_terminal(trace: BoundTrace, stop: StopTick) -> int:
    return trace.terminal_tick if stop is BEYOND_TRACE else stop


def upper_at(trace: BoundTrace, tick: int) -> float:
    return trace.sample_at(tick).upper


def value_at(series: GapSeries, tick: int) -> float:
    """Step-function value of ``series`` at ``tick``."""
    position = int(np.searchsorted(series.tick_array, tick, side="right")) - 1
    if position < 0:
        return math.inf
    return series.values[position]
