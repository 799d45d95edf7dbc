import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from interface.conformal import CalibrationResult
from interface.error import (
    InsufficientPool,
    KappaMismatch,
    MissingOptimum,
    MissingPredictions,
    ParamOutOfRange,
    TickNotInTrace,
    ZeroOptimum,
)
from interface.evaluation import (
    BoundConsistency,
    CoverageResult,
    EvaluationAggregates,
    EvaluationReport,
    InstanceOutcome,
    MethodSummary,
)
from interface.trace import BEYOND_TRACE, BoundTrace, GapSeries, StopTick
from service.conformal import (
    calibrate,
    conformal_score,
    expected_bound,
    quantile_index,
    success_bound,
)
from utils.string import format_mean_sd
from utils.trace_math import (
    deterministic_stop_time,
    learned_stop_time,
    stop_or_terminal,
    true_gap,
)

logger = logging.getLogger(__name__)

BASELINES = {"stop_at_1": 1, "stop_at_3": 3}
METHODS = ["conformal", "deterministic", *BASELINES]


def suboptimality(trace: BoundTrace, stop_tick: int, z_star: float) -> float:
    """(U(stop) - z*) / |z*|; +inf when no incumbent exists yet."""
    if z_star == 0:
        raise ZeroOptimum(trace.instance_id)
    if not 0 <= stop_tick <= trace.terminal_tick:
        raise TickNotInTrace(f"tick {stop_tick} outside trace {trace.instance_id}")
    upper = trace.sample_at(stop_tick).upper
    if math.isinf(upper):
        return math.inf
    return max((upper - z_star) / abs(z_star), 0.0)


def baseline_stop(trace: BoundTrace, k_incumbents: int) -> StopTick:
    if k_incumbents < 1:
        raise ParamOutOfRange("k_incumbents must be at least 1")
    if len(trace.incumbents) < k_incumbents:
        return BEYOND_TRACE
    return trace.incumbents[k_incumbents - 1].tick


def _outcome(
    trace: BoundTrace, prediction: GapSeries, kappa: float, epsilon: float
) -> InstanceOutcome:
    z_star = trace.z_star
    deterministic = stop_or_terminal(trace, deterministic_stop_time(trace, epsilon))
    stop = learned_stop_time(prediction, kappa, deterministic)
    baseline_ticks = {
        name: stop_or_terminal(trace, baseline_stop(trace, k)) for name, k in BASELINES.items()
    }
    s = suboptimality(trace, stop, z_star)
    return InstanceOutcome(
        instance_id=trace.instance_id,
        stop_tick=stop,
        deterministic_tick=deterministic,
        baseline_ticks=baseline_ticks,
        stop_nodes=trace.sample_at(stop).nodes_explored,
        deterministic_nodes=trace.sample_at(deterministic).nodes_explored,
        baseline_nodes={
            name: trace.sample_at(tick).nodes_explored for name, tick in baseline_ticks.items()
        },
        suboptimality=s,
        deterministic_suboptimality=suboptimality(trace, deterministic, z_star),
        baseline_suboptimality={
            name: suboptimality(trace, tick, z_star) for name, tick in baseline_ticks.items()
        },
        within_eps=s <= epsilon,
    )


def evaluate(
    test_traces: list[BoundTrace],
    predictions: dict[str, GapSeries],
    calibration: CalibrationResult,
    delta: float = 0.05,
    suboptimality_cap: float = 1.0,
    epsilon: float | None = None,
) -> EvaluationReport:
    """Replay every test trace under the learned rule, the deterministic rule and the baselines."""
    if epsilon is not None and epsilon != calibration.epsilon:
        raise KappaMismatch(f"epsilon {epsilon} differs from calibration epsilon {calibration.epsilon}")
    epsilon = calibration.epsilon

    outcomes = []
    for trace in test_traces:
        if trace.instance_id not in predictions:
            raise MissingPredictions(trace.instance_id)
        if trace.z_star is None:
            raise MissingOptimum(trace.instance_id)
        outcomes.append(_outcome(trace, predictions[trace.instance_id], calibration.kappa, epsilon))

    s = np.asarray([o.suboptimality for o in outcomes])
    capped = np.minimum(s, suboptimality_cap)
    finite_count = int(np.isfinite(s).sum())
    stops = np.asarray([o.stop_tick for o in outcomes], dtype=np.float64)
    deterministic = np.asarray([o.deterministic_tick for o in outcomes], dtype=np.float64)
    node_gain = [o.deterministic_nodes - o.stop_nodes for o in outcomes]
    mean_deterministic = float(deterministic.mean())

    if calibration.calibration_mean_suboptimality is None or calibration.max_stop_tick is None:
        logger.warning("calibration carries no replay statistics; bounds use test means")
        mean_s_cal = float(capped.mean())
        mean_t_cal, max_t = float(stops.mean()), int(deterministic.max())
    else:
        mean_s_cal = calibration.calibration_mean_suboptimality
        mean_t_cal = calibration.calibration_mean_stop_tick
        max_t = calibration.max_stop_tick

    aggregates = EvaluationAggregates(
        mean_suboptimality=float(capped.mean()),
        infinite_count=len(s) - finite_count,
        mean_stop_tick=float(stops.mean()),
        coverage=float(np.mean([o.within_eps for o in outcomes])),
        mean_tick_speedup=float(np.mean(deterministic - stops)),
        relative_speedup=1.0 - float(stops.mean()) / mean_deterministic if mean_deterministic > 0 else 0.0,
        mean_node_speedup=float(np.mean(node_gain)),
        expected_suboptimality_bound=expected_bound(mean_s_cal, suboptimality_cap, calibration.c, delta),
        expected_stop_tick_bound=expected_bound(mean_t_cal, float(max_t), calibration.c, delta),
        success_probability_bound=success_bound(calibration.alpha, calibration.c, delta),
    )
    return EvaluationReport(
        per_instance=outcomes,
        aggregates=aggregates,
        kappa=calibration.kappa,
        epsilon=epsilon,
        alpha=calibration.alpha,
        delta=delta,
        c=calibration.c,
        n=calibration.n,
        suboptimality_cap=suboptimality_cap,
    )


@dataclass
class _ReplayRecord:
    """Per-trace quantities that do not depend on kappa."""

    score: float
    ticks: np.ndarray
    predictions: np.ndarray
    gaps: np.ndarray
    fallback: int

    def gap_at_stop(self, kappa: float) -> float:
        # same rule as learned_stop_time, on raw arrays
        hits = np.flatnonzero(self.predictions < kappa)
        stop = self.fallback if hits.size == 0 else min(int(self.ticks[hits[0]]), self.fallback)
        position = int(np.searchsorted(self.ticks, stop, side="right")) - 1
        return float(self.gaps[position])

    def covered(self, kappa: float, epsilon: float) -> bool:
        return self.gap_at_stop(kappa) <= epsilon

    def capped_suboptimality(self, kappa: float, cap: float) -> float:
        return min(self.gap_at_stop(kappa), cap)


def _replay_records(pool: list[tuple[BoundTrace, GapSeries]], epsilon: float) -> list[_ReplayRecord]:
    records = []
    for trace, prediction in pool:
        if trace.z_star is None:
            raise MissingOptimum(trace.instance_id)
        gaps = true_gap(trace, trace.z_star)
        records.append(
            _ReplayRecord(
                score=conformal_score(gaps, prediction, epsilon).value,
                ticks=trace.ticks,
                predictions=prediction.value_array,
                gaps=gaps.value_array,
                fallback=stop_or_terminal(trace, deterministic_stop_time(trace, epsilon)),
            )
        )
    return records


def _trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))


def _coverage_trials(
    records: list[_ReplayRecord], trials: list[int], c: int, n: int, epsilon: float, seed: int
) -> list[tuple[bool, float]]:
    results = []
    for trial in trials:
        drawn = _trial_rng(seed, trial).choice(len(records), size=c + 1, replace=False)
        scores = sorted((records[i].score for i in drawn[:c]), reverse=True)
        kappa = scores[n - 1]
        results.append((records[drawn[c]].covered(kappa, epsilon), kappa))
    return results


def monte_carlo_coverage(
    pool: list[tuple[BoundTrace, GapSeries]],
    trials: int,
    c: int,
    alpha: float,
    epsilon: float,
    seed: int = 0,
    workers: int = 1,
) -> CoverageResult:
    """Resample c calibration traces plus one test trace per trial from a solved pool."""
    if trials < 1:
        raise ParamOutOfRange("trials must be at least 1")
    if len(pool) < c + 1:
        raise InsufficientPool(f"pool of {len(pool)} cannot supply c + 1 = {c + 1} traces")
    n = quantile_index(c, alpha)
    records = _replay_records(pool, epsilon)

    trial_ids = list(range(trials))
    if workers > 1:
        chunks = [trial_ids[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = [
                executor.submit(_coverage_trials, records, chunk, c, n, epsilon, seed)
                for chunk in chunks
            ]
            by_trial = {}
            for chunk, future in zip(chunks, futures):
                by_trial.update(zip(chunk, future.result()))
        results = [by_trial[t] for t in trial_ids]
    else:
        results = _coverage_trials(records, trial_ids, c, n, epsilon, seed)

    covered = np.asarray([r[0] for r in results], dtype=np.float64)
    mean = float(covered.mean())
    result = CoverageResult(
        mean_coverage=mean,
        stderr=math.sqrt(mean * (1.0 - mean) / trials),
        trials=trials,
        c=c,
        alpha=alpha,
        epsilon=epsilon,
        n=n,
        nominal_coverage=n / (c + 1),
        mean_kappa=float(np.mean([r[1] for r in results])),
    )
    logger.info(
        "coverage %.4f +- %.4f over %d trials (nominal %.4f)",
        result.mean_coverage, result.stderr, trials, result.nominal_coverage,
    )
    return result


def order_statistic_check(
    c: int, n: int, trials: int, seed: int = 0, rank_among_all: bool = False
) -> float:
    """Monte Carlo estimate of P[Z_{c+1} >= Z_[c+1-n]] for iid uniforms.

    By default Z_[k] orders the first c draws only, whose exact probability is
    n/(c+1). With ``rank_among_all`` the order statistic is taken over all c+1
    draws, the rank construction whose probability is (n+1)/(c+1).
    """
    if not 1 <= n <= c:
        raise ParamOutOfRange("n must lie in [1, c]")
    if trials < 1000:
        raise ParamOutOfRange("trials must be at least 1000")
    rng = np.random.default_rng(seed)
    draws = rng.random((trials, c + 1))
    pool = draws if rank_among_all else draws[:, :c]
    order_stat = np.sort(pool, axis=1)[:, c - n]
    probability = float(np.mean(draws[:, c] >= order_stat))

    below, above = n / (c + 1), (n + 1) / (c + 1)
    logger.info(
        "ordering check (c=%d, n=%d, all draws=%s): simulated %.4f; n/(c+1) = %.4f, (n+1)/(c+1) = %.4f",
        c, n, rank_among_all, probability, below, above,
    )
    claim = above if rank_among_all else below
    stderr = math.sqrt(max(probability * (1.0 - probability), 1e-12) / trials)
    if abs(probability - claim) > 3 * stderr:
        logger.warning(
            "ordering check (c=%d, n=%d): simulated %.4f, exact %.4f",
            c, n, probability, claim,
        )
    return probability


def lemma_ordering_check(c: int, n: int, trials: int, seed: int = 0) -> float:
    """Ordering probability with the test draw ranked among all c+1 draws; (n+1)/(c+1)."""
    return order_statistic_check(c, n, trials, seed=seed, rank_among_all=True)


def bound_consistency(
    pool: list[tuple[BoundTrace, GapSeries]],
    repetitions: int,
    c: int,
    test_size: int,
    alpha: float,
    epsilon: float,
    delta: float = 0.05,
    suboptimality_cap: float = 1.0,
    seed: int = 0,
) -> BoundConsistency:
    """How often the concentration calculators hold on resampled calibration/test splits."""
    if len(pool) < c + test_size:
        raise InsufficientPool(f"pool of {len(pool)} cannot supply {c + test_size} traces")
    records = _replay_records(pool, epsilon)
    n = quantile_index(c, alpha)
    floor = success_bound(alpha, c, delta)

    within_expected, within_success, test_means, bounds = 0, 0, [], []
    for repetition in range(repetitions):
        drawn = _trial_rng(seed, repetition).choice(len(records), size=c + test_size, replace=False)
        calibration = [records[i] for i in drawn[:c]]
        test = [records[i] for i in drawn[c:]]
        kappa = calibrate([r.score for r in calibration], c, alpha, epsilon).kappa
        mean_cal = float(np.mean([r.capped_suboptimality(kappa, suboptimality_cap) for r in calibration]))
        bound = expected_bound(mean_cal, suboptimality_cap, c, delta)
        test_mean = float(np.mean([r.capped_suboptimality(kappa, suboptimality_cap) for r in test]))
        coverage = float(np.mean([r.covered(kappa, epsilon) for r in test]))
        within_expected += test_mean <= bound
        within_success += coverage >= floor
        test_means.append(test_mean)
        bounds.append(bound)

    return BoundConsistency(
        repetitions=repetitions,
        c=c,
        delta=delta,
        fraction_within_expected_bound=within_expected / repetitions,
        fraction_within_success_bound=within_success / repetitions,
        mean_test_suboptimality=float(np.mean(test_means)),
        mean_expected_bound=float(np.mean(bounds)),
        success_bound=floor,
    )


def _method_columns(outcome: InstanceOutcome, method: str) -> tuple[int, int, float]:
    if method == "conformal":
        return outcome.stop_tick, outcome.stop_nodes, outcome.suboptimality
    if method == "deterministic":
        return outcome.deterministic_tick, outcome.deterministic_nodes, outcome.deterministic_suboptimality
    return (
        outcome.baseline_ticks[method],
        outcome.baseline_nodes[method],
        outcome.baseline_suboptimality[method],
    )


def solved_curve(
    report: EvaluationReport, budgets: list[int], tolerance: float | None = None
) -> list[dict[str, int]]:
    """Instances each method stops on within ``tolerance`` of z* inside every tick budget."""
    tolerance = 2 * report.epsilon if tolerance is None else tolerance
    rows = []
    for budget in budgets:
        row = {"budget": budget}
        for method in METHODS:
            row[method] = sum(
                1
                for outcome in report.per_instance
                if (columns := _method_columns(outcome, method))[0] <= budget
                and columns[2] <= tolerance
            )
        rows.append(row)
    return rows


def method_summary(report: EvaluationReport) -> list[MethodSummary]:
    rows = []
    for method in METHODS:
        ticks, nodes, subopt, speedup = [], [], [], []
        for outcome in report.per_instance:
            tick, node, s = _method_columns(outcome, method)
            ticks.append(float(tick))
            nodes.append(float(node))
            subopt.append(s)
            speedup.append((outcome.deterministic_tick - tick) / max(outcome.deterministic_tick, 1))
        correct = float(np.mean([s <= report.epsilon for s in subopt])) if subopt else 0.0
        rows.append(
            MethodSummary(
                method=method,
                ticks=format_mean_sd(ticks),
                suboptimality=format_mean_sd(subopt),
                nodes=format_mean_sd(nodes),
                correct=f"{100 * correct:.1f}%",
                speedup=format_mean_sd(speedup),
            )
        )
    return rows
