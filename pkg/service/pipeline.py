import csv
import io
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from database.artifact import ArtifactStore, write_text
from database.instance import read_instance_set, write_instance_set
from database.trace import read_trace, trace_path, write_trace
from interface.conformal import CalibrationResult
from interface.error import MissingUpstream, StaleArtifact
from interface.evaluation import BoundConsistency, CoverageResult, EvaluationReport, MethodSummary
from interface.instance import InstanceManifest, MilpInstance, Split
from interface.pipeline import ChecksReport, OrderStatisticCheck, PipelineConfig
from interface.predictor import GapPredictorModel, LabeledTrace
from interface.trace import BnbConfig, BoundTrace, GapSeries, TraceStatus
from service.bnb_solver import solve
from service.conformal import calibrate_traces, expected_bound, success_bound
from service.evaluation import (
    METHODS,
    bound_consistency,
    evaluate,
    method_summary,
    monte_carlo_coverage,
    order_statistic_check,
    solved_curve,
)
from service.gap_predictor import build_batch, gradient_check, init_model, predict_series, train
from service.features import fit_norm
from service.instances import generate_family, instance_set_hash
from utils.string import combine_hashes, stable_hash

logger = logging.getLogger(__name__)

SPLITS = [Split.train, Split.calibration, Split.test]


def resolve_output_dir(config: PipelineConfig, override: str | None = None) -> Path:
    """Relative output dirs hang off STOPPING_OUTPUT_ROOT when it is set."""
    path = Path(override or config.output_dir)
    root = os.environ.get("STOPPING_OUTPUT_ROOT")
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _solve_instance(
    instance: MilpInstance, config: BnbConfig, trace_hash: str
) -> tuple[str, BoundTrace | None, str]:
    try:
        result = solve(instance, config)
        result.raise_for_status()
    except Exception as error:
        return instance.id, None, f"{type(error).__name__}: {error}"
    trace = result.trace.model_copy(update={"config_hash": trace_hash})
    return instance.id, trace, ""


def _csv(rows: list[dict], columns: list[str]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buffer.getvalue()


class ExperimentPipeline:
    def __init__(self, config: PipelineConfig, output_dir: str | Path | None = None):
        self.config = config
        self.store = ArtifactStore(output_dir or resolve_output_dir(config))

    # --- provenance -------------------------------------------------------

    def manifest_hash(self, split: Split) -> str:
        return stable_hash(
            {
                "family": self.config.family.family,
                "params": self.config.family.params.model_dump(mode="json"),
                "master_seed": self.config.master_seed,
                "split": split,
                "count": self.config.sizes.count(split),
            }
        )

    def trace_hash(self, split: Split) -> str:
        return combine_hashes(self.manifest_hash(split), stable_hash(self.config.bnb))

    def model_config_hash(self) -> str:
        return combine_hashes(
            self.trace_hash(Split.train),
            stable_hash(self.config.features),
            stable_hash(self.config.training),
            stable_hash(self.config.weight_floor),
        )

    def calibration_config_hash(self, model_hash: str) -> str:
        return combine_hashes(
            model_hash,
            self.trace_hash(Split.calibration),
            stable_hash(
                {
                    "alpha": self.config.alpha,
                    "epsilon": self.config.epsilon,
                    "cap": self.config.suboptimality_cap,
                }
            ),
        )

    def report_config_hash(self, calibration_hash: str) -> str:
        return combine_hashes(
            calibration_hash, self.trace_hash(Split.test), stable_hash(self.config.delta)
        )

    # --- loading ----------------------------------------------------------

    def load_instances(self, split: Split) -> list[MilpInstance]:
        instances, manifest = read_instance_set(self.store.instance_dir(split))
        if manifest.config_hash != self.manifest_hash(split):
            raise StaleArtifact(f"{split.value} instances were generated under another config")
        if manifest.content_hash and manifest.content_hash != instance_set_hash(instances):
            raise StaleArtifact(f"{split.value} instance files were modified after generation")
        return instances.instances

    def load_traces(self, split: Split) -> list[tuple[MilpInstance, BoundTrace]]:
        """Solved traces of ``split`` with a known optimum, in instance order."""
        expected = self.trace_hash(split)
        directory = self.store.trace_dir(split)
        pairs = []
        for instance in self.load_instances(split):
            path = trace_path(directory, instance.id)
            if not path.exists():
                logger.warning("no trace for %s; skipped", instance.id)
                continue
            trace = read_trace(path)
            if trace.config_hash != expected:
                raise StaleArtifact(f"{path} was solved under another config")
            if trace.z_star is None:
                logger.warning("%s has no proven optimum (%s); skipped", instance.id, trace.status.value)
                continue
            pairs.append((instance, trace))
        if not pairs:
            raise MissingUpstream(f"no solved {split.value} traces in {directory}; run solve first")
        return pairs

    def load_model(self) -> GapPredictorModel:
        model = self.store.read_model(ArtifactStore.MODEL, GapPredictorModel)
        if model.feature_config != self.config.features:
            raise StaleArtifact("model was trained under a different feature config")
        if model.config_hash != self.model_config_hash():
            raise StaleArtifact("model provenance does not match the training traces or config")
        return model

    def load_calibration(self, model: GapPredictorModel) -> CalibrationResult:
        calibration = self.store.read_model(ArtifactStore.CALIBRATION, CalibrationResult)
        model_hash = stable_hash(model)
        if calibration.model_hash != model_hash:
            raise StaleArtifact("calibration was computed for another model")
        if calibration.config_hash != self.calibration_config_hash(model_hash):
            raise StaleArtifact("calibration provenance does not match the config")
        return calibration

    def _predict(
        self, model: GapPredictorModel, pairs: list[tuple[MilpInstance, BoundTrace]]
    ) -> list[GapSeries]:
        return [predict_series(model, trace, instance.theta_params) for instance, trace in pairs]

    # --- commands ---------------------------------------------------------

    def gen(self) -> dict[Split, int]:
        written = {}
        for split in SPLITS:
            count = self.config.sizes.count(split)
            instances = generate_family(
                self.config.family.family,
                self.config.family.params,
                self.config.master_seed,
                count,
                split,
            )
            manifest = InstanceManifest(
                split=split,
                family=self.config.family.family,
                master_seed=self.config.master_seed,
                count=count,
                ids=[instance.id for instance in instances.instances],
                theta_seeds=[instance.theta_seed for instance in instances.instances],
                config_hash=self.manifest_hash(split),
                content_hash=instance_set_hash(instances),
            )
            write_instance_set(self.store.instance_dir(split), instances, manifest)
            written[split] = count
            logger.info("generated %d %s instances", count, split.value)
        return written

    def _needs_solve(self, path: Path, expected: str) -> bool:
        if not path.exists():
            return True
        try:
            trace = read_trace(path)
        except ValueError as error:
            logger.warning("corrupt trace %s (%s); re-solving", path, error)
            return True
        return trace.config_hash != expected

    def solve(self, splits: list[Split] | None = None) -> dict[Split, int]:
        solved = {}
        for split in splits or SPLITS:
            expected = self.trace_hash(split)
            directory = self.store.trace_dir(split)
            instances = self.load_instances(split)
            pending = [
                instance
                for instance in instances
                if self._needs_solve(trace_path(directory, instance.id), expected)
            ]
            if self.config.worker_count > 1 and len(pending) > 1:
                with ProcessPoolExecutor(max_workers=self.config.worker_count) as executor:
                    results = list(
                        executor.map(
                            _solve_instance,
                            pending,
                            [self.config.bnb] * len(pending),
                            [expected] * len(pending),
                        )
                    )
            else:
                results = [_solve_instance(i, self.config.bnb, expected) for i in pending]

            count = 0
            for instance_id, trace, failure in results:
                if trace is None:
                    logger.warning("solver failure on %s: %s; skipped", instance_id, failure)
                    continue
                if trace.status != TraceStatus.optimal_within_eps:
                    logger.warning("%s ended with %s", instance_id, trace.status.value)
                write_trace(directory, trace)
                count += 1
            solved[split] = count
            logger.info(
                "solved %d %s instances (%d up to date)", count, split.value, len(instances) - len(pending)
            )
        return solved

    def train(self) -> GapPredictorModel:
        pairs = self.load_traces(Split.train)
        dataset = [LabeledTrace(trace=trace, theta_params=instance.theta_params) for instance, trace in pairs]
        training = self.config.training.model_copy(update={"weight_floor": self.config.weight_floor})
        model = train(dataset, training, self.config.features)
        model = model.model_copy(update={"config_hash": self.model_config_hash()})
        self.store.write_model(ArtifactStore.MODEL, model)
        return model

    def calibrate(self) -> CalibrationResult:
        model = self.load_model()
        pairs = self.load_traces(Split.calibration)
        result = calibrate_traces(
            [trace for _, trace in pairs],
            self._predict(model, pairs),
            self.config.alpha,
            self.config.epsilon,
            self.config.suboptimality_cap,
        )
        model_hash = stable_hash(model)
        result = result.model_copy(
            update={
                "model_hash": model_hash,
                "config_hash": self.calibration_config_hash(model_hash),
            }
        )
        self.store.write_model(ArtifactStore.CALIBRATION, result)
        logger.info("kappa=%.6g (n=%d of c=%d)", result.kappa, result.n, result.c)
        return result

    def evaluate(self) -> EvaluationReport:
        model = self.load_model()
        calibration = self.load_calibration(model)
        pairs = self.load_traces(Split.test)
        predictions = {
            trace.instance_id: series
            for (_, trace), series in zip(pairs, self._predict(model, pairs))
        }
        report = evaluate(
            [trace for _, trace in pairs],
            predictions,
            calibration,
            delta=self.config.delta,
            suboptimality_cap=self.config.suboptimality_cap,
            epsilon=self.config.epsilon,
        )
        calibration_hash = stable_hash(calibration)
        report = report.model_copy(
            update={
                "calibration_hash": calibration_hash,
                "config_hash": self.report_config_hash(calibration_hash),
            }
        )
        self.store.write_model(ArtifactStore.REPORT, report)

        rows = [
            {
                "instance_id": o.instance_id,
                "stop_tick": o.stop_tick,
                "deterministic_tick": o.deterministic_tick,
                **{f"{name}_tick": tick for name, tick in o.baseline_ticks.items()},
                "stop_nodes": o.stop_nodes,
                "deterministic_nodes": o.deterministic_nodes,
                "suboptimality": o.suboptimality,
                "within_eps": o.within_eps,
            }
            for o in report.per_instance
        ]
        columns = list(rows[0]) if rows else ["instance_id"]
        write_text(self.store.path(ArtifactStore.PER_INSTANCE), _csv(rows, columns))

        horizon = max(max(o.deterministic_tick, *o.baseline_ticks.values()) for o in report.per_instance)
        budgets = sorted({int(b) for b in np.linspace(0, horizon, 41)})
        write_text(
            self.store.path(ArtifactStore.SOLVED_CURVE),
            _csv(solved_curve(report, budgets), ["budget", *METHODS]),
        )
        aggregates = report.aggregates
        logger.info(
            "coverage %.3f, mean stop %.1f ticks, relative speedup %.3f",
            aggregates.coverage, aggregates.mean_stop_tick, aggregates.relative_speedup,
        )
        return report

    def report(self) -> list[MethodSummary]:
        report = self.store.read_model(ArtifactStore.REPORT, EvaluationReport)
        if self.store.exists(ArtifactStore.CALIBRATION):
            calibration = self.store.read_model(ArtifactStore.CALIBRATION, CalibrationResult)
            if report.calibration_hash != stable_hash(calibration):
                raise StaleArtifact("report was produced from another calibration")
        rows = method_summary(report)
        write_text(
            self.store.path(ArtifactStore.SUMMARY),
            _csv([row.model_dump() for row in rows], list(MethodSummary.model_fields)),
        )
        return rows

    def coverage(self) -> tuple[CoverageResult, BoundConsistency]:
        model = self.load_model()
        pairs = self.load_traces(Split.calibration) + self.load_traces(Split.test)
        pool = [(trace, series) for (_, trace), series in zip(pairs, self._predict(model, pairs))]
        c = self.config.coverage_c or self.config.sizes.c
        result = monte_carlo_coverage(
            pool,
            self.config.coverage_trials,
            c,
            self.config.alpha,
            self.config.epsilon,
            seed=self.config.master_seed,
            workers=self.config.worker_count,
        )
        consistency = bound_consistency(
            pool,
            self.config.coverage_trials,
            c,
            max(1, min(self.config.sizes.l, len(pool) - c)),
            self.config.alpha,
            self.config.epsilon,
            delta=self.config.delta,
            suboptimality_cap=self.config.suboptimality_cap,
            seed=self.config.master_seed,
        )
        self.store.write_model(ArtifactStore.COVERAGE, result)
        self.store.write_model(ArtifactStore.BOUND_CONSISTENCY, consistency)
        return result, consistency

    def checks(self) -> ChecksReport:
        ordering = []
        for c, n, rank_among_all in [(9, 5, False), (9, 5, True), (9, 9, False), (1, 1, False)]:
            simulated = order_statistic_check(
                c, n, self.config.ordering_trials, seed=self.config.master_seed, rank_among_all=rank_among_all
            )
            claimed = (n + 1) / (c + 1)
            ordering.append(
                OrderStatisticCheck(
                    c=c,
                    n=n,
                    trials=self.config.ordering_trials,
                    rank_among_all=rank_among_all,
                    simulated=simulated,
                    exact=claimed if rank_among_all else n / (c + 1),
                    claimed=claimed,
                )
            )

        pairs = self.load_traces(Split.train)
        dataset = [LabeledTrace(trace=trace, theta_params=instance.theta_params) for instance, trace in pairs]
        batch = build_batch(dataset, self.config.features, self.config.training.stride, self.config.weight_floor)
        errors = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            rows = rng.choice(len(batch), size=min(64, len(batch)), replace=False)
            sample = batch.subset(rows)
            model = init_model(
                self.config.features, fit_norm(sample.features), self.config.training.hidden_sizes, seed
            )
            errors.append(gradient_check(model, sample, seed=seed))

        report = ChecksReport(
            ordering=ordering,
            gradient_max_relative_error=errors,
            expected_bound_reference=expected_bound(0.0, 1.0, 100, 0.05),
            success_bound_reference=success_bound(0.05, 100, 0.05),
        )
        self.store.write_model(ArtifactStore.CHECKS, report)
        return report


def cmd_gen(config: PipelineConfig, output_dir: str | None = None) -> dict[Split, int]:
    return ExperimentPipeline(config, resolve_output_dir(config, output_dir)).gen()


def cmd_solve(
    config: PipelineConfig, splits: list[Split] | None = None, output_dir: str | None = None
) -> dict[Split, int]:
    return ExperimentPipeline(config, resolve_output_dir(config, output_dir)).solve(splits)


def cmd_train(config: PipelineConfig, output_dir: str | None = None) -> GapPredictorModel:
    return ExperimentPipeline(config, resolve_output_dir(config, output_dir)).train()


def cmd_calibrate(config: PipelineConfig, output_dir: str | None = None) -> CalibrationResult:
    return ExperimentPipeline(config, resolve_output_dir(config, output_dir)).calibrate()


def cmd_evaluate(config: PipelineConfig, output_dir: str | None = None) -> EvaluationReport:
    return ExperimentPipeline(config, resolve_output_dir(config, output_dir)).evaluate()


def cmd_report(config: PipelineConfig, output_dir: str | None = None) -> list[MethodSummary]:
    return ExperimentPipeline(config, resolve_output_dir(config, output_dir)).report()


def cmd_coverage(
    config: PipelineConfig, output_dir: str | None = None
) -> tuple[CoverageResult, BoundConsistency]:
    return ExperimentPipeline(config, resolve_output_dir(config, output_dir)).coverage()


def cmd_checks(config: PipelineConfig, output_dir: str | None = None) -> ChecksReport:
    return ExperimentPipeline(config, resolve_output_dir(config, output_dir)).checks()
