import json
from pathlib import Path

import pytest

from app import cli
from database.artifact import ArtifactStore
from interface.error import MissingUpstream, StaleArtifact
from interface.instance import Split
from interface.pipeline import PipelineConfig
from service.evaluation import monte_carlo_coverage
from service.gap_predictor import predict_series
from service.pipeline import ExperimentPipeline, resolve_output_dir

SMOKE_CONFIG = Path(__file__).resolve().parent.parent / "config" / "knapsack_smoke.json"


def _config(output_dir) -> PipelineConfig:
    return PipelineConfig.model_validate(
        {
            "family": {"family": "Knapsack", "knapsack": {"n_items_min": 10, "n_items_max": 12}},
            "sizes": {"d": 4, "c": 4, "l": 4},
            "master_seed": 5,
            "training": {"epochs": 2, "batch_size": 64},
            "epsilon": 0.01,
            "alpha": 0.05,
            "coverage_trials": 5,
            "coverage_c": 3,
            "ordering_trials": 1000,
            "output_dir": str(output_dir),
            "worker_count": 1,
        }
    )


@pytest.fixture(scope="module")
def finished(tmp_path_factory):
    directory = tmp_path_factory.mktemp("run")
    runner = ExperimentPipeline(_config(directory), directory)
    runner.gen()
    runner.solve()
    runner.train()
    runner.calibrate()
    runner.evaluate()
    runner.report()
    runner.coverage()
    runner.checks()
    return runner


def test_pipeline_writes_every_artifact(finished):
    store = finished.store
    for name in [
        ArtifactStore.MODEL,
        ArtifactStore.CALIBRATION,
        ArtifactStore.REPORT,
        ArtifactStore.COVERAGE,
        ArtifactStore.BOUND_CONSISTENCY,
        ArtifactStore.CHECKS,
        ArtifactStore.PER_INSTANCE,
        ArtifactStore.SOLVED_CURVE,
        ArtifactStore.SUMMARY,
    ]:
        assert store.exists(name), name
    for split in Split:
        assert len(list(store.trace_dir(split).glob("*.jsonl"))) == 4


def test_calibration_provenance(finished):
    calibration = json.loads(finished.store.path(ArtifactStore.CALIBRATION).read_text())
    assert calibration["c"] == 4
    assert calibration["n"] == 4
    assert len(calibration["scores"]) == 4
    assert calibration["model_hash"]
    report = json.loads(finished.store.path(ArtifactStore.REPORT).read_text())
    assert report["kappa"] == calibration["kappa"]
    assert len(report["per_instance"]) == 4


def test_summary_table(finished):
    lines = finished.store.path(ArtifactStore.SUMMARY).read_text().splitlines()
    assert lines[0] == "method,ticks,suboptimality,nodes,correct,speedup"
    assert [line.split(",")[0] for line in lines[1:]] == ["conformal", "deterministic", "stop_at_1", "stop_at_3"]


def test_checks_report(finished):
    checks = json.loads(finished.store.path(ArtifactStore.CHECKS).read_text())
    assert len(checks["ordering"]) == 4
    assert len(checks["gradient_max_relative_error"]) == 10
    assert max(checks["gradient_max_relative_error"]) < 1e-4
    assert checks["expected_bound_reference"] == pytest.approx(0.35914, abs=1e-5)
    assert checks["success_bound_reference"] == pytest.approx(0.81419, abs=1e-5)


def test_reruns_are_byte_identical(finished):
    store = finished.store
    manifest = store.instance_dir(Split.test) / "manifest.json"
    before = {
        name: store.path(name).read_bytes()
        for name in [ArtifactStore.CALIBRATION, ArtifactStore.REPORT, ArtifactStore.SUMMARY]
    }
    before_manifest = manifest.read_bytes()

    finished.gen()
    assert finished.solve() == {Split.train: 0, Split.calibration: 0, Split.test: 0}
    finished.calibrate()
    finished.evaluate()
    finished.report()

    assert manifest.read_bytes() == before_manifest
    for name, content in before.items():
        assert store.path(name).read_bytes() == content, name


def test_second_run_is_byte_identical(finished, tmp_path):
    other = ExperimentPipeline(finished.config, tmp_path)
    other.gen()
    other.solve()
    other.train()
    other.calibrate()
    other.evaluate()
    for name in [ArtifactStore.MODEL, ArtifactStore.CALIBRATION, ArtifactStore.REPORT]:
        assert other.store.path(name).read_bytes() == finished.store.path(name).read_bytes(), name


def test_changed_config_is_stale(finished):
    changed = finished.config.model_copy(update={"alpha": 0.2})
    with pytest.raises(StaleArtifact):
        ExperimentPipeline(changed, finished.store.root).evaluate()


def test_missing_upstream(tmp_path):
    with pytest.raises(MissingUpstream):
        ExperimentPipeline(_config(tmp_path), tmp_path).train()


def test_output_root(monkeypatch, tmp_path):
    config = _config("runs/x")
    monkeypatch.setenv("STOPPING_OUTPUT_ROOT", str(tmp_path))
    assert resolve_output_dir(config) == tmp_path / "runs/x"
    assert resolve_output_dir(config, str(tmp_path / "elsewhere")) == tmp_path / "elsewhere"


def test_cli_exit_codes(monkeypatch, tmp_path):
    monkeypatch.delenv("STOPPING_OUTPUT_ROOT", raising=False)
    path = tmp_path / "config.json"
    path.write_text(_config(tmp_path / "out").model_dump_json())
    assert cli.main(["train", "--config", str(path)]) == cli.EXIT_MISSING_UPSTREAM
    assert cli.main(["gen", "--config", str(path)]) == cli.EXIT_OK
    assert (tmp_path / "out" / ArtifactStore.LOG).exists()

    broken = tmp_path / "broken.json"
    broken.write_text(json.dumps({"alpha": 2.0}))
    assert cli.main(["gen", "--config", str(broken)]) == cli.EXIT_VALIDATION


@pytest.fixture(scope="module")
def smoke(tmp_path_factory):
    config = PipelineConfig.model_validate_json(SMOKE_CONFIG.read_text())
    runner = ExperimentPipeline(config, tmp_path_factory.mktemp("smoke"))
    runner.gen()
    runner.solve()
    runner.train()
    runner.calibrate()
    return runner, runner.evaluate()


@pytest.mark.slow
def test_smoke_config_stops_before_proof(smoke):
    _, report = smoke
    for outcome in report.per_instance:
        assert outcome.stop_tick <= outcome.deterministic_tick
    assert report.aggregates.mean_tick_speedup > 0


@pytest.mark.slow
def test_trained_predictor_coverage(smoke):
    runner, _ = smoke
    model = runner.load_model()
    pairs = runner.load_traces(Split.calibration) + runner.load_traces(Split.test)
    pool = [(trace, predict_series(model, trace, instance.theta_params)) for instance, trace in pairs]
    result = monte_carlo_coverage(pool, trials=200, c=50, alpha=0.1, epsilon=0.001, seed=0)
    assert result.mean_coverage >= 0.9 - 3 * result.stderr
