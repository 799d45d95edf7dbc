import argparse
import logging
import sys
from pathlib import Path

from dotenv import load_dotenv
from pydantic import ValidationError

from interface.error import MissingUpstream, StaleArtifact
from interface.instance import Split
from interface.pipeline import PipelineConfig
from service import pipeline
from database.artifact import ArtifactStore

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_MISSING_UPSTREAM = 3

logger = logging.getLogger("stopping")

COMMANDS = ["gen", "solve", "train", "calibrate", "evaluate", "report", "coverage", "checks", "serve"]
_installed: list[logging.Handler] = []


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stopping",
        description="Conformal early stopping for branch-and-bound solves",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, help="experiment config (JSON)")
    parser.add_argument("--output-dir", type=str, default=None, help="override config output_dir")
    parser.add_argument("--workers", type=int, default=None, help="override worker_count")
    parser.add_argument(
        "--split",
        choices=[split.value.lower() for split in Split],
        action="append",
        help="solve only these splits (repeatable)",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def load_config(path: Path | None, workers: int | None = None) -> PipelineConfig:
    if path is None:
        config = PipelineConfig()
    else:
        config = PipelineConfig.model_validate_json(path.read_text(encoding="utf-8"))
    if workers is not None:
        config = PipelineConfig.model_validate({**config.model_dump(), "worker_count": workers})
    return config


def configure_logging(output_dir: Path, verbose: bool) -> None:
    """Console plus a timestamped sidecar log; artifacts themselves carry no timestamps."""
    output_dir.mkdir(parents=True, exist_ok=True)
    level = logging.DEBUG if verbose else logging.INFO
    console = logging.StreamHandler()
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    sidecar = logging.FileHandler(output_dir / ArtifactStore.LOG, encoding="utf-8")
    sidecar.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.setLevel(level)
    while _installed:
        handler = _installed.pop()
        root.removeHandler(handler)
        handler.close()
    for handler in (console, sidecar):
        root.addHandler(handler)
        _installed.append(handler)
    logging.getLogger("uvicorn.access").setLevel(logging.WARNING)


def run(args: argparse.Namespace) -> None:
    if args.command == "serve":
        from app.server import run as serve

        serve()
        return

    config = load_config(args.config, args.workers)
    output_dir = pipeline.resolve_output_dir(config, args.output_dir)
    configure_logging(output_dir, args.verbose)
    runner = pipeline.ExperimentPipeline(config, output_dir)

    if args.command == "gen":
        runner.gen()
    elif args.command == "solve":
        splits = None
        if args.split:
            splits = [next(s for s in Split if s.value.lower() == name) for name in args.split]
        runner.solve(splits)
    elif args.command == "train":
        runner.train()
    elif args.command == "calibrate":
        runner.calibrate()
    elif args.command == "evaluate":
        runner.evaluate()
    elif args.command == "report":
        for row in runner.report():
            print(" | ".join([row.method, row.ticks, row.suboptimality, row.nodes, row.correct, row.speedup]))
    elif args.command == "coverage":
        coverage, consistency = runner.coverage()
        print(f"coverage {coverage.mean_coverage:.4f} ± {coverage.stderr:.4f} (nominal {coverage.nominal_coverage:.4f})")
        print(f"expected-bound hold rate {consistency.fraction_within_expected_bound:.3f}")
    elif args.command == "checks":
        checks = runner.checks()
        for check in checks.ordering:
            print(f"ordering c={check.c} n={check.n} all={check.rank_among_all}: {check.simulated:.4f} (exact {check.exact:.4f})")
        print(f"gradient check max relative error {max(checks.gradient_max_relative_error):.3g}")


def main(argv: list[str] | None = None) -> int:
    load_dotenv(verbose=True)
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except (MissingUpstream, StaleArtifact) as error:
        logger.error("%s: %s", type(error).__name__, error)
        return EXIT_MISSING_UPSTREAM
    except (ValidationError, ValueError, OSError) as error:
        logger.error("%s: %s", type(error).__name__, error)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
