import logging
import os
from pathlib import Path
from typing import TypeVar

from pydantic import BaseModel

from interface.error import MissingUpstream
from interface.instance import Split
from utils.string import canonical_json

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)


def write_text(path: Path, text: str) -> None:
    """Write through a temporary sibling so readers never see half a file."""
    path.parent.mkdir(parents=True, exist_ok=True)
    temporary = path.with_name(path.name + ".tmp")
    temporary.write_text(text, encoding="utf-8")
    os.replace(temporary, path)


class ArtifactStore:
    """Layout of one experiment's output directory."""

    MODEL = "model.json"
    CALIBRATION = "calibration.json"
    REPORT = "report.json"
    COVERAGE = "coverage.json"
    BOUND_CONSISTENCY = "bound_consistency.json"
    CHECKS = "checks.json"
    PER_INSTANCE = "per_instance.csv"
    SOLVED_CURVE = "solved_curve.csv"
    SUMMARY = "summary.csv"
    LOG = "pipeline.log"

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def path(self, name: str) -> Path:
        return self.root / name

    def instance_dir(self, split: Split) -> Path:
        return self.root / "instances" / split.value.lower()

    def trace_dir(self, split: Split) -> Path:
        return self.root / "traces" / split.value.lower()

    def write_model(self, name: str, model: BaseModel) -> Path:
        path = self.path(name)
        write_text(path, canonical_json(model) + "\n")
        logger.debug("wrote %s", path)
        return path

    def read_model(self, name: str, model_type: type[ModelT]) -> ModelT:
        path = self.path(name)
        if not path.exists():
            raise MissingUpstream(f"{path} does not exist")
        return model_type.model_validate_json(path.read_text(encoding="utf-8"))

    def exists(self, name: str) -> bool:
        return self.path(name).exists()
