import json
from pathlib import Path

from pydantic import BaseModel, Field

from database.artifact import write_text
from interface.trace import BoundTrace, Incumbent, TraceSample, TraceStatus
from utils.string import canonical_json


class TraceHeader(BaseModel):
    instance_id: str
    config_hash: str
    status: TraceStatus
    z_star: float | None = None
    flags: int = 0
    incumbents: list[Incumbent] = Field(default_factory=list)
    sample_count: int


def trace_path(directory: Path, instance_id: str) -> Path:
    return directory / f"{instance_id}.jsonl"


def write_trace(directory: Path, trace: BoundTrace) -> Path:
    """Header line, then one TraceSample per line."""
    header = TraceHeader(
        instance_id=trace.instance_id,
        config_hash=trace.config_hash,
        status=trace.status,
        z_star=trace.z_star,
        flags=trace.flags,
        incumbents=trace.incumbents,
        sample_count=len(trace.samples),
    )
    lines = [canonical_json(header)] + [canonical_json(sample) for sample in trace.samples]
    path = trace_path(directory, trace.instance_id)
    write_text(path, "\n".join(lines) + "\n")
    return path


def read_trace(path: Path) -> BoundTrace:
    """Raises ValueError on a truncated or corrupt file."""
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path} is empty")
    header = TraceHeader.model_validate(json.loads(lines[0]))
    samples = [TraceSample.model_validate(json.loads(line)) for line in lines[1:]]
    if len(samples) != header.sample_count or not samples:
        raise ValueError(f"{path} holds {len(samples)} of {header.sample_count} samples")
    return BoundTrace(
        instance_id=header.instance_id,
        samples=samples,
        incumbents=header.incumbents,
        status=header.status,
        z_star=header.z_star,
        flags=header.flags,
        config_hash=header.config_hash,
    )
