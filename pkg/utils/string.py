import hashlib
import json
import math
from typing import Any

from pydantic import BaseModel


def encode_float(value: float) -> float | str:
    # JSON has no infinity literal; sentinels travel as reserved strings
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def decode_float(value: Any) -> Any:
    if value == "inf":
        return math.inf
    if value == "-inf":
        return -math.inf
    return value


def canonical_json(obj: Any) -> str:
    if isinstance(obj, BaseModel):
        obj = obj.model_dump(mode="json")
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def stable_hash(obj: Any, length: int = 16) -> str:
    digest = hashlib.sha256(canonical_json(obj).encode()).hexdigest()
    return digest[:length]


def combine_hashes(*hashes: str) -> str:
    return stable_hash(list(hashes))


def format_mean_sd(values: list[float], digits: int = 4) -> str:
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return "inf"
    mean = sum(finite) / len(finite)
    if len(finite) > 1:
        var = sum((v - mean) ** 2 for v in finite) / (len(finite) - 1)
    else:
        var = 0.0
    text = f"{mean:.{digits}g} ± {math.sqrt(var):.{digits}g}"
    if len(finite) < len(values):
        text += f" ({len(values) - len(finite)} inf)"
    return text
