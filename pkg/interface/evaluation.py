from pydantic import BaseModel, Field

from interface.instance import BoundFloat


class InstanceOutcome(BaseModel):
    instance_id: str
    stop_tick: int
    deterministic_tick: int
    baseline_ticks: dict[str, int] = Field(default_factory=dict)
    stop_nodes: int = 0
    deterministic_nodes: int = 0
    baseline_nodes: dict[str, int] = Field(default_factory=dict)
    suboptimality: BoundFloat
    deterministic_suboptimality: BoundFloat = 0.0
    baseline_suboptimality: dict[str, BoundFloat] = Field(default_factory=dict)
    within_eps: bool


class EvaluationAggregates(BaseModel):
    mean_suboptimality: float
    infinite_count: int = 0
    mean_stop_tick: float
    coverage: float
    mean_tick_speedup: float
    relative_speedup: float
    mean_node_speedup: float
    expected_suboptimality_bound: float
    expected_stop_tick_bound: float
    success_probability_bound: float


class EvaluationReport(BaseModel):
    per_instance: list[InstanceOutcome]
    aggregates: EvaluationAggregates
    kappa: BoundFloat
    epsilon: float
    alpha: float
    delta: float
    c: int
    n: int
    suboptimality_cap: float
    calibration_hash: str = ""
    config_hash: str = ""


class MethodSummary(BaseModel):
    method: str
    ticks: str
    suboptimality: str
    nodes: str
    correct: str
    speedup: str


class CoverageResult(BaseModel):
    mean_coverage: float
    stderr: float
    trials: int
    c: int
    alpha: float
    epsilon: float
    n: int
    nominal_coverage: float
    mean_kappa: float = 0.0


class BoundConsistency(BaseModel):
    repetitions: int
    c: int
    delta: float
    fraction_within_expected_bound: float
    fraction_within_success_bound: float
    mean_test_suboptimality: float
    mean_expected_bound: float
    success_bound: float
