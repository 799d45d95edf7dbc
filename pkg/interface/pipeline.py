import os

from pydantic import BaseModel, Field, model_validator

from interface.instance import (
    THETA_KEYS,
    CflpParams,
    Family,
    KnapsackParams,
    SetCoverParams,
    Split,
)
from interface.predictor import FeatureConfig, TrainingConfig
from interface.trace import BnbConfig


class FamilySpec(BaseModel):
    family: Family = Family.knapsack
    knapsack: KnapsackParams = Field(default_factory=KnapsackParams)
    set_cover: SetCoverParams = Field(default_factory=SetCoverParams)
    cflp: CflpParams = Field(default_factory=CflpParams)

    @property
    def params(self) -> KnapsackParams | SetCoverParams | CflpParams:
        return {
            Family.knapsack: self.knapsack,
            Family.set_cover: self.set_cover,
            Family.cflp_small: self.cflp,
        }[self.family]


class SplitSizes(BaseModel):
    d: int = Field(default=200, ge=1)
    c: int = Field(default=50, ge=1)
    l: int = Field(default=50, ge=1)

    def count(self, split: Split) -> int:
        return {Split.train: self.d, Split.calibration: self.c, Split.test: self.l}[split]


def default_workers() -> int:
    return int(os.environ.get("STOPPING_WORKERS", "1"))


class PipelineConfig(BaseModel):
    family: FamilySpec = Field(default_factory=FamilySpec)
    sizes: SplitSizes = Field(default_factory=SplitSizes)
    master_seed: int = 0
    # ground-truth solves close the gap completely so z* is known
    bnb: BnbConfig = Field(default_factory=lambda: BnbConfig(epsilon=0.0))
    features: FeatureConfig = Field(default_factory=FeatureConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    epsilon: float = Field(default=1e-3, gt=0.0)
    alpha: float = Field(default=0.05, gt=0.0, lt=1.0)
    delta: float = Field(default=0.05, gt=0.0, lt=1.0)
    suboptimality_cap: float = Field(default=1.0, gt=0.0)
    coverage_trials: int = Field(default=200, ge=1)
    coverage_c: int | None = Field(default=None, ge=1)
    ordering_trials: int = Field(default=100_000, ge=1000)
    output_dir: str = "runs/default"
    worker_count: int = Field(default_factory=default_workers, ge=1)

    @model_validator(mode="after")
    def default_theta_keys(self) -> "PipelineConfig":
        if not self.features.theta_keys:
            self.features.theta_keys = list(THETA_KEYS[self.family.family])
        return self

    @property
    def weight_floor(self) -> float:
        if self.training.weight_floor is not None:
            return self.training.weight_floor
        return self.epsilon / 10


class OrderStatisticCheck(BaseModel):
    c: int
    n: int
    trials: int
    rank_among_all: bool
    simulated: float
    exact: float
    claimed: float


class ChecksReport(BaseModel):
    ordering: list[OrderStatisticCheck]
    gradient_max_relative_error: list[float]
    expected_bound_reference: float
    success_bound_reference: float
