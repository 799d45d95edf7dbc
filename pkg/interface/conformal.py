import math

from pydantic import BaseModel, Field, model_validator

from interface.instance import BoundFloat


class ConformalScore(BaseModel):
    instance_id: str = ""
    value: BoundFloat
    # true gap never reached epsilon inside the trace
    degenerate: bool = False


class CalibrationResult(BaseModel):
    kappa: BoundFloat
    epsilon: float = Field(gt=0.0)
    alpha: float = Field(gt=0.0, lt=1.0)
    c: int = Field(ge=1)
    n: int = Field(ge=1)
    scores: list[BoundFloat]
    dropped_count: int = 0
    config_hash: str = ""
    model_hash: str = ""
    calibration_mean_suboptimality: float | None = None
    calibration_mean_stop_tick: float | None = None
    max_stop_tick: int | None = None

    @model_validator(mode="after")
    def check_quantile(self) -> "CalibrationResult":
        if self.n > self.c:
            raise ValueError("n must not exceed c")
        if len(self.scores) != self.c:
            raise ValueError("one score per calibration trace")
        # (n+1)/(c+1) >= 1 - alpha, with float slack
        if (self.n + 1) / (self.c + 1) < 1 - self.alpha - 1e-12:
            raise ValueError("(n+1)/(c+1) must be at least 1 - alpha")
        return self

    @property
    def nominal_coverage(self) -> float:
        return self.n / (self.c + 1)

    @property
    def disables_predictor(self) -> bool:
        return self.kappa <= 0 and not math.isinf(self.kappa)
