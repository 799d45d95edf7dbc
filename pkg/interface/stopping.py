from pydantic import BaseModel, Field, field_validator

from interface.trace import TraceSample


class StoppingQuery(BaseModel):
    # recent samples of a running solve, oldest first
    samples: list[TraceSample] = Field(min_length=1)
    theta_params: dict[str, float] = Field(default_factory=dict)

    @field_validator("samples")
    @classmethod
    def check_increasing(cls, samples: list[TraceSample]) -> list[TraceSample]:
        ticks = [sample.tick for sample in samples]
        if any(b <= a for a, b in zip(ticks, ticks[1:])):
            raise ValueError("sample ticks must be strictly increasing")
        return samples


class StoppingDecision(BaseModel):
    tick: int
    predicted_gap: float
    rolling_min_gap: float
    kappa: float
    epsilon: float
    alpha: float
    stop: bool
