import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from interface.trace import BoundTrace


class FeatureConfig(BaseModel):
    # rolling windows are tick counts, standing in for the 1/3/5 second windows
    windows: tuple[int, int, int] = (5, 25, 100)
    theta_keys: list[str] = Field(default_factory=list)
    # no-incumbent upper bound := root bound + sentinel_span * max(1, |root bound|)
    sentinel_span: float = Field(default=1.0, gt=0.0)

    @field_validator("windows")
    @classmethod
    def check_windows(cls, windows: tuple[int, int, int]) -> tuple[int, int, int]:
        if any(w < 1 for w in windows):
            raise ValueError("windows must be positive tick counts")
        return windows

    @property
    def feature_names(self) -> list[str]:
        names = ["upper", "lower"]
        for window in self.windows:
            names += [f"upper_avg_{window}", f"lower_avg_{window}"]
        names += [
            "tick",
            "nodes_explored",
            "no_incumbent",
            "relative_gap",
            "incumbent_count",
            "ticks_since_incumbent",
        ]
        names += [f"theta_{key}" for key in self.theta_keys]
        return names

    @property
    def dimension(self) -> int:
        return len(self.feature_names)


class FeatureVector(BaseModel):
    upper: float
    lower: float
    upper_avg: list[float]
    lower_avg: list[float]
    tick: float
    nodes_explored: float
    no_incumbent: float
    relative_gap: float
    incumbent_count: float
    ticks_since_incumbent: float
    theta_features: list[float]
    normalized: bool = False

    def as_array(self) -> np.ndarray:
        head = [self.upper, self.lower]
        for upper, lower in zip(self.upper_avg, self.lower_avg):
            head += [upper, lower]
        head += [
            self.tick,
            self.nodes_explored,
            self.no_incumbent,
            self.relative_gap,
            self.incumbent_count,
            self.ticks_since_incumbent,
        ]
        return np.asarray(head + list(self.theta_features), dtype=np.float64)

    @classmethod
    def from_array(cls, row: np.ndarray, num_windows: int, normalized: bool) -> "FeatureVector":
        row = [float(v) for v in row]
        averages = row[2 : 2 + 2 * num_windows]
        rest = row[2 + 2 * num_windows :]
        return cls(
            upper=row[0],
            lower=row[1],
            upper_avg=averages[0::2],
            lower_avg=averages[1::2],
            tick=rest[0],
            nodes_explored=rest[1],
            no_incumbent=rest[2],
            relative_gap=rest[3],
            incumbent_count=rest[4],
            ticks_since_incumbent=rest[5],
            theta_features=rest[6:],
            normalized=normalized,
        )


class FeatureNorm(BaseModel):
    mean: list[float]
    std: list[float]

    @field_validator("std")
    @classmethod
    def check_std(cls, std: list[float]) -> list[float]:
        if any(s <= 0 for s in std):
            raise ValueError("feature std must be positive")
        return std

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (features - np.asarray(self.mean)) / np.asarray(self.std)


class TrainingConfig(BaseModel):
    step_size: float = Field(default=1e-3, gt=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    batch_size: int = Field(default=256, ge=1)
    epochs: int = Field(default=60, ge=0)
    # None means epsilon / 10 of the pipeline
    weight_floor: float | None = Field(default=None, gt=0.0)
    stride: int = Field(default=1, ge=1)
    hidden_sizes: list[int] = Field(default_factory=lambda: [64, 64])
    validation_fraction: float = Field(default=0.2, ge=0.0, lt=1.0)
    seed: int = 0


class TrainingHistory(BaseModel):
    train_loss: list[float] = Field(default_factory=list)
    validation_loss: list[float] = Field(default_factory=list)
    best_epoch: int = 0


class GapPredictorModel(BaseModel):
    layer_sizes: list[int]
    weights: list[list[list[float]]]
    biases: list[list[float]]
    activation: str = "relu"
    feature_config: FeatureConfig
    feature_norm: FeatureNorm
    rng_seed: int = 0
    config_hash: str = ""
    history: TrainingHistory = Field(default_factory=TrainingHistory)

    @model_validator(mode="after")
    def check_layers(self) -> "GapPredictorModel":
        if self.layer_sizes[-1] != 1:
            raise ValueError("output dimension must be 1")
        if len(self.weights) != len(self.layer_sizes) - 1:
            raise ValueError("one weight matrix per layer transition")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if len(w) != self.layer_sizes[k] or len(b) != self.layer_sizes[k + 1]:
                raise ValueError(f"layer {k} has inconsistent shape")
        if len(self.feature_norm.mean) != self.layer_sizes[0]:
            raise ValueError("feature normalization does not match input size")
        return self

    def parameters(self) -> list[np.ndarray]:
        params: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            params.append(np.asarray(w, dtype=np.float64))
            params.append(np.asarray(b, dtype=np.float64))
        return params

    def with_parameters(self, params: list[np.ndarray]) -> "GapPredictorModel":
        return self.model_copy(
            update={
                "weights": [p.tolist() for p in params[0::2]],
                "biases": [p.tolist() for p in params[1::2]],
            }
        )


class LabeledTrace(BaseModel):
    """A solved trace together with the instance parameters it was solved for."""

    trace: BoundTrace
    theta_params: dict[str, float] = Field(default_factory=dict)
