from enum import Enum
from typing import Annotated

import numpy as np
from pydantic import BaseModel, BeforeValidator, Field, PlainSerializer, model_validator

from utils.string import decode_float, encode_float

# bounds may be infinite; on disk they are stored as "inf"/"-inf"
BoundFloat = Annotated[
    float,
    BeforeValidator(decode_float),
    PlainSerializer(encode_float, when_used="json"),
]


class Family(str, Enum):
    knapsack = "Knapsack"
    set_cover = "SetCover"
    cflp_small = "CFLPSmall"


class ConstraintSense(str, Enum):
    le = "LE"
    ge = "GE"
    eq = "EQ"


class Split(str, Enum):
    train = "Train"
    calibration = "Calibration"
    test = "Test"


SPLIT_INDEX = {Split.train: 0, Split.calibration: 1, Split.test: 2}

# theta entries exposed to featurization, per family
THETA_KEYS: dict[Family, list[str]] = {
    Family.knapsack: [
        "n_items",
        "num_constraints",
        "capacity_ratio",
        "mean_weight",
        "mean_value",
    ],
    Family.set_cover: ["universe_size", "num_sets", "density", "mean_cost"],
    Family.cflp_small: [
        "num_facilities",
        "num_customers",
        "capacity_ratio",
        "mean_fixed_cost",
        "mean_unit_cost",
    ],
}


class KnapsackParams(BaseModel):
    n_items_min: int = 12
    n_items_max: int = 20
    num_constraints: int = 2
    max_weight: int = 30
    max_value: int = 30
    capacity_ratio: float = 0.5
    # explicit data, bypasses random draws (and the size range checks)
    values: list[float] | None = None
    weights: list[list[float]] | None = None
    capacities: list[float] | None = None


class SetCoverParams(BaseModel):
    universe_size: int = 20
    num_sets: int = 15
    min_set_size: int = 2
    max_set_size: int = 6
    max_cost: int = 50


class CflpParams(BaseModel):
    num_facilities: int = 5
    num_customers: int = 10
    max_demand: int = 20
    max_fixed_cost: int = 300
    max_unit_cost: int = 20
    capacity_ratio: float = 1.5


class MilpInstance(BaseModel):
    id: str
    family: Family
    num_vars: int
    num_cons: int
    objective: list[float]
    con_matrix: list[list[float]]
    con_rhs: list[float]
    con_sense: list[ConstraintSense]
    var_lower: list[BoundFloat]
    var_upper: list[BoundFloat]
    is_integer: list[bool]
    theta_seed: int
    theta_params: dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def check_shape(self) -> "MilpInstance":
        if len(self.objective) != self.num_vars:
            raise ValueError("objective length must equal num_vars")
        if len(self.con_matrix) != self.num_cons or len(self.con_rhs) != self.num_cons:
            raise ValueError("constraint rows must equal num_cons")
        if len(self.con_sense) != self.num_cons:
            raise ValueError("con_sense length must equal num_cons")
        if any(len(row) != self.num_vars for row in self.con_matrix):
            raise ValueError("every constraint row needs num_vars columns")
        if len(self.var_lower) != self.num_vars or len(self.var_upper) != self.num_vars:
            raise ValueError("variable bounds must have num_vars entries")
        if len(self.is_integer) != self.num_vars:
            raise ValueError("is_integer must have num_vars entries")
        if any(lo > up for lo, up in zip(self.var_lower, self.var_upper)):
            raise ValueError("var_lower must not exceed var_upper")
        return self

    @property
    def cost(self) -> np.ndarray:
        return np.asarray(self.objective, dtype=np.float64)

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.con_matrix, dtype=np.float64).reshape(
            self.num_cons, self.num_vars
        )

    @property
    def rhs(self) -> np.ndarray:
        return np.asarray(self.con_rhs, dtype=np.float64)

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.var_lower, dtype=np.float64)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.var_upper, dtype=np.float64)

    @property
    def integer_mask(self) -> np.ndarray:
        return np.asarray(self.is_integer, dtype=bool)

    @property
    def num_integer(self) -> int:
        return int(sum(self.is_integer))


class InstanceSet(BaseModel):
    split: Split
    instances: list[MilpInstance]
    master_seed: int

    @model_validator(mode="after")
    def check_unique_ids(self) -> "InstanceSet":
        ids = [instance.id for instance in self.instances]
        if len(ids) != len(set(ids)):
            raise ValueError("instance ids must be unique")
        return self


class InstanceManifest(BaseModel):
    split: Split
    family: Family
    master_seed: int
    count: int
    ids: list[str]
    theta_seeds: list[int]
    config_hash: str
    content_hash: str = ""
