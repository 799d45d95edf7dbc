import math
from enum import Enum

import numpy as np
from pydantic import BaseModel, Field, model_validator

from interface.error import SolverInfeasible, SolverUnbounded
from interface.instance import BoundFloat


class NodeSelection(str, Enum):
    best_bound = "BestBound"
    depth_first = "DepthFirst"


class Branching(str, Enum):
    most_fractional = "MostFractional"


class PivotRule(str, Enum):
    bland = "Bland"


class BnbConfig(BaseModel):
    # 0 means "solve to proven optimality"
    epsilon: float = Field(default=1e-3, ge=0.0)
    tick_limit: int = Field(default=2_000_000, ge=1)
    node_selection: NodeSelection = NodeSelection.best_bound
    branching: Branching = Branching.most_fractional
    integrality_tol: float = Field(default=1e-6, gt=0.0, lt=0.5)
    lp_pivot_rule: PivotRule = PivotRule.bland
    lp_pivot_limit: int = Field(default=10_000, ge=1)
    rounding_heuristic_enabled: bool = True


class TickAction(str, Enum):
    proceed = "Continue"
    stop = "Stop"


class TraceStatus(str, Enum):
    optimal_within_eps = "OptimalWithinEps"
    tick_limit = "TickLimit"
    infeasible = "Infeasible"
    unbounded = "Unbounded"


class TraceSample(BaseModel):
    tick: int = Field(ge=0)
    upper: BoundFloat = math.inf
    lower: BoundFloat = -math.inf
    nodes_explored: int = 0
    incumbent_id: int | None = None

    @model_validator(mode="after")
    def check_bounds(self) -> "TraceSample":
        if math.isfinite(self.upper) and math.isfinite(self.lower):
            if self.lower > self.upper:
                raise ValueError("lower bound exceeds upper bound")
        return self


class Incumbent(BaseModel):
    tick: int
    objective: float
    solution: list[float]


class BoundTrace(BaseModel):
    instance_id: str
    samples: list[TraceSample] = Field(default_factory=list)
    incumbents: list[Incumbent] = Field(default_factory=list)
    status: TraceStatus = TraceStatus.tick_limit
    z_star: float | None = None
    flags: int = 0
    config_hash: str = ""

    @property
    def ticks(self) -> np.ndarray:
        return np.fromiter((s.tick for s in self.samples), dtype=np.int64)

    @property
    def uppers(self) -> np.ndarray:
        return np.fromiter((s.upper for s in self.samples), dtype=np.float64)

    @property
    def lowers(self) -> np.ndarray:
        return np.fromiter((s.lower for s in self.samples), dtype=np.float64)

    @property
    def nodes(self) -> np.ndarray:
        return np.fromiter((s.nodes_explored for s in self.samples), dtype=np.int64)

    @property
    def terminal_tick(self) -> int:
        return self.samples[-1].tick

    def index_of(self, tick: int) -> int | None:
        # ticks are strictly increasing
        position = int(np.searchsorted(self.ticks, tick))
        if position < len(self.samples) and self.samples[position].tick == tick:
            return position
        return None

    def sample_at(self, tick: int) -> TraceSample:
        """Solver state holding at ``tick`` (last sample at or before it)."""
        position = int(np.searchsorted(self.ticks, tick, side="right")) - 1
        return self.samples[max(position, 0)]


class SolveResult(BaseModel):
    trace: BoundTrace
    best_solution: list[float] | None = None
    best_objective: float | None = None

    def raise_for_status(self) -> None:
        if self.trace.status == TraceStatus.infeasible:
            raise SolverInfeasible(self.trace.instance_id)
        if self.trace.status == TraceStatus.unbounded:
            raise SolverUnbounded(self.trace.instance_id)


class LpSolution(BaseModel):
    objective: float
    primal: list[float]
    pivots: int = 0


class StopSentinel(Enum):
    beyond_trace = "BeyondTrace"


BEYOND_TRACE = StopSentinel.beyond_trace

StopTick = int | StopSentinel


class GapSeries(BaseModel):
    ticks: list[int]
    values: list[BoundFloat]
    terminal_tick: int

    @model_validator(mode="after")
    def check_lengths(self) -> "GapSeries":
        if len(self.ticks) != len(self.values):
            raise ValueError("ticks and values must have the same length")
        return self

    @property
    def tick_array(self) -> np.ndarray:
        return np.asarray(self.ticks, dtype=np.int64)

    @property
    def value_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    @classmethod
    def from_arrays(
        cls, ticks: np.ndarray, values: np.ndarray, terminal_tick: int | None = None
    ) -> "GapSeries":
        ticks = [int(t) for t in ticks]
        return cls(
            ticks=ticks,
            values=[float(v) for v in values],
            terminal_tick=ticks[-1] if terminal_tick is None else terminal_tick,
        )
