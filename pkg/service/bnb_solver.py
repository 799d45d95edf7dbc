import heapq
import itertools
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from app.bitflag import TraceBitflag, TraceFlag
from interface.error import LpInfeasible, LpUnbounded, PivotLimitExceeded
from interface.instance import ConstraintSense, MilpInstance
from interface.trace import (
    BnbConfig,
    BoundTrace,
    Incumbent,
    NodeSelection,
    SolveResult,
    TickAction,
    TraceSample,
    TraceStatus,
)
from service.simplex import lp_relax
from utils.string import stable_hash
from utils.trace_math import clean_objective

logger = logging.getLogger(__name__)

TickCallback = Callable[[TraceSample], TickAction | None]

_FEASIBILITY_TOL = 1e-6
_INTEGRAL_BOUND_SLACK = 1e-6


def algorithmic_gap(upper: float, lower: float) -> float:
    """Relative gap (U - L) / |L|; +inf on sentinels or a zero lower bound."""
    if not (math.isfinite(upper) and math.isfinite(lower)):
        return math.inf
    if upper == lower:
        return 0.0
    if lower == 0:
        return math.inf
    return (upper - lower) / abs(lower)


@dataclass(order=True)
class _Node:
    bound: float
    order: int
    lower: np.ndarray = field(compare=False)
    upper: np.ndarray = field(compare=False)


class BranchAndBound:
    def __init__(
        self,
        instance: MilpInstance,
        config: BnbConfig,
        on_tick: TickCallback | None = None,
    ):
        self.instance = instance
        self.config = config
        self.on_tick = on_tick

        self.cost = instance.cost
        self.matrix = instance.matrix
        self.rhs = instance.rhs
        self.integer_mask = instance.integer_mask
        self.integer_index = np.flatnonzero(self.integer_mask)
        senses = np.asarray([s.value for s in instance.con_sense], dtype=str)
        self.le_rows = senses == ConstraintSense.le.value
        self.ge_rows = senses == ConstraintSense.ge.value
        self.eq_rows = senses == ConstraintSense.eq.value
        # integral costs on integer columns only: node bounds may be rounded up
        self.integral_objective = bool(
            np.all(self.cost[~self.integer_mask] == 0)
            and np.all(self.cost[self.integer_mask] == np.round(self.cost[self.integer_mask]))
        )

        self.open: list[_Node] = []
        self.unresolved: list[float] = []
        self.counter = itertools.count()
        self.samples: list[TraceSample] = []
        self.incumbents: list[Incumbent] = []
        self.upper = math.inf
        self.lower = -math.inf
        self.nodes = 0
        self.flags = TraceBitflag()
        self.stopped = False

    # --- bookkeeping ------------------------------------------------------

    def _open_bounds_min(self) -> float:
        if not self.open:
            return math.inf
        if self.config.node_selection == NodeSelection.best_bound:
            return self.open[0].bound
        return min(node.bound for node in self.open)

    def _refresh_lower(self, current: float | None = None) -> None:
        candidates = [self._open_bounds_min(), min(self.unresolved, default=math.inf)]
        if current is not None:
            candidates.append(current)
        lower = min(candidates)
        if math.isinf(lower) and lower > 0:
            # nothing left open
            if math.isinf(self.upper):
                return
            lower = self.upper
        self.lower = min(max(self.lower, lower), self.upper)

    def _emit(self) -> None:
        incumbent_id = len(self.incumbents) - 1 if self.incumbents else None
        sample = TraceSample(
            tick=len(self.samples),
            upper=self.upper,
            lower=self.lower,
            nodes_explored=self.nodes,
            incumbent_id=incumbent_id,
        )
        self.samples.append(sample)
        if self.on_tick is not None and self.on_tick(sample) == TickAction.stop:
            self.flags.add(TraceFlag.CALLBACK_STOP)
            self.stopped = True

    def _cutoff(self) -> float:
        if self.integral_objective or math.isinf(self.upper):
            return self.upper
        return self.upper - 1e-9 * max(1.0, abs(self.upper))

    def _strengthen(self, bound: float) -> float:
        if self.integral_objective:
            return float(math.ceil(bound - _INTEGRAL_BOUND_SLACK))
        return clean_objective(bound)

    def _push(self, bound: float, lower: np.ndarray, upper: np.ndarray) -> None:
        node = _Node(bound=bound, order=next(self.counter), lower=lower, upper=upper)
        if self.config.node_selection == NodeSelection.best_bound:
            heapq.heappush(self.open, node)
        else:
            self.open.append(node)

    def _pop(self) -> _Node:
        if self.config.node_selection == NodeSelection.best_bound:
            return heapq.heappop(self.open)
        return self.open.pop()

    # --- incumbents -------------------------------------------------------

    def _offer(self, solution: np.ndarray, current_bound: float) -> None:
        solution = solution.copy()
        solution[self.integer_mask] = np.round(solution[self.integer_mask])
        objective = clean_objective(float(self.cost @ solution))
        if objective >= self.upper:
            return
        self.upper = objective
        self.incumbents.append(
            Incumbent(
                tick=len(self.samples),
                objective=objective,
                solution=[float(v) for v in solution],
            )
        )
        self._refresh_lower(current_bound)
        self._emit()

    def _violation(self, activity: np.ndarray) -> np.ndarray:
        """Total constraint violation per column of ``activity`` (rows x candidates)."""
        excess = activity - self.rhs[:, None]
        total = np.maximum(excess[self.le_rows], 0.0).sum(axis=0)
        total += np.maximum(-excess[self.ge_rows], 0.0).sum(axis=0)
        total += np.abs(excess[self.eq_rows]).sum(axis=0)
        return total

    def _round_pure(self, x: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray | None:
        x = np.clip(np.round(x), lower, upper)
        activity = self.matrix @ x
        n = len(x)
        for _ in range(2 * n):
            current = float(self._violation(activity[:, None])[0])
            if current <= _FEASIBILITY_TOL:
                return x
            moves = []
            for step in (1.0, -1.0):
                allowed = (x + step >= lower) & (x + step <= upper)
                trial = activity[:, None] + step * self.matrix
                violation = np.where(allowed, self._violation(trial), np.inf)
                moves.append((violation, step * self.cost))
            violation = np.concatenate([moves[0][0], moves[1][0]])
            change = np.concatenate([moves[0][1], moves[1][1]])
            index = np.tile(np.arange(n), 2)
            best = np.lexsort((index, change, violation))[0]
            if violation[best] >= current:
                return None
            j, step = int(index[best]), (1.0 if best < n else -1.0)
            x[j] += step
            activity += step * self.matrix[:, j]
        if float(self._violation(activity[:, None])[0]) <= _FEASIBILITY_TOL:
            return x
        return None

    def _round_mixed(self, x: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray | None:
        ints = self.integer_mask
        for rounding in (np.round, np.ceil):
            fixed = np.clip(rounding(x[ints]), lower[ints], upper[ints])
            local_lower, local_upper = lower.copy(), upper.copy()
            local_lower[ints] = fixed
            local_upper[ints] = fixed
            try:
                lp = lp_relax(self.instance, local_lower, local_upper, self.config.lp_pivot_limit)
            except (LpInfeasible, PivotLimitExceeded):
                continue
            return np.asarray(lp.primal)
        return None

    def _rounding_heuristic(self, x: np.ndarray, node: _Node, bound: float) -> None:
        if self.integer_mask.all():
            candidate = self._round_pure(x, node.lower, node.upper)
        else:
            candidate = self._round_mixed(x, node.lower, node.upper)
        if candidate is not None:
            self._offer(candidate, bound)

    # --- search -----------------------------------------------------------

    def _most_fractional(self, x: np.ndarray) -> int | None:
        values = x[self.integer_index]
        fraction = values - np.floor(values)
        score = np.minimum(fraction, 1.0 - fraction)
        if score.max(initial=0.0) <= self.config.integrality_tol:
            return None
        # argmax keeps the smallest index on ties
        return int(self.integer_index[int(np.argmax(score))])

    def _process(self, node: _Node) -> TraceStatus | None:
        try:
            lp = lp_relax(self.instance, node.lower, node.upper, self.config.lp_pivot_limit)
        except LpInfeasible:
            self.nodes += 1
            self._refresh_lower()
            self._emit()
            return None
        except LpUnbounded:
            self.nodes += 1
            self._emit()
            return TraceStatus.unbounded
        except PivotLimitExceeded:
            logger.warning("pivot limit hit on %s; node bound kept open", self.instance.id)
            self.flags.add(TraceFlag.PIVOT_LIMIT)
            self.unresolved.append(node.bound)
            self.nodes += 1
            self._refresh_lower()
            self._emit()
            return None

        self.nodes += 1
        bound = self._strengthen(lp.objective)
        x = np.asarray(lp.primal)
        if bound < self._cutoff():
            branch_on = self._most_fractional(x)
            if branch_on is None:
                self._offer(x, bound)
            else:
                if self.config.rounding_heuristic_enabled:
                    self._rounding_heuristic(x, node, bound)
                    if self.stopped:
                        return None
                if bound < self._cutoff():
                    value = x[branch_on]
                    down_upper = node.upper.copy()
                    down_upper[branch_on] = math.floor(value)
                    up_lower = node.lower.copy()
                    up_lower[branch_on] = math.ceil(value)
                    self._push(bound, node.lower.copy(), down_upper)
                    self._push(bound, up_lower, node.upper.copy())
        if self.stopped:
            return None
        self._refresh_lower()
        self._emit()
        return None

    def run(self) -> SolveResult:
        self._push(-math.inf, self.instance.lower.copy(), self.instance.upper.copy())
        status: TraceStatus | None = None
        while self.open and not self.stopped:
            if self.nodes >= self.config.tick_limit:
                self.flags.add(TraceFlag.TICK_LIMIT)
                break
            node = self._pop()
            if node.bound >= self._cutoff():
                continue
            status = self._process(node)
            if status is not None:
                break
            if algorithmic_gap(self.upper, self.lower) <= self.config.epsilon:
                status = TraceStatus.optimal_within_eps
                break

        if status is None and not self.stopped:
            self._refresh_lower()
            if not self.open and not self.unresolved:
                status = (
                    TraceStatus.infeasible if math.isinf(self.upper)
                    else TraceStatus.optimal_within_eps
                )
            elif algorithmic_gap(self.upper, self.lower) <= self.config.epsilon:
                status = TraceStatus.optimal_within_eps
            if not self.samples or (
                (self.samples[-1].upper, self.samples[-1].lower) != (self.upper, self.lower)
            ):
                self._emit()
        if status is None or self.stopped:
            status = TraceStatus.tick_limit

        z_star = None
        if status == TraceStatus.optimal_within_eps and self.upper == self.lower:
            z_star = self.upper
        trace = BoundTrace(
            instance_id=self.instance.id,
            samples=self.samples,
            incumbents=self.incumbents,
            status=status,
            z_star=z_star,
            flags=self.flags.zip(),
            config_hash=stable_hash(self.config),
        )
        logger.debug(
            "%s: %s after %d nodes, U=%s L=%s",
            self.instance.id, status.value, self.nodes, self.upper, self.lower,
        )
        best = self.incumbents[-1] if self.incumbents else None
        return SolveResult(
            trace=trace,
            best_solution=best.solution if best else None,
            best_objective=best.objective if best else None,
        )


def solve(
    instance: MilpInstance,
    config: BnbConfig | None = None,
    on_tick: TickCallback | None = None,
) -> SolveResult:
    """Branch-and-bound with a trace sample per processed node and per new incumbent.

    Never raises on Infeasible, Unbounded or a tick limit; the outcome is the
    trace status (see ``SolveResult.raise_for_status``).
    """
    return BranchAndBound(instance, config or BnbConfig(), on_tick).run()
