import logging

import numpy as np

from interface.error import LpInfeasible, LpUnbounded, PivotLimitExceeded
from interface.instance import ConstraintSense, MilpInstance
from interface.trace import LpSolution

logger = logging.getLogger(__name__)

_TOL = 1e-9
_PHASE_ONE_TOL = 1e-7


class BoundedSimplex:
    """Dense revised simplex over ``matrix @ x = rhs`` with ``0 <= x <= ranges``.

    Nonbasic columns sit at 0 or at their (finite) range. Entering and leaving
    columns follow Bland's smallest-index rule; a bound flip wins ratio ties.
    """

    def __init__(
        self,
        matrix: np.ndarray,
        rhs: np.ndarray,
        ranges: np.ndarray,
        basis: list[int],
        pivot_limit: int,
    ):
        self.matrix = matrix
        self.rhs = rhs
        self.ranges = ranges
        self.basis = np.asarray(basis, dtype=np.int64)
        self.inverse = np.eye(len(basis))
        self.at_upper = np.zeros(matrix.shape[1], dtype=bool)
        self.pivots = 0
        self.pivot_limit = pivot_limit

    def values(self) -> np.ndarray:
        x = np.where(self.at_upper, self.ranges, 0.0)
        x[self.basis] = 0.0
        x[self.basis] = self.inverse @ (self.rhs - self.matrix @ x)
        return x

    def optimize(self, cost: np.ndarray) -> None:
        num_rows, num_cols = self.matrix.shape
        basic = np.zeros(num_cols, dtype=bool)
        while True:
            basic[:] = False
            basic[self.basis] = True
            duals = cost[self.basis] @ self.inverse
            reduced = cost - duals @ self.matrix
            movable = ~basic & (self.ranges > _TOL)
            eligible = movable & (
                (~self.at_upper & (reduced < -_TOL)) | (self.at_upper & (reduced > _TOL))
            )
            candidates = np.flatnonzero(eligible)
            if candidates.size == 0:
                return
            if self.pivots >= self.pivot_limit:
                raise PivotLimitExceeded(f"no optimum after {self.pivots} pivots")
            self.pivots += 1

            entering = int(candidates[0])
            direction = -1.0 if self.at_upper[entering] else 1.0
            column = self.inverse @ self.matrix[:, entering]
            alpha = direction * column
            x_basic = self.values()[self.basis]
            upper_basic = self.ranges[self.basis]

            limits = np.full(num_rows, np.inf)
            falling = alpha > _TOL
            rising = alpha < -_TOL
            limits[falling] = x_basic[falling] / alpha[falling]
            limits[rising] = (upper_basic[rising] - x_basic[rising]) / -alpha[rising]
            limits = np.maximum(limits, 0.0)

            ratio = float(limits.min()) if num_rows else np.inf
            flip = float(self.ranges[entering])
            if np.isinf(ratio) and np.isinf(flip):
                raise LpUnbounded(f"column {entering} improves without limit")
            if ratio >= flip - _TOL:
                self.at_upper[entering] = not self.at_upper[entering]
                continue

            ties = np.flatnonzero(limits <= ratio + _TOL)
            row = int(ties[np.argmin(self.basis[ties])])
            leaving = int(self.basis[row])
            self.at_upper[leaving] = bool(alpha[row] < 0)
            self.at_upper[entering] = False
            self._pivot(row, entering, column)

    def _pivot(self, row: int, entering: int, column: np.ndarray) -> None:
        update = self.inverse[row] / column[row]
        self.inverse -= np.outer(column, update)
        self.inverse[row] = update
        self.basis[row] = entering


def lp_relax(
    instance: MilpInstance,
    lower: np.ndarray | None = None,
    upper: np.ndarray | None = None,
    pivot_limit: int = 10_000,
) -> LpSolution:
    """LP relaxation of ``instance`` under the local variable bounds."""
    lower = instance.lower if lower is None else np.asarray(lower, dtype=np.float64)
    upper = instance.upper if upper is None else np.asarray(upper, dtype=np.float64)
    if not np.all(np.isfinite(lower)):
        raise ValueError("variable lower bounds must be finite")
    if np.any(lower > upper):
        raise LpInfeasible("local bounds are inconsistent")

    matrix, cost = instance.matrix, instance.cost
    num_rows, num_vars = matrix.shape
    # shift x = lower + y so that every structural column starts at 0
    rhs = instance.rhs - matrix @ lower
    senses = instance.con_sense

    slack_rows = [i for i, sense in enumerate(senses) if sense != ConstraintSense.eq]
    slack = np.zeros((num_rows, len(slack_rows)))
    for k, i in enumerate(slack_rows):
        slack[i, k] = 1.0 if senses[i] == ConstraintSense.le else -1.0

    sign = np.where(rhs < 0, -1.0, 1.0)
    body = np.hstack([matrix, slack]) * sign[:, None]
    rhs = rhs * sign

    basis: list[int] = []
    artificial_rows: list[int] = []
    slack_of_row = {i: num_vars + k for k, i in enumerate(slack_rows)}
    for i in range(num_rows):
        column = slack_of_row.get(i)
        if column is not None and body[i, column] > 0:
            basis.append(column)
        else:
            basis.append(-1)
            artificial_rows.append(i)

    num_structural = body.shape[1]
    artificial = np.zeros((num_rows, len(artificial_rows)))
    for k, i in enumerate(artificial_rows):
        artificial[i, k] = 1.0
        basis[i] = num_structural + k
    full = np.hstack([body, artificial])
    ranges = np.concatenate(
        [upper - lower, np.full(len(slack_rows), np.inf), np.full(len(artificial_rows), np.inf)]
    )

    simplex = BoundedSimplex(full, rhs, ranges, basis, pivot_limit)
    if artificial_rows:
        phase_one = np.zeros(full.shape[1])
        phase_one[num_structural:] = 1.0
        simplex.optimize(phase_one)
        residual = float(simplex.values()[num_structural:].sum())
        if residual > _PHASE_ONE_TOL * (1.0 + float(np.abs(rhs).max(initial=0.0))):
            raise LpInfeasible(f"phase one ended with infeasibility {residual:.3g}")
        simplex.ranges[num_structural:] = 0.0

    phase_two = np.zeros(full.shape[1])
    phase_two[:num_vars] = cost
    simplex.optimize(phase_two)

    primal = lower + simplex.values()[:num_vars]
    primal = np.clip(primal, lower, upper)
    return LpSolution(
        objective=float(cost @ primal),
        primal=primal.tolist(),
        pivots=simplex.pivots,
    )
