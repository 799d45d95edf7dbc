import numpy as np
import pytest

from interface.error import LpInfeasible, LpUnbounded
from interface.instance import ConstraintSense, Family, MilpInstance
from service.simplex import lp_relax


def _instance(objective, rows, rhs, senses, lower=None, upper=None):
    n = len(objective)
    return MilpInstance(
        id="lp",
        family=Family.knapsack,
        num_vars=n,
        num_cons=len(rows),
        objective=objective,
        con_matrix=rows,
        con_rhs=rhs,
        con_sense=senses,
        var_lower=lower or [0.0] * n,
        var_upper=upper or [1.0] * n,
        is_integer=[True] * n,
        theta_seed=0,
    )


def test_knapsack_relaxation(small_knapsack):
    solution = lp_relax(small_knapsack)
    assert solution.objective == pytest.approx(-24.0)
    assert solution.primal == pytest.approx([1.0, 1.0, 2.0 / 3.0])


def test_fixed_variables(small_knapsack):
    point = np.asarray([0.0, 1.0, 1.0])
    solution = lp_relax(small_knapsack, point, point)
    assert solution.objective == pytest.approx(-22.0)
    assert solution.primal == pytest.approx([0.0, 1.0, 1.0])


def test_local_bounds_restrict_relaxation(small_knapsack):
    solution = lp_relax(small_knapsack, np.zeros(3), np.asarray([1.0, 1.0, 0.0]))
    assert solution.objective == pytest.approx(-16.0)


def test_covering_rows():
    # min x1 + 2 x2 s.t. x1 + x2 >= 1.5, x in [0, 1]
    instance = _instance([1.0, 2.0], [[1.0, 1.0]], [1.5], [ConstraintSense.ge])
    solution = lp_relax(instance)
    assert solution.objective == pytest.approx(2.0)
    assert solution.primal == pytest.approx([1.0, 0.5])


def test_equality_rows():
    instance = _instance([3.0, 1.0], [[1.0, 1.0]], [1.0], [ConstraintSense.eq])
    solution = lp_relax(instance)
    assert solution.objective == pytest.approx(1.0)
    assert solution.primal == pytest.approx([0.0, 1.0])


def test_infeasible_row():
    instance = _instance([1.0], [[1.0]], [-1.0], [ConstraintSense.le])
    with pytest.raises(LpInfeasible):
        lp_relax(instance)


def test_inconsistent_local_bounds(small_knapsack):
    with pytest.raises(LpInfeasible):
        lp_relax(small_knapsack, np.asarray([1.0, 0.0, 0.0]), np.asarray([0.0, 1.0, 1.0]))


def test_unbounded():
    # min -x1 s.t. x1 - x2 <= 1 with both columns unbounded above
    inf = float("inf")
    instance = _instance([-1.0, 0.0], [[1.0, -1.0]], [1.0], [ConstraintSense.le], upper=[inf, inf])
    with pytest.raises(LpUnbounded):
        lp_relax(instance)


def test_lower_bounds_must_be_finite(small_knapsack):
    with pytest.raises(ValueError):
        lp_relax(small_knapsack, np.asarray([-np.inf, 0.0, 0.0]), np.ones(3))
