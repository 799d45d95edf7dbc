import itertools
import logging
import math

import numpy as np
from scipy.optimize import linprog

from interface.error import Infeasible, ParamOutOfRange, SolverUnbounded, TooLarge, UnknownFamily
from interface.instance import (
    SPLIT_INDEX,
    CflpParams,
    ConstraintSense,
    Family,
    InstanceSet,
    KnapsackParams,
    MilpInstance,
    SetCoverParams,
    Split,
)
from utils.string import stable_hash
from utils.trace_math import clean_objective

logger = logging.getLogger(__name__)

MAX_BRUTE_FORCE_INTEGERS = 20
_ENUMERATION_CHUNK = 1 << 15
_FEASIBILITY_TOL = 1e-9


def instance_stream(master_seed: int, split: Split, index: int) -> tuple[np.random.Generator, int]:
    """Seed stream of instance ``index`` in ``split``; splits never share a stream."""
    if master_seed < 0:
        raise ParamOutOfRange("master_seed must be non-negative")
    sequence = np.random.SeedSequence(entropy=master_seed, spawn_key=(SPLIT_INDEX[split], index))
    theta_seed = int(sequence.generate_state(1, dtype=np.uint64)[0])
    return np.random.default_rng(sequence), theta_seed


def _check_range(name: str, value: float, low: float, high: float) -> None:
    if not low <= value <= high:
        raise ParamOutOfRange(f"{name}={value} outside [{low}, {high}]")


def _knapsack(
    params: KnapsackParams, rng: np.random.Generator, instance_id: str, theta_seed: int
) -> MilpInstance:
    if params.values is not None:
        if params.weights is None or params.capacities is None:
            raise ParamOutOfRange("explicit knapsack data needs values, weights and capacities")
        values = np.asarray(params.values, dtype=np.float64)
        weights = np.atleast_2d(np.asarray(params.weights, dtype=np.float64))
        capacities = np.asarray(params.capacities, dtype=np.float64)
        if weights.shape != (len(capacities), len(values)):
            raise ParamOutOfRange("weights must be (num_constraints, n_items)")
        capacity_ratio = float(np.mean(capacities / np.maximum(weights.sum(axis=1), 1.0)))
    else:
        _check_range("n_items_min", params.n_items_min, 10, 60)
        _check_range("n_items_max", params.n_items_max, params.n_items_min, 60)
        _check_range("num_constraints", params.num_constraints, 1, 5)
        _check_range("max_weight", params.max_weight, 1, 10_000)
        _check_range("max_value", params.max_value, 1, 10_000)
        _check_range("capacity_ratio", params.capacity_ratio, 0.05, 0.95)
        n_items = int(rng.integers(params.n_items_min, params.n_items_max + 1))
        weights = rng.integers(
            1, params.max_weight + 1, size=(params.num_constraints, n_items)
        ).astype(np.float64)
        values = rng.integers(1, params.max_value + 1, size=n_items).astype(np.float64)
        capacities = np.floor(params.capacity_ratio * weights.sum(axis=1))
        capacity_ratio = params.capacity_ratio

    n_items = len(values)
    return MilpInstance(
        id=instance_id,
        family=Family.knapsack,
        num_vars=n_items,
        num_cons=len(capacities),
        objective=(-values).tolist(),
        con_matrix=weights.tolist(),
        con_rhs=capacities.tolist(),
        con_sense=[ConstraintSense.le] * len(capacities),
        var_lower=[0.0] * n_items,
        var_upper=[1.0] * n_items,
        is_integer=[True] * n_items,
        theta_seed=theta_seed,
        theta_params={
            "n_items": float(n_items),
            "num_constraints": float(len(capacities)),
            "capacity_ratio": capacity_ratio,
            "mean_weight": float(weights.mean()),
            "mean_value": float(values.mean()),
        },
    )


def _set_cover(
    params: SetCoverParams, rng: np.random.Generator, instance_id: str, theta_seed: int
) -> MilpInstance:
    _check_range("universe_size", params.universe_size, 2, 80)
    _check_range("num_sets", params.num_sets, 1, 120)
    _check_range("min_set_size", params.min_set_size, 1, params.universe_size)
    _check_range("max_set_size", params.max_set_size, params.min_set_size, params.universe_size)
    _check_range("max_cost", params.max_cost, 1, 10_000)

    incidence = np.zeros((params.universe_size, params.num_sets), dtype=np.float64)
    for j in range(params.num_sets):
        size = int(rng.integers(params.min_set_size, params.max_set_size + 1))
        members = rng.choice(params.universe_size, size=size, replace=False)
        incidence[members, j] = 1.0
    # every element must be coverable
    for element in np.flatnonzero(incidence.sum(axis=1) == 0):
        incidence[element, int(rng.integers(params.num_sets))] = 1.0
    costs = rng.integers(1, params.max_cost + 1, size=params.num_sets).astype(np.float64)

    return MilpInstance(
        id=instance_id,
        family=Family.set_cover,
        num_vars=params.num_sets,
        num_cons=params.universe_size,
        objective=costs.tolist(),
        con_matrix=incidence.tolist(),
        con_rhs=[1.0] * params.universe_size,
        con_sense=[ConstraintSense.ge] * params.universe_size,
        var_lower=[0.0] * params.num_sets,
        var_upper=[1.0] * params.num_sets,
        is_integer=[True] * params.num_sets,
        theta_seed=theta_seed,
        theta_params={
            "universe_size": float(params.universe_size),
            "num_sets": float(params.num_sets),
            "density": float(incidence.mean()),
            "mean_cost": float(costs.mean()),
        },
    )


def _cflp(
    params: CflpParams, rng: np.random.Generator, instance_id: str, theta_seed: int
) -> MilpInstance:
    _check_range("num_facilities", params.num_facilities, 1, 8)
    _check_range("num_customers", params.num_customers, 1, 20)
    _check_range("max_demand", params.max_demand, 1, 10_000)
    _check_range("max_fixed_cost", params.max_fixed_cost, 2, 100_000)
    _check_range("max_unit_cost", params.max_unit_cost, 1, 10_000)
    _check_range("capacity_ratio", params.capacity_ratio, 1.0, 10.0)

    n_fac, n_cus = params.num_facilities, params.num_customers
    demand = rng.integers(1, params.max_demand + 1, size=n_cus).astype(np.float64)
    fixed = rng.integers(params.max_fixed_cost // 2, params.max_fixed_cost + 1, size=n_fac)
    unit = rng.integers(1, params.max_unit_cost + 1, size=(n_fac, n_cus))
    base_capacity = math.ceil(params.capacity_ratio * demand.sum() / n_fac)
    capacity = base_capacity + rng.integers(0, params.max_demand + 1, size=n_fac)

    # columns: y_f (open), then x_fc (share of customer c served by f)
    num_vars = n_fac + n_fac * n_cus
    objective = np.concatenate([fixed, (unit * demand[None, :]).ravel()]).astype(np.float64)
    rows: list[np.ndarray] = []
    rhs: list[float] = []
    sense: list[ConstraintSense] = []

    def x_col(f: int, c: int) -> int:
        return n_fac + f * n_cus + c

    for c in range(n_cus):
        row = np.zeros(num_vars)
        row[[x_col(f, c) for f in range(n_fac)]] = 1.0
        rows.append(row), rhs.append(1.0), sense.append(ConstraintSense.eq)
    for f in range(n_fac):
        row = np.zeros(num_vars)
        row[[x_col(f, c) for c in range(n_cus)]] = demand
        row[f] = -float(capacity[f])
        rows.append(row), rhs.append(0.0), sense.append(ConstraintSense.le)
    for f in range(n_fac):
        for c in range(n_cus):
            row = np.zeros(num_vars)
            row[x_col(f, c)] = 1.0
            row[f] = -1.0
            rows.append(row), rhs.append(0.0), sense.append(ConstraintSense.le)

    return MilpInstance(
        id=instance_id,
        family=Family.cflp_small,
        num_vars=num_vars,
        num_cons=len(rows),
        objective=objective.tolist(),
        con_matrix=np.vstack(rows).tolist(),
        con_rhs=rhs,
        con_sense=sense,
        var_lower=[0.0] * num_vars,
        var_upper=[1.0] * num_vars,
        is_integer=[True] * n_fac + [False] * (n_fac * n_cus),
        theta_seed=theta_seed,
        theta_params={
            "num_facilities": float(n_fac),
            "num_customers": float(n_cus),
            "capacity_ratio": float(capacity.sum() / demand.sum()),
            "mean_fixed_cost": float(fixed.mean()),
            "mean_unit_cost": float(unit.mean()),
        },
    )


_GENERATORS = {
    Family.knapsack: (KnapsackParams, _knapsack),
    Family.set_cover: (SetCoverParams, _set_cover),
    Family.cflp_small: (CflpParams, _cflp),
}


def generate_family(
    family: Family | str,
    params: KnapsackParams | SetCoverParams | CflpParams | dict | None,
    master_seed: int,
    count: int,
    split: Split,
) -> InstanceSet:
    try:
        family = Family(family)
    except ValueError:
        raise UnknownFamily(str(family)) from None
    if count < 1:
        raise ParamOutOfRange("count must be at least 1")

    params_type, generator = _GENERATORS[family]
    if params is None:
        params = params_type()
    elif isinstance(params, dict):
        params = params_type.model_validate(params)
    elif not isinstance(params, params_type):
        raise ParamOutOfRange(f"{family.value} expects {params_type.__name__}")

    instances = []
    for index in range(count):
        rng, theta_seed = instance_stream(master_seed, split, index)
        instance_id = f"{family.value.lower()}-{split.value.lower()}-{index:05d}"
        instances.append(generator(params, rng, instance_id, theta_seed))
    logger.debug("generated %d %s instances for %s", count, family.value, split.value)
    return InstanceSet(split=split, instances=instances, master_seed=master_seed)


def _integer_domains(instance: MilpInstance) -> list[np.ndarray]:
    domains = []
    for lo, up in zip(instance.lower[instance.integer_mask], instance.upper[instance.integer_mask]):
        if not (math.isfinite(lo) and math.isfinite(up)):
            raise TooLarge("integer variable with an unbounded domain")
        domains.append(np.arange(math.ceil(lo), math.floor(up) + 1, dtype=np.float64))
    return domains


def _row_feasible(activity: np.ndarray, instance: MilpInstance) -> np.ndarray:
    """Feasibility of each row of ``activity`` (assignments x constraints)."""
    rhs = instance.rhs
    tol = _FEASIBILITY_TOL * (1.0 + np.abs(rhs))
    sense = np.asarray([s.value for s in instance.con_sense], dtype=str)
    ok = np.ones(activity.shape, dtype=bool)
    ok[:, sense == "LE"] = activity[:, sense == "LE"] <= (rhs + tol)[sense == "LE"]
    ok[:, sense == "GE"] = activity[:, sense == "GE"] >= (rhs - tol)[sense == "GE"]
    ok[:, sense == "EQ"] = np.abs(activity[:, sense == "EQ"] - rhs[sense == "EQ"]) <= tol[sense == "EQ"]
    return ok.all(axis=1)


def _residual_lp(
    instance: MilpInstance, assignment: np.ndarray
) -> tuple[float, np.ndarray] | None:
    mask = instance.integer_mask
    matrix, rhs, cost = instance.matrix, instance.rhs, instance.cost
    residual = rhs - matrix[:, mask] @ assignment
    cont = matrix[:, ~mask]
    sense = np.asarray([s.value for s in instance.con_sense], dtype=str)
    a_ub = np.vstack([cont[sense == "LE"], -cont[sense == "GE"]])
    b_ub = np.concatenate([residual[sense == "LE"], -residual[sense == "GE"]])
    a_eq, b_eq = cont[sense == "EQ"], residual[sense == "EQ"]
    bounds = [
        (lo, None if math.isinf(up) else up)
        for lo, up in zip(instance.lower[~mask], instance.upper[~mask])
    ]
    result = linprog(
        cost[~mask],
        A_ub=a_ub if len(b_ub) else None,
        b_ub=b_ub if len(b_ub) else None,
        A_eq=a_eq if len(b_eq) else None,
        b_eq=b_eq if len(b_eq) else None,
        bounds=bounds,
        method="highs",
    )
    if result.status == 2:
        return None
    if result.status == 3:
        raise SolverUnbounded(instance.id)
    if result.status != 0:
        logger.warning("residual LP of %s ended with status %d", instance.id, result.status)
        return None
    return float(cost[mask] @ assignment + result.fun), result.x


def brute_force_solve(instance: MilpInstance) -> tuple[float, list[float]]:
    """Exact optimum by enumerating every integer assignment."""
    if instance.num_integer > MAX_BRUTE_FORCE_INTEGERS:
        raise TooLarge(f"{instance.num_integer} integer variables (max {MAX_BRUTE_FORCE_INTEGERS})")
    mask = instance.integer_mask
    domains = _integer_domains(instance)
    if math.prod(len(d) for d in domains) > 1 << MAX_BRUTE_FORCE_INTEGERS:
        raise TooLarge("integer domain product exceeds the enumeration budget")

    best_value = math.inf
    best_x: np.ndarray | None = None
    assignments = itertools.product(*domains)

    if mask.all():
        matrix, cost = instance.matrix, instance.cost
        while True:
            chunk = np.asarray(list(itertools.islice(assignments, _ENUMERATION_CHUNK)))
            if chunk.size == 0:
                break
            chunk = chunk.reshape(-1, instance.num_vars)
            feasible = _row_feasible(chunk @ matrix.T, instance)
            if not feasible.any():
                continue
            values = np.where(feasible, chunk @ cost, np.inf)
            position = int(np.argmin(values))
            if values[position] < best_value:
                best_value, best_x = float(values[position]), chunk[position]
    else:
        for assignment in assignments:
            assignment = np.asarray(assignment, dtype=np.float64)
            solved = _residual_lp(instance, assignment)
            if solved is None or solved[0] >= best_value:
                continue
            best_value = solved[0]
            best_x = np.zeros(instance.num_vars)
            best_x[mask] = assignment
            best_x[~mask] = solved[1]

    if best_x is None:
        raise Infeasible(instance.id)
    return clean_objective(best_value), [float(v) for v in best_x]


def instance_set_hash(instances: InstanceSet) -> str:
    """Provenance hash over the generated instance data."""
    return stable_hash(instances)
