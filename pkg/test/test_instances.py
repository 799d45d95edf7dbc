import pytest

from interface.error import Infeasible, ParamOutOfRange, TooLarge, UnknownFamily
from interface.instance import ConstraintSense, Family, KnapsackParams, MilpInstance, SetCoverParams, CflpParams, Split
from service.instances import brute_force_solve, generate_family, instance_set_hash
from utils.string import canonical_json


def _instance(objective, rows, rhs, senses, integer=None, upper=None):
    n = len(objective)
    return MilpInstance(
        id="handmade",
        family=Family.knapsack,
        num_vars=n,
        num_cons=len(rows),
        objective=objective,
        con_matrix=rows,
        con_rhs=rhs,
        con_sense=senses,
        var_lower=[0.0] * n,
        var_upper=upper or [1.0] * n,
        is_integer=integer or [True] * n,
        theta_seed=0,
    )


def test_explicit_knapsack_encoding(small_knapsack):
    assert small_knapsack.objective == [-6.0, -10.0, -12.0]
    assert small_knapsack.con_matrix == [[1.0, 2.0, 3.0]]
    assert small_knapsack.con_rhs == [5.0]
    assert small_knapsack.con_sense == [ConstraintSense.le]
    assert small_knapsack.is_integer == [True, True, True]
    assert small_knapsack.var_upper == [1.0, 1.0, 1.0]


def test_generation_is_deterministic():
    first = generate_family(Family.knapsack, None, master_seed=7, count=5, split=Split.train)
    second = generate_family(Family.knapsack, None, master_seed=7, count=5, split=Split.train)
    assert canonical_json(first) == canonical_json(second)
    assert instance_set_hash(first) == instance_set_hash(second)


def test_generation_is_prefix_stable():
    short = generate_family(Family.set_cover, None, master_seed=2, count=3, split=Split.test)
    long = generate_family(Family.set_cover, None, master_seed=2, count=6, split=Split.test)
    assert canonical_json(short.instances) == canonical_json(long.instances[:3])


def test_splits_use_disjoint_streams():
    train = generate_family(Family.knapsack, None, master_seed=7, count=3, split=Split.train)
    test = generate_family(Family.knapsack, None, master_seed=7, count=3, split=Split.test)
    assert {i.theta_seed for i in train.instances}.isdisjoint({i.theta_seed for i in test.instances})
    assert train.instances[0].id == "knapsack-train-00000"
    assert test.instances[2].id == "knapsack-test-00002"


def test_default_knapsack_instances_are_feasible():
    instances = generate_family(Family.knapsack, None, master_seed=7, count=100, split=Split.train)
    assert len(instances.instances) == 100
    smallest = sorted(instances.instances, key=lambda i: i.num_vars)[:10]
    for instance in smallest:
        z_star, x_star = brute_force_solve(instance)
        assert z_star <= 0
        assert len(x_star) == instance.num_vars


def test_set_cover_rows_are_coverable():
    instance = generate_family(
        Family.set_cover, SetCoverParams(universe_size=12, num_sets=8), master_seed=5, count=1, split=Split.train
    ).instances[0]
    assert all(sum(row) >= 1 for row in instance.con_matrix)
    assert instance.con_sense == [ConstraintSense.ge] * 12
    assert set(instance.theta_params) == {"universe_size", "num_sets", "density", "mean_cost"}


def test_cflp_layout():
    params = CflpParams(num_facilities=3, num_customers=4)
    instance = generate_family(Family.cflp_small, params, master_seed=5, count=1, split=Split.train).instances[0]
    assert instance.num_vars == 3 + 3 * 4
    assert instance.is_integer == [True] * 3 + [False] * 12
    assert instance.num_cons == 4 + 3 + 12
    assert instance.con_sense[:4] == [ConstraintSense.eq] * 4


def test_generate_family_errors():
    with pytest.raises(UnknownFamily):
        generate_family("Tsp", None, master_seed=0, count=1, split=Split.train)
    with pytest.raises(ParamOutOfRange):
        generate_family(Family.knapsack, KnapsackParams(n_items_min=5), master_seed=0, count=1, split=Split.train)
    with pytest.raises(ParamOutOfRange):
        generate_family(Family.knapsack, None, master_seed=0, count=0, split=Split.train)


def test_brute_force_small_knapsack(small_knapsack):
    z_star, x_star = brute_force_solve(small_knapsack)
    assert z_star == -22.0
    assert x_star == [0.0, 1.0, 1.0]


def test_brute_force_infeasible():
    instance = _instance([1.0], [[1.0]], [2.0], [ConstraintSense.ge])
    with pytest.raises(Infeasible):
        brute_force_solve(instance)


def test_brute_force_without_constraints():
    instance = _instance([1.0], [], [], [])
    assert brute_force_solve(instance) == (0.0, [0.0])


def test_brute_force_mixed_cflp():
    params = CflpParams(num_facilities=2, num_customers=3)
    instance = generate_family(Family.cflp_small, params, master_seed=1, count=1, split=Split.train).instances[0]
    z_star, x_star = brute_force_solve(instance)
    # every customer fully served
    for c in range(3):
        assert sum(x_star[2 + f * 3 + c] for f in range(2)) == pytest.approx(1.0)
    assert z_star > 0


def test_brute_force_too_large():
    instance = _instance([1.0] * 21, [[1.0] * 21], [3.0], [ConstraintSense.le])
    with pytest.raises(TooLarge):
        brute_force_solve(instance)
