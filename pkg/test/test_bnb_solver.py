import math

import pytest

from app.bitflag import TraceBitflag, TraceFlag
from interface.instance import CflpParams, ConstraintSense, Family, KnapsackParams, MilpInstance, SetCoverParams, Split
from interface.trace import BnbConfig, NodeSelection, TickAction, TraceStatus
from service.bnb_solver import algorithmic_gap, solve
from service.instances import brute_force_solve, generate_family


def _check_trace(trace, z_star=None):
    ticks = [s.tick for s in trace.samples]
    assert ticks == list(range(len(ticks)))
    uppers = [s.upper for s in trace.samples]
    lowers = [s.lower for s in trace.samples]
    assert all(b <= a for a, b in zip(uppers, uppers[1:]))
    assert all(b >= a - 1e-9 * max(1.0, abs(a)) for a, b in zip(lowers, lowers[1:]) if math.isfinite(a))
    for incumbent in trace.incumbents:
        assert trace.samples[incumbent.tick].upper == incumbent.objective
    if z_star is not None:
        for upper, lower in zip(uppers, lowers):
            if math.isfinite(lower):
                assert lower <= z_star
            if math.isfinite(upper):
                assert upper >= z_star


@pytest.mark.parametrize(
    "upper, lower, expected",
    [(10.0, 8.0, 0.25), (5.0, 5.0, 0.0), (3.0, 0.0, math.inf), (math.inf, 1.0, math.inf), (-90.0, -100.0, 0.1)],
)
def test_algorithmic_gap(upper, lower, expected):
    assert algorithmic_gap(upper, lower) == pytest.approx(expected)


def test_small_knapsack_matches_oracle(small_knapsack):
    result = solve(small_knapsack, BnbConfig(epsilon=0.0))
    assert result.best_objective == -22.0
    assert result.best_solution == [0.0, 1.0, 1.0]
    assert result.trace.status == TraceStatus.optimal_within_eps
    assert result.trace.z_star == -22.0
    _check_trace(result.trace, -22.0)


@pytest.mark.parametrize(
    "family, params",
    [
        (Family.knapsack, KnapsackParams(n_items_min=10, n_items_max=12)),
        (Family.set_cover, SetCoverParams(universe_size=10, num_sets=10)),
        (Family.cflp_small, CflpParams(num_facilities=2, num_customers=3)),
    ],
)
@pytest.mark.parametrize("selection", [NodeSelection.best_bound, NodeSelection.depth_first])
def test_optimum_matches_brute_force(family, params, selection):
    instances = generate_family(family, params, master_seed=11, count=3, split=Split.train)
    for instance in instances.instances:
        z_star, _ = brute_force_solve(instance)
        result = solve(instance, BnbConfig(epsilon=0.0, node_selection=selection))
        assert result.trace.status == TraceStatus.optimal_within_eps
        assert result.best_objective == z_star
        assert result.trace.z_star == z_star
        _check_trace(result.trace, z_star)


def test_root_relaxation_integral():
    # x1 + x2 <= 1 is totally unimodular; the root LP picks x = (1, 0)
    instance = MilpInstance(
        id="tu",
        family=Family.knapsack,
        num_vars=2,
        num_cons=1,
        objective=[-2.0, -1.0],
        con_matrix=[[1.0, 1.0]],
        con_rhs=[1.0],
        con_sense=[ConstraintSense.le],
        var_lower=[0.0, 0.0],
        var_upper=[1.0, 1.0],
        is_integer=[True, True],
        theta_seed=0,
    )
    result = solve(instance, BnbConfig(epsilon=0.0))
    trace = result.trace
    assert trace.status == TraceStatus.optimal_within_eps
    assert trace.samples[-1].nodes_explored == 1
    assert len(trace.incumbents) == 1
    assert trace.z_star == -2.0


def test_callback_stops_at_first_incumbent(small_knapsack):
    def stop_on_incumbent(sample):
        if sample.incumbent_id is not None:
            return TickAction.stop
        return TickAction.proceed

    result = solve(small_knapsack, BnbConfig(epsilon=0.0), on_tick=stop_on_incumbent)
    trace = result.trace
    assert len(trace.incumbents) == 1
    assert result.best_objective == trace.incumbents[0].objective
    assert trace.status == TraceStatus.tick_limit
    assert trace.z_star is None
    assert TraceBitflag.unzip(trace.flags).has(TraceFlag.CALLBACK_STOP)


def test_callback_sees_every_sample(small_knapsack):
    seen = []
    result = solve(small_knapsack, BnbConfig(epsilon=0.0), on_tick=seen.append)
    assert [s.tick for s in seen] == [s.tick for s in result.trace.samples]


def test_tick_limit_flag():
    instance = generate_family(
        Family.knapsack, KnapsackParams(n_items_min=20, n_items_max=20), master_seed=4, count=1, split=Split.train
    ).instances[0]
    result = solve(instance, BnbConfig(epsilon=0.0, tick_limit=2, rounding_heuristic_enabled=False))
    trace = result.trace
    assert trace.samples[-1].nodes_explored <= 2
    if trace.status == TraceStatus.tick_limit:
        assert TraceBitflag.unzip(trace.flags).has(TraceFlag.TICK_LIMIT)


def test_infeasible_instance():
    instance = MilpInstance(
        id="empty",
        family=Family.set_cover,
        num_vars=1,
        num_cons=1,
        objective=[1.0],
        con_matrix=[[1.0]],
        con_rhs=[2.0],
        con_sense=[ConstraintSense.ge],
        var_lower=[0.0],
        var_upper=[1.0],
        is_integer=[True],
        theta_seed=0,
    )
    result = solve(instance)
    assert result.trace.status == TraceStatus.infeasible
    assert result.best_objective is None


def test_trace_hash_follows_config(small_knapsack):
    first = solve(small_knapsack, BnbConfig(epsilon=0.0)).trace
    again = solve(small_knapsack, BnbConfig(epsilon=0.0)).trace
    other = solve(small_knapsack, BnbConfig(epsilon=0.01)).trace
    assert first.config_hash == again.config_hash
    assert first.config_hash != other.config_hash
    assert first.samples == again.samples


@pytest.mark.slow
@pytest.mark.parametrize("selection", [NodeSelection.best_bound, NodeSelection.depth_first])
def test_two_hundred_instances_match_brute_force(selection):
    batches = [
        (Family.knapsack, KnapsackParams(n_items_min=10, n_items_max=15), 70),
        (Family.set_cover, SetCoverParams(), 65),
        (Family.cflp_small, CflpParams(), 65),
    ]
    checked = 0
    for family, params, count in batches:
        for instance in generate_family(family, params, master_seed=2024, count=count, split=Split.test).instances:
            assert instance.num_integer <= 15
            z_star, _ = brute_force_solve(instance)
            trace = solve(instance, BnbConfig(epsilon=0.0, node_selection=selection)).trace
            assert trace.status == TraceStatus.optimal_within_eps
            assert trace.z_star == z_star, instance.id
            _check_trace(trace, z_star)
            assert algorithmic_gap(trace.samples[-1].upper, trace.samples[-1].lower) == 0.0
            checked += 1
    assert checked == 200
