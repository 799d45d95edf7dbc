import math

import pytest

from interface.instance import Family, KnapsackParams, Split
from interface.trace import BnbConfig, BoundTrace, GapSeries, Incumbent, TraceSample, TraceStatus
from service.bnb_solver import solve
from service.instances import generate_family


@pytest.fixture
def small_knapsack():
    """max 6x1 + 10x2 + 12x3 s.t. x1 + 2x2 + 3x3 <= 5, as a minimization."""
    params = {"values": [6, 10, 12], "weights": [[1, 2, 3]], "capacities": [5]}
    return generate_family(Family.knapsack, params, master_seed=1, count=1, split=Split.train).instances[0]


@pytest.fixture
def make_trace():
    """Trace from upper/lower bound lists; an incumbent is recorded whenever U drops."""

    def build(uppers, lowers=None, z_star=None, ticks=None, instance_id="trace"):
        ticks = list(range(len(uppers))) if ticks is None else ticks
        lowers = [-math.inf] * len(uppers) if lowers is None else lowers
        samples, incumbents = [], []
        best = math.inf
        for tick, upper, lower in zip(ticks, uppers, lowers):
            if upper < best:
                incumbents.append(Incumbent(tick=tick, objective=upper, solution=[]))
                best = upper
            samples.append(
                TraceSample(
                    tick=tick,
                    upper=upper,
                    lower=lower,
                    nodes_explored=tick + 1,
                    incumbent_id=len(incumbents) - 1 if incumbents else None,
                )
            )
        return BoundTrace(
            instance_id=instance_id,
            samples=samples,
            incumbents=incumbents,
            status=TraceStatus.optimal_within_eps if z_star is not None else TraceStatus.tick_limit,
            z_star=z_star,
        )

    return build


@pytest.fixture
def make_series():
    def build(values, ticks=None):
        ticks = list(range(len(values))) if ticks is None else ticks
        return GapSeries.from_arrays(ticks, values)

    return build


@pytest.fixture(scope="session")
def solved_knapsacks():
    """A handful of small knapsack instances solved to optimality."""
    params = KnapsackParams(n_items_min=10, n_items_max=12)
    instances = generate_family(Family.knapsack, params, master_seed=3, count=4, split=Split.train)
    solved = []
    for instance in instances.instances:
        result = solve(instance, BnbConfig(epsilon=0.0))
        solved.append((instance, result.trace))
    return solved
