import numpy as np
import pytest
from builders import linear_zero, market, random_instance
from hypothesis import given, settings
from hypothesis import strategies as st

from envyfree.flow import envy_free_solution, welfare_opt
from envyfree.functions import ExponentialDemand, LinearCost, LinearDemand, QuadraticCost, UniformDemand, ZeroCost
from envyfree.market import (
    BuyerType,
    Item,
    MarketInstance,
    Solution,
    best_response,
    cheapest_price,
    cheapest_prices,
    check_envy_free,
    revenue,
    social_welfare,
)
from envyfree.scenario import parse_scenario


def three_items():
    return market([LinearDemand(1.0, 1.0)], [ZeroCost()] * 3)


def test_cheapest_price_examples():
    inst = market([LinearDemand(1.0, 1.0)], [ZeroCost(), ZeroCost()])
    assert cheapest_price(np.array([0.5, 0.3]), "b0", inst) == 0.3
    single = market([LinearDemand(1.0, 1.0)], [ZeroCost()])
    assert cheapest_price(np.array([0.0]), "b0", single) == 0.0
    assert cheapest_price(np.ones(3), "b0", three_items()) == 1.0
    with pytest.raises(KeyError):
        cheapest_price(np.ones(3), "nobody", three_items())


def test_best_response_examples():
    inst = linear_zero()
    assert best_response(np.array([0.75]), inst)[0] == pytest.approx(0.25)
    assert best_response(np.array([2.0]), inst)[0] == 0.0
    exp = market([ExponentialDemand(1.0, 1.0, 3.0)], [ZeroCost()])
    assert best_response(np.array([np.exp(-1)]), exp)[0] == pytest.approx(1.0)


def test_instance_rejects_bad_edges():
    b = [BuyerType("b0", LinearDemand(1.0, 1.0))]
    s = [Item("t0", ZeroCost())]
    with pytest.raises(ValueError):
        MarketInstance(b, s, [("b0", "t9")])
    with pytest.raises(ValueError):
        MarketInstance(b, s, [])
    with pytest.raises(ValueError):
        MarketInstance(b + b, s, [("b0", "t0")])


def test_revenue_examples():
    inst = linear_zero()
    sol = Solution.build(inst, [0.5], [0.5], [[0.5]])
    assert revenue(sol, inst) == pytest.approx(0.25)

    quad = market([UniformDemand(1.0, 2.0)], [QuadraticCost(1.0)])
    sol = Solution.build(quad, [1.0], [2.0], [[2.0]])
    assert revenue(sol, quad) == pytest.approx(-2.0)

    two = market([UniformDemand(3.0, 1.0), UniformDemand(3.0, 1.0)], [ZeroCost(), ZeroCost()], [(0, 0), (1, 1)])
    sol = Solution.build(two, [1.0, 2.0], [1.0, 1.0], [[1.0, 0.0], [0.0, 1.0]])
    assert revenue(sol, two) == pytest.approx(3.0)


def test_welfare_examples():
    inst = linear_zero()
    assert social_welfare(Solution.build(inst, [0.0], [1.0], [[1.0]]), inst) == pytest.approx(0.5)
    assert social_welfare(Solution.build(inst, [0.0], [0.0], [[0.0]]), inst) == 0.0
    flat = market([UniformDemand(2.0, 1.0)], [LinearCost(1.0)])
    assert social_welfare(Solution.build(flat, [1.0], [1.0], [[1.0]]), flat) == pytest.approx(1.0)


def test_flow_on_non_edge_rejected():
    inst = market([LinearDemand(1.0, 1.0)], [ZeroCost(), ZeroCost()], [(0, 0)])
    with pytest.raises(ValueError):
        Solution.build(inst, [0.5, 0.5], [0.5], [[0.0, 0.5]])


def test_envy_reported_on_expensive_edge():
    inst = market([LinearDemand(1.0, 1.0)], [ZeroCost(), ZeroCost()])
    # buyer pays 0.6 while item t1 costs 0.5
    sol = Solution.build(inst, [0.6, 0.5], [0.4], [[0.4, 0.0]])
    rep = check_envy_free(sol, inst)
    assert not rep.ok
    envy = [v for v in rep.violations if v.kind == "envy"]
    assert len(envy) == 1 and envy[0].item == "t0"
    assert envy[0].residual == pytest.approx(0.1)


def test_best_response_violation_reported():
    inst = linear_zero()
    sol = Solution.build(inst, [0.5], [0.3], [[0.3]])
    rep = check_envy_free(sol, inst)
    assert [v.kind for v in rep.violations] == ["best-response"]


def test_welfare_optimum_is_envy_free():
    for seed in range(5):
        inst = random_instance(seed)
        sol = welfare_opt(inst).solution
        assert check_envy_free(sol, inst).max_residual <= 1e-7


def test_record_round_trip():
    inst = random_instance(3)
    rec = inst.to_record()
    again = parse_scenario({"version": 1, "instance": rec}).instance
    assert again.to_record() == rec


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), scale=st.floats(1.0, 2.0))
def test_best_response_monotone(seed, scale):
    inst = random_instance(seed, 3, 3)
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.0, 1.2, inst.n_items) * inst.peaks.max()
    assert np.all(best_response(scale * p, inst) <= best_response(p, inst) + 1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_envy_free_solution_invariants(seed):
    inst = random_instance(seed, 3, 3)
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.0, 1.0, inst.n_items) * inst.peaks.max()
    sol = envy_free_solution(inst, p)
    assert sol.conservation_gap() <= 1e-7
    assert check_envy_free(sol, inst, 1e-7).ok
    # item-side revenue equals buyer-side payments minus cost
    pbar = cheapest_prices(sol.prices, inst)
    cost = sum(s.cost.total(y) for s, y in zip(inst.items, sol.loads))
    assert revenue(sol, inst) == pytest.approx(float(pbar @ sol.demand) - cost, abs=1e-7)
    assert sol.revenue <= sol.welfare + 1e-9
