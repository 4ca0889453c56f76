import math

import numpy as np
import pytest
from builders import linear_zero, market, random_instance
from hypothesis import given, settings
from hypothesis import strategies as st

from envyfree.ascending import (
    ACTIVE,
    GENERAL,
    ActiveState,
    AscendConfig,
    AscendTrace,
    boundary_prices,
    find_stop_price,
    run_ascending,
    stopping_criterion,
)
from envyfree.errors import PreconditionError
from envyfree.flow import kkt_violation, welfare_opt
from envyfree.functions import LinearDemand, QuadraticCost, ZeroCost
from envyfree.market import check_envy_free
from envyfree.oracle import sweep_ascent

SQRT_E = math.sqrt(math.e)


def test_stopping_criterion_zero_marginal():
    cfg = AscendConfig(k=math.e, target=1.0, eps=1e-9)
    assert not stopping_criterion(0.36, 0.0, cfg)
    assert stopping_criterion(0.37, 0.0, cfg)


def test_stopping_criterion_k_one():
    cfg = AscendConfig(k=1.0, target=1.0, eps=1e-9)
    for marginal in (0.0, 0.3, 0.9):
        assert not stopping_criterion(0.99, marginal, cfg)
        assert stopping_criterion(1.0, marginal, cfg)


def test_stopping_criterion_positive_marginal():
    cfg = AscendConfig(k=math.e, target=1.0, eps=1e-9)
    threshold = 0.5 + 0.5 / math.e
    assert threshold == pytest.approx(0.6839, abs=1e-4)
    assert not stopping_criterion(threshold - 1e-6, 0.5, cfg)
    assert stopping_criterion(threshold + 1e-6, 0.5, cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        AscendConfig(k=0.5)
    with pytest.raises(ValueError):
        AscendConfig(criterion="other")


def test_boundary_prices_examples():
    assert boundary_prices([0.2, 0.5, 0.2], 1.0) == [0.2, 0.5, 1.0]
    assert boundary_prices([0.0, 0.0], 1.0) == [0.0, 1.0]
    assert boundary_prices([0.2, 1.5], 1.0) == [0.2, 1.0, 1.5]


def test_single_buyer_k_e():
    sol, _ = run_ascending(linear_zero(), AscendConfig(k=math.e))
    assert sol.prices[0] == pytest.approx(1 / math.e, abs=2e-6)
    assert sol.demand[0] == pytest.approx(1 - 1 / math.e, abs=2e-6)
    assert sol.revenue == pytest.approx(0.232544, abs=1e-6)
    assert sol.welfare == pytest.approx(0.432332, abs=1e-6)


def test_single_buyer_k_sqrt_e():
    sol, _ = run_ascending(linear_zero(), AscendConfig(k=SQRT_E))
    assert sol.prices[0] == pytest.approx(0.606531, abs=2e-6)
    assert sol.demand[0] == pytest.approx(0.393469, abs=2e-6)
    assert sol.revenue == pytest.approx(0.238651, abs=1e-6)


def test_shared_item_fixed_point():
    inst = market([LinearDemand(1.0, 1.0)] * 2, [QuadraticCost(0.25)])

    def gap(p):
        c = (2 * (1 - p)) / 2
        return p - c - (1 - c) / math.e

    lo, hi = 0.0, 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if gap(mid) >= 0 else (mid, hi)
    sol, _ = run_ascending(inst, AscendConfig(k=math.e))
    assert sol.prices[0] == pytest.approx(hi, abs=2e-6)
    assert hi == pytest.approx(1 / (2 - 1 / math.e), abs=1e-12)


def test_find_stop_price_zero_cost():
    inst = linear_zero()
    cfg = AscendConfig(k=math.e, eps=1e-8).resolved(inst)
    state = ActiveState(inst, cfg, welfare_opt(inst), AscendTrace(target=1.0, eps=cfg.eps, k=cfg.k))
    state.item_state[0] = ACTIVE
    state.buyer_state[0] = ACTIVE
    p, finishing, _ = find_stop_price(state, 0.0, 1.0, cfg)
    assert p == pytest.approx(1 / math.e, abs=1e-8)
    assert finishing == {0}


def test_cheaper_item_finishes_first():
    inst = market([LinearDemand(1.0, 1.0)] * 2, [QuadraticCost(5.0), ZeroCost()], [(0, 0), (1, 1)])
    sol, trace = run_ascending(inst, AscendConfig(k=math.e))
    finished = [e.entity for e in trace.events if e.transition == "finished" and e.kind == "item"]
    assert finished == ["t1", "t0"]
    assert sol.prices[1] < sol.prices[0]


def test_unequal_peaks_need_general_criterion():
    inst = market([LinearDemand(1.0, 1.0), LinearDemand(2.0, 1.0)], [ZeroCost()])
    with pytest.raises(PreconditionError):
        run_ascending(inst, AscendConfig(k=math.e))
    sol, trace = run_ascending(inst, AscendConfig(k=math.e, criterion=GENERAL))
    assert trace.target == 1.0
    assert check_envy_free(sol, inst, 1e-7).ok


def test_matches_fixed_step_sweep():
    for seed in (0, 1):
        inst = random_instance(seed, 3, 3)
        cfg = AscendConfig(k=math.e, eps=1e-3)
        sol, trace = run_ascending(inst, cfg)
        ref = sweep_ascent(inst, cfg)
        assert np.max(np.abs(sol.prices - ref.prices)) <= 2e-3
        assert trace.flow_calls <= trace.call_budget(inst.n_items, min(trace.boundaries))


def test_trace_hierarchy():
    inst = random_instance(4, 5, 5)
    _, trace = run_ascending(inst, AscendConfig(k=math.e))
    prices = [e.price for e in trace.events if e.transition != "frozen"]
    assert prices == sorted(prices)
    start = {}
    for e in trace.events:
        if e.transition == "activated":
            start[e.entity] = e.price
        elif e.transition == "finished" and e.kind == "item":
            assert e.price >= start[e.entity] - 1e-12
            assert e.price <= trace.target + 1e-12


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_ascent_certified_and_ordered(seed):
    inst = random_instance(seed, 4, 4)
    wopt = welfare_opt(inst)
    sol_e, _ = run_ascending(inst, AscendConfig(k=math.e), wopt)
    sol_s, _ = run_ascending(inst, AscendConfig(k=SQRT_E), wopt)
    for sol in (sol_e, sol_s):
        assert check_envy_free(sol, inst, 1e-6).max_residual <= 1e-6
        assert kkt_violation(inst, sol.demand, sol.flow) <= 1e-6
    assert np.all(sol_s.prices >= sol_e.prices - 1e-6)
    assert np.all(sol_e.prices >= wopt.prices - 1e-6)
    assert np.all(sol_e.demand >= sol_s.demand - 1e-6)
