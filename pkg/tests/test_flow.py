import numpy as np
import pytest
from builders import market, random_instance
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, sparse

from envyfree.errors import InfeasibleDemandError
from envyfree.flow import kkt_violation, min_cost_flow, welfare_opt
from envyfree.functions import LinearDemand, QuadraticCost, UniformDemand, ZeroCost
from envyfree.oracle import discrete_flow_oracle


def welfare_lp(instance, step=1e-3):
    """Welfare maximum with values and costs linearized on a ``step`` grid,
    solved as one linear program (independent of the flow solver)."""
    nb, ni = instance.n_buyers, instance.n_items
    edges = [(i, t) for i in range(nb) for t in instance.adj[i]]
    cols_gain, rows, cols, vals, bounds = [], [], [], [], []
    n = 0
    for e, (i, t) in enumerate(edges):
        rows += [i, nb + t]
        cols += [n, n]
        vals += [-1.0, 1.0]
        cols_gain.append(0.0)
        bounds.append((0, None))
        n += 1
    for i, b in enumerate(instance.buyers):
        knots = np.append(np.arange(0.0, b.demand.support, step), b.demand.support)
        for a, c in zip(knots, knots[1:]):
            rows.append(i)
            cols.append(n)
            vals.append(1.0)
            cols_gain.append(b.demand.integral(a, c) / (c - a))
            bounds.append((0, c - a))
            n += 1
    reach = instance.supports @ instance.mask
    for t, s in enumerate(instance.items):
        top = min(reach[t], s.cost.capacity)
        knots = np.append(np.arange(0.0, top, step), top)
        for a, c in zip(knots, knots[1:]):
            if c <= a:
                continue
            rows.append(nb + t)
            cols.append(n)
            vals.append(-1.0)
            cols_gain.append(-(s.cost.total(c) - s.cost.total(a)) / (c - a))
            bounds.append((0, c - a))
            n += 1
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(nb + ni, n))
    res = optimize.linprog(-np.array(cols_gain), A_eq=A, b_eq=np.zeros(nb + ni), bounds=bounds, method="highs")
    assert res.status == 0
    return -res.fun


def test_two_items_equalize_marginals():
    inst = market([UniformDemand(1.0, 3.0)], [QuadraticCost(1.0), QuadraticCost(2.0)])
    res = min_cost_flow(inst, [3.0])
    assert res.loads == pytest.approx([2.0, 1.0], abs=1e-7)
    assert res.item_marginal == pytest.approx([4.0, 4.0], abs=1e-6)
    assert res.kkt <= 1e-7


def test_descent_method_agrees():
    inst = market([UniformDemand(1.0, 3.0)], [QuadraticCost(1.0), QuadraticCost(2.0)])
    res = min_cost_flow(inst, [3.0], method="descent")
    assert res.loads == pytest.approx([2.0, 1.0], abs=1e-6)


def test_zero_costs_any_feasible_flow():
    inst = market([UniformDemand(1.0, 2.0), UniformDemand(1.0, 1.0)], [ZeroCost(), ZeroCost()])
    res = min_cost_flow(inst, [2.0, 1.0])
    assert res.flow.sum(axis=1) == pytest.approx([2.0, 1.0])
    assert res.kkt == 0.0
    assert res.objective(inst) == 0.0


def test_capacity_infeasible():
    inst = market([UniformDemand(1.0, 2.0)], [ZeroCost(cap=1.0)])
    with pytest.raises(InfeasibleDemandError):
        min_cost_flow(inst, [2.0])


def test_kkt_violation_of_swapped_flow():
    inst = market([UniformDemand(1.0, 3.0)], [QuadraticCost(1.0), QuadraticCost(2.0)])
    res = min_cost_flow(inst, [3.0])
    assert kkt_violation(inst, [3.0], res.flow) <= 1e-7
    bad = np.array([[1.0, 2.0]])
    # marginals 2 and 8: the gap is the violation
    assert kkt_violation(inst, [3.0], bad) == pytest.approx(6.0)


def test_random_quadratic_matches_discrete_oracle():
    rng = np.random.default_rng(5)
    for trial in range(3):
        costs = [QuadraticCost(rng.uniform(0.2, 2.0), rng.uniform(0.0, 0.3)) for _ in range(3)]
        inst = market([UniformDemand(1.0, 2.0)] * 3, costs, [(i, t) for i in range(3) for t in range(3) if rng.random() < 0.7 or t == i])
        x = rng.uniform(0.1, 2.0, 3)
        ours = min_cost_flow(inst, x).objective(inst)
        ref = discrete_flow_oracle(inst, x, 1e-3).objective
        assert ours == pytest.approx(ref, abs=1e-4 * max(1.0, ref))


def test_welfare_single_buyer_zero_cost():
    w = welfare_opt(market([LinearDemand(1.0, 1.0)], [ZeroCost()]))
    assert w.demand == pytest.approx([1.0])
    assert w.prices == pytest.approx([0.0])
    assert w.welfare == pytest.approx(0.5)


def test_welfare_single_buyer_quadratic():
    w = welfare_opt(market([LinearDemand(1.0, 1.0)], [QuadraticCost(0.5)]))
    assert w.demand == pytest.approx([0.5], abs=1e-7)
    assert w.prices == pytest.approx([0.5], abs=1e-7)
    assert w.welfare == pytest.approx(0.25, abs=1e-9)


def test_welfare_matches_linearized_program():
    for seed in (1, 2, 3):
        inst = random_instance(seed, 4, 4)
        w = welfare_opt(inst)
        assert w.welfare == pytest.approx(welfare_lp(inst, 1e-3), abs=1e-3)
        assert kkt_violation(inst, w.demand, w.flow) <= 1e-7


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), scale=st.floats(1.0, 1.5))
def test_marginals_monotone_in_demand(seed, scale):
    inst = random_instance(seed, 3, 3)
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(0.0, 0.6, inst.n_buyers) * inst.supports
    x2 = np.minimum(x1 * scale + rng.uniform(0, 0.1, inst.n_buyers) * inst.supports, inst.supports)
    r1, r2 = min_cost_flow(inst, x1), min_cost_flow(inst, x2)
    assert np.all(r1.item_marginal <= r2.item_marginal + 1e-6)
    assert np.all(r1.buyer_marginal <= r2.buyer_marginal + 1e-6)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_flow_certificate(seed):
    inst = random_instance(seed, 4, 4)
    x = np.random.default_rng(seed).uniform(0.0, 1.0, inst.n_buyers) * inst.supports
    res = min_cost_flow(inst, x)
    assert res.flow.sum(axis=1) == pytest.approx(x, abs=1e-9)
    assert kkt_violation(inst, x, res.flow) <= 1e-7
