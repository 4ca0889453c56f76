"""Convex-cost transportation: min-cost flows, KKT certificates and the
welfare optimum.

The default solver peels the optimal flow into level components.  At the
optimum every buyer uses only items of one common marginal cost (its level),
and the items at the highest level together with the buyers that can reach
nothing else form a component that is tight: their capacity at that level
exactly covers their demand.  The highest level is found by a Newton-style
iteration over violated cuts of a max-flow feasibility test, the component is
routed, removed, and the procedure repeats on what is left.

An alternative solver repeatedly re-routes flow along the edge with the
largest marginal gap until the gap falls below tolerance.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import List, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import InfeasibleDemandError, SolverError
from .functions import CostFn, DemandFn, LinearCost
from .market import DEFAULT_TOL, MarketInstance, Solution, best_response, cheapest_prices, kkt_residual
from .search import bracket_increasing

LEVEL_RTOL = 1e-14
DESCENT_MAX_ITER = 200_000


# ---------------------------------------------------------------------------
# Bipartite max-flow on buyer -> item -> sink with real capacities
# ---------------------------------------------------------------------------


class _MaxFlow:
    """Augmenting-path max-flow from buyer supplies to item capacities.

    Buyer-to-item edges are uncapacitated.  State (edge flows, buyer
    throughput, item loads) persists across calls so capacities can be raised
    and augmentation resumed; item loads never decrease while augmenting.
    """

    def __init__(self, supply, adj, item_buyers, buyers, items, eps):
        self.supply = supply
        self.adj = adj
        self.item_buyers = item_buyers
        self.buyers = buyers
        self.items = items
        self.eps = eps
        self.f = {}
        self.sent = {i: 0.0 for i in buyers}
        self.load = {t: 0.0 for t in items}
        self.value = 0.0

    def _bfs(self, caps):
        parent_item = {}
        parent_buyer = {}
        queue = deque()
        for i in self.buyers:
            if self.supply[i] - self.sent[i] > self.eps:
                parent_buyer[i] = None
                queue.append(i)
        while queue:
            i = queue.popleft()
            for t in self.adj[i]:
                if t not in self.items or t in parent_item:
                    continue
                parent_item[t] = i
                if caps[t] - self.load[t] > self.eps:
                    return t, parent_item, parent_buyer
                for j in self.item_buyers[t]:
                    if j in self.buyers and j not in parent_buyer and self.f.get((j, t), 0.0) > self.eps:
                        parent_buyer[j] = t
                        queue.append(j)
        return None, parent_item, parent_buyer

    def augment(self, caps):
        while True:
            end, parent_item, parent_buyer = self._bfs(caps)
            if end is None:
                self.reach_items = set(parent_item)
                self.reach_buyers = set(parent_buyer)
                return self.value
            path = []
            t = end
            bottleneck = caps[end] - self.load[end]
            while True:
                i = parent_item[t]
                path.append((i, t))
                back = parent_buyer[i]
                if back is None:
                    bottleneck = min(bottleneck, self.supply[i] - self.sent[i])
                    root = i
                    break
                bottleneck = min(bottleneck, self.f[(i, back)])
                t = back
            # path alternates forward (i -> t) and backward (i <- back) edges
            for k, (i, t) in enumerate(path):
                self.f[(i, t)] = self.f.get((i, t), 0.0) + bottleneck
                back = parent_buyer[i]
                if back is not None:
                    self.f[(i, back)] -= bottleneck
            self.sent[root] += bottleneck
            self.load[end] += bottleneck
            self.value += bottleneck


# ---------------------------------------------------------------------------
# Level-decomposition solver
# ---------------------------------------------------------------------------


@dataclass
class _RawFlow:
    flow: np.ndarray
    item_level: np.ndarray
    buyer_level: np.ndarray
    iterations: int
    maxflows: int


def _level_bracket(costs, items, demand, xtol_rel=LEVEL_RTOL):
    """Smallest marginal level m at which the items can jointly absorb
    ``demand``; returned as a tight bracket (lo, hi)."""

    def excess(m):
        s = 0.0
        for t in items:
            s += costs[t].load_at(m)
            if s == math.inf:
                return math.inf
        return s - demand

    base = [costs[t].marginal(0.0) for t in items]
    lo = min(base) - 1.0
    hi = max(base) + 1.0
    f_hi = excess(hi)
    n = 0
    while f_hi < 0:
        lo = hi
        hi = 2.0 * hi + 1.0
        f_hi = excess(hi)
        n += 1
        if n > 2000 or not math.isfinite(hi):
            raise InfeasibleDemandError(
                "demand exceeds the total capacity of the reachable items", (), sorted(items), -f_hi
            )
    f_lo = excess(lo)
    xtol = xtol_rel * max(1.0, abs(hi))
    lo, hi, _, _, _ = bracket_increasing(excess, lo, hi, f_lo, f_hi, xtol)
    return lo, hi


def _solve_levels(demand, costs, adj, tol) -> _RawFlow:
    nb, ni = len(demand), len(costs)
    item_buyers: List[List[int]] = [[] for _ in range(ni)]
    for i, lst in enumerate(adj):
        for t in lst:
            item_buyers[t].append(i)
    scale = max(1.0, float(sum(demand)))
    eta = 1e-12 * scale
    eps = 1e-15 * scale
    flow = np.zeros((nb, ni))
    item_level = np.array([c.marginal(0.0) for c in costs], dtype=float)
    buyer_level = np.full(nb, np.nan)
    rem_b: Set[int] = {i for i in range(nb) if demand[i] > 0}
    rem_t: Set[int] = set(range(ni))
    iterations = maxflows = 0

    if any(math.isfinite(c.capacity) for c in costs) and rem_b:
        probe = _MaxFlow(demand, adj, item_buyers, rem_b, rem_t, eps)
        probe.augment({t: costs[t].capacity for t in rem_t})
        maxflows += 1
        deficit = sum(demand[i] for i in rem_b) - probe.value
        if deficit > eta:
            raise InfeasibleDemandError(
                "demand cannot be routed within item capacities",
                sorted(probe.reach_buyers),
                sorted(probe.reach_items),
                deficit,
            )

    while rem_b:
        total = sum(demand[i] for i in rem_b)
        A, U = set(rem_t), set(rem_b)
        for _ in range(len(rem_t) + 3):
            iterations += 1
            lo, hi = _level_bracket(costs, A, sum(demand[i] for i in U))
            trial = _MaxFlow(demand, adj, item_buyers, rem_b, rem_t, eps)
            trial.augment({t: costs[t].load_at(hi) for t in rem_t})
            maxflows += 1
            if trial.value >= total - eta:
                break
            A = set(trial.reach_items)
            U = {i for i in rem_b if all(t in A for t in adj[i] if t in rem_t)}
        else:
            raise SolverError("level search did not converge")

        # The top component is the minimal violated cut just below the level.
        # With flat marginals (zero or linear costs) the set found above may
        # also contain items whose own level is lower.
        cut = _MaxFlow(demand, adj, item_buyers, rem_b, rem_t, eps)
        cut.augment({t: costs[t].load_at(lo) for t in rem_t})
        maxflows += 1
        if cut.value < total - eta:
            A = set(cut.reach_items)
            U = {i for i in rem_b if all(t in A for t in adj[i] if t in rem_t)}

        route = _MaxFlow(demand, adj, item_buyers, U, A, eps)
        route.augment({t: costs[t].load_at(lo) for t in A})
        route.augment({t: costs[t].load_at(hi) for t in A})
        maxflows += 2
        need = sum(demand[i] for i in U)
        if route.value < need - 1e3 * eta:
            raise SolverError(f"component routing left {need - route.value:.3g} unserved")
        for (i, t), v in route.f.items():
            if v > 0:
                flow[i, t] = v
        for t in A:
            item_level[t] = max(hi, costs[t].marginal(0.0)) if route.load[t] <= eps else hi
        for i in U:
            buyer_level[i] = hi
        rem_b -= U
        rem_t -= A
    return _RawFlow(flow, item_level, buyer_level, iterations, maxflows)


# ---------------------------------------------------------------------------
# Pairwise re-routing descent
# ---------------------------------------------------------------------------


def _equalize(c_hi: CostFn, y_hi: float, c_lo: CostFn, y_lo: float, limit: float) -> float:
    """Amount to move from the expensive item to the cheap one so that their
    marginals meet, at most ``limit``."""
    room = c_lo.capacity - y_lo
    limit = min(limit, room)
    if limit <= 0:
        return 0.0

    def gap(d):
        return c_hi.marginal(y_hi - d) - c_lo.marginal(y_lo + d)

    if gap(limit) >= 0:
        return limit
    if hasattr(c_hi, "a") and hasattr(c_lo, "a") and c_hi.family == c_lo.family == "quadratic":
        d = (c_hi.marginal(y_hi) - c_lo.marginal(y_lo)) / (2 * c_hi.a + 2 * c_lo.a)
        return min(max(d, 0.0), limit)
    lo, hi = 0.0, limit
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if gap(mid) >= 0:
            lo = mid
        else:
            hi = mid
    return lo


def _solve_descent(demand, costs, adj, tol, max_iter=DESCENT_MAX_ITER) -> _RawFlow:
    nb, ni = len(demand), len(costs)
    item_buyers: List[List[int]] = [[] for _ in range(ni)]
    for i, lst in enumerate(adj):
        for t in lst:
            item_buyers[t].append(i)
    scale = max(1.0, float(sum(demand)))
    buyers = {i for i in range(nb) if demand[i] > 0}
    start = _MaxFlow(demand, adj, item_buyers, buyers, set(range(ni)), 1e-15 * scale)
    start.augment({t: costs[t].capacity for t in range(ni)})
    if start.value < sum(demand[i] for i in buyers) - 1e-12 * scale:
        raise InfeasibleDemandError("demand cannot be routed within item capacities")
    flow = np.zeros((nb, ni))
    for (i, t), v in start.f.items():
        flow[i, t] = max(v, 0.0)
    loads = flow.sum(axis=0)
    tiny = 1e-15 * scale
    it = 0
    while it < max_iter:
        it += 1
        lower = [c.marginal(y) for c, y in zip(costs, loads)]
        upper = [c.upper_marginal(y, tiny) for c, y in zip(costs, loads)]
        best = (tol, -1, -1, -1)
        for i in buyers:
            used = [t for t in adj[i] if flow[i, t] > tiny]
            t_hi = max(used, key=lambda t: (lower[t], -t))
            t_lo = min(adj[i], key=lambda t: (upper[t], t))
            g = lower[t_hi] - upper[t_lo]
            if g > best[0]:
                best = (g, i, t_hi, t_lo)
        g, i, t_hi, t_lo = best
        if i < 0:
            break
        d = _equalize(costs[t_hi], loads[t_hi], costs[t_lo], loads[t_lo], flow[i, t_hi])
        if d <= 0:
            break
        flow[i, t_hi] -= d
        flow[i, t_lo] += d
        loads[t_hi] -= d
        loads[t_lo] += d
    levels = np.array([c.marginal(y) for c, y in zip(costs, loads)])
    buyer_level = np.array(
        [min(levels[t] for t in adj[i] if flow[i, t] > tiny) if i in buyers else np.nan for i in range(nb)]
    )
    return _RawFlow(flow, levels, buyer_level, it, 1)


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FlowResult:
    """A min-cost allocation with its optimality certificate.

    Attributes:
        flow: (n_buyers, n_items) allocation.
        buyer_marginal: r_i, the smallest marginal among items buyer i uses
            (smallest accessible marginal for buyers with no demand).
        buyer_spread: largest minus smallest marginal among used items.
        item_marginal: c_t(y_t).
        item_level: marginal level of each item's component (equals the
            marginal unless the item sits at its capacity).
        kkt: certificate residual, zero iff min-cost within tolerance.
        iterations: solver iterations.
        maxflows: number of max-flow calls.
    """

    flow: np.ndarray
    buyer_marginal: np.ndarray
    buyer_spread: np.ndarray
    item_marginal: np.ndarray
    item_level: np.ndarray
    kkt: float
    iterations: int
    maxflows: int

    @property
    def loads(self) -> np.ndarray:
        return self.flow.sum(axis=0)

    def objective(self, instance: MarketInstance) -> float:
        return float(sum(s.cost.total(y) for s, y in zip(instance.items, self.loads)))


def _adjacency(instance: MarketInstance, allowed: Optional[np.ndarray]) -> List[List[int]]:
    if allowed is None:
        return [list(lst) for lst in instance.adj]
    return [[t for t in lst if allowed[i, t]] for i, lst in enumerate(instance.adj)]


def _run(demand, costs, adj, tol, method):
    if method == "levels":
        return _solve_levels(demand, costs, adj, tol)
    if method == "descent":
        return _solve_descent(demand, costs, adj, tol)
    raise ValueError(f"unknown flow method {method!r}")


def min_cost_flow(
    instance: MarketInstance,
    demand: Sequence[float],
    tol: float = DEFAULT_TOL,
    allowed: Optional[np.ndarray] = None,
    method: str = "levels",
) -> FlowResult:
    """Route ``demand`` through the bipartite graph at least production cost.

    Args:
        instance: the market.
        demand: quantity per buyer.
        tol: certificate tolerance.
        allowed: optional boolean (n_buyers, n_items) mask restricting edges.
        method: "levels" (exact level decomposition) or "descent" (pairwise
            marginal equalization).

    Raises:
        InfeasibleDemandError: when capacities cannot absorb the demand.
    """
    demand = [float(v) for v in demand]
    for i, (x, fn) in enumerate(zip(demand, instance.demands)):
        if x < 0 or x > fn.support * (1 + 1e-9) + 1e-12:
            raise ValueError(f"demand of buyer {instance.buyers[i].id} outside [0, T]")
    adj = _adjacency(instance, allowed)
    for i, lst in enumerate(adj):
        if demand[i] > 0 and not lst:
            raise InfeasibleDemandError(f"buyer {instance.buyers[i].id} has demand but no allowed item", [i])
    raw = _run(demand, list(instance.costs), adj, tol, method)
    return _certify(instance, demand, raw, adj, tol)


def _certify(instance, demand, raw: _RawFlow, adj, tol) -> FlowResult:
    flow = raw.flow
    loads = flow.sum(axis=0)
    marg = np.array([s.cost.marginal(y) for s, y in zip(instance.items, loads)])
    upper = np.array([s.cost.upper_marginal(y, tol) for s, y in zip(instance.items, loads)])
    r = np.zeros(instance.n_buyers)
    spread = np.zeros(instance.n_buyers)
    worst = 0.0
    for i in range(instance.n_buyers):
        lst = adj[i]
        if not lst:
            r[i] = math.nan
            continue
        used = [t for t in lst if flow[i, t] > tol]
        if not used:
            r[i] = min(marg[t] for t in lst)
            continue
        lo_used = min(marg[t] for t in used)
        hi_used = max(marg[t] for t in used)
        r[i] = lo_used
        spread[i] = hi_used - lo_used
        worst = max(worst, hi_used - min(upper[t] for t in lst))
    return FlowResult(flow, r, spread, marg, raw.item_level, float(worst), raw.iterations, raw.maxflows)


def kkt_violation(instance: MarketInstance, demand: Sequence[float], flow: np.ndarray, tol: float = DEFAULT_TOL) -> float:
    """Largest excess of a used item's marginal over the cheapest accessible
    marginal of the same buyer."""
    flow = np.asarray(flow, dtype=float)
    gap = np.max(np.abs(flow.sum(axis=1) - np.asarray(demand, dtype=float)), initial=0.0)
    if gap > max(tol, 1e-9 * max(1.0, float(np.sum(demand)))):
        raise ValueError(f"allocation does not conserve demand (gap {gap:.3g})")
    return kkt_residual(instance, np.asarray(demand, dtype=float), flow, tol)


# ---------------------------------------------------------------------------
# Welfare optimum
# ---------------------------------------------------------------------------


class UnsoldMass:
    """The unsold part u = T - x of a buyer's population viewed as a private
    item: its marginal cost lambda(T - u) is the value forgone by not selling,
    so maximizing welfare is a min-cost flow of every buyer's full mass T."""

    family = "unsold"

    def __init__(self, fn: DemandFn):
        self.fn = fn
        self.T = fn.support

    @property
    def capacity(self) -> float:
        return self.T

    def marginal(self, u: float) -> float:
        return self.fn.value(max(self.T - u, 0.0))

    def upper_marginal(self, u: float, tol: float = 0.0) -> float:
        return math.inf if u >= self.T - tol else self.marginal(u)

    def total(self, u: float) -> float:
        return self.fn.integral(max(self.T - u, 0.0), self.T)

    def load_at(self, m: float) -> float:
        if m < self.marginal(0.0):
            return 0.0
        return self.T - self.fn.lower_inverse(m)


@dataclass(frozen=True)
class WelfareOptimum:
    demand: np.ndarray
    flow: np.ndarray
    prices: np.ndarray
    welfare: float
    buyer_level: np.ndarray
    solution: Solution


def welfare_opt(instance: MarketInstance, tol: float = DEFAULT_TOL, allowed: Optional[np.ndarray] = None) -> WelfareOptimum:
    """Maximize sum_i int_0^{x_i} lambda_i - sum_t C_t(y_t) over feasible (x, y).

    Prices are the marginal costs at the optimum, p*_t = c_t(y*_t); an item
    pinned at its capacity is priced at the level of the buyers it serves.
    """
    nb, ni = instance.n_buyers, instance.n_items
    costs: List = list(instance.costs) + [UnsoldMass(fn) for fn in instance.demands]
    adj = [lst + [ni + i] for i, lst in enumerate(_adjacency(instance, allowed))]
    supply = [fn.support for fn in instance.demands]
    raw = _solve_levels(supply, costs, adj, tol)
    unsold = raw.flow[np.arange(nb), ni + np.arange(nb)]
    x = np.clip(np.array(supply) - unsold, 0.0, None)
    flow = raw.flow[:, :ni].copy()
    loads = flow.sum(axis=0)
    prices = np.array([s.cost.marginal(y) for s, y in zip(instance.items, loads)])
    for t, s in enumerate(instance.items):
        if loads[t] >= s.cost.capacity - tol:
            prices[t] = max(prices[t], raw.item_level[t])
    sol = Solution.build(instance, prices, x, flow, tol)
    return WelfareOptimum(x, flow, prices, sol.welfare, raw.buyer_level, sol)


# ---------------------------------------------------------------------------
# Envy-free allocation at given prices
# ---------------------------------------------------------------------------


def price_level_mask(instance: MarketInstance, prices: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Edges (i, t) where item t is among buyer i's cheapest accessible items."""
    pbar = cheapest_prices(prices, instance)
    mask = np.zeros_like(instance.mask)
    for i, lst in enumerate(instance.adj):
        for t in lst:
            if prices[t] <= pbar[i] + tol * max(1.0, abs(pbar[i])):
                mask[i, t] = True
    return mask


def revenue_best_demand(
    instance: MarketInstance,
    lower: Sequence[float],
    upper: Sequence[float],
    pbar: Sequence[float],
    tol: float = DEFAULT_TOL,
    allowed: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Demand in [lower_i, upper_i] and its routing maximizing payments minus
    cost, when every unit between the bounds pays pbar_i.

    The optional part of buyer i is offered a private outlet of capacity
    upper_i - lower_i at constant marginal pbar_i (the payment forgone), so
    one min-cost flow of the full ``upper`` decides both.
    """
    ni = instance.n_items
    costs: List = list(instance.costs)
    adj = _adjacency(instance, allowed)
    for i, (lo, hi, p) in enumerate(zip(lower, upper, pbar)):
        costs.append(LinearCost(float(p), cap=max(float(hi) - float(lo), 0.0)))
        if hi > lo:
            adj[i] = adj[i] + [ni + i]
    raw = _solve_levels([float(v) for v in upper], costs, adj, tol)
    unsold = raw.flow[np.arange(instance.n_buyers), ni + np.arange(instance.n_buyers)]
    x = np.clip(np.asarray(upper, dtype=float) - unsold, 0.0, None)
    return x, raw.flow[:, :ni].copy()


def envy_free_solution(
    instance: MarketInstance,
    prices: np.ndarray,
    tol: float = DEFAULT_TOL,
    demand: Optional[np.ndarray] = None,
    indifference: str = "sup",
) -> Solution:
    """Best-response demand at ``prices`` allocated at least cost among all
    envy-free allocations (buyers served only by their cheapest items).

    ``indifference`` settles buyers whose cheapest price equals their value
    on a whole interval of masses (plateau demand): "sup" buys the largest
    mass, "revenue" buys whatever mass in the interval is most profitable.
    """
    prices = np.asarray(prices, dtype=float)
    mask = price_level_mask(instance, prices, tol)
    if indifference == "revenue" and demand is None:
        pbar = cheapest_prices(prices, instance)
        lo = [b.demand.lower_inverse(p) for b, p in zip(instance.buyers, pbar)]
        hi = [b.demand.inverse(p) for b, p in zip(instance.buyers, pbar)]
        x, flow = revenue_best_demand(instance, lo, hi, pbar, tol, mask)
        return Solution.build(instance, prices, x, flow, tol)
    if indifference not in ("sup", "revenue"):
        raise ValueError(f"unknown indifference rule {indifference!r}")
    x = best_response(prices, instance) if demand is None else np.asarray(demand, dtype=float)
    res = min_cost_flow(instance, x, tol, allowed=mask)
    return Solution.build(instance, prices, x, res.flow, tol)
