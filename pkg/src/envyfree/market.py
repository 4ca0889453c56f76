"""Market model, solution triple (prices, demand, allocation) and accounting.

Vectors are numpy arrays aligned with ``instance.buyers`` (demand) and
``instance.items`` (prices, loads).  An allocation is a dense
``(n_buyers, n_items)`` flow matrix that is zero off the edge set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .functions import CostFn, DemandFn, check_doubly_convex, check_mhr

DEFAULT_TOL = 1e-7


def close(a: float, b: float, tol: float = DEFAULT_TOL) -> bool:
    """Absolute tolerance with a relative fallback for large magnitudes."""
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


@dataclass(frozen=True)
class BuyerType:
    id: str
    demand: DemandFn


@dataclass(frozen=True)
class Item:
    id: str
    cost: CostFn


class MarketInstance:
    """Bipartite market of buyer types and items.

    Args:
        buyers: buyer types, each with an inverse-demand descriptor.
        items: items, each with a production-cost descriptor.
        edges: (buyer id, item id) pairs; buyer i may buy item t iff the pair
            is present.
    """

    def __init__(self, buyers: Sequence[BuyerType], items: Sequence[Item], edges: Iterable[Tuple[str, str]]):
        self.buyers: Tuple[BuyerType, ...] = tuple(buyers)
        self.items: Tuple[Item, ...] = tuple(items)
        self.edges = frozenset((str(b), str(t)) for b, t in edges)
        self.buyer_index: Dict[str, int] = {b.id: i for i, b in enumerate(self.buyers)}
        self.item_index: Dict[str, int] = {s.id: t for t, s in enumerate(self.items)}
        if len(self.buyer_index) != len(self.buyers) or len(self.item_index) != len(self.items):
            raise ValueError("buyer and item ids must be unique")
        adj: List[List[int]] = [[] for _ in self.buyers]
        for b, t in self.edges:
            if b not in self.buyer_index or t not in self.item_index:
                raise ValueError(f"edge ({b}, {t}) references an unknown id")
            adj[self.buyer_index[b]].append(self.item_index[t])
        for i, lst in enumerate(adj):
            if not lst:
                raise ValueError(f"buyer {self.buyers[i].id} has no accessible item")
            lst.sort()
        self.adj: Tuple[Tuple[int, ...], ...] = tuple(tuple(lst) for lst in adj)
        item_buyers: List[List[int]] = [[] for _ in self.items]
        for i, lst in enumerate(self.adj):
            for t in lst:
                item_buyers[t].append(i)
        self.item_buyers: Tuple[Tuple[int, ...], ...] = tuple(tuple(lst) for lst in item_buyers)
        mask = np.zeros((len(self.buyers), len(self.items)), dtype=bool)
        for i, lst in enumerate(self.adj):
            mask[i, list(lst)] = True
        self.mask = mask

    @property
    def n_buyers(self) -> int:
        return len(self.buyers)

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def demands(self) -> Tuple[DemandFn, ...]:
        return tuple(b.demand for b in self.buyers)

    @property
    def costs(self) -> Tuple[CostFn, ...]:
        return tuple(s.cost for s in self.items)

    @property
    def peaks(self) -> np.ndarray:
        return np.array([b.demand.peak for b in self.buyers])

    @property
    def supports(self) -> np.ndarray:
        return np.array([b.demand.support for b in self.buyers])

    def has_uniform_peak(self, tol: float = DEFAULT_TOL) -> bool:
        peaks = self.peaks
        return bool(np.all([close(p, peaks[0], tol) for p in peaks]))

    def price_vector(self, prices: Mapping[str, float]) -> np.ndarray:
        return np.array([float(prices[s.id]) for s in self.items])

    def validate(self, grid_size: int = 1024) -> List[str]:
        """Certify every demand as MHR and every cost as convex.

        Returns a list of problems; empty means the instance is valid.
        """
        problems = []
        for b in self.buyers:
            cert = check_mhr(b.demand, grid_size)
            if not cert.passed:
                problems.append(f"buyer {b.id}: {cert.detail}")
        for s in self.items:
            c = s.cost
            c0 = c.marginal(0.0)
            hi = c.capacity if math.isfinite(c.capacity) else 10.0
            ys = np.linspace(0.0, hi, 64)
            ms = [c.marginal(y) for y in ys]
            if abs(c.total(0.0)) > DEFAULT_TOL or any(b < a - DEFAULT_TOL * max(1.0, abs(a)) for a, b in zip(ms, ms[1:])):
                problems.append(f"item {s.id}: cost is not convex with C(0) = 0")
            elif c0 < 0:
                problems.append(f"item {s.id}: negative marginal cost")
        return problems

    def doubly_convex_failures(self, grid_size: int = 1024) -> List[str]:
        return [s.id for s in self.items if not check_doubly_convex(s.cost, grid_size).passed]

    def to_record(self) -> dict:
        return {
            "buyers": [{"id": b.id, "demand": b.demand.to_record()} for b in self.buyers],
            "items": [{"id": s.id, "cost": s.cost.to_record()} for s in self.items],
            "edges": sorted([list(e) for e in self.edges]),
        }


# ---------------------------------------------------------------------------
# Elementary operations
# ---------------------------------------------------------------------------


def cheapest_price(prices: np.ndarray, buyer_id: str, instance: MarketInstance) -> float:
    if buyer_id not in instance.buyer_index:
        raise KeyError(f"unknown buyer id {buyer_id!r}")
    return float(min(prices[t] for t in instance.adj[instance.buyer_index[buyer_id]]))


def cheapest_prices(prices: np.ndarray, instance: MarketInstance) -> np.ndarray:
    return np.array([min(prices[t] for t in lst) for lst in instance.adj])


def best_response(prices: np.ndarray, instance: MarketInstance) -> np.ndarray:
    """Demand x_i = sup{x : lambda_i(x) >= cheapest price of buyer i}."""
    pbar = cheapest_prices(prices, instance)
    return np.array([b.demand.inverse(p) for b, p in zip(instance.buyers, pbar)])


def item_loads(flow: np.ndarray) -> np.ndarray:
    return flow.sum(axis=0)


def total_cost(loads: np.ndarray, instance: MarketInstance) -> float:
    return float(sum(s.cost.total(y) for s, y in zip(instance.items, loads)))


def revenue_of(prices: np.ndarray, flow: np.ndarray, instance: MarketInstance) -> float:
    y = item_loads(flow)
    return float(np.dot(prices, y)) - total_cost(y, instance)


def welfare_of(demand: np.ndarray, flow: np.ndarray, instance: MarketInstance) -> float:
    value = sum(b.demand.integral(0.0, min(x, b.demand.support)) for b, x in zip(instance.buyers, demand))
    return float(value) - total_cost(item_loads(flow), instance)


def kkt_residual(instance: MarketInstance, demand: np.ndarray, flow: np.ndarray, tol: float = DEFAULT_TOL) -> float:
    """Largest gap between a used item's marginal and the cheapest accessible
    marginal of the same buyer; zero iff the allocation is a min-cost flow."""
    y = item_loads(flow)
    lower = np.array([s.cost.marginal(v) for s, v in zip(instance.items, y)])
    upper = np.array([s.cost.upper_marginal(v, tol) for s, v in zip(instance.items, y)])
    worst = 0.0
    for i, lst in enumerate(instance.adj):
        used = [t for t in lst if flow[i, t] > tol]
        if not used:
            continue
        gap = max(lower[t] for t in used) - min(upper[t] for t in lst)
        worst = max(worst, gap)
    return float(worst)


@dataclass(frozen=True)
class EnvyViolation:
    kind: str  # "envy" or "best-response"
    buyer: str
    item: Optional[str]
    residual: float


@dataclass(frozen=True)
class EnvyReport:
    max_residual: float
    violations: Tuple[EnvyViolation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def _best_response_residual(fn: DemandFn, x: float, pbar: float, tol: float) -> float:
    """Price-unit distance from a best response, aware of the support clamps."""
    if x <= tol:
        return max(0.0, fn.peak - pbar)
    if x >= fn.support - tol:
        return max(0.0, pbar - fn.value(fn.support))
    return abs(fn.value(x) - pbar)


def envy_report(
    instance: MarketInstance, prices: np.ndarray, demand: np.ndarray, flow: np.ndarray, tol: float = DEFAULT_TOL
) -> EnvyReport:
    pbar = cheapest_prices(prices, instance)
    violations = []
    worst = 0.0
    for i, lst in enumerate(instance.adj):
        bid = instance.buyers[i].id
        for t in lst:
            if flow[i, t] > tol:
                r = max(0.0, prices[t] - pbar[i])
                worst = max(worst, r)
                if r > tol:
                    violations.append(EnvyViolation("envy", bid, instance.items[t].id, r))
        r = _best_response_residual(instance.buyers[i].demand, demand[i], pbar[i], tol)
        worst = max(worst, r)
        if r > tol:
            violations.append(EnvyViolation("best-response", bid, None, r))
    return EnvyReport(float(worst), tuple(violations))


@dataclass(frozen=True)
class Solution:
    """A (prices, demand, allocation) triple with its diagnostics."""

    prices: np.ndarray
    demand: np.ndarray
    flow: np.ndarray
    revenue: float
    welfare: float
    envy_residual: float
    kkt_residual: float
    notes: Tuple[str, ...] = field(default=())

    @property
    def loads(self) -> np.ndarray:
        return item_loads(self.flow)

    @classmethod
    def build(
        cls,
        instance: MarketInstance,
        prices: np.ndarray,
        demand: np.ndarray,
        flow: np.ndarray,
        tol: float = DEFAULT_TOL,
        notes: Sequence[str] = (),
    ) -> "Solution":
        prices = np.asarray(prices, dtype=float)
        demand = np.asarray(demand, dtype=float)
        flow = np.asarray(flow, dtype=float)
        if np.any(flow[~instance.mask] != 0):
            raise ValueError("flow placed on a non-edge")
        return cls(
            prices=prices,
            demand=demand,
            flow=flow,
            revenue=revenue_of(prices, flow, instance),
            welfare=welfare_of(demand, flow, instance),
            envy_residual=envy_report(instance, prices, demand, flow, tol).max_residual,
            kkt_residual=kkt_residual(instance, demand, flow, tol),
            notes=tuple(notes),
        )

    def conservation_gap(self) -> float:
        return float(np.max(np.abs(self.flow.sum(axis=1) - self.demand), initial=0.0))


def revenue(solution: Solution, instance: MarketInstance) -> float:
    return revenue_of(solution.prices, solution.flow, instance)


def social_welfare(solution: Solution, instance: MarketInstance) -> float:
    return welfare_of(solution.demand, solution.flow, instance)


def check_envy_free(solution: Solution, instance: MarketInstance, tol: float = DEFAULT_TOL) -> EnvyReport:
    return envy_report(instance, solution.prices, solution.demand, solution.flow, tol)
