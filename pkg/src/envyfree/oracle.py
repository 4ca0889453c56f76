"""Independent oracles, property suites and instance generators.

Nothing here is used by the pricing algorithms themselves.  The oracles are
deliberately simple so that their agreement with the algorithms is evidence:

* ``grid_opt_revenue`` searches envy-free revenue over per-item price grids.
* ``discrete_flow_oracle`` solves the min-cost allocation as a linear program
  over piecewise-linearized costs.
* ``sweep_ascent`` replays the ascending-price procedure with a fixed small
  price step instead of a root search.
* ``lemma_suite`` evaluates the structural flow and MHR inequalities that the
  approximation guarantees rest on.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize, sparse

from .ascending import AscendConfig, run_ascending, stop_gap
from .errors import OracleBudgetError
from .flow import envy_free_solution, min_cost_flow, revenue_best_demand, welfare_opt
from .functions import (
    CostFn,
    DemandFn,
    ExponentialDemand,
    LinearCost,
    LinearDemand,
    QuadraticCost,
    ShiftedDemand,
    UniformDemand,
    ZeroCost,
    check_mhr,
)
from .market import DEFAULT_TOL, BuyerType, Item, MarketInstance, Solution, best_response, cheapest_prices

DEFAULT_BUDGET = 10**7
DEMAND_FAMILIES = ("linear", "exponential", "uniform")
COST_FAMILIES = ("zero", "linear", "quadratic")
EXP_FLOOR = 1e-6
INDIFFERENCE_GAP = 1e-12

# ---------------------------------------------------------------------------
# Instance generators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InstanceSpec:
    """Recipe for a generated market.

    Attributes:
        generator: "random-mhr", "vertex-cover-gadget" or "manual".
        seed: seed of the random generator.
        n_buyers: number of buyer types (random-mhr).
        n_items: number of items (random-mhr).
        delta: ratio of the largest to the smallest peak; 1 gives equal peaks.
        peak: the smallest peak.
        demand_families: families sampled for buyers.
        cost_families: families sampled for items.
        doubly_convex_only: restrict costs to families with convex marginal
            and zero marginal at zero output.
        edge_prob: probability of each buyer-item edge beyond the one
            guaranteed edge per buyer.
        graph: edge list of the graph (vertex-cover-gadget).
        n_vertices: vertex count, so isolated vertices are representable.
        copies: buyers per graph edge; None means the vertex count.
    """

    generator: str = "random-mhr"
    seed: int = 0
    n_buyers: int = 3
    n_items: int = 3
    delta: float = 1.0
    peak: float = 1.0
    demand_families: Tuple[str, ...] = DEMAND_FAMILIES
    cost_families: Tuple[str, ...] = COST_FAMILIES
    doubly_convex_only: bool = False
    edge_prob: float = 0.4
    graph: Tuple[Tuple[int, int], ...] = ()
    n_vertices: int = 0
    copies: Optional[int] = None

    def to_record(self) -> dict:
        rec = {
            "generator": self.generator,
            "seed": self.seed,
            "n_buyers": self.n_buyers,
            "n_items": self.n_items,
            "delta": self.delta,
            "peak": self.peak,
            "demand_families": list(self.demand_families),
            "cost_families": list(self.cost_families),
            "doubly_convex_only": self.doubly_convex_only,
            "edge_prob": self.edge_prob,
            "graph": [list(e) for e in self.graph],
            "n_vertices": self.n_vertices,
            "copies": self.copies,
        }
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "InstanceSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(rec) - known
        if unknown:
            raise ValueError(f"unknown generator field(s): {', '.join(sorted(unknown))}")
        kw = dict(rec)
        for key in ("demand_families", "cost_families"):
            if key in kw:
                kw[key] = tuple(kw[key])
        if "graph" in kw:
            kw["graph"] = tuple(tuple(int(v) for v in e) for e in kw["graph"])
        return cls(**kw)


def _random_demand(rng: np.random.Generator, family: str, peak: float) -> DemandFn:
    if family == "linear":
        return LinearDemand(peak, peak * rng.uniform(0.5, 2.0))
    if family == "exponential":
        rate = rng.uniform(0.5, 2.0)
        T = min(rng.uniform(1.0, 3.0), math.log(peak / EXP_FLOOR) / rate)
        return ExponentialDemand(peak, rate, T)
    if family == "uniform":
        return UniformDemand(peak, rng.uniform(0.5, 1.5))
    raise ValueError(f"unknown demand family {family!r}")


def _random_cost(rng: np.random.Generator, family: str, scale: float, doubly_convex: bool) -> CostFn:
    if family == "zero":
        return ZeroCost()
    if family == "linear":
        return LinearCost(scale * rng.uniform(0.05, 0.6))
    if family == "quadratic":
        b = 0.0 if doubly_convex else scale * rng.uniform(0.0, 0.3)
        return QuadraticCost(scale * rng.uniform(0.1, 1.0), b)
    raise ValueError(f"unknown cost family {family!r}")


def gen_random_mhr_instance(spec: InstanceSpec) -> MarketInstance:
    """Seeded random market with MHR demand and convex costs.

    With ``delta > 1`` the peaks spread log-uniformly over
    [peak, peak * delta], the first buyer sitting at the bottom and the
    second at the top so the realized ratio equals ``delta`` exactly.
    """
    if spec.n_buyers < 1 or spec.n_items < 1:
        raise ValueError("need at least one buyer and one item")
    if spec.delta < 1:
        raise ValueError("delta must be at least 1")
    if spec.delta > 1 and spec.n_buyers < 2:
        raise ValueError("a peak spread needs at least two buyers")
    rng = np.random.default_rng(spec.seed)
    lo = spec.peak
    if spec.delta > 1:
        peaks = lo * np.exp(rng.uniform(0.0, math.log(spec.delta), spec.n_buyers))
        peaks[0], peaks[1] = lo, lo * spec.delta
    else:
        peaks = np.full(spec.n_buyers, lo)
    cost_families = spec.cost_families
    if spec.doubly_convex_only:
        cost_families = tuple(f for f in cost_families if f != "linear") or ("quadratic",)
    buyers = [
        BuyerType(f"b{i}", _random_demand(rng, str(rng.choice(spec.demand_families)), float(peaks[i])))
        for i in range(spec.n_buyers)
    ]
    items = [
        Item(f"t{t}", _random_cost(rng, str(rng.choice(cost_families)), lo, spec.doubly_convex_only))
        for t in range(spec.n_items)
    ]
    edges = set()
    for i in range(spec.n_buyers):
        edges.add((f"b{i}", f"t{int(rng.integers(spec.n_items))}"))
        for t in range(spec.n_items):
            if rng.random() < spec.edge_prob:
                edges.add((f"b{i}", f"t{t}"))
    return MarketInstance(buyers, items, sorted(edges))


def gen_vertex_cover_gadget(
    graph: Iterable[Tuple[int, int]], n_vertices: Optional[int] = None, copies: Optional[int] = None
) -> MarketInstance:
    """Market encoding a vertex cover problem.

    Every vertex v gets a zero-cost item ``v{v}`` and a unit-mass buyer of
    constant value 2 restricted to it.  Every edge gets ``copies`` buyers
    (default: the number of vertices) with inverse demand 2 - x on [0, 2]
    that may buy either endpoint.  The copies of one edge are aggregated into
    a single buyer type 2 - x / copies on [0, 2 * copies], which has the same
    demand at every price.
    """
    edges = sorted({(min(u, w), max(u, w)) for u, w in graph})
    if any(u == w for u, w in edges):
        raise ValueError("self-loops are not allowed")
    n = n_vertices if n_vertices is not None else 1 + max((w for _, w in edges), default=-1)
    if any(w >= n or u < 0 for u, w in edges):
        raise ValueError("edge endpoint outside the vertex range")
    r = n if copies is None else copies
    if r < 1:
        raise ValueError("copies must be positive")
    items = [Item(f"v{v}", ZeroCost()) for v in range(n)]
    buyers = [BuyerType(f"u{v}", UniformDemand(2.0, 1.0)) for v in range(n)]
    pairs = [(f"u{v}", f"v{v}") for v in range(n)]
    for u, w in edges:
        bid = f"e{u}-{w}"
        buyers.append(BuyerType(bid, LinearDemand(2.0, 1.0 / r, 2.0 * r)))
        pairs += [(bid, f"v{u}"), (bid, f"v{w}")]
    return MarketInstance(buyers, items, pairs)


def generate(spec: InstanceSpec) -> MarketInstance:
    if spec.generator == "random-mhr":
        return gen_random_mhr_instance(spec)
    if spec.generator == "vertex-cover-gadget":
        return gen_vertex_cover_gadget(spec.graph, spec.n_vertices or None, spec.copies)
    raise ValueError(f"generator {spec.generator!r} cannot build an instance")


def is_vertex_cover(edges: Iterable[Tuple[int, int]], cover: Iterable[int]) -> bool:
    chosen = set(cover)
    return all(u in chosen or w in chosen for u, w in edges)


# ---------------------------------------------------------------------------
# Grid revenue oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PriceGrid:
    """Per-item candidate prices: the item's lower bound, the multiples of
    ``step`` strictly between it and ``upper``, and ``upper`` itself."""

    lower: Tuple[float, ...]
    upper: float
    step: float

    def points(self, t: int) -> np.ndarray:
        lo = min(self.lower[t], self.upper)
        k0 = math.floor(lo / self.step) + 1
        k1 = math.ceil(self.upper / self.step)
        mids = np.arange(k0, k1) * self.step
        mids = mids[(mids > lo) & (mids < self.upper)]
        return np.unique(np.concatenate([[lo], mids, [self.upper]]))

    def size(self) -> int:
        return int(np.prod([len(self.points(t)) for t in range(len(self.lower))], dtype=float))

    def to_record(self) -> dict:
        return {"lower": list(self.lower), "upper": self.upper, "step": self.step}


@dataclass(frozen=True)
class OracleReport:
    """Best grid point found by the revenue oracle.

    Attributes:
        prices: best price vector on the grid.
        revenue: its envy-free revenue.
        grid: the searched grid.
        evaluations: number of (block, price) or (price vector) revenue
            evaluations performed.
        wall_time: seconds spent.
        method: "ordered" or "exhaustive".
        slack: resolution bound step * sum_i T_i.
    """

    prices: np.ndarray
    revenue: float
    grid: PriceGrid
    evaluations: int
    wall_time: float
    method: str
    slack: float

    def to_record(self) -> dict:
        return {
            "prices": [float(v) for v in self.prices],
            "revenue": self.revenue,
            "grid": self.grid.to_record(),
            "evaluations": self.evaluations,
            "method": self.method,
            "slack": self.slack,
        }


def price_lower_bounds(instance: MarketInstance, mode: Union[str, Sequence[float]] = "auto", tol: float = DEFAULT_TOL) -> np.ndarray:
    """Per-item lower ends of the oracle box.

    Optimal envy-free prices are at least the k=e ascent prices (equal peaks)
    and at least the welfare-optimal marginal costs in general.
    """
    if not isinstance(mode, str):
        return np.asarray(mode, dtype=float)
    if mode == "zero":
        return np.zeros(instance.n_items)
    if mode == "auto":
        mode = "pe" if instance.has_uniform_peak(tol) else "pstar"
    wopt = welfare_opt(instance, tol)
    if mode == "pstar":
        return wopt.prices.copy()
    if mode == "pe":
        sol, _ = run_ascending(instance, AscendConfig(k=math.e, tol=tol), wopt)
        return sol.prices.copy()
    raise ValueError(f"unknown lower-bound mode {mode!r}")


def _block_revenue(instance, buyers, block, qs, tol):
    """Revenue of one equal-price block: its buyers buy at q, routed at least
    cost over the block's items.  A buyer indifferent over a range of masses
    at q (plateau demand) buys the most profitable mass in that range."""
    if not buyers:
        return np.zeros(len(qs))
    fns = [instance.buyers[i].demand for i in buyers]
    costs = [instance.items[t].cost for t in block]
    allowed = np.zeros_like(instance.mask)
    allowed[np.ix_(buyers, block)] = instance.mask[np.ix_(buyers, block)]
    out = np.zeros(len(qs))
    demand = np.zeros(instance.n_buyers)
    for g, q in enumerate(qs):
        hi = np.array([fn.inverse(q) for fn in fns])
        lo = np.array([fn.lower_inverse(q) for fn in fns])
        if np.any(hi - lo > INDIFFERENCE_GAP) and not all(isinstance(c, ZeroCost) for c in costs):
            lo_full = np.zeros(instance.n_buyers)
            hi_full = np.zeros(instance.n_buyers)
            lo_full[list(buyers)], hi_full[list(buyers)] = lo, hi
            x, flow = revenue_best_demand(instance, lo_full, hi_full, np.full(instance.n_buyers, q), tol, allowed)
            paid = sum(s.cost.total(y) for s, y in zip(instance.items, flow.sum(axis=0)))
            out[g] = q * x.sum() - paid
            continue
        sold = hi.sum()
        if all(isinstance(c, ZeroCost) for c in costs):
            paid = 0.0
        elif len(block) == 1:
            paid = costs[0].total(sold)
        else:
            demand[list(buyers)] = hi
            paid = min_cost_flow(instance, demand, tol, allowed=allowed).objective(instance)
        out[g] = q * sold - paid
    return out


def _ordered_search(instance, grid, budget, tol):
    m = instance.n_items
    G = np.unique(np.concatenate([grid.points(t) for t in range(m)]))
    member = np.array([np.isin(G, grid.points(t)) for t in range(m)])
    adj_bits = [sum(1 << t for t in lst) for lst in instance.adj]
    full = (1 << m) - 1

    def block_buyers(prev, block):
        return tuple(i for i, a in enumerate(adj_bits) if a & block and not a & prev)

    def allowed_mask(block):
        ok = np.ones(len(G), dtype=bool)
        for t in range(m):
            if block >> t & 1:
                ok &= member[t]
        return ok

    pairs = []
    for S in range(1, full + 1):
        B = S
        while B:
            pairs.append((S ^ B, B))
            B = (B - 1) & S
    keys = {}
    for prev, B in pairs:
        key = (block_buyers(prev, B), B)
        keys.setdefault(key, None)
    cost = sum(int(allowed_mask(B).sum()) for _, B in keys)
    if cost > budget:
        raise OracleBudgetError(f"ordered grid search needs {cost} evaluations, budget {budget}")
    rev = {}
    for buyers, B in keys:
        ok = allowed_mask(B)
        vec = np.full(len(G), -math.inf)
        block = [t for t in range(m) if B >> t & 1]
        vec[ok] = _block_revenue(instance, list(buyers), block, G[ok], tol)
        rev[(buyers, B)] = vec

    nG = len(G)
    F = {0: np.zeros(nG)}
    arg = {}
    choice = {}
    for S in sorted(range(1, full + 1), key=lambda s: bin(s).count("1")):
        best = np.full(nG, -math.inf)
        pick = np.zeros(nG, dtype=int)
        B = S
        while B:
            prev = S ^ B
            shifted = np.empty(nG)
            shifted[0] = 0.0 if prev == 0 else -math.inf
            shifted[1:] = F[prev][:-1]
            cand = shifted + rev[(block_buyers(prev, B), B)]
            better = cand > best
            best[better] = cand[better]
            pick[better] = B
            B = (B - 1) & S
        run = np.empty(nG)
        where = np.empty(nG, dtype=int)
        cur, cur_g = -math.inf, -1
        for g in range(nG):
            if best[g] >= cur:
                cur, cur_g = best[g], g
            run[g], where[g] = cur, cur_g
        F[S], arg[S], choice[S] = run, where, pick

    prices = np.zeros(m)
    S, g = full, nG - 1
    while S:
        gs = arg[S][g]
        B = choice[S][gs]
        for t in range(m):
            if B >> t & 1:
                prices[t] = G[gs]
        S ^= B
        g = gs - 1
    return prices, float(F[full][nG - 1]), cost


def _exhaustive_search(instance, grid, budget, tol):
    axes = [grid.points(t) for t in range(instance.n_items)]
    total = int(np.prod([len(a) for a in axes], dtype=float))
    if total > budget:
        raise OracleBudgetError(f"exhaustive grid has {total} points, budget {budget}")
    best, best_p = -math.inf, None
    for combo in itertools.product(*axes):
        p = np.array(combo)
        r = envy_free_solution(instance, p, tol, indifference="revenue").revenue
        if r >= best - 1e-12:
            best, best_p = max(r, best), p
    return best_p, float(best), total


def grid_opt_revenue(
    instance: MarketInstance,
    step: float = 1e-3,
    lower: Union[str, Sequence[float]] = "auto",
    upper: Optional[float] = None,
    method: str = "ordered",
    budget: int = DEFAULT_BUDGET,
    tol: float = DEFAULT_TOL,
) -> OracleReport:
    """Best envy-free revenue over per-item price grids.

    Revenue at a price vector is that of best-response demand allocated at
    least cost among envy-free allocations.  The box per item is
    [lower_t, upper] with ``upper`` defaulting to the largest peak (higher
    prices sell nothing more).

    ``method="exhaustive"`` enumerates the product grid.  ``method="ordered"``
    is exact on the same grid but enumerates ordered partitions of the items
    into equal-price blocks: given which items are cheaper, a buyer pays the
    price of the first block it can reach, so revenue separates over blocks
    and a dynamic program over (set of cheaper items, block price) replaces
    the product.

    Raises:
        OracleBudgetError: when the search would exceed ``budget`` evaluations.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    start = time.perf_counter()
    lo = price_lower_bounds(instance, lower, tol)
    hi = float(instance.peaks.max()) if upper is None else float(upper)
    grid = PriceGrid(tuple(float(v) for v in lo), hi, float(step))
    if method == "ordered":
        prices, rev, evals = _ordered_search(instance, grid, budget, tol)
    elif method == "exhaustive":
        prices, rev, evals = _exhaustive_search(instance, grid, budget, tol)
    else:
        raise ValueError(f"unknown oracle method {method!r}")
    slack = step * float(instance.supports.sum())
    return OracleReport(prices, rev, grid, evals, time.perf_counter() - start, method, slack)


def evaluate_prices(instance: MarketInstance, prices: Sequence[float], tol: float = DEFAULT_TOL) -> Solution:
    """Envy-free solution at fixed prices as the revenue oracle scores it:
    best response (most profitable mass for indifferent buyers) routed at
    least cost."""
    return envy_free_solution(instance, np.asarray(prices, dtype=float), tol, indifference="revenue")


# ---------------------------------------------------------------------------
# Piecewise-linear flow oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteFlowReport:
    objective: float
    flow: np.ndarray
    n_segments: int


def discrete_flow_oracle(
    instance: MarketInstance, demand: Sequence[float], step: float = 1e-3, allowed: Optional[np.ndarray] = None
) -> DiscreteFlowReport:
    """Least production cost of routing ``demand``, with every cost replaced
    by its piecewise-linear interpolation on a ``step`` grid, solved as a
    linear program.

    Interpolation overestimates a convex cost by at most step^2 * c' / 8 per
    item, so the optimum is within that of the exact one.
    """
    x = np.asarray(demand, dtype=float)
    mask = instance.mask if allowed is None else (instance.mask & allowed)
    edges = [(i, t) for i in range(instance.n_buyers) for t in range(instance.n_items) if mask[i, t]]
    n_e = len(edges)
    seg_item, seg_cost, seg_cap = [], [], []
    for t, s in enumerate(instance.items):
        reach = sum(x[i] for i in range(instance.n_buyers) if mask[i, t])
        top = min(reach, s.cost.capacity)
        knots = np.append(np.arange(0.0, top, step), top)
        if len(knots) < 2:
            continue
        vals = np.array([s.cost.total(v) for v in knots])
        w = np.diff(knots)
        keep = w > 0
        seg_item += [t] * int(keep.sum())
        seg_cost += list((np.diff(vals)[keep]) / w[keep])
        seg_cap += list(w[keep])
    n_s = len(seg_item)
    c = np.concatenate([np.zeros(n_e), np.array(seg_cost)])
    rows, cols, vals = [], [], []
    for e, (i, t) in enumerate(edges):
        rows += [i, instance.n_buyers + t]
        cols += [e, e]
        vals += [1.0, 1.0]
    for k, t in enumerate(seg_item):
        rows.append(instance.n_buyers + t)
        cols.append(n_e + k)
        vals.append(-1.0)
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(instance.n_buyers + instance.n_items, n_e + n_s))
    b = np.concatenate([x, np.zeros(instance.n_items)])
    bounds = [(0, None)] * n_e + [(0, w) for w in seg_cap]
    res = optimize.linprog(c, A_eq=A, b_eq=b, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"linear program failed: {res.message}")
    flow = np.zeros((instance.n_buyers, instance.n_items))
    for e, (i, t) in enumerate(edges):
        flow[i, t] = res.x[e]
    return DiscreteFlowReport(float(res.fun), flow, n_s)


# ---------------------------------------------------------------------------
# Fixed-step ascent replay
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepResult:
    prices: np.ndarray
    steps: int
    flow_calls: int


def sweep_ascent(instance: MarketInstance, cfg: AscendConfig, step: Optional[float] = None) -> SweepResult:
    """Raise the common price of the active items by a fixed ``step`` (default
    eps / 10) and finish items as soon as they meet the stopping rule.

    Items and buyers activate once the price reaches their welfare-optimal
    starting price; a buyer leaves with the items it is served by, and an
    item leaves when one of its current buyers does.
    """
    cfg = cfg.resolved(instance)
    tgt, tol = cfg.target, cfg.tol
    h = cfg.eps / 10 if step is None else step
    wopt = welfare_opt(instance, tol)
    pstar = wopt.prices
    near = tol * max(1.0, tgt)
    prices = pstar.copy()
    live = [t for t in range(instance.n_items) if pstar[t] < tgt - near]
    item_done = np.array([t not in live for t in range(instance.n_items)])
    buyer_done = np.array([all(item_done[t] for t in lst) for lst in instance.adj])
    buyer_start = np.array([min(pstar[t] for t in lst if not item_done[t]) if not buyer_done[i] else math.inf
                            for i, lst in enumerate(instance.adj)])
    p = min((pstar[t] for t in live), default=tgt)
    steps = calls = 0
    while not item_done.all() and p <= tgt + h:
        on_items = [t for t in live if not item_done[t] and pstar[t] <= p + near]
        on_buyers = [i for i in range(instance.n_buyers) if not buyer_done[i] and buyer_start[i] <= p + near]
        if on_items:
            x = np.zeros(instance.n_buyers)
            for i in on_buyers:
                x[i] = instance.buyers[i].demand.inverse(min(p, tgt))
            allowed = np.zeros_like(instance.mask)
            allowed[np.ix_(on_buyers, on_items)] = instance.mask[np.ix_(on_buyers, on_items)]
            res = min_cost_flow(instance, x, tol, allowed=allowed)
            calls += 1
            stopping = {t for t in on_items if stop_gap(min(p, tgt), res.item_marginal[t], tgt, cfg.k) >= 0 or p >= tgt}
            if stopping:
                ftol = 1e-12 * max(1.0, float(x.sum()))
                leaving_b: set = set()
                while True:
                    leaving_b = {
                        i for i in on_buyers
                        if any(res.flow[i, t] > ftol for t in stopping)
                        or all(t in stopping for t in instance.adj[i] if t in on_items)
                    }
                    grown = stopping | {t for i in leaving_b for t in instance.adj[i] if res.flow[i, t] > ftol}
                    if grown == stopping:
                        break
                    stopping = grown
                for t in stopping:
                    item_done[t] = True
                    prices[t] = min(p, tgt)
                for i in leaving_b:
                    buyer_done[i] = True
                continue
        p += h
        steps += 1
    return SweepResult(prices, steps, calls)


# ---------------------------------------------------------------------------
# Structural property suite
# ---------------------------------------------------------------------------


@dataclass
class PropertyResult:
    """Outcome of one property over a corpus.

    ``worst_slack`` is the smallest margin observed (negative beyond
    ``-tol`` means a violation).
    """

    checks: int = 0
    violations: int = 0
    skipped: int = 0
    worst_slack: float = math.inf
    examples: List[str] = field(default_factory=list)

    def record(self, slack: float, tol: float, where: str) -> None:
        self.checks += 1
        self.worst_slack = min(self.worst_slack, slack)
        if slack < -tol:
            self.violations += 1
            if len(self.examples) < 5:
                self.examples.append(f"{where}: slack {slack:.3g}")


@dataclass
class SuiteReport:
    properties: Dict[str, PropertyResult] = field(default_factory=dict)

    def get(self, name: str) -> PropertyResult:
        return self.properties.setdefault(name, PropertyResult())

    @property
    def ok(self) -> bool:
        return all(p.violations == 0 for p in self.properties.values())

    def to_record(self) -> dict:
        return {
            k: {"checks": v.checks, "violations": v.violations, "skipped": v.skipped, "worst_slack": v.worst_slack}
            for k, v in sorted(self.properties.items())
        }


def _flow_at(instance, demand, tol):
    return min_cost_flow(instance, demand, tol)


def check_monotonicity(instance: MarketInstance, low: np.ndarray, high: np.ndarray, report: SuiteReport, tol: float, tag: str = "") -> None:
    """Higher prices give lower demand, lower marginals and lower r_i; loads
    only grow where the marginal is unchanged."""
    x_lo, x_hi = best_response(low, instance), best_response(high, instance)
    report.get("monotonicity/demand").record(float(np.min(x_lo - x_hi)), tol, tag)
    f_lo, f_hi = _flow_at(instance, x_lo, tol), _flow_at(instance, x_hi, tol)
    report.get("monotonicity/marginal").record(float(np.min(f_lo.item_marginal - f_hi.item_marginal)), tol, tag)
    report.get("monotonicity/buyer-marginal").record(float(np.min(f_lo.buyer_marginal - f_hi.buyer_marginal)), tol, tag)
    y_lo, y_hi = f_lo.loads, f_hi.loads
    for t in range(instance.n_items):
        slack = max(y_lo[t] - y_hi[t], -abs(f_lo.item_marginal[t] - f_hi.item_marginal[t]))
        report.get("monotonicity/loads").record(float(slack), tol, f"{tag} item {t}")


def check_flow_partition(instance: MarketInstance, demand: np.ndarray, subset: Sequence[int], report: SuiteReport, tol: float, tag: str = "") -> None:
    """Cost split between a buyer subset served alone and the rest."""
    full = _flow_at(instance, demand, tol)
    sub = np.zeros_like(demand)
    sub[list(subset)] = demand[list(subset)]
    part = _flow_at(instance, sub, tol)
    y, yh = full.loads, part.loads
    c = full.item_marginal
    for t in range(instance.n_items):
        slack = max(y[t] - yh[t], -abs(c[t] - part.item_marginal[t]))
        report.get("flow-partition/loads").record(float(slack), tol, f"{tag} item {t}")
    rest = [i for i in range(instance.n_buyers) if i not in set(subset)]
    lhs = float(sum(full.buyer_marginal[i] * demand[i] for i in rest))
    mid = float(np.dot(c, y - yh))
    rhs = float(sum(s.cost.total(a) - s.cost.total(b) for s, a, b in zip(instance.items, y, yh)))
    scale = max(1.0, abs(lhs))
    report.get("flow-partition/payment").record((lhs - mid) / scale, tol, tag)
    report.get("flow-partition/convexity").record((mid - rhs) / scale, tol, tag)


def check_left_continuity(instance: MarketInstance, pbar: float, report: SuiteReport, tol: float, tag: str = "") -> None:
    """Marginals under a uniform price p approach their value at pbar as p
    rises to pbar."""
    m = instance.n_items

    def marg(p):
        x = best_response(np.full(m, p), instance)
        return _flow_at(instance, x, tol).item_marginal

    at = marg(pbar)
    delta = 1e-9 * max(1.0, pbar)
    below = marg(pbar - delta)
    scale = max(1.0, float(np.max(np.abs(at))))
    report.get("left-continuity").record(-float(np.max(np.abs(below - at))) / scale, tol, tag)


def check_cost_comparison(instance: MarketInstance, p1: np.ndarray, p2: np.ndarray, report: SuiteReport, tol: float, tag: str = "") -> None:
    """At the lower of two ordered price vectors (each above its own
    marginals), its own demand earns at least as much as the other's."""
    x1, x2 = best_response(p1, instance), best_response(p2, instance)
    z1, z2 = _flow_at(instance, x1, tol), _flow_at(instance, x2, tol)
    if np.any(p1 < z1.item_marginal - tol) or np.any(p2 < z2.item_marginal - tol):
        report.get("cost-comparison").skipped += 1
        return
    pb = cheapest_prices(p1, instance)
    lhs = float(np.dot(pb, x1)) - z1.objective(instance)
    rhs = float(np.dot(pb, x2)) - z2.objective(instance)
    report.get("cost-comparison").record((lhs - rhs) / max(1.0, abs(lhs)), tol, tag)


def check_mixed_price(instance: MarketInstance, sol1: Solution, p2: np.ndarray, report: SuiteReport, tol: float, tag: str = "") -> None:
    """Some item cheaper under p2 than under an envy-free least-cost solution
    at p1 carries at least the same marginal under p2's envy-free allocation."""
    p1 = sol1.prices
    cheaper = [t for t in range(instance.n_items) if p1[t] > p2[t] + tol]
    if not cheaper:
        report.get("mixed-price").skipped += 1
        return
    sol2 = envy_free_solution(instance, p2, tol)
    c1 = [s.cost.marginal(v) for s, v in zip(instance.items, sol1.loads)]
    c2 = [s.cost.marginal(v) for s, v in zip(instance.items, sol2.loads)]
    report.get("mixed-price").record(max(c2[t] - c1[t] for t in cheaper), tol, tag)


def check_mhr_numerics(fn: DemandFn, report: SuiteReport, tol: float = 1e-9, n: int = 64, tag: str = "") -> None:
    """Sampled checks of the MHR consequences used by the guarantees."""
    T, f0 = fn.support, fn.peak
    xs = T * np.arange(1, n + 1) / (n + 1)
    fx = np.array([fn.value(x) for x in xs])
    hz = np.array([fn.hazard(x) if fn.value(x) > 0 else math.inf for x in xs])
    for x, v, h in zip(xs, fx, hz):
        if h * x < 1:
            report.get("mhr/peak-bound").record((math.e * v - f0) / f0, tol, f"{tag} x={x:.4g}")
    v1 = f0 / math.sqrt(math.e)
    if fn.value(T) <= v1 < f0:
        x1 = fn.inverse(v1)
        if abs(fn.value(x1) - v1) <= 1e-9 * f0:
            x2 = fn.inverse(f0 / math.e)
            report.get("mhr/doubling").record((2 * x1 - x2) / max(x1, 1e-12), tol, f"{tag} x1={x1:.4g}")
        else:
            report.get("mhr/doubling").skipped += 1
    else:
        report.get("mhr/doubling").skipped += 1
    rev = xs * fx
    for a in range(n):
        for b in range(a + 1, n):
            if hz[a] * xs[a] >= 1 and fx[b] > 0:
                report.get("mhr/revenue-falls").record((rev[a] - rev[b]) / f0, tol, f"{tag} x1={xs[a]:.4g}")
            if hz[b] * xs[b] <= 1 and fx[b] > 0:
                report.get("mhr/revenue-rises").record((rev[b] - rev[a]) / f0, tol, f"{tag} x2={xs[b]:.4g}")
    for frac in (0.25, 0.5, 0.9):
        shifted = ShiftedDemand(fn, frac * fn.value(0.5 * T))
        cert = check_mhr(shifted, grid_size=256)
        report.get("mhr/shift").record(-cert.worst_violation, tol, f"{tag} shift {frac}")


def lemma_suite(
    instances: Sequence[MarketInstance] = (),
    demands: Sequence[DemandFn] = (),
    tol: float = 1e-6,
    seed: int = 0,
) -> SuiteReport:
    """Evaluate every structural property over a corpus of markets and
    demand functions, with randomized price vectors and buyer subsets."""
    if not instances and not demands:
        raise ValueError("empty corpus")
    rng = np.random.default_rng(seed)
    report = SuiteReport()
    for n, inst in enumerate(instances):
        tag = f"instance {n}"
        wopt = welfare_opt(inst, DEFAULT_TOL)
        pstar = wopt.prices
        top = float(inst.peaks.max())
        m = inst.n_items
        base = pstar + rng.uniform(0, 0.5, m) * np.maximum(top - pstar, 0)
        check_monotonicity(inst, base, 1.1 * base, report, tol, tag)
        check_monotonicity(inst, pstar, base, report, tol, tag)
        x = best_response(base, inst)
        for _ in range(2):
            subset = [i for i in range(inst.n_buyers) if rng.random() < 0.5]
            check_flow_partition(inst, x, subset, report, tol, tag)
        for pb in [float(rng.uniform(0.05, 1.0) * top)] + sorted(set(float(v) for v in inst.peaks)):
            check_left_continuity(inst, pb, report, tol, f"{tag} p={pb:.4g}")
        p1 = pstar + rng.uniform(0, 0.5, m) * np.maximum(top - pstar, 0)
        p2 = p1 + rng.uniform(0, 0.5, m) * np.maximum(top - p1, 0)
        check_cost_comparison(inst, p1, p2, report, tol, tag)
        witnesses = [wopt.solution]
        if inst.has_uniform_peak():
            witnesses.append(run_ascending(inst, AscendConfig(k=math.e), wopt)[0])
        for sol in witnesses:
            for _ in range(3):
                p2 = sol.prices * rng.uniform(0.5, 1.5, m)
                check_mixed_price(inst, sol, p2, report, tol, tag)
    for n, fn in enumerate(demands):
        check_mhr_numerics(fn, report, tag=f"demand {n}")
    return report
