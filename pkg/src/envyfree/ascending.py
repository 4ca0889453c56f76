"""Ascending-price procedure with stop parameter k.

Prices start at the welfare-optimal marginal costs p*.  The cheapest items
and the buyers using them are *active*; their common price rises while the
active buyers' best-response demand is re-routed at least cost over the
active subgraph.  An item *finishes* (its price freezes) once

    p - c_t(y_t) >= (lambda_target - c_t(y_t)) / k,

and inactive items join when the rising price reaches their initial price.

The continuous ascent is realized over the intervals between consecutive
distinct initial prices: within an interval the earliest stopping price is
located by a bracketing search on the (monotone) largest criterion gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import PreconditionError
from .flow import WelfareOptimum, min_cost_flow, welfare_opt
from .market import DEFAULT_TOL, MarketInstance, Solution
from .search import bracket_increasing

UNIFORM_PEAK = "uniform-peak"
GENERAL = "general"
DEFAULT_EPS_FACTOR = 1e-6

INACTIVE, ACTIVE, FINISHED, FROZEN = 0, 1, 2, 3


@dataclass(frozen=True)
class AscendConfig:
    """Parameters of one ascent.

    Attributes:
        k: stop parameter, at least 1.
        target: the valuation in the stopping rule; None means the shared
            peak (uniform-peak criterion) or the smallest peak (general).
        criterion: "uniform-peak" or "general".
        eps: price resolution of the stop search; None means 1e-6 * target.
        tol: tolerance handed to the flow solver and certificates.
        search: "secant" (safeguarded false position) or "bisect".
    """

    k: float = math.e
    target: Optional[float] = None
    criterion: str = UNIFORM_PEAK
    eps: Optional[float] = None
    tol: float = DEFAULT_TOL
    search: str = "secant"

    def __post_init__(self):
        if not self.k >= 1:
            raise ValueError("stop parameter k must be at least 1")
        if self.target is not None and not self.target > 0:
            raise ValueError("target must be positive")
        if self.eps is not None and not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.criterion not in (UNIFORM_PEAK, GENERAL):
            raise ValueError(f"unknown criterion {self.criterion!r}")

    def resolved(self, instance: MarketInstance) -> "AscendConfig":
        """Fill in target and eps from the instance and check preconditions."""
        peaks = instance.peaks
        if self.criterion == UNIFORM_PEAK:
            if not instance.has_uniform_peak(self.tol):
                raise PreconditionError(
                    f"uniform-peak criterion needs equal peaks, got range [{peaks.min():.6g}, {peaks.max():.6g}]"
                )
            target = float(peaks.max()) if self.target is None else self.target
            if abs(target - peaks.max()) > self.tol * max(1.0, target):
                raise PreconditionError("target differs from the shared peak")
        else:
            target = float(peaks.min()) if self.target is None else self.target
        eps = DEFAULT_EPS_FACTOR * target if self.eps is None else self.eps
        return AscendConfig(self.k, target, self.criterion, eps, self.tol, self.search)


def stopping_criterion(p: float, marginal: float, cfg: AscendConfig) -> bool:
    """Whether an item priced at p with marginal cost ``marginal`` stops."""
    if cfg.target is None:
        raise ValueError("stopping_criterion needs an explicit target")
    eps = cfg.eps if cfg.eps is not None else DEFAULT_EPS_FACTOR * cfg.target
    return p - marginal >= (cfg.target - marginal) / cfg.k - eps


def stop_gap(p: float, marginal, target: float, k: float):
    """Signed distance from the stopping rule; nonnegative means stop."""
    return p - marginal - (target - marginal) / k


def boundary_prices(pstar: Sequence[float], target: float, tol: float = DEFAULT_TOL) -> List[float]:
    """Sorted distinct initial prices (merged within tol) with the target included."""
    vals = sorted(float(v) for v in pstar)
    out: List[float] = []
    for v in vals:
        if not out or v - out[-1] > tol * max(1.0, abs(v)):
            out.append(v)
    if not any(abs(v - target) <= tol * max(1.0, target) for v in out):
        out.append(float(target))
        out.sort()
    return out


@dataclass(frozen=True)
class TraceEvent:
    price: float
    kind: str  # "item" or "buyer"
    entity: str
    transition: str  # "activated", "finished" or "frozen"


@dataclass(frozen=True)
class Probe:
    """One min-cost evaluation of the active subgraph at a uniform price."""

    price: float
    epoch: int
    active_items: Tuple[int, ...]
    active_buyers: Tuple[int, ...]
    demand: np.ndarray
    flow: np.ndarray
    marginal: np.ndarray
    gap: np.ndarray  # criterion gap per item (nan when not active)

    @property
    def worst_gap(self) -> float:
        g = self.gap[list(self.active_items)] if self.active_items else np.array([-math.inf])
        return float(np.max(g))


@dataclass
class AscendTrace:
    """Record of an ascent.

    Attributes:
        events: price-ordered activation/finish events.
        stop_prices: final price per finished or frozen item id.
        boundaries: boundary prices that delimited the search intervals.
        flow_calls: min-cost flow solves performed by the ascent.
        probes: every evaluation, tagged with the state epoch.
        epoch_end: price at which each epoch's active set changed.
        frozen: ids of items kept at their initial price.
        notes: diagnostics.
    """

    events: List[TraceEvent] = field(default_factory=list)
    stop_prices: Dict[str, float] = field(default_factory=dict)
    boundaries: List[float] = field(default_factory=list)
    flow_calls: int = 0
    probes: List[Probe] = field(default_factory=list)
    epoch_end: List[float] = field(default_factory=list)
    frozen: List[str] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)
    target: float = math.nan
    eps: float = math.nan
    k: float = math.nan

    def consistent_probes(self) -> List[Probe]:
        """Probes whose active set is the one the ascent really had at that price."""
        out = []
        for pr in self.probes:
            end = self.epoch_end[pr.epoch] if pr.epoch < len(self.epoch_end) else math.inf
            if pr.price <= end + 1e-15:
                out.append(pr)
        return out

    def call_budget(self, n_items: int, min_start: float) -> int:
        """Solve budget: one per interval plus a full bisection per item."""
        width = max(self.target - min_start, self.eps)
        return (len(self.boundaries) - 1) + n_items * math.ceil(math.log2(width / self.eps) + 1e-12)

    def to_lines(self) -> List[dict]:
        return [
            {"price": e.price, "kind": e.kind, "entity": e.entity, "transition": e.transition} for e in self.events
        ]


class ActiveState:
    """Mutable ascent state: which items and buyers are inactive, active,
    finished or frozen, plus the outcome recorded for finished entities."""

    def __init__(self, instance: MarketInstance, cfg: AscendConfig, wopt: WelfareOptimum, trace: AscendTrace):
        self.instance = instance
        self.cfg = cfg
        self.trace = trace
        self.item_state = np.full(instance.n_items, INACTIVE)
        self.buyer_state = np.full(instance.n_buyers, INACTIVE)
        self.prices = wopt.prices.copy()
        self.demand = np.zeros(instance.n_buyers)
        self.flow = np.zeros((instance.n_buyers, instance.n_items))
        self.epoch = 0
        self._cache: Dict[float, Probe] = {}

    def active_items(self) -> List[int]:
        return [int(t) for t in np.flatnonzero(self.item_state == ACTIVE)]

    def active_buyers(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(self.buyer_state == ACTIVE)]

    def bump_epoch(self, price: float) -> None:
        self.trace.epoch_end.append(price)
        self.epoch += 1
        self._cache.clear()

    def evaluate(self, p: float) -> Probe:
        """Best-response demand of active buyers at price p, routed at least
        cost over active items, with the criterion gap per active item."""
        if p in self._cache:
            return self._cache[p]
        inst, cfg = self.instance, self.cfg
        items = self.active_items()
        buyers = self.active_buyers()
        x = np.zeros(inst.n_buyers)
        for i in buyers:
            x[i] = inst.buyers[i].demand.inverse(p)
        allowed = np.zeros_like(inst.mask)
        if items and buyers:
            allowed[np.ix_(buyers, items)] = inst.mask[np.ix_(buyers, items)]
        res = min_cost_flow(inst, x, cfg.tol, allowed=allowed)
        self.trace.flow_calls += 1
        gap = np.full(inst.n_items, math.nan)
        for t in items:
            gap[t] = stop_gap(p, res.item_marginal[t], cfg.target, cfg.k)
        probe = Probe(p, self.epoch, tuple(items), tuple(buyers), x, res.flow, res.item_marginal, gap)
        self.trace.probes.append(probe)
        self._cache[p] = probe
        return probe


def find_stop_price(
    state: ActiveState, lo: float, hi: float, cfg: AscendConfig, probe_hi: Optional[Probe] = None, assume_stop: bool = False
) -> Tuple[float, Set[int], Probe]:
    """Smallest price in [lo, hi] (to within eps) at which an active item meets
    the stopping rule, with the items meeting it (within eps) there.

    Assumes no active item stops at ``lo``.  Unless ``assume_stop`` is set,
    the end ``hi`` is evaluated first and must stop some item; with it, the
    evaluation at ``hi`` is skipped and the returned set may be empty when
    nothing stops by ``hi``.
    """
    if hi < lo:
        raise ValueError("inverted search interval")
    if assume_stop:
        f_hi = math.inf
    else:
        if probe_hi is None:
            probe_hi = state.evaluate(hi)
        if probe_hi.worst_gap < 0:
            raise ValueError("no active item stops by the end of the interval")
        f_hi = probe_hi.worst_gap

    def h(p):
        return state.evaluate(p).worst_gap

    _, p_stop, _, _, _ = bracket_increasing(h, lo, hi, -math.inf, f_hi, cfg.eps, secant=(cfg.search == "secant"))
    probe = state.evaluate(p_stop)
    finishing = {t for t in probe.active_items if probe.gap[t] >= -cfg.eps}
    return p_stop, finishing, probe


def _finish(state: ActiveState, probe: Probe, price: float, finishing: Set[int]) -> None:
    inst = state.instance
    scale = max(1.0, float(probe.demand.sum()))
    ftol = 1e-12 * scale
    items = set(finishing)
    active_b = set(probe.active_buyers)
    while True:
        buyers = set()
        for i in active_b:
            reach = [t for t in inst.adj[i] if state.item_state[t] == ACTIVE]
            if any(probe.flow[i, t] > ftol for t in items) or all(t in items for t in reach):
                buyers.add(i)
        grown = items | {t for i in buyers for t in inst.adj[i] if probe.flow[i, t] > ftol}
        if grown == items:
            break
        items = grown
    for t in sorted(items):
        state.item_state[t] = FINISHED
        state.prices[t] = price
        state.trace.stop_prices[inst.items[t].id] = price
        state.trace.events.append(TraceEvent(price, "item", inst.items[t].id, "finished"))
    for i in sorted(buyers):
        state.buyer_state[i] = FINISHED
        state.demand[i] = probe.demand[i]
        row = np.where(np.isin(np.arange(inst.n_items), list(items)), probe.flow[i], 0.0)
        state.flow[i] = row
        state.trace.events.append(TraceEvent(price, "buyer", inst.buyers[i].id, "finished"))
    state.bump_epoch(price)


def run_ascending(
    instance: MarketInstance, cfg: AscendConfig, wopt: Optional[WelfareOptimum] = None
) -> Tuple[Solution, AscendTrace]:
    """Run the ascending-price procedure and return its solution and trace.

    Args:
        instance: the market.
        cfg: stop parameter and criterion; target/eps defaults are resolved
            against the instance.
        wopt: precomputed welfare optimum (computed when omitted).

    Raises:
        PreconditionError: unequal peaks under the uniform-peak criterion.
    """
    cfg = cfg.resolved(instance)
    if wopt is None:
        wopt = welfare_opt(instance, cfg.tol)
    tgt, tol = cfg.target, cfg.tol
    trace = AscendTrace(target=tgt, eps=cfg.eps, k=cfg.k)
    state = ActiveState(instance, cfg, wopt, trace)
    pstar = wopt.prices
    near = tol * max(1.0, tgt)

    frozen_items = [t for t in range(instance.n_items) if pstar[t] >= tgt - near]
    for t in frozen_items:
        state.item_state[t] = FROZEN
        iid = instance.items[t].id
        trace.frozen.append(iid)
        trace.stop_prices[iid] = float(pstar[t])
        trace.events.append(TraceEvent(float(pstar[t]), "item", iid, "frozen"))
        if cfg.criterion == UNIFORM_PEAK:
            trace.notes.append(f"item {iid}: initial marginal cost {pstar[t]:.6g} is not below the peak; kept at p*")

    live = [t for t in range(instance.n_items) if state.item_state[t] != FROZEN]
    P = boundary_prices([pstar[t] for t in live], tgt, tol)
    trace.boundaries = list(P)
    group = {t: int(np.argmin([abs(pstar[t] - q) for q in P])) for t in live}
    buyer_group = {}
    for i, lst in enumerate(instance.adj):
        gs = [group[t] for t in lst if t in group]
        if not gs:
            state.buyer_state[i] = FROZEN
            state.demand[i] = wopt.demand[i]
            state.flow[i] = wopt.flow[i]
            trace.events.append(TraceEvent(float(min(pstar[t] for t in lst)), "buyer", instance.buyers[i].id, "frozen"))
        else:
            buyer_group[i] = min(gs)

    def activate(j: int, price: float) -> None:
        changed = False
        for t in live:
            if group[t] == j and state.item_state[t] == INACTIVE:
                state.item_state[t] = ACTIVE
                trace.events.append(TraceEvent(price, "item", instance.items[t].id, "activated"))
                changed = True
        for i, g in buyer_group.items():
            if g == j and state.buyer_state[i] == INACTIVE:
                state.buyer_state[i] = ACTIVE
                trace.events.append(TraceEvent(price, "buyer", instance.buyers[i].id, "activated"))
                changed = True
        if changed:
            state.bump_epoch(price)

    price = P[0]
    if P[0] < tgt - near:
        activate(0, price)
    for j in range(1, len(P)):
        hi = P[j]
        last = j == len(P) - 1
        while state.active_items():
            if last:
                # Everything left stops by the target, so its evaluation is
                # deferred to the search itself.
                p_stop, finishing, probe = find_stop_price(state, price, hi, cfg, assume_stop=True)
                if not finishing:
                    break
            else:
                probe_hi = state.evaluate(hi)
                if probe_hi.worst_gap < 0:
                    break
                p_stop, finishing, probe = find_stop_price(state, price, hi, cfg, probe_hi)
            _finish(state, probe, p_stop, finishing)
            price = p_stop
        price = hi
        if hi < tgt - near:
            activate(j, price)

    leftover_items = state.active_items()
    leftover_buyers = state.active_buyers()
    if leftover_items or leftover_buyers:
        probe = state.evaluate(tgt)
        trace.notes.append("entities still active at the target price were finished there")
        _finish(state, probe, tgt, set(leftover_items))
        for i in state.active_buyers():
            state.buyer_state[i] = FINISHED
            state.demand[i] = probe.demand[i]
            state.flow[i] = probe.flow[i]

    sol = Solution.build(instance, state.prices, state.demand, state.flow, tol, notes=trace.notes)
    return sol, trace
