"""Pricing algorithms built on the ascending-price procedure.

* ``approx_revenue_uniform_peak`` runs the ascent with k = e and k = sqrt(e)
  and keeps the more profitable outcome (revenue within 4 sqrt(e) - 2 - e of
  optimal under equal peaks).
* ``bicriteria_e`` returns the k = e outcome (half the optimal welfare and a
  1/e share of optimal revenue).
* ``log_delta_algorithm`` handles unequal peaks with doubly convex costs by
  raising the k = e prices along a geometric ladder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .ascending import GENERAL, UNIFORM_PEAK, AscendConfig, AscendTrace, run_ascending
from .errors import PreconditionError
from .flow import WelfareOptimum, envy_free_solution, welfare_opt
from .market import DEFAULT_TOL, MarketInstance, Solution

REVENUE_RATIO = 4 * math.sqrt(math.e) - 2 - math.e
LADDER_CONSTANT = 4.5
SQRT_E = math.sqrt(math.e)


@dataclass
class GuaranteeReport:
    """Measured outcome of an algorithm next to its guarantees.

    Attributes:
        algorithm: "approx-revenue", "bicriteria" or "log-delta".
        claimed: guarantee constants by name.
        revenue: revenue of the returned solution.
        welfare: welfare of the returned solution.
        references: optimum estimates used for the checks (e.g. the
            welfare optimum, an oracle revenue).
        checks: guarantee name -> (measured, bound, holds).
        delta: peak ratio (ladder).
        j_star: selected ladder rung.
        alpha: optimal welfare over returned welfare (bicriteria).
        details: auxiliary measurements (per-run revenues, rung table).
        notes: diagnostics.
        traces: ascent traces by run label (not serialized).
    """

    algorithm: str
    claimed: Dict[str, float] = field(default_factory=dict)
    revenue: float = math.nan
    welfare: float = math.nan
    references: Dict[str, float] = field(default_factory=dict)
    checks: Dict[str, Tuple[float, float, bool]] = field(default_factory=dict)
    delta: Optional[float] = None
    j_star: Optional[int] = None
    alpha: Optional[float] = None
    details: Dict[str, object] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)
    traces: Dict[str, AscendTrace] = field(default_factory=dict, repr=False)

    def check(self, name: str, measured: float, bound: float, tol: float) -> bool:
        """Record ``measured >= bound - tol`` under ``name``."""
        ok = bool(measured >= bound - tol)
        self.checks[name] = (float(measured), float(bound), ok)
        return ok

    @property
    def failed(self) -> List[str]:
        return [k for k, (_, _, ok) in self.checks.items() if not ok]

    def to_record(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "claimed": dict(self.claimed),
            "revenue": self.revenue,
            "welfare": self.welfare,
            "references": dict(self.references),
            "checks": {k: {"measured": m, "bound": b, "holds": ok} for k, (m, b, ok) in self.checks.items()},
            "delta": self.delta,
            "j_star": self.j_star,
            "alpha": self.alpha,
            "details": self.details,
            "notes": list(self.notes),
        }


@dataclass(frozen=True)
class PricingConfig:
    """Shared knobs of the composed algorithms.

    Attributes:
        tol: solver and certificate tolerance.
        eps: price resolution of the ascent (None: 1e-6 times the target).
        search: stop-price search of the ascent, "secant" or "bisect".
    """

    tol: float = DEFAULT_TOL
    eps: Optional[float] = None
    search: str = "secant"

    def ascend(self, k: float, criterion: str = UNIFORM_PEAK, target: Optional[float] = None) -> AscendConfig:
        return AscendConfig(k=k, target=target, criterion=criterion, eps=self.eps, tol=self.tol, search=self.search)


def _require_uniform(instance: MarketInstance, tol: float) -> None:
    if not instance.has_uniform_peak(tol):
        peaks = instance.peaks
        raise PreconditionError(f"needs equal peaks, got range [{peaks.min():.6g}, {peaks.max():.6g}]")


def approx_revenue_uniform_peak(
    instance: MarketInstance,
    cfg: PricingConfig = PricingConfig(),
    oracle_revenue: Optional[float] = None,
    oracle_slack: float = 0.0,
    wopt: Optional[WelfareOptimum] = None,
) -> Tuple[Solution, GuaranteeReport]:
    """Better of the k = e and k = sqrt(e) ascents.

    Args:
        instance: market with equal peaks.
        cfg: tolerances.
        oracle_revenue: optional optimal-revenue estimate; when given, the
            ratio guarantee is checked against it.
        oracle_slack: resolution slack of that estimate.
        wopt: precomputed welfare optimum.

    Raises:
        PreconditionError: unequal peaks.
    """
    _require_uniform(instance, cfg.tol)
    wopt = welfare_opt(instance, cfg.tol) if wopt is None else wopt
    sol_e, tr_e = run_ascending(instance, cfg.ascend(math.e), wopt)
    sol_s, tr_s = run_ascending(instance, cfg.ascend(SQRT_E), wopt)
    best = sol_s if sol_s.revenue >= sol_e.revenue else sol_e
    rep = GuaranteeReport(
        "approx-revenue",
        claimed={"revenue_ratio": REVENUE_RATIO},
        revenue=best.revenue,
        welfare=best.welfare,
        details={"revenue_k_e": sol_e.revenue, "revenue_k_sqrt_e": sol_s.revenue, "chosen_k": "sqrt(e)" if best is sol_s else "e"},
    )
    rep.traces = {"k=e": tr_e, "k=sqrt(e)": tr_s}
    rep.references["welfare_opt"] = wopt.welfare
    if oracle_revenue is not None:
        rep.references["oracle_revenue"] = oracle_revenue
        rep.references["oracle_slack"] = oracle_slack
        # ratio (oracle + slack) / revenue <= constant, written multiplicatively
        rep.check("revenue_ratio", REVENUE_RATIO * best.revenue, oracle_revenue + oracle_slack, cfg.tol)
    return best, rep


def bicriteria_e(
    instance: MarketInstance,
    cfg: PricingConfig = PricingConfig(),
    oracle_revenue: Optional[float] = None,
    oracle_slack: float = 0.0,
    wopt: Optional[WelfareOptimum] = None,
) -> Tuple[Solution, GuaranteeReport]:
    """The k = e ascent with its welfare and revenue guarantees.

    Welfare is checked against the exact welfare optimum; revenue checks
    need ``oracle_revenue``.

    Raises:
        PreconditionError: unequal peaks.
    """
    _require_uniform(instance, cfg.tol)
    wopt = welfare_opt(instance, cfg.tol) if wopt is None else wopt
    sol, trace = run_ascending(instance, cfg.ascend(math.e), wopt)
    rep = GuaranteeReport(
        "bicriteria",
        claimed={"welfare_fraction": 0.5, "revenue_fraction": 1 / math.e},
        revenue=sol.revenue,
        welfare=sol.welfare,
        traces={"k=e": trace},
    )
    sw_opt = wopt.welfare
    rep.references["welfare_opt"] = sw_opt
    rep.check("welfare_half", sol.welfare, sw_opt / 2, cfg.tol * max(1.0, sw_opt))
    rep.alpha = sw_opt / sol.welfare if sol.welfare > 0 else math.inf
    bound = max(1 / math.e, (rep.alpha - 1) / rep.alpha) if math.isfinite(rep.alpha) else 1.0
    rep.details["alpha_revenue_fraction"] = bound
    if oracle_revenue is not None:
        rep.references["oracle_revenue"] = oracle_revenue
        rep.references["oracle_slack"] = oracle_slack
        slack = oracle_slack + cfg.tol * max(1.0, oracle_revenue)
        rep.check("revenue_1_over_e", sol.revenue, oracle_revenue / math.e, slack)
        rep.check("revenue_alpha_bound", sol.revenue, bound * oracle_revenue, slack)
    return sol, rep


def compute_delta(instance: MarketInstance) -> float:
    """Largest over smallest peak."""
    peaks = instance.peaks
    return float(peaks.max() / peaks.min())


def ladder_size(delta: float) -> int:
    """Number of ladder rungs above the k = e prices, ceil(ln delta)."""
    return max(0, math.ceil(math.log(delta) - 1e-9))


def ladder_prices(pe: np.ndarray, lam_min: float, j: int) -> np.ndarray:
    """Rung j of the ladder: max(p^e_t, e^(j-1) lam_min); rung 0 is p^e."""
    pe = np.asarray(pe, dtype=float)
    if j < 0:
        raise ValueError("rung index must be nonnegative")
    if j == 0:
        return pe.copy()
    return np.maximum(pe, math.exp(j - 1) * lam_min)


@dataclass(frozen=True)
class Rung:
    j: int
    prices: np.ndarray
    revenue: float
    welfare: float
    solution: Solution


def ladder(
    instance: MarketInstance, cfg: PricingConfig = PricingConfig(), wopt: Optional[WelfareOptimum] = None
) -> Tuple[List[Rung], AscendTrace]:
    """All rungs: the general-criterion k = e ascent followed by the
    envy-free least-cost solutions at each raised price vector."""
    wopt = welfare_opt(instance, cfg.tol) if wopt is None else wopt
    lam_min = float(instance.peaks.min())
    base, trace = run_ascending(instance, cfg.ascend(math.e, GENERAL, lam_min), wopt)
    rungs = [Rung(0, base.prices, base.revenue, base.welfare, base)]
    for j in range(1, ladder_size(compute_delta(instance)) + 1):
        p = ladder_prices(base.prices, lam_min, j)
        sol = envy_free_solution(instance, p, cfg.tol)
        rungs.append(Rung(j, p, sol.revenue, sol.welfare, sol))
    return rungs, trace


def log_delta_algorithm(
    instance: MarketInstance, cfg: PricingConfig = PricingConfig(), wopt: Optional[WelfareOptimum] = None
) -> Tuple[Solution, GuaranteeReport]:
    """Smallest ladder rung whose revenue reaches SW(0) / (2 * 4.5 (1 + ln delta)).

    Raises:
        PreconditionError: some cost is not doubly convex (the failing items
            are named).
    """
    bad = instance.doubly_convex_failures()
    if bad:
        raise PreconditionError(f"costs of items {', '.join(bad)} are not doubly convex")
    wopt = welfare_opt(instance, cfg.tol) if wopt is None else wopt
    delta = compute_delta(instance)
    rungs, trace = ladder(instance, cfg, wopt)
    sw0 = rungs[0].welfare
    threshold = 0.5 * sw0 / (LADDER_CONSTANT * (1 + math.log(delta)))
    chosen = next((r for r in rungs if r.revenue >= threshold - cfg.tol * max(1.0, threshold)), None)
    rep = GuaranteeReport(
        "log-delta",
        claimed={"welfare_fraction": 0.25, "revenue_threshold_constant": LADDER_CONSTANT},
        delta=delta,
        traces={"k=e": trace},
    )
    if chosen is None:
        rep.notes.append("no rung reached the revenue threshold, not even the first; returning rung 0")
        chosen = rungs[0]
    rep.j_star = chosen.j
    rep.revenue, rep.welfare = chosen.revenue, chosen.welfare
    sw_opt = wopt.welfare
    rep.references["welfare_opt"] = sw_opt
    rep.details["threshold"] = threshold
    rep.details["rungs"] = [{"j": r.j, "revenue": r.revenue, "welfare": r.welfare} for r in rungs]
    scale = cfg.tol * max(1.0, sw_opt)
    rep.check("revenue_threshold", chosen.revenue, threshold, scale)
    rep.check("welfare_quarter", chosen.welfare, sw_opt / 4, scale)
    rep.check("welfare_rung0_half", sw0, sw_opt / 2, scale)
    rep.check("welfare_chosen_half_rung0", chosen.welfare, sw0 / 2, scale)
    for a, b in zip(rungs, rungs[1:]):
        rep.check(f"welfare_drop_{a.j}", LADDER_CONSTANT * a.revenue, a.welfare - b.welfare, scale)
    return chosen.solution, rep
