"""Inverse-demand and production-cost families.

Every demand descriptor is a non-increasing function lambda(x) on [0, T]
giving the valuation of the marginal buyer when mass x buys.  Every cost
descriptor is a convex production cost C(y) with marginal c(y).

The descriptors are immutable dataclasses.  Besides pointwise evaluation they
expose the two generalized inverses the rest of the package relies on:

* ``DemandFn.inverse(p)`` is the supremum ``sup{x : lambda(x) >= p}``, i.e. the
  best-response purchase at price p (indifferent buyers purchase).
* ``CostFn.load_at(m)`` is ``sup{y : c(y) <= m}`` capped at the capacity, the
  largest production whose marginal cost does not exceed m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Dict, NamedTuple, Optional, Tuple

import numpy as np
from scipy import integrate

DEFAULT_MHR_GRID = 1024
BISECTION_TOL = 1e-12
DEFAULT_RAMP_FRACTION = 1e-3
DEFAULT_BARRIER = 1e3


class DemandPoint(NamedTuple):
    value: float
    derivative: float
    hazard: float


class CostPoint(NamedTuple):
    total: float
    marginal: float


@dataclass(frozen=True)
class Certificate:
    """Outcome of a grid certification.

    Attributes:
        passed: whether every grid check held within tolerance.
        worst_violation: largest amount by which a check failed (0 if none).
        location: grid abscissa of the worst violation, or None.
        detail: short human-readable reason for a failure.
    """

    passed: bool
    worst_violation: float = 0.0
    location: Optional[float] = None
    detail: str = ""


# ---------------------------------------------------------------------------
# Demand families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DemandFn:
    """Base class for inverse-demand descriptors on [0, T]."""

    family = "abstract"

    @property
    def support(self) -> float:
        raise NotImplementedError

    @property
    def peak(self) -> float:
        return self.value(0.0)

    def value(self, x: float) -> float:
        raise NotImplementedError

    def derivative(self, x: float) -> float:
        raise NotImplementedError

    def hazard(self, x: float) -> float:
        v = self.value(x)
        if v <= 0.0:
            raise ValueError(f"hazard undefined where demand is zero (x={x})")
        return abs(self.derivative(x)) / v

    def inverse(self, p: float) -> float:
        """Largest x in [0, T] with lambda(x) >= p (0 if p exceeds the peak)."""
        raise NotImplementedError

    def lower_inverse(self, p: float) -> float:
        """Smallest x in [0, T] with lambda(x) <= p (T if there is none)."""
        raise NotImplementedError

    def integral(self, a: float, b: float) -> float:
        val, _ = integrate.quad(self.value, a, b, epsabs=1e-10, epsrel=1e-10, limit=200)
        return val

    def shifted(self, const: float) -> "DemandFn":
        """The function lambda(x) - const restricted to where it is positive."""
        return ShiftedDemand(self, const)

    def to_record(self) -> Dict[str, Any]:
        raise NotImplementedError


@dataclass(frozen=True)
class UniformDemand(DemandFn):
    """Every buyer in the population values the items at ``level``."""

    level: float
    T: float = 1.0
    family = "uniform"

    def __post_init__(self):
        if not (self.level > 0 and self.T > 0):
            raise ValueError("uniform demand needs level > 0 and T > 0")

    @property
    def support(self) -> float:
        return self.T

    def value(self, x: float) -> float:
        return self.level

    def derivative(self, x: float) -> float:
        return 0.0

    def inverse(self, p: float) -> float:
        return self.T if p <= self.level else 0.0

    def lower_inverse(self, p: float) -> float:
        return 0.0 if p >= self.level else self.T

    def integral(self, a: float, b: float) -> float:
        return self.level * (b - a)

    def to_record(self):
        return {"family": self.family, "level": self.level, "T": self.T}


@dataclass(frozen=True)
class LinearDemand(DemandFn):
    """lambda(x) = peak_value - slope * x; the support defaults to the root."""

    peak_value: float
    slope: float
    T: Optional[float] = None
    family = "linear"

    def __post_init__(self):
        if not (self.peak_value > 0 and self.slope > 0):
            raise ValueError("linear demand needs positive peak and slope")
        root = self.peak_value / self.slope
        if self.T is None:
            object.__setattr__(self, "T", root)
        elif not (0 < self.T <= root * (1 + 1e-12)):
            raise ValueError("linear demand support must lie within [0, peak/slope]")

    @property
    def support(self) -> float:
        return self.T

    def value(self, x: float) -> float:
        return max(self.peak_value - self.slope * x, 0.0)

    def derivative(self, x: float) -> float:
        return -self.slope

    def inverse(self, p: float) -> float:
        if p > self.peak_value:
            return 0.0
        return min(max((self.peak_value - p) / self.slope, 0.0), self.T)

    def lower_inverse(self, p: float) -> float:
        if p < self.value(self.T):
            return self.T
        return min(max((self.peak_value - p) / self.slope, 0.0), self.T)

    def integral(self, a: float, b: float) -> float:
        return self.peak_value * (b - a) - 0.5 * self.slope * (b * b - a * a)

    def to_record(self):
        return {"family": self.family, "peak": self.peak_value, "slope": self.slope, "T": self.T}


@dataclass(frozen=True)
class ExponentialDemand(DemandFn):
    """lambda(x) = peak_value * exp(-rate * x) on [0, T]."""

    peak_value: float
    rate: float
    T: float
    family = "exponential"

    def __post_init__(self):
        if not (self.peak_value > 0 and self.rate > 0 and self.T > 0):
            raise ValueError("exponential demand needs positive peak, rate and T")

    @property
    def support(self) -> float:
        return self.T

    def value(self, x: float) -> float:
        return self.peak_value * math.exp(-self.rate * x)

    def derivative(self, x: float) -> float:
        return -self.rate * self.value(x)

    def hazard(self, x: float) -> float:
        return self.rate

    def inverse(self, p: float) -> float:
        if p > self.peak_value:
            return 0.0
        if p <= self.value(self.T):
            return self.T
        return min(max(math.log(self.peak_value / p) / self.rate, 0.0), self.T)

    def lower_inverse(self, p: float) -> float:
        if p < self.value(self.T):
            return self.T
        if p >= self.peak_value:
            return 0.0
        return min(max(math.log(self.peak_value / p) / self.rate, 0.0), self.T)

    def integral(self, a: float, b: float) -> float:
        return self.peak_value / self.rate * (math.exp(-self.rate * a) - math.exp(-self.rate * b))

    def to_record(self):
        return {"family": self.family, "peak": self.peak_value, "rate": self.rate, "T": self.T}


@dataclass(frozen=True)
class PowerDemand(DemandFn):
    """lambda(x) = peak_value * (1 - x/T)**exponent; hazard exponent/(T - x)."""

    peak_value: float
    exponent: float
    T: float = 1.0
    family = "power-law"

    def __post_init__(self):
        if not (self.peak_value > 0 and self.exponent > 0 and self.T > 0):
            raise ValueError("power-law demand needs positive peak, exponent and T")

    @property
    def support(self) -> float:
        return self.T

    def _s(self, x: float) -> float:
        return max(1.0 - x / self.T, 0.0)

    def value(self, x: float) -> float:
        return self.peak_value * self._s(x) ** self.exponent

    def derivative(self, x: float) -> float:
        s = self._s(x)
        if s == 0.0 and self.exponent < 1:
            return -math.inf
        return -self.peak_value * self.exponent / self.T * s ** (self.exponent - 1)

    def hazard(self, x: float) -> float:
        if x >= self.T:
            raise ValueError("hazard undefined where demand is zero")
        return self.exponent / (self.T - x)

    def inverse(self, p: float) -> float:
        if p > self.peak_value:
            return 0.0
        if p <= 0.0:
            return self.T
        return min(max(self.T * (1.0 - (p / self.peak_value) ** (1.0 / self.exponent)), 0.0), self.T)

    def lower_inverse(self, p: float) -> float:
        if p >= self.peak_value:
            return 0.0
        return self.inverse(p)

    def integral(self, a: float, b: float) -> float:
        q1 = self.exponent + 1.0
        return self.peak_value * self.T / q1 * (self._s(a) ** q1 - self._s(b) ** q1)

    def to_record(self):
        return {"family": self.family, "peak": self.peak_value, "exponent": self.exponent, "T": self.T}


@dataclass(frozen=True)
class TabulatedDemand(DemandFn):
    """Piecewise-linear interpolation through (xs[k], values[k]) with xs[0] = 0."""

    xs: Tuple[float, ...]
    values: Tuple[float, ...]
    family = "piecewise-tabulated"

    def __post_init__(self):
        xs = tuple(float(v) for v in self.xs)
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "values", vals)
        if len(xs) != len(vals) or len(xs) < 2:
            raise ValueError("tabulated demand needs matching knot lists of length >= 2")
        if xs[0] != 0.0 or any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("tabulated knots must start at 0 and increase strictly")
        if vals[0] <= 0 or any(b > a for a, b in zip(vals, vals[1:])) or vals[-1] < 0:
            raise ValueError("tabulated values must be positive at 0 and non-increasing")

    @property
    def support(self) -> float:
        return self.xs[-1]

    def _segment(self, x: float) -> int:
        k = int(np.searchsorted(self.xs, x, side="right")) - 1
        return min(max(k, 0), len(self.xs) - 2)

    def value(self, x: float) -> float:
        return float(np.interp(x, self.xs, self.values))

    def derivative(self, x: float) -> float:
        k = self._segment(x)
        return (self.values[k + 1] - self.values[k]) / (self.xs[k + 1] - self.xs[k])

    def _bisect(self, pred, lo: float, hi: float) -> float:
        # pred is monotone: True on [lo, root], False beyond.
        while hi - lo > BISECTION_TOL * max(1.0, self.support):
            mid = 0.5 * (lo + hi)
            if pred(mid):
                lo = mid
            else:
                hi = mid
        return lo

    def inverse(self, p: float) -> float:
        if p > self.values[0]:
            return 0.0
        if p <= self.values[-1]:
            return self.support
        return self._bisect(lambda x: self.value(x) >= p, 0.0, self.support)

    def lower_inverse(self, p: float) -> float:
        if p < self.values[-1]:
            return self.support
        if p >= self.values[0]:
            return 0.0
        return self._bisect(lambda x: self.value(x) > p, 0.0, self.support)

    def integral(self, a: float, b: float) -> float:
        pts = [a] + [x for x in self.xs if a < x < b] + [b]
        vals = [self.value(x) for x in pts]
        return float(sum(0.5 * (v0 + v1) * (x1 - x0) for x0, x1, v0, v1 in zip(pts, pts[1:], vals, vals[1:])))

    def to_record(self):
        return {"family": self.family, "xs": list(self.xs), "values": list(self.values)}


@dataclass(frozen=True)
class ShiftedDemand(DemandFn):
    """lambda(x) - const on the region where it stays positive."""

    base: DemandFn
    const: float
    family = "shifted"

    @property
    def support(self) -> float:
        return self.base.lower_inverse(self.const) if self.const > 0 else self.base.support

    def value(self, x: float) -> float:
        return self.base.value(x) - self.const

    def derivative(self, x: float) -> float:
        return self.base.derivative(x)

    def inverse(self, p: float) -> float:
        return min(self.base.inverse(p + self.const), self.support)

    def lower_inverse(self, p: float) -> float:
        return min(self.base.lower_inverse(p + self.const), self.support)

    def integral(self, a: float, b: float) -> float:
        return self.base.integral(a, b) - self.const * (b - a)

    def to_record(self):
        return {"family": self.family, "base": self.base.to_record(), "const": self.const}


# ---------------------------------------------------------------------------
# Cost families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CostFn:
    """Base class for convex production costs with optional hard capacity ``cap``."""

    family = "abstract"

    @property
    def capacity(self) -> float:
        return getattr(self, "cap", math.inf)

    def total(self, y: float) -> float:
        raise NotImplementedError

    def marginal(self, y: float) -> float:
        raise NotImplementedError

    def _uncapped_load(self, m: float) -> float:
        """sup{y >= 0 : c(y) <= m} ignoring capacity; m >= c(0)."""
        raise NotImplementedError

    def load_at(self, m: float) -> float:
        """sup{y in [0, cap] : c(y) <= m}, and 0 when m is below c(0)."""
        if m < self.marginal(0.0):
            return 0.0
        return min(self._uncapped_load(m), self.capacity)

    def upper_marginal(self, y: float, tol: float = 0.0) -> float:
        """Marginal cost of producing more; infinite once the capacity binds."""
        if y >= self.capacity - tol:
            return math.inf
        return self.marginal(y)

    def to_record(self) -> Dict[str, Any]:
        raise NotImplementedError

    def _cap_record(self, rec):
        if math.isfinite(self.capacity):
            rec["cap"] = self.capacity
        return rec


@dataclass(frozen=True)
class ZeroCost(CostFn):
    cap: float = math.inf
    family = "zero"

    def total(self, y: float) -> float:
        return 0.0

    def marginal(self, y: float) -> float:
        return 0.0

    def _uncapped_load(self, m: float) -> float:
        return math.inf

    def to_record(self):
        return self._cap_record({"family": self.family})


@dataclass(frozen=True)
class LinearCost(CostFn):
    """C(y) = rate * y."""

    rate: float
    cap: float = math.inf
    family = "linear"

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("linear cost rate must be nonnegative")

    def total(self, y: float) -> float:
        return self.rate * y

    def marginal(self, y: float) -> float:
        return self.rate

    def _uncapped_load(self, m: float) -> float:
        return math.inf

    def to_record(self):
        return self._cap_record({"family": self.family, "rate": self.rate})


@dataclass(frozen=True)
class QuadraticCost(CostFn):
    """C(y) = a * y**2 + b * y, so c(y) = 2a y + b."""

    a: float
    b: float = 0.0
    cap: float = math.inf
    family = "quadratic"

    def __post_init__(self):
        if self.a <= 0 or self.b < 0:
            raise ValueError("quadratic cost needs a > 0 and b >= 0")

    def total(self, y: float) -> float:
        return self.a * y * y + self.b * y

    def marginal(self, y: float) -> float:
        return 2.0 * self.a * y + self.b

    def _uncapped_load(self, m: float) -> float:
        return (m - self.b) / (2.0 * self.a)

    def to_record(self):
        return self._cap_record({"family": self.family, "a": self.a, "b": self.b})


@dataclass(frozen=True)
class PowerCost(CostFn):
    """C(y) = scale * y**power with power >= 1."""

    scale: float
    power: float
    cap: float = math.inf
    family = "power"

    def __post_init__(self):
        if self.scale <= 0 or self.power < 1:
            raise ValueError("power cost needs scale > 0 and power >= 1")

    def total(self, y: float) -> float:
        return self.scale * y ** self.power

    def marginal(self, y: float) -> float:
        if self.power == 1.0:
            return self.scale
        return self.scale * self.power * y ** (self.power - 1.0)

    def _uncapped_load(self, m: float) -> float:
        if self.power == 1.0:
            return math.inf
        return (m / (self.scale * self.power)) ** (1.0 / (self.power - 1.0))

    def to_record(self):
        return self._cap_record({"family": self.family, "scale": self.scale, "power": self.power})


@dataclass(frozen=True)
class CapacitatedCost(CostFn):
    """A base cost whose marginal ramps up by ``barrier`` over the last
    ``rho`` fraction of ``capacity``; production beyond capacity is impossible.

    The ramp keeps the marginal continuous while making the capacity bind
    for any marginal above c(capacity).
    """

    base: CostFn
    capacity_value: float
    rho: float = DEFAULT_RAMP_FRACTION
    barrier: float = DEFAULT_BARRIER
    family = "capacitated-smoothed"

    def __post_init__(self):
        if not (self.capacity_value > 0 and 0 < self.rho < 1 and self.barrier > 0):
            raise ValueError("capacitated cost needs capacity > 0, 0 < rho < 1, barrier > 0")

    @property
    def capacity(self) -> float:
        return self.capacity_value

    @property
    def ramp_start(self) -> float:
        return (1.0 - self.rho) * self.capacity_value

    def _ramp(self, y: float) -> float:
        return max(y - self.ramp_start, 0.0)

    def total(self, y: float) -> float:
        if y > self.capacity_value * (1 + 1e-12):
            return math.inf
        d = self._ramp(y)
        return self.base.total(y) + self.barrier * d * d / (2.0 * self.rho * self.capacity_value)

    def marginal(self, y: float) -> float:
        if y > self.capacity_value * (1 + 1e-12):
            return math.inf
        return self.base.marginal(y) + self.barrier * self._ramp(y) / (self.rho * self.capacity_value)

    def _uncapped_load(self, m: float) -> float:
        y0 = self.ramp_start
        if self.marginal(y0) > m:
            return self.base.load_at(m)
        if self.marginal(self.capacity_value) <= m:
            return self.capacity_value
        lo, hi = y0, self.capacity_value
        while hi - lo > BISECTION_TOL * self.capacity_value:
            mid = 0.5 * (lo + hi)
            if self.marginal(mid) <= m:
                lo = mid
            else:
                hi = mid
        return lo

    def to_record(self):
        return {
            "family": self.family,
            "base": self.base.to_record(),
            "capacity": self.capacity_value,
            "rho": self.rho,
            "barrier": self.barrier,
        }


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def _check_support(fn: DemandFn, x: float) -> None:
    if x < 0 or x > fn.support * (1 + 1e-12):
        raise ValueError(f"x={x} outside the support [0, {fn.support}]")


def demand_query(fn: DemandFn, x: float) -> DemandPoint:
    _check_support(fn, x)
    v = fn.value(x)
    if v <= 0:
        raise ValueError(f"hazard undefined where demand is zero (x={x})")
    return DemandPoint(v, fn.derivative(x), fn.hazard(x))


def demand_inverse(fn: DemandFn, p: float) -> float:
    if p < 0:
        raise ValueError("price must be nonnegative")
    return fn.inverse(p)


def demand_integral(fn: DemandFn, a: float, b: float) -> float:
    if b < a:
        raise ValueError("integration bounds are inverted")
    _check_support(fn, a)
    _check_support(fn, b)
    if a == b:
        return 0.0
    return fn.integral(a, b)


def check_mhr(fn: DemandFn, grid_size: int = DEFAULT_MHR_GRID, tol: float = 1e-7) -> Certificate:
    """Certify a non-decreasing hazard rate on a uniform interior grid.

    Grid points where the demand vanishes are skipped, as are the support
    endpoints themselves.
    """
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    T = fn.support
    xs = T * np.arange(1, grid_size + 1) / (grid_size + 1)
    hazards = []
    for x in xs:
        if fn.value(x) > 0:
            hazards.append((x, fn.hazard(x)))
    worst, where = 0.0, None
    for (x0, h0), (x1, h1) in zip(hazards, hazards[1:]):
        drop = h0 - h1
        if drop > tol * max(1.0, abs(h0)) and drop > worst:
            worst, where = drop, x1
    if where is None:
        return Certificate(True)
    return Certificate(False, worst, float(where), f"hazard decreases by {worst:.3g} near x={where:.6g}")


def cost_query(fn: CostFn, y: float) -> CostPoint:
    if y < 0:
        raise ValueError("quantity must be nonnegative")
    if y > fn.capacity * (1 + 1e-12):
        return CostPoint(math.inf, math.inf)
    return CostPoint(fn.total(y), fn.marginal(y))


def marginal_inverse(fn: CostFn, m: float) -> float:
    if m < fn.marginal(0.0):
        raise ValueError(f"marginal {m} is below c(0) = {fn.marginal(0.0)}")
    return fn.load_at(m)


def check_doubly_convex(
    fn: CostFn, grid_size: int = DEFAULT_MHR_GRID, upper: Optional[float] = None, tol: float = 1e-7
) -> Certificate:
    """Certify c(0) = 0 and convexity of the marginal c on a uniform grid."""
    c0 = fn.marginal(0.0)
    if abs(c0) > tol:
        return Certificate(False, abs(c0), 0.0, f"marginal at zero is {c0:.6g}, not 0")
    if upper is None:
        upper = fn.capacity if math.isfinite(fn.capacity) else 10.0
    ys = np.linspace(0.0, upper, grid_size)
    cs = np.array([fn.marginal(y) for y in ys])
    second = cs[:-2] - 2 * cs[1:-1] + cs[2:]
    scale = max(1.0, float(np.max(np.abs(cs))))
    k = int(np.argmin(second))
    if second[k] < -tol * scale:
        return Certificate(False, float(-second[k]), float(ys[k + 1]), "marginal cost is not convex")
    return Certificate(True)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def demand_from_record(rec: Dict[str, Any]) -> DemandFn:
    fam = rec.get("family")
    if fam == "uniform":
        return UniformDemand(float(rec["level"]), float(rec.get("T", 1.0)))
    if fam == "linear":
        T = rec.get("T")
        return LinearDemand(float(rec["peak"]), float(rec["slope"]), None if T is None else float(T))
    if fam == "exponential":
        return ExponentialDemand(float(rec["peak"]), float(rec["rate"]), float(rec["T"]))
    if fam == "power-law":
        return PowerDemand(float(rec["peak"]), float(rec["exponent"]), float(rec.get("T", 1.0)))
    if fam == "piecewise-tabulated":
        return TabulatedDemand(tuple(rec["xs"]), tuple(rec["values"]))
    if fam == "shifted":
        return ShiftedDemand(demand_from_record(rec["base"]), float(rec["const"]))
    raise KeyError(f"unknown demand family {fam!r}")


def cost_from_record(rec: Dict[str, Any]) -> CostFn:
    fam = rec.get("family")
    cap = float(rec.get("cap", math.inf))
    if fam == "zero":
        return ZeroCost(cap)
    if fam == "linear":
        return LinearCost(float(rec["rate"]), cap)
    if fam == "quadratic":
        return QuadraticCost(float(rec["a"]), float(rec.get("b", 0.0)), cap)
    if fam == "power":
        return PowerCost(float(rec["scale"]), float(rec["power"]), cap)
    if fam == "capacitated-smoothed":
        return CapacitatedCost(
            cost_from_record(rec["base"]),
            float(rec["capacity"]),
            float(rec.get("rho", DEFAULT_RAMP_FRACTION)),
            float(rec.get("barrier", DEFAULT_BARRIER)),
        )
    raise KeyError(f"unknown cost family {fam!r}")
