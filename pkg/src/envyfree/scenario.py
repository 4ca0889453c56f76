"""Scenario documents: parsing, validation and canonical hashing.

A scenario is a JSON object::

    {
      "version": 1,
      "seed": 7,
      "instance": {"buyers": [...], "items": [...], "edges": [...]}
                  | {"generator": {"generator": "random-mhr", ...}},
      "algorithm": {"name": "bicriteria"},
      "tolerances": {"tol": 1e-7, "eps": null},
      "oracle": {"step": 1e-3, "lower": "auto", "budget": 10000000, "method": "ordered"},
      "sweep": {"parameter": "k", "values": [1, 1.6487, 2.71828]},
      "outputs": {"report": "report.json", "trace": "trace.ndjson", "table": "sweep.csv"}
    }

Only ``version`` and ``instance`` are required.  Demand and cost records use
the same tagged form as ``DemandFn.to_record`` / ``CostFn.to_record``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

from .errors import ScenarioError
from .functions import cost_from_record, demand_from_record
from .market import DEFAULT_TOL, BuyerType, Item, MarketInstance
from .oracle import DEFAULT_BUDGET, InstanceSpec, generate

SCENARIO_VERSION = 1
ALGORITHMS = ("welfare", "approx-revenue", "bicriteria", "log-delta", "ascend")
MAX_SEED = 2**64


@dataclass(frozen=True)
class AlgorithmSpec:
    name: str = "approx-revenue"
    k: Optional[float] = None
    criterion: Optional[str] = None
    search: str = "secant"


@dataclass(frozen=True)
class OracleSettings:
    step: float = 1e-3
    lower: str = "auto"
    budget: int = DEFAULT_BUDGET
    method: str = "ordered"


@dataclass(frozen=True)
class SweepSpec:
    parameter: str = "k"
    values: Optional[Tuple[float, ...]] = None


@dataclass
class Scenario:
    """A parsed scenario with its instance built."""

    document: Dict[str, Any]
    instance: MarketInstance
    algorithm: AlgorithmSpec
    tol: float
    eps: Optional[float]
    oracle: OracleSettings
    sweep: SweepSpec
    outputs: Dict[str, str] = field(default_factory=dict)
    seed: Optional[int] = None

    @property
    def hash(self) -> str:
        canon = json.dumps(self.document, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def _get(obj: Any, key: str, path: str, kind=None, default: Any = ...):
    if not isinstance(obj, dict):
        raise ScenarioError(f"{path}: expected an object")
    if key not in obj:
        if default is ...:
            raise ScenarioError(f"{path}.{key}: missing")
        return default
    val = obj[key]
    if kind is not None and val is not None and not isinstance(val, kind):
        raise ScenarioError(f"{path}.{key}: expected {getattr(kind, '__name__', kind)}, got {type(val).__name__}")
    return val


def _number(obj: Any, key: str, path: str, default: Any = ...) -> Optional[float]:
    val = _get(obj, key, path, (int, float), default)
    if isinstance(val, bool):
        raise ScenarioError(f"{path}.{key}: expected a number")
    if val is not None and not math.isfinite(val):
        raise ScenarioError(f"{path}.{key}: must be finite")
    return None if val is None else float(val)


def _missing(path: str, exc: KeyError) -> str:
    key = str(exc.args[0]) if exc.args else ""
    if key.isidentifier():
        return f"{path}.{key}: missing"
    return f"{path}: {key}"


def _instance(doc: Dict[str, Any], seed: Optional[int]) -> Tuple[MarketInstance, Dict[str, Any]]:
    rec = _get(doc, "instance", "scenario", dict)
    if "generator" in rec:
        grec = dict(_get(rec, "generator", "instance", dict))
        if seed is not None:
            grec["seed"] = seed
        elif "seed" not in grec:
            raise ScenarioError("instance.generator.seed: missing (or pass a top-level seed)")
        try:
            spec = InstanceSpec.from_record(grec)
            if spec.generator == "manual":
                raise ValueError("manual instances are given inline")
            return generate(spec), {"generator": spec.to_record()}
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"instance.generator: {exc}") from exc
    buyers, items = [], []
    for n, b in enumerate(_get(rec, "buyers", "instance", list)):
        path = f"instance.buyers[{n}]"
        bid = _get(b, "id", path, str)
        try:
            buyers.append(BuyerType(bid, demand_from_record(_get(b, "demand", path, dict))))
        except KeyError as exc:
            raise ScenarioError(_missing(f"{path}.demand", exc)) from exc
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"{path}.demand: {exc}") from exc
    for n, s in enumerate(_get(rec, "items", "instance", list)):
        path = f"instance.items[{n}]"
        sid = _get(s, "id", path, str)
        try:
            items.append(Item(sid, cost_from_record(_get(s, "cost", path, dict))))
        except KeyError as exc:
            raise ScenarioError(_missing(f"{path}.cost", exc)) from exc
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"{path}.cost: {exc}") from exc
    edges = []
    for n, e in enumerate(_get(rec, "edges", "instance", list)):
        if not (isinstance(e, list) and len(e) == 2 and all(isinstance(v, str) for v in e)):
            raise ScenarioError(f"instance.edges[{n}]: expected [buyer id, item id]")
        edges.append((e[0], e[1]))
    if not buyers or not items:
        raise ScenarioError("instance: needs at least one buyer and one item")
    try:
        inst = MarketInstance(buyers, items, edges)
    except ValueError as exc:
        raise ScenarioError(f"instance: {exc}") from exc
    return inst, inst.to_record()


def parse_scenario(
    doc: Any, tol: Optional[float] = None, oracle_step: Optional[float] = None, seed: Optional[int] = None
) -> Scenario:
    """Validate a scenario document and build its instance.

    Command-line overrides (tolerance, oracle step, seed) are folded into the
    canonical document so that they take part in the scenario hash.

    Raises:
        ScenarioError: naming the offending field.
    """
    if not isinstance(doc, dict):
        raise ScenarioError("scenario: expected a JSON object")
    version = _get(doc, "version", "scenario", int)
    if version != SCENARIO_VERSION:
        raise ScenarioError(f"scenario.version: unsupported version {version}")
    known = {"version", "seed", "instance", "algorithm", "tolerances", "oracle", "sweep", "outputs"}
    extra = set(doc) - known
    if extra:
        raise ScenarioError(f"scenario.{sorted(extra)[0]}: unknown field")

    if seed is None:
        seed = _get(doc, "seed", "scenario", int, None)
    if seed is not None and not 0 <= seed < MAX_SEED:
        raise ScenarioError("scenario.seed: must be an unsigned 64-bit integer")
    instance, inst_rec = _instance(doc, seed)

    arec = _get(doc, "algorithm", "scenario", dict, {})
    name = _get(arec, "name", "algorithm", str, "approx-revenue")
    if name not in ALGORITHMS:
        raise ScenarioError(f"algorithm.name: unknown algorithm {name!r}")
    k = _number(arec, "k", "algorithm", None)
    if name == "ascend" and k is None:
        raise ScenarioError("algorithm.k: required for the ascend algorithm")
    if k is not None and k < 1:
        raise ScenarioError("algorithm.k: must be at least 1")
    criterion = _get(arec, "criterion", "algorithm", str, None)
    if criterion not in (None, "uniform-peak", "general"):
        raise ScenarioError(f"algorithm.criterion: unknown criterion {criterion!r}")
    search = _get(arec, "search", "algorithm", str, "secant")
    if search not in ("secant", "bisect"):
        raise ScenarioError(f"algorithm.search: unknown search {search!r}")
    algorithm = AlgorithmSpec(name, k, criterion, search)

    trec = _get(doc, "tolerances", "scenario", dict, {})
    tol_v = tol if tol is not None else _number(trec, "tol", "tolerances", DEFAULT_TOL)
    eps = _number(trec, "eps", "tolerances", None)
    if not tol_v > 0:
        raise ScenarioError("tolerances.tol: must be positive")
    if eps is not None and not eps > 0:
        raise ScenarioError("tolerances.eps: must be positive")

    orec = _get(doc, "oracle", "scenario", dict, {})
    step = oracle_step if oracle_step is not None else _number(orec, "step", "oracle", 1e-3)
    if not step > 0:
        raise ScenarioError("oracle.step: must be positive")
    lower = _get(orec, "lower", "oracle", str, "auto")
    if lower not in ("auto", "pe", "pstar", "zero"):
        raise ScenarioError(f"oracle.lower: unknown bound {lower!r}")
    budget = _get(orec, "budget", "oracle", int, DEFAULT_BUDGET)
    method = _get(orec, "method", "oracle", str, "ordered")
    if method not in ("ordered", "exhaustive"):
        raise ScenarioError(f"oracle.method: unknown method {method!r}")
    oracle = OracleSettings(step, lower, budget, method)

    srec = _get(doc, "sweep", "scenario", dict, {})
    param = _get(srec, "parameter", "sweep", str, "k")
    if param not in ("k", "j"):
        raise ScenarioError(f"sweep.parameter: unknown parameter {param!r}")
    values = _get(srec, "values", "sweep", list, None)
    if values is not None:
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
            raise ScenarioError("sweep.values: expected a list of numbers")
        values = tuple(float(v) for v in values)
    sweep = SweepSpec(param, values)

    outputs = {"report": "report.json", "trace": "trace.ndjson", "table": "sweep.csv"}
    for key, val in _get(doc, "outputs", "scenario", dict, {}).items():
        if key not in outputs or not isinstance(val, str) or not val:
            raise ScenarioError(f"outputs.{key}: expected one of report/trace/table with a file name")
        outputs[key] = val

    canonical = {
        "version": version,
        "seed": seed,
        "instance": inst_rec,
        "algorithm": {"name": name, "k": k, "criterion": criterion, "search": search},
        "tolerances": {"tol": tol_v, "eps": eps},
        "oracle": {"step": step, "lower": lower, "budget": budget, "method": method},
        "sweep": {"parameter": param, "values": None if values is None else list(values)},
    }
    return Scenario(canonical, instance, algorithm, tol_v, eps, oracle, sweep, outputs, seed)


def load_scenario(path: str, **overrides) -> Scenario:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ScenarioError(f"scenario file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario file: invalid JSON ({exc})") from exc
    return parse_scenario(doc, **overrides)
