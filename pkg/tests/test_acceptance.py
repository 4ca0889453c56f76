"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Instance corpora are seeded so every run checks the same markets.
"""

import functools
import json
import math
import time

import numpy as np
import pytest

from envyfree import cli
from envyfree.algorithms import (
    LADDER_CONSTANT,
    approx_revenue_uniform_peak,
    bicriteria_e,
    log_delta_algorithm,
)
from envyfree.ascending import AscendConfig, run_ascending
from envyfree.flow import kkt_violation, min_cost_flow, welfare_opt
from envyfree.functions import ExponentialDemand, LinearDemand, PowerDemand
from envyfree.market import check_envy_free
from envyfree.oracle import (
    InstanceSpec,
    discrete_flow_oracle,
    gen_random_mhr_instance,
    gen_vertex_cover_gadget,
    grid_opt_revenue,
    is_vertex_cover,
    lemma_suite,
    sweep_ascent,
)

SQRT_E = math.sqrt(math.e)
CERT_TOL = 1e-6


def report(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})")
    assert ok, detail


def sized_instance(seed, max_buyers, max_items, **kw):
    rng = np.random.default_rng(seed)
    nb = int(rng.integers(1, max_buyers + 1))
    ni = int(rng.integers(1, max_items + 1))
    return gen_random_mhr_instance(InstanceSpec(seed=seed, n_buyers=nb, n_items=ni, **kw))


@functools.lru_cache(maxsize=None)
def uniform_peak_runs():
    """Criteria 1-3: 200 equal-peak markets up to 8 x 8, both stop parameters."""
    runs = []
    start = time.perf_counter()
    for seed in range(200):
        inst = sized_instance(1000 + seed, 8, 8)
        wopt = welfare_opt(inst)
        out = {}
        for label, k in (("e", math.e), ("sqrt_e", SQRT_E)):
            out[label] = run_ascending(inst, AscendConfig(k=k), wopt)
        runs.append((inst, wopt, out))
    return runs, time.perf_counter() - start


@functools.lru_cache(maxsize=None)
def small_ratio_runs():
    """Criteria 4-5: 50 markets with at most 4 buyers and 3 items."""
    runs = []
    start = time.perf_counter()
    for seed in range(50):
        inst = sized_instance(2000 + seed, 4, 3)
        wopt = welfare_opt(inst)
        oracle = grid_opt_revenue(inst, 1e-3)
        _, rep_a = approx_revenue_uniform_peak(inst, oracle_revenue=oracle.revenue, oracle_slack=oracle.slack, wopt=wopt)
        sol_b, rep_b = bicriteria_e(inst, oracle_revenue=oracle.revenue, oracle_slack=oracle.slack, wopt=wopt)
        runs.append((inst, wopt, oracle, rep_a, sol_b, rep_b))
    return runs, time.perf_counter() - start


def test_criterion_01_envy_free_and_min_cost(capsys):
    runs, elapsed = uniform_peak_runs()
    worst_envy = worst_kkt = 0.0
    for inst, _, out in runs:
        for sol, _ in out.values():
            worst_envy = max(worst_envy, check_envy_free(sol, inst, CERT_TOL).max_residual)
            worst_kkt = max(worst_kkt, kkt_violation(inst, sol.demand, sol.flow, CERT_TOL))
    ok = worst_envy <= CERT_TOL and worst_kkt <= CERT_TOL and elapsed < 60
    report(capsys, 1, "envy-free and min-cost ascent outcomes", ok,
           f"{len(runs)} instances, envy {worst_envy:.2e}, kkt {worst_kkt:.2e}, {elapsed:.1f}s")


def test_criterion_02_stopping_equality(capsys):
    runs, _ = uniform_peak_runs()
    worst = 0.0
    checked = 0
    for inst, _, out in runs:
        for sol, trace in out.values():
            for t, s in enumerate(inst.items):
                if s.id in trace.frozen:
                    continue
                c = s.cost.marginal(sol.loads[t])
                gap = abs(sol.prices[t] - c - (trace.target - c) / trace.k)
                worst = max(worst, gap / trace.eps)
                checked += 1
    report(capsys, 2, "finished items meet the stopping rule with equality", worst <= 2.0,
           f"{checked} items, worst gap {worst:.2f} eps (limit 2 eps)")


def test_criterion_03_price_domination(capsys):
    runs, _ = uniform_peak_runs()
    worst = math.inf
    for _, wopt, out in runs:
        pe, ps = out["e"][0].prices, out["sqrt_e"][0].prices
        worst = min(worst, float(np.min(ps - pe)), float(np.min(pe - wopt.prices)))
    report(capsys, 3, "p(sqrt e) >= p(e) >= p*", worst >= -1e-6, f"smallest margin {worst:.2e}")


def test_criterion_04_revenue_ratio(capsys):
    runs, elapsed = small_ratio_runs()
    worst = 0.0
    ok = True
    for _, _, oracle, rep, _, _ in runs:
        alg = rep.revenue
        ok &= oracle.revenue <= 1.877 * alg + oracle.slack
        ok &= not rep.failed
        if alg > 0:
            worst = max(worst, oracle.revenue / alg)
    ok &= elapsed < 300
    report(capsys, 4, "oracle / approx revenue <= 1.877 + slack", bool(ok),
           f"{len(runs)} instances, worst ratio {worst:.4f}, {elapsed:.1f}s")


def test_criterion_05_bicriteria(capsys):
    runs, _ = small_ratio_runs()
    ok = True
    worst_rev = worst_sw = math.inf
    for _, wopt, oracle, _, sol, rep in runs:
        slack = oracle.slack
        rev_margin = sol.revenue - (oracle.revenue / math.e - slack)
        sw_margin = sol.welfare - (wopt.welfare / 2 - 1e-6)
        alpha = rep.alpha
        bound = max(1 / math.e, (alpha - 1) / alpha)
        ok &= rev_margin >= 0 and sw_margin >= 0
        ok &= rep.details["alpha_revenue_fraction"] == pytest.approx(bound)
        ok &= sol.revenue >= bound * oracle.revenue - slack
        ok &= not rep.failed
        worst_rev, worst_sw = min(worst_rev, rev_margin), min(worst_sw, sw_margin)
    report(capsys, 5, "k=e keeps 1/e of revenue and half of welfare", bool(ok),
           f"revenue margin {worst_rev:.2e}, welfare margin {worst_sw:.2e}")


def test_criterion_06_search_matches_sweep(capsys):
    worst = 0.0
    over_budget = 0
    start = time.perf_counter()
    n = 20
    for seed in range(n):
        inst = gen_random_mhr_instance(InstanceSpec(seed=3000 + seed, n_buyers=4, n_items=3))
        eps = 1e-3
        ref = sweep_ascent(inst, AscendConfig(k=math.e, eps=eps))
        for search in ("secant", "bisect"):
            sol, trace = run_ascending(inst, AscendConfig(k=math.e, eps=eps, search=search))
            worst = max(worst, float(np.max(np.abs(sol.prices - ref.prices))) / eps)
            if trace.boundaries and trace.flow_calls > trace.call_budget(inst.n_items, min(trace.boundaries)):
                over_budget += 1
    ok = worst <= 2.0 and over_budget == 0
    report(capsys, 6, "interval search equals fixed-step ascent within budget", ok,
           f"{n} instances, worst {worst:.2f} eps, {over_budget} over budget, {time.perf_counter() - start:.1f}s")


def test_criterion_07_log_delta(capsys):
    ok = True
    failures = []
    chosen = []
    for n in range(30):
        delta = math.e ** (1 + n % 3)
        inst = gen_random_mhr_instance(
            InstanceSpec(seed=4000 + n, n_buyers=4, n_items=3, delta=delta, doubly_convex_only=True)
        )
        wopt = welfare_opt(inst)
        sol, rep = log_delta_algorithm(inst, wopt=wopt)
        rungs = rep.details["rungs"]
        sw0 = rungs[0]["welfare"]
        tol = 1e-7 * max(1.0, wopt.welfare)
        threshold = 0.5 * sw0 / (LADDER_CONSTANT * (1 + math.log(delta)))
        good = sol.revenue >= threshold - tol and sol.welfare >= wopt.welfare / 4 - tol
        good &= sw0 >= wopt.welfare / 2 - tol
        for a, b in zip(rungs, rungs[1:]):
            good &= a["welfare"] - b["welfare"] <= LADDER_CONSTANT * a["revenue"] + tol
        good &= not rep.failed
        if not good:
            failures.append(n)
        ok &= good
        chosen.append(rep.j_star)
    report(capsys, 7, "ladder revenue threshold and quarter welfare", bool(ok),
           f"30 instances, failures {failures}, chosen rungs {sorted(set(chosen))}")


def test_criterion_08_flow_oracle(capsys):
    worst = 0.0
    for n in range(50):
        inst = sized_instance(5000 + n, 6, 6)
        x = np.random.default_rng(n).uniform(0, 1, inst.n_buyers) * inst.supports
        ours = min_cost_flow(inst, x).objective(inst)
        ref = discrete_flow_oracle(inst, x, 1e-3).objective
        worst = max(worst, abs(ours - ref) / max(1.0, abs(ref)))
    report(capsys, 8, "min-cost flow matches linearized flow program", worst <= 1e-4,
           f"50 demands, worst relative gap {worst:.2e}")


def test_criterion_09_lemma_suites(capsys):
    instances = [gen_random_mhr_instance(InstanceSpec(seed=6000 + n, n_buyers=4, n_items=4)) for n in range(30)]
    demands = [
        LinearDemand(1.0, 1.0),
        LinearDemand(3.0, 0.7),
        ExponentialDemand(1.0, 1.0, 8.0),
        ExponentialDemand(2.0, 0.3, 20.0),
        PowerDemand(1.0, 2.0, 1.0),
        PowerDemand(2.0, 0.5, 3.0),
        LinearDemand(2.0, 1.0).shifted(0.5),
    ]
    rep = lemma_suite(instances, demands, tol=1e-6, seed=9)
    counts = {k: (v.checks, v.violations) for k, v in rep.properties.items()}
    families = ("monotonicity", "flow-partition", "left-continuity", "mhr")
    covered = all(any(k.startswith(f) and c > 0 for k, (c, _) in counts.items()) for f in families)
    total = sum(c for c, _ in counts.values())
    bad = {k: v for k, (c, v) in counts.items() if v}
    report(capsys, 9, "structural lemma suites", rep.ok and covered,
           f"{total} checks over {len(counts)} properties, violations {bad or 0}")


def test_criterion_10_gadget_cover(capsys):
    rng = np.random.default_rng(7)
    ok = True
    sizes = []
    for _ in range(10):
        n = int(rng.integers(3, 5))
        edges = [(u, w) for u in range(n) for w in range(u + 1, n) if rng.random() < 0.6]
        if not edges:
            edges = [(0, 1)]
        inst = gen_vertex_cover_gadget(edges, n_vertices=n)
        best = grid_opt_revenue(inst, 1e-2, "zero")
        cover = [v for v in range(n) if best.prices[v] < 2 - 1e-9]
        ok &= is_vertex_cover(edges, cover)
        sizes.append(len(cover))
    report(capsys, 10, "sub-2 gadget items form a vertex cover", bool(ok), f"10 graphs, cover sizes {sizes}")


def test_criterion_11_cli_determinism(capsys, tmp_path):
    doc = {
        "version": 1,
        "seed": 42,
        "instance": {"generator": {"generator": "random-mhr", "n_buyers": 4, "n_items": 3}},
        "algorithm": {"name": "approx-revenue"},
    }
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(doc))
    codes = [cli.main(["run", "--scenario", str(path), "--out", str(tmp_path / d), "--trace"]) for d in ("a", "b")]
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in ("report.json", "trace.ndjson"))
    report(capsys, 11, "cli run is byte-reproducible", codes == [0, 0] and same, f"exit codes {codes}, identical {same}")
