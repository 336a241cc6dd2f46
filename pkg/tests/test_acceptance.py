"""Acceptance gate: every criterion at its stated scale, tolerance and time limit.

Each test prints one ``PASS``/``FAIL`` line (also collected into the terminal
summary).  Expensive tables are computed once per session and reused by the
integrity and determinism checks.
"""

import time
from fractions import Fraction

import pytest

from conftest import ACCEPTANCE_LINES
from fmrlnc.coding import MemoryPolicy
from fmrlnc.experiments import (
    ResultTable,
    Scenario,
    cmd_lemma3,
    cmd_stopping,
    estimate_lemma1,
    estimate_lemma2,
    oracle,
)
from fmrlnc.field import FieldSpec
from fmrlnc.topology import (
    PeriodicSchedule,
    graph_generator,
    isoperimetric_number,
    parse_graph,
    relaxed_isoperimetric_number,
    vertex_connectivity,
)

from oracles import isoperimetric_brute, vertex_connectivity_brute

BIG = FieldSpec.parse("2^16")
SEED = 0


def report(number: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)


def timed(fn):
    start = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - start


def failed_rows(table: ResultTable) -> str:
    return "; ".join(f"{r.get('case') or r.get('policy')}/{r['statistic']}={r['value']}" for r in table.failures)


# -- builders, shared between criteria -------------------------------------------------


def lemma1_table(seed=SEED):
    t = ResultTable()
    t.extend(estimate_lemma1("16", None, 4, "unlimited", 10**5, seed))
    for s in (1, 2):
        for policy in ("accumulator", "recombinator"):
            t.extend(estimate_lemma1("16", s, 4, policy, 10**5, seed))
    return t


def lemma2_table(seed=SEED):
    t = ResultTable()
    for q, s in (("2", 1), ("4", 2), ("16", 1)):
        for variant in ("accumulator", "recombinator"):
            t.extend(estimate_lemma2(q, s, variant, 10**5, seed))
    return t


def oracle_table(seed=SEED):
    t = ResultTable()
    for scenario in ("receive", "emit"):
        for q in (2, 3):
            for k in (1, 2):
                t.extend(oracle(scenario, q, k, samples=10**6, seed=seed))
    return t


def path_scenario():
    return Scenario("P32", 32, 16, BIG, MemoryPolicy.accumulator(1), "path:32", placement="at:0")


def clique_scenario():
    return Scenario("K32", 32, 32, BIG, MemoryPolicy.accumulator(1), "complete:32", placement="at:0")


def alternating_scenario():
    return Scenario("K16|empty", 16, 16, BIG, MemoryPolicy.accumulator(1), "complete:16|empty:16",
                    placement="at:0", scale="isoperimetric", delta=2)


def async_scenario():
    return Scenario("async K12", 12, 12, FieldSpec.parse("2"), MemoryPolicy.accumulator(8), "complete:12",
                    model="async-single-transfer", scale="cut", baseline=MemoryPolicy.unlimited())


_cache: dict[str, tuple[ResultTable, float]] = {}


def cached(name: str, build):
    if name not in _cache:
        _cache[name] = timed(build)
    return _cache[name]


# -- criteria ------------------------------------------------------------------------------


def test_criterion_1_success_probability():
    table, secs = cached("lemma1", lemma1_table)
    rates = {(r["policy"], r["s"]): r["value"] for r in table.rows if r["statistic"] == "success_rate"}
    ok = not table.failures and secs < 30 and len(rates) == 5
    report(1, ok, f"success rates {rates}, {secs:.1f}s (limit 30s) {failed_rows(table)}")
    assert ok


def test_criterion_2_forgetting_probability():
    table, secs = cached("lemma2", lemma2_table)
    ok = not table.failures and secs < 30
    rates = {(r["policy"], r["q"], r["s"]): round(r["value"], 4) for r in table.rows if r["statistic"] == "forget_rate"}
    report(2, ok, f"forget rates {rates}, {secs:.1f}s (limit 30s) {failed_rows(table)}")
    assert ok


def test_criterion_3_exhaustive_oracle():
    table, secs = cached("oracle", oracle_table)
    tvs = [r for r in table.rows if r["statistic"] == "total_variation"]
    worst = max(r["value"] for r in tvs)
    tv_ok = all(r["pass"] for r in tvs)
    unequal = [f"q={r['q']},k={r['k']},{r['case']}" for r in table.rows
               if r["statistic"] == "exact_equivalence" and not r["pass"]]
    ok = tv_ok and not unequal and secs < 120
    report(3, ok, f"max TV {worst:.4f} (limit 0.01), {secs:.1f}s (limit 120s); "
                  f"exact variant laws differ in {len(unequal)} fixtures: {unequal}")
    assert tv_ok, "sampled laws do not match enumeration"
    assert secs < 120
    assert not unequal, f"accumulator and recombinator laws differ at s=1: {unequal}"


def test_criterion_4_connectivity_scale():
    (path, path_secs) = cached("path", lambda: cmd_stopping(path_scenario(), 50, SEED))
    (clique, clique_secs) = cached("clique", lambda: cmd_stopping(clique_scenario(), 50, SEED))
    n = 32
    p_med, c_med = path.find("median_T")["value"], clique.find("median_T")["value"]
    c_bound = 3 * (Fraction(n, n - 1) + 32)
    ok = (
        path.find("completion_rate")["value"] == 1
        and p_med <= 3 * (n + 16)
        and clique.find("completion_rate")["value"] == 1
        and c_med <= c_bound
        and path_secs + clique_secs < 120
    )
    report(4, ok, f"P32 median {p_med} (limit 144), K32 median {c_med} (limit {float(c_bound):.2f}), "
                  f"{path_secs + clique_secs:.1f}s (limit 120s)")
    assert ok


def test_criterion_5_adversary_threshold():
    (low, low_secs) = cached("lemma3-q2", lambda: cmd_lemma3(24, "2", 1, 10**4, 100, SEED))
    (high, high_secs) = cached("lemma3-big", lambda: cmd_lemma3(24, "2^16", 1, 10**4, 100, SEED))
    k = low.find("completion_rate")["k"]
    ok = (
        low.find("completion_rate")["value"] == 0
        and high.find("completion_rate")["value"] == 1
        and high.find("median_T")["value"] <= 3 * (24 + k)
        and not low.failures and not high.failures
        and low_secs + high_secs < 300
    )
    report(5, ok, f"q=2 completions {low.find('completion_rate')['value']}, "
                  f"q=2^16 completions {high.find('completion_rate')['value']} median {high.find('median_T')['value']} "
                  f"(limit {3 * (24 + k)}), {low_secs + high_secs:.1f}s (limit 300s)")
    assert ok


def test_criterion_6_isoperimetric_scale():
    (table, secs) = cached("alternating", lambda: cmd_stopping(alternating_scenario(), 50, SEED))
    h = table.find("relaxed_isoperimetric_number")["value"]
    row = table.find("median_T")
    ok = h == Fraction(1, 2) and row["pass"] and table.find("completion_rate")["pass"] and secs < 120
    report(6, ok, f"H={h}, median {row['value']} (limit {float(row['reference']):.2f}), {secs:.1f}s (limit 120s)")
    assert ok


def test_criterion_7_min_cut_scale():
    (table, secs) = cached("async", lambda: cmd_stopping(async_scenario(), 50, SEED))
    med = table.find("median_T")
    ratio = table.find("median_over_baseline")
    ok = (
        table.find("completion_rate")["pass"]
        and med["pass"]
        and ratio["pass"]
        and secs < 300
    )
    report(7, ok, f"C={table.find('min_average_cut')['value']}, median {med['value']} "
                  f"(n/C={med['reference']}, factor 4), over Unlimited baseline {ratio['value']:.3f} (limit 2), "
                  f"{secs:.1f}s (limit 300s)")
    assert ok


def test_criterion_8_conservation_and_decoding():
    names = {"path": path_scenario, "clique": clique_scenario, "alternating": alternating_scenario,
             "async": async_scenario}
    checked = violations = mismatches = 0
    for name, scn in names.items():
        table, _ = cached(name, lambda scn=scn: cmd_stopping(scn(), 50, SEED))
        for row in table.rows:
            if row["statistic"] == "packets_checked":
                checked += row["value"]
            elif row["statistic"] == "conservation_violations":
                violations += row["value"]
            elif row["statistic"] == "decode_mismatches":
                mismatches += row["value"]
    ok = checked > 0 and violations == 0 and mismatches == 0
    report(8, ok, f"{checked} packets checked, {violations} conservation violations, {mismatches} decode mismatches")
    assert ok


def test_criterion_9_graph_metric_oracles():
    def body():
        results = {}
        c6, k4 = parse_graph("cycle:6"), parse_graph("complete:4")
        split = graph_generator("scripted", n=4, edges=[(0, 1), (1, 0), (2, 3), (3, 2)])
        results["h(C6)=2/3"] = isoperimetric_number(c6) == Fraction(2, 3) == isoperimetric_brute(6, c6.edges)
        results["h(K4)=1"] = isoperimetric_number(k4) == 1 == isoperimetric_brute(4, k4.edges)
        results["disconnected=0"] = isoperimetric_number(split) == 0 == isoperimetric_brute(4, split.edges)
        for g in (c6, k4, parse_graph("complete:8"), parse_graph("hypercube:3")):
            sched = PeriodicSchedule([g, graph_generator("empty", n=g.n)])
            h = isoperimetric_brute(g.n, g.edges)
            key = f"H(alt {g.n})=h/2"
            results[key] = relaxed_isoperimetric_number(sched.schedule(3), 2, horizon=1) == h / 2
        for n in range(3, 13):
            for j in range(1, (n - 1) // 2 + 1):
                g = graph_generator("circulant", n=n, offsets=range(1, j + 1))
                want = 2 * j
                results[f"kappa(C{n},{j})"] = vertex_connectivity(g) == want == vertex_connectivity_brute(n, g.edges)
        return results

    results, secs = timed(body)
    bad = [k for k, v in results.items() if not v]
    ok = not bad and secs < 60
    report(9, ok, f"{len(results)} exact metric checks, mismatches {bad}, {secs:.1f}s (limit 60s)")
    assert ok


def test_criterion_10_determinism():
    # rerun the cheaper criteria at their full settings and compare CSV bytes
    reruns = {
        "lemma1": lemma1_table,
        "lemma2": lemma2_table,
        "alternating": lambda: cmd_stopping(alternating_scenario(), 50, SEED),
        "path": lambda: cmd_stopping(path_scenario(), 50, SEED),
    }
    differing = []
    for name, build in reruns.items():
        first, _ = cached(name, build)
        if build().to_csv().encode() != first.to_csv().encode():
            differing.append(name)
    extra = oracle("receive", 3, 2, samples=10**5, seed=SEED).to_csv()
    if oracle("receive", 3, 2, samples=10**5, seed=SEED).to_csv() != extra:
        differing.append("oracle")
    ok = not differing
    report(10, ok, f"reran {len(reruns) + 1} criteria, byte differences in {differing}")
    assert ok
