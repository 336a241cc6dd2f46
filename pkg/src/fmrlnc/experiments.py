"""Monte Carlo estimators, exhaustive oracles and stopping-time campaigns.

Every command returns a :class:`ResultTable`.  Rows carry a statistic, its
value and standard error, an exact reference value, and the relation the
value is checked against; ``pass`` is filled whenever a relation is given.
For probability checks the slack is ``SIGMA`` standard errors computed under
the reference value (the null hypothesis), so an empirical rate of exactly
0 or 1 still gets a meaningful tolerance.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
import statistics
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .coding import MemoryPolicy, Population
from .constants import BASELINE_FACTOR, CUT_FACTOR, SIGMA, STOPPING_FACTOR, TV_TOLERANCE
from .engine import SimulationConfig, SimulationTrace, run
from .errors import CapacityError, ValidationError
from .field import FieldSpec
from .topology import (
    DirectedGraph,
    Lemma3Adversary,
    PeriodicSchedule,
    StaticTopology,
    TopologyPolicy,
    fraction_str,
    isoperimetric_number,
    load_schedule,
    min_average_cut,
    parse_graph,
    relaxed_isoperimetric_number,
    vertex_connectivity,
)

COLUMNS = (
    "experiment", "case", "policy", "q", "s", "k", "n", "trials",
    "statistic", "value", "stderr", "reference", "relation", "pass",
)


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, Fraction):
        return fraction_str(x)
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return str(int(x))
    return str(x)


@dataclass
class ResultTable:
    rows: list[dict] = field(default_factory=list)

    def add(self, **row) -> dict:
        unknown = set(row) - set(COLUMNS)
        if unknown:
            raise ValueError(f"unknown result columns {sorted(unknown)}")
        self.rows.append(row)
        return row

    def extend(self, other: ResultTable) -> ResultTable:
        self.rows.extend(other.rows)
        return self

    def find(self, statistic: str, **match) -> dict:
        for row in self.rows:
            if row.get("statistic") == statistic and all(row.get(k) == v for k, v in match.items()):
                return row
        raise KeyError(statistic)

    @property
    def failures(self) -> list[dict]:
        return [r for r in self.rows if r.get("pass") is False]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in self.rows:
            writer.writerow([_cell(row.get(c)) for c in COLUMNS])
        return buf.getvalue()

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


# -- verdicts ------------------------------------------------------------------------


def _null_sigma(p0: float, n: int) -> float:
    return math.sqrt(max(p0 * (1 - p0), 0.0) / n) if n else math.inf


def check(value, relation: str, reference, trials: int | None = None) -> bool:
    """Apply ``relation`` between ``value`` and ``reference``.

    ``>=~``, ``<=~`` and ``~`` allow ``SIGMA`` null standard errors when
    ``trials`` is given; ``>=``, ``<=`` and ``==`` are exact.  ``within F``
    means reference/F <= value <= reference*F.
    """
    ref = float(reference) if not isinstance(reference, (int, Fraction)) else reference
    slack = SIGMA * _null_sigma(float(reference), trials) if trials else 0.0
    if relation == ">=~":
        return value >= float(ref) - slack
    if relation == "<=~":
        return value <= float(ref) + slack
    if relation == "~":
        return abs(value - float(ref)) <= slack
    if relation == ">=":
        return value >= ref
    if relation == "<=":
        return value <= ref
    if relation == "==":
        return value == ref
    if relation.startswith("within "):
        factor = Fraction(relation.split()[1])
        return ref / factor <= value <= ref * factor
    raise ValueError(f"unknown relation {relation!r}")


def _rate_row(table: ResultTable, hits: np.ndarray, relation: str | None, reference, **params) -> dict:
    n = len(hits)
    p = float(hits.mean()) if n else math.nan
    err = math.sqrt(p * (1 - p) / n) if n else math.nan
    verdict = None if relation is None or not n else check(p, relation, reference, n)
    return table.add(value=p, stderr=err, reference=reference, relation=relation, trials=n, **params, **{"pass": verdict})


# -- state sampling for the estimators -------------------------------------------------


def _nonzero(f: FieldSpec, rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Uniform nonzero vectors along the last axis."""
    out = f.random(rng, shape)
    bad = ~out.any(axis=-1)
    while bad.any():
        out[bad] = f.random(rng, (int(bad.sum()), shape[-1]))
        bad = ~out.any(axis=-1)
    return out


def _inner(f: FieldSpec, rows: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """<rows[i, j], mu[i]> for rows (m, g, k) and mu (m, k)."""
    return f.matmul(rows, mu[:, :, None])[:, :, 0]


def _orthogonal(f: FieldSpec, rng: np.random.Generator, mu: np.ndarray, g: int) -> np.ndarray:
    """g uniform vectors from the hyperplane orthogonal to each mu (m, k)."""
    m, k = mu.shape
    rows = f.random(rng, (m, g, k))
    pivot = (mu != 0).argmax(axis=1)
    idx = np.arange(m)
    rows[idx, :, pivot] = 0
    partial = _inner(f, rows, mu)
    fix = f.mul(f.neg(partial), f.inv(mu[idx, pivot])[:, None])
    rows[idx, :, pivot] = fix
    return rows


def _knowing(f: FieldSpec, rng: np.random.Generator, mu: np.ndarray, g: int) -> np.ndarray:
    """g uniform vectors per trial, conditioned on some being non-orthogonal to mu."""
    m, k = mu.shape
    rows = f.random(rng, (m, g, k))
    bad = ~(_inner(f, rows, mu) != 0).any(axis=1)
    while bad.any():
        rows[bad] = f.random(rng, (int(bad.sum()), g, k))
        bad = ~(_inner(f, rows, mu) != 0).any(axis=1)
    return rows


def _non_orthogonal(f: FieldSpec, rng: np.random.Generator, mu: np.ndarray) -> np.ndarray:
    return _knowing(f, rng, mu, 1)[:, 0, :]


def _policy(kind: str, s: int | None) -> MemoryPolicy:
    if kind == "unlimited":
        return MemoryPolicy.unlimited()
    if kind == "accumulator":
        return MemoryPolicy.accumulator(s)
    if kind == "recombinator":
        return MemoryPolicy.recombinator(s)
    raise ValidationError(f"unknown policy {kind!r}; expected unlimited, accumulator or recombinator")


def _load(pop: Population, nodes: np.ndarray, rows: np.ndarray, rng: np.random.Generator) -> None:
    """Put ``rows`` (len(nodes), g, k) into the nodes' active memory."""
    if pop.policy.finite:
        pop.set_active(nodes, rows)
    else:
        for j in range(rows.shape[1]):
            pop.receive(nodes, rows[:, j, :], rng)


def _require_trials(trials: int) -> None:
    if trials < 1:
        raise ValidationError("trials must be >= 1")


# -- one-transmission estimators ---------------------------------------------------------


def estimate_lemma1(q, s: int | None, k: int, policy: str, trials: int, seed: int) -> ResultTable:
    """One transmission from a sender that knows a random mu to a receiver
    whose memory is orthogonal to mu; reports how often the receiver then
    knows mu.

    Senders hold s random generators (k for unlimited memory) conditioned on
    knowing mu.  Receivers hold s orthogonal slots (k - 1 orthogonal vectors
    for unlimited memory), so learning depends on the transmission alone.
    """
    _require_trials(trials)
    f = q if isinstance(q, FieldSpec) else FieldSpec.parse(str(q))
    if k < 1:
        raise ValidationError("k must be >= 1")
    pol = _policy(policy, s)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    mu = _nonzero(f, rng, (trials, k))
    g = pol.s if pol.finite else k
    senders = np.arange(trials)
    receivers = senders + trials
    pop = Population(f, k, 0, pol, 2 * trials, recipients=())
    _load(pop, senders, _knowing(f, rng, mu, g), rng)
    held = pol.s if pol.finite else k - 1
    if held:
        _load(pop, receivers, _orthogonal(f, rng, mu, held), rng)
    pkt = pop.emit(senders, rng)
    pop.receive(receivers, pkt, rng)
    learned = pop.knows_each(receivers, mu)
    nonorth = _inner(f, pkt[:, None, :], mu)[:, 0] != 0

    qf = Fraction(1, f.q)
    bound = 1 - qf if not pol.finite else (1 - qf) * (1 - qf**pol.s)
    table = ResultTable()
    common = dict(experiment="lemma1", policy=policy, q=f.q, s=pol.s, k=k, case="")
    _rate_row(table, nonorth, "~", 1 - qf, statistic="emit_nonorthogonal_rate", **common)
    _rate_row(table, learned, ">=~", bound, statistic="success_rate", **common)
    return table


def estimate_lemma2(q, s: int, variant: str, trials: int, seed: int, k: int = 4) -> ResultTable:
    """A receiver knowing mu gets one packet; reports how often it forgets mu.

    Even trials inject a packet orthogonal to mu, odd trials a non-orthogonal
    one.  The receiver's s slots are uniform conditioned on knowing mu.
    """
    _require_trials(trials)
    f = q if isinstance(q, FieldSpec) else FieldSpec.parse(str(q))
    if variant not in ("accumulator", "recombinator"):
        raise ValidationError("variant must be accumulator or recombinator")
    if k < 2:
        raise ValidationError("k must be >= 2 so that orthogonal packets exist")
    pol = _policy(variant, s)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    mu = _nonzero(f, rng, (trials, k))
    nodes = np.arange(trials)
    pop = Population(f, k, 0, pol, trials, recipients=())
    pop.set_active(nodes, _knowing(f, rng, mu, s))
    orth = nodes % 2 == 0
    pkt = np.empty((trials, k), dtype=np.int64)
    if orth.any():
        pkt[orth] = _orthogonal(f, rng, mu[orth], 1)[:, 0, :]
    if (~orth).any():
        pkt[~orth] = _non_orthogonal(f, rng, mu[~orth])
    pop.receive(nodes, pkt, rng)
    forgot = ~pop.knows_each(nodes, mu)

    bound = Fraction(1, f.q**s)
    table = ResultTable()
    common = dict(experiment="lemma2", policy=variant, q=f.q, s=s, k=k, case="")
    _rate_row(table, forgot, "<=~", bound, statistic="forget_rate", **common)
    if variant == "accumulator":
        _rate_row(table, forgot[orth], "==", Fraction(0), statistic="forget_rate_orthogonal", **common)
        _rate_row(table, forgot[~orth], "~", bound, statistic="forget_rate_nonorthogonal", **common)
    else:
        # the stored slots already know mu, so the combined span never is orthogonal
        _rate_row(table, forgot, "~", bound, statistic="forget_rate_conditioned", **common)
        _rate_row(table, forgot[orth], "<=~", bound, statistic="forget_rate_orthogonal", **common)
        _rate_row(table, forgot[~orth], "<=~", bound, statistic="forget_rate_nonorthogonal", **common)
    return table


# -- exhaustive oracle -----------------------------------------------------------------------
#
# Deliberately written in plain Python over prime fields so that it shares no
# code with the numpy implementation it checks.

ORACLE_MAX_Q = 3
ORACLE_MAX_K = 2

Vec = tuple[int, ...]


def _lin(q: int, coeffs: Sequence[int], vecs: Sequence[Vec]) -> Vec:
    k = len(vecs[0])
    return tuple(sum(c * v[i] for c, v in zip(coeffs, vecs)) % q for i in range(k))


def exact_receive(q: int, variant: str, slot: Vec | None, incoming: Vec) -> dict[Vec, Fraction]:
    """Distribution of the single slot after one reception (s = 1)."""
    if slot is None:
        return {tuple(incoming): Fraction(1)}
    dist: Counter = Counter()
    if variant == "accumulator":
        for a in range(q):
            dist[_lin(q, (1, a), (slot, incoming))] += 1
        total = q
    else:
        for b1, b2 in itertools.product(range(q), repeat=2):
            dist[_lin(q, (b1, b2), (slot, incoming))] += 1
        total = q * q
    return {v: Fraction(c, total) for v, c in dist.items()}


def exact_emit(q: int, generators: Sequence[Vec]) -> dict[Vec, Fraction]:
    """Distribution of an emitted coefficient vector."""
    dist: Counter = Counter()
    for coeffs in itertools.product(range(q), repeat=len(generators)):
        dist[_lin(q, coeffs, generators)] += 1
    total = q ** len(generators)
    return {v: Fraction(c, total) for v, c in dist.items()}


def total_variation(p: dict, r: dict) -> float:
    keys = set(p) | set(r)
    return float(sum(abs(Fraction(p.get(x, 0)) - Fraction(r.get(x, 0))) for x in keys) / 2)


def oracle_fixtures(scenario: str, q: int, k: int) -> list[tuple[str, object]]:
    e = [tuple(int(i == j) for i in range(k)) for j in range(k)]
    top = q - 1
    if scenario == "receive":
        if k == 1:
            cases = [("empty<-1", (None, (1,))), ("1<-1", ((1,), (1,)))]
            return cases + ([(f"1<-{top}", ((1,), (top,)))] if top != 1 else [])
        return [
            ("empty<-e1", (None, e[0])),
            ("e1<-e2", (e[0], e[1])),
            ("e1<-e1", (e[0], e[0])),
            ("e1+e2<-e2", ((1, 1), e[1])),
            (f"e1<-(1,{top})", (e[0], (1, top))),
        ]
    if k == 1:
        return [("1", [(1,)]), ("pinned1+1", [(1,), (1,)])]
    return [("e1", [e[0]]), ("e1+e2", [(1, 1)]), ("pinned e1+e2", [e[0], e[1]])]


def _encode(rows: np.ndarray, q: int) -> np.ndarray:
    return rows @ (q ** np.arange(rows.shape[1])[::-1])


def _decode_key(code: int, q: int, k: int) -> Vec:
    return tuple((code // q ** (k - 1 - i)) % q for i in range(k))


def _empirical(rows: np.ndarray, q: int) -> dict[Vec, float]:
    codes, counts = np.unique(_encode(rows, q), return_counts=True)
    k = rows.shape[1]
    n = len(rows)
    return {_decode_key(int(c), q, k): int(m) / n for c, m in zip(codes, counts)}


def oracle(scenario: str, q: int, k: int, s: int = 1, samples: int = 10**6, seed: int = 0,
           variants: Sequence[str] = ("accumulator", "recombinator")) -> ResultTable:
    """Exact enumerated distributions against the simulator's empirical ones."""
    if scenario not in ("receive", "emit"):
        raise ValidationError("scenario must be receive or emit")
    if s != 1 or k < 1 or k > ORACLE_MAX_K or q not in (2, 3):
        raise CapacityError(f"oracle covers q <= {ORACLE_MAX_Q}, k <= {ORACLE_MAX_K}, s = 1 only")
    _require_trials(samples)
    f = FieldSpec.prime(q)
    table = ResultTable()
    nodes = np.arange(samples)
    for ci, (case, fixture) in enumerate(oracle_fixtures(scenario, q, k)):
        exact_by_variant = {}
        for vi, variant in enumerate(variants):
            rng = np.random.default_rng(np.random.SeedSequence([seed, 3, ci, vi]))
            pop = Population(f, k, 0, _policy(variant, 1), samples, recipients=())
            if scenario == "receive":
                slot, incoming = fixture
                exact = exact_receive(q, variant, slot, incoming)
                if slot is not None:
                    pop.set_active(nodes, np.broadcast_to(np.array(slot), (samples, 1, k)))
                pop.receive(nodes, np.broadcast_to(np.array(incoming), (samples, k)), rng)
                got = _empirical(pop.active[:, 0, :k], q)
            else:
                gens = fixture
                exact = exact_emit(q, gens)
                *pinned, slot = gens
                for index, vec in enumerate(pinned, start=1):
                    if vec != tuple(int(i == index - 1) for i in range(k)):
                        raise ValidationError("pinned oracle generators must be unit vectors")
                if pinned:
                    pop.pinned = np.zeros((samples, len(pinned), k), dtype=np.int64)
                    pop.pinned[:] = np.array(pinned)
                    pop.pinned_count[:] = len(pinned)
                pop.set_active(nodes, np.broadcast_to(np.array(slot), (samples, 1, k)))
                got = _empirical(pop.emit(nodes, rng)[:, :k], q)
            exact_by_variant[variant] = exact
            common = dict(experiment=f"oracle-{scenario}", case=case, policy=variant, q=q, s=1, k=k, trials=samples)
            for vec in sorted(set(exact) | set(got)):
                table.add(statistic=f"P{list(vec)}", value=got.get(vec, 0.0),
                          reference=exact.get(vec, Fraction(0)), relation=None, **common)
            tv = total_variation(exact, {v: Fraction(p) for v, p in got.items()})
            table.add(statistic="total_variation", value=tv, reference=TV_TOLERANCE, relation="<=",
                      **common, **{"pass": tv <= TV_TOLERANCE})
        if scenario == "receive" and len(exact_by_variant) == 2:
            a, r = (exact_by_variant[v] for v in ("accumulator", "recombinator"))
            same = a == r
            table.add(experiment="oracle-receive", case=case, policy="accumulator=recombinator", q=q, s=1, k=k,
                      statistic="exact_equivalence", value=int(same), reference=1, relation="==",
                      **{"pass": same})
            # distance between the two exact laws, for the record
            table.add(experiment="oracle-receive", case=case, policy="accumulator=recombinator", q=q, s=1, k=k,
                      statistic="exact_tv_between_variants", value=total_variation(a, r), relation=None)
    return table


# -- topology and placement parsing ------------------------------------------------------------------


def build_topology(text: str) -> TopologyPolicy:
    """``path:32`` (static), ``complete:16|empty:16`` (periodic), or ``@file``."""
    text = text.strip()
    if text.startswith("@"):
        return PeriodicSchedule(load_schedule(text[1:]))
    parts = [p for p in text.split("|")]
    if len(parts) == 1:
        return StaticTopology(parse_graph(parts[0]))
    return PeriodicSchedule([parse_graph(p) for p in parts])


def parse_placement(text: str, n: int, k: int) -> dict[int, tuple[int, ...]]:
    """Message placement.

    ``at:U``
        every message at node U
    ``spread`` / ``spread:OFF``
        message i at node (OFF + i - 1) mod n
    ``1=0 2=0,5 3=4``
        explicit map from 1-based message index to nodes
    """
    text = text.strip()
    if text.startswith("at:"):
        u = _int(text[3:], "placement node")
        return {i: (u,) for i in range(1, k + 1)}
    if text == "spread" or text.startswith("spread:"):
        off = _int(text[7:], "placement offset") if ":" in text else 0
        return {i: ((off + i - 1) % n,) for i in range(1, k + 1)}
    placement: dict[int, tuple[int, ...]] = {}
    for token in text.split():
        if "=" not in token:
            raise ValidationError(f"bad placement token {token!r}; expected INDEX=NODE[,NODE...]")
        left, right = token.split("=", 1)
        index = _int(left, "message index")
        if index in placement:
            raise ValidationError(f"message {index} placed twice")
        placement[index] = tuple(_int(x, "placement node") for x in right.split(","))
    return placement


def _int(text: str, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ValidationError(f"{what} must be an integer, got {text!r}") from None


def parse_recipients(text: str | None, n: int) -> tuple[int, ...] | None:
    if text is None or text.strip() in ("", "all"):
        return None
    return tuple(_int(x, "recipient") for x in text.replace(",", " ").split())


# -- stopping-time campaigns -----------------------------------------------------------------------------

SCALES = ("none", "connectivity", "isoperimetric", "cut")


@dataclass
class Scenario:
    """One stopping-time configuration, run for many seeds."""

    name: str
    n: int
    k: int
    field: FieldSpec
    policy: MemoryPolicy
    topology: str
    placement: str = "spread"
    model: str = "sync-broadcast"
    recipients: str | None = None
    scale: str = "connectivity"
    delta: int = 1
    baseline: MemoryPolicy | None = None
    round_budget: int | None = None
    payload_length: int = 4
    tracked_directions: int | None = None

    def __post_init__(self) -> None:
        if self.scale not in SCALES:
            raise ValidationError(f"unknown scale {self.scale!r}; expected one of {SCALES}")
        if self.delta < 1:
            raise ValidationError("delta must be >= 1")

    def config(self, seed: int, run_index: int, policy: MemoryPolicy | None = None) -> SimulationConfig:
        return SimulationConfig(
            n=self.n, k=self.k, field=self.field, policy=policy or self.policy,
            topology=build_topology(self.topology),
            placement=parse_placement(self.placement, self.n, self.k),
            model=self.model, payload_length=self.payload_length,
            recipients=parse_recipients(self.recipients, self.n),
            seed=seed, run_index=run_index, round_budget=self.round_budget,
            tracked_directions=self.tracked_directions,
        )


@dataclass
class ScaleReport:
    metric_name: str
    metric: Fraction | None
    scale: Fraction | float | None
    bound: Fraction | float | None
    relation: str | None


def analytic_scale(scn: Scenario) -> ScaleReport:
    """Metric of the topology and the stopping-time scale it predicts."""
    if scn.scale == "none":
        return ScaleReport("none", None, None, None, None)
    topo = build_topology(scn.topology)
    period = len(topo.graphs) if isinstance(topo, PeriodicSchedule) else 1
    graphs = topo.schedule(period - 1 + scn.delta)
    n, k = scn.n, scn.k
    if scn.scale == "connectivity":
        kappa = min(vertex_connectivity(g) for g in graphs[:period])
        if kappa == 0:
            return ScaleReport("vertex_connectivity", Fraction(0), None, None, None)
        scale = Fraction(n, kappa) + k
        return ScaleReport("vertex_connectivity", Fraction(kappa), scale, STOPPING_FACTOR * scale, "<=")
    if scn.scale == "isoperimetric":
        h = relaxed_isoperimetric_number(graphs, scn.delta, horizon=period - 1)
        if h == 0:
            return ScaleReport("relaxed_isoperimetric_number", h, None, None, None)
        scale = math.log(n * h) / float(h) + k
        return ScaleReport("relaxed_isoperimetric_number", h, scale, STOPPING_FACTOR * scale + scn.delta, "<=")
    dists = [topo.distribution_at(t, None, None) for t in range(period - 1 + scn.delta)]
    c = min_average_cut(dists, scn.delta)
    if c == 0:
        return ScaleReport("min_average_cut", c, None, None, None)
    scale = Fraction(n) / c
    return ScaleReport("min_average_cut", c, scale, scale, f"within {CUT_FACTOR}")


def _median(times: Sequence[float]) -> float:
    return float(statistics.median(times)) if times else math.nan


def _nearest_rank(times: Sequence[float], pct: int) -> float:
    if not times:
        return math.nan
    ordered = sorted(times)
    return float(ordered[max(0, math.ceil(pct * len(ordered) / 100) - 1)])


def _times(traces: Sequence[SimulationTrace]) -> list[float]:
    return [t.stopping_time if t.completed else math.inf for t in traces]


def run_many(make: Callable[[int], SimulationConfig], runs: int) -> list[SimulationTrace]:
    """Run configs for run indices 0..runs-1; results ordered by index."""
    return [run(make(i)) for i in range(runs)]


def _integrity_rows(table: ResultTable, traces: Sequence[SimulationTrace], common: dict) -> None:
    viol = sum(t.conservation_violations for t in traces)
    table.add(statistic="packets_checked", value=sum(t.packets_checked for t in traces), relation=None, **common)
    table.add(statistic="conservation_violations", value=viol, reference=0, relation="==", **common, **{"pass": viol == 0})
    bad = sum(t.decode_mismatches for t in traces)
    table.add(statistic="decode_mismatches", value=bad, reference=0, relation="==", **common, **{"pass": bad == 0})


def cmd_stopping(scn: Scenario, runs: int, seed: int) -> ResultTable:
    """Median and 90th-percentile stopping time over ``runs`` seeds, against
    the analytic scale and (optionally) a paired unlimited-memory baseline."""
    _require_trials(runs)
    traces = run_many(lambda i: scn.config(seed, i), runs)
    times = _times(traces)
    table = ResultTable()
    common = dict(experiment="stopping", case=scn.name, policy=str(scn.policy), q=scn.field.q,
                  s=scn.policy.s, k=scn.k, n=scn.n, trials=runs)
    done = sum(t.completed for t in traces)
    table.add(statistic="completion_rate", value=Fraction(done, runs), reference=1, relation="==",
              **common, **{"pass": done == runs})
    median = _median(times)
    rep = analytic_scale(scn)
    if rep.metric is not None:
        table.add(statistic=rep.metric_name, value=rep.metric, relation=None, **common)
    if rep.scale is not None:
        table.add(statistic="analytic_scale", value=rep.scale, relation=None, **common)
        table.add(statistic="median_T", value=median, reference=rep.bound, relation=rep.relation,
                  **common, **{"pass": check(median, rep.relation, rep.bound)})
    else:
        table.add(statistic="median_T", value=median, relation=None, **common)
    table.add(statistic="p90_T", value=_nearest_rank(times, 90), relation=None, **common)
    rounds = sum(t.rounds for t in traces)
    ops = sum(sum(t.op_counters) for t in traces)
    table.add(statistic="ops_per_node_round", value=ops / (rounds * scn.n) if rounds else 0.0, relation=None, **common)
    _integrity_rows(table, traces, common)
    if scn.baseline is not None:
        base = run_many(lambda i: scn.config(seed, i, scn.baseline), runs)
        bcommon = dict(common, policy=str(scn.baseline))
        bdone = sum(t.completed for t in base)
        table.add(statistic="baseline_completion_rate", value=Fraction(bdone, runs), relation=None, **bcommon)
        bmedian = _median(_times(base))
        table.add(statistic="baseline_median_T", value=bmedian, relation=None, **bcommon)
        ratio = median / bmedian if bmedian else math.inf
        table.add(statistic="median_over_baseline", value=ratio, reference=BASELINE_FACTOR, relation="<=",
                  **common, **{"pass": ratio <= BASELINE_FACTOR})
        _integrity_rows(table, base, bcommon)
    return table


# -- adaptive adversary campaigns -------------------------------------------------------------------


def cmd_lemma3(n: int, q, s: int, budget: int, runs: int, seed: int, k: int = 8,
               variant: str = "accumulator", payload_length: int = 4) -> ResultTable:
    """Adaptive adversary starving node 0 of e_1; messages i at node i.

    Completion is expected to be zero when q^s < n (the lower-bound regime)
    and certain otherwise.  The give-up rate is estimated per round that
    still had an ignorant partner for v.
    """
    _require_trials(runs)
    f = q if isinstance(q, FieldSpec) else FieldSpec.parse(str(q))
    if n < k + 2:
        raise ValidationError("need n >= k + 2 so that two nodes start ignorant of e_1")
    pol = _policy(variant, s)

    def make(i: int) -> SimulationConfig:
        return SimulationConfig(
            n=n, k=k, field=f, policy=pol, topology=Lemma3Adversary(n, v=0),
            placement=parse_placement("spread:1", n, k), payload_length=payload_length,
            seed=seed, run_index=i, round_budget=budget, tracked_directions=0,
        )

    traces = run_many(make, runs)
    table = ResultTable()
    common = dict(experiment="lemma3", case=f"budget={budget}", policy=str(pol), q=f.q, s=s, k=k, n=n, trials=runs)
    done = sum(t.completed for t in traces)
    starving = f.q**s < n
    expect = 0 if starving else 1
    rate = Fraction(done, runs)
    table.add(statistic="completion_rate", value=rate, reference=expect, relation="==",
              **common, **{"pass": rate == expect})
    times = _times(traces)
    median = _median(times)
    if starving:
        table.add(statistic="median_T", value=median, relation=None, **common)
    else:
        bound = STOPPING_FACTOR * (n + k)
        table.add(statistic="median_T", value=median, reference=bound, relation="<=",
                  **common, **{"pass": median <= bound})
    attempts = sum(t.give_up_attempts for t in traces)
    onsets = sum(t.give_up_onsets for t in traces)
    p_bound = (1 - Fraction(1, f.q**s)) ** (n - 1)
    e_bound = math.exp(-(n - 1) / f.q**s)
    hits = np.zeros(attempts, dtype=bool)
    hits[:onsets] = True
    per_round = {key: val for key, val in common.items() if key != "trials"}
    _rate_row(table, hits, "<=~", e_bound, statistic="give_up_rate", **per_round)
    table.add(statistic="give_up_bound_exact", value=p_bound, relation=None, **common)
    table.add(statistic="give_up_rounds", value=sum(t.give_ups for t in traces), relation=None, **common)
    _integrity_rows(table, traces, common)
    return table


# -- metrics ----------------------------------------------------------------------------------------


def cmd_metrics(graphs: Sequence[DirectedGraph], delta: int = 1) -> ResultTable:
    """Exact metrics of a static graph (one entry) or a periodic schedule."""
    if not graphs:
        raise ValidationError("no graphs given")
    if delta < 1:
        raise ValidationError("delta must be >= 1")
    topo = PeriodicSchedule(graphs)
    period = len(graphs)
    n = graphs[0].n
    table = ResultTable()
    common = dict(experiment="metrics", n=n, case=f"period={period},delta={delta}")
    if n >= 2:
        kappa = min(vertex_connectivity(g) for g in graphs)
        table.add(statistic="vertex_connectivity", value=kappa, relation=None, **common)
    h = min(isoperimetric_number(g) for g in graphs)
    table.add(statistic="isoperimetric_number", value=h, relation=None, **common)
    window = topo.schedule(period - 1 + delta)
    table.add(statistic="relaxed_isoperimetric_number",
              value=relaxed_isoperimetric_number(window, delta, horizon=period - 1), relation=None, **common)
    if all(g.edges for g in graphs):
        dists = [topo.distribution_at(t, None, None) for t in range(period - 1 + delta)]
        table.add(statistic="min_average_cut", value=min_average_cut(dists, delta), relation=None, **common)
    else:
        # a round without edges has no transfer distribution
        table.add(statistic="min_average_cut", value=None, relation=None, **common)
    return table


__all__ = [
    "COLUMNS", "ResultTable", "Scenario", "analytic_scale", "build_topology", "check",
    "cmd_lemma3", "cmd_metrics", "cmd_stopping", "estimate_lemma1", "estimate_lemma2",
    "exact_emit", "exact_receive", "oracle", "oracle_fixtures", "parse_placement",
    "parse_recipients", "run_many", "total_variation",
]
