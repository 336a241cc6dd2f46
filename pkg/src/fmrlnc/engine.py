"""Round-based execution of the three communication models.

``run`` owns one :class:`Population` and drives it round by round:

1. stop if every recipient's decode basis has rank k;
2. hand the controller a knowledge snapshot taken before any of the round's
   randomness, and get G(t) (or an edge distribution);
3. emit from pre-round state, deliver, and fold deliveries in through the
   memory policy;
4. record transmissions, knowledge bitmaps and projection events.

Randomness comes from four independent streams spawned from the seed
(messages, protocol, topology, tracked directions), so the same config and
seed always yield the same trace.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .constants import BUDGET_FACTOR, EXTRA_TRACKED_DIRECTIONS
from .coding import MemoryPolicy, Population, conserves, sample_directions
from .errors import ValidationError
from .field import FieldSpec
from .topology import (
    DirectedGraph,
    EdgeDistribution,
    Lemma3Adversary,
    NetworkView,
    TopologyPolicy,
    topology_at,
)

MODELS = ("sync-broadcast", "async-broadcast", "async-single-transfer")


@dataclass
class SimulationConfig:
    n: int
    k: int
    field: FieldSpec
    policy: MemoryPolicy
    topology: TopologyPolicy
    placement: Mapping[int, Sequence[int]]
    model: str = "sync-broadcast"
    payload_length: int = 4
    recipients: Sequence[int] | None = None
    seed: int = 0
    run_index: int = 0
    round_budget: int | None = None
    tracked_directions: int | None = None
    record: str = "summary"
    check_conservation: bool = True

    def __post_init__(self) -> None:
        if self.n < 1 or self.k < 0 or self.payload_length < 0:
            raise ValidationError("need n >= 1, k >= 0, payload_length >= 0")
        if self.model not in MODELS:
            raise ValidationError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.seed < 0 or self.run_index < 0:
            raise ValidationError("seed and run_index must be non-negative")
        if self.record not in ("summary", "full"):
            raise ValidationError("record must be 'summary' or 'full'")
        placement = {}
        for index, nodes in self.placement.items():
            nodes = tuple(sorted(set(int(u) for u in nodes)))
            if not 1 <= index <= self.k:
                raise ValidationError(f"message index {index} outside [1, {self.k}]")
            if not nodes:
                raise ValidationError(f"message {index} is placed at no node")
            if nodes[0] < 0 or nodes[-1] >= self.n:
                raise ValidationError(f"message {index} placed outside [0, {self.n})")
            placement[int(index)] = nodes
        missing = sorted(set(range(1, self.k + 1)) - set(placement))
        if missing:
            raise ValidationError(f"messages {missing} are not placed at any node")
        self.placement = placement
        if self.recipients is not None:
            self.recipients = tuple(sorted(set(int(u) for u in self.recipients)))
            if self.recipients and (self.recipients[0] < 0 or self.recipients[-1] >= self.n):
                raise ValidationError("recipient outside the node range")
        if self.round_budget is None:
            self.round_budget = BUDGET_FACTOR * (self.n + self.k)
        if self.round_budget < 1:
            raise ValidationError("round_budget must be >= 1")
        if self.tracked_directions is None:
            cap = self.field.q**self.k - 1 if self.k else 0
            self.tracked_directions = min(self.k + EXTRA_TRACKED_DIRECTIONS, cap)
        elif self.tracked_directions and self.tracked_directions < self.k:
            raise ValidationError("tracked_directions must be 0 or at least k")
        topo_n = getattr(self.topology, "n", self.n)
        if topo_n != self.n:
            raise ValidationError(f"topology has {topo_n} nodes, config has {self.n}")

    @property
    def recipient_list(self) -> list[int]:
        return list(range(self.n)) if self.recipients is None else list(self.recipients)


@dataclass
class SimulationTrace:
    """Outcome of one run.  ``records`` is filled only with ``record="full"``."""

    n: int
    k: int
    seed: int
    run_index: int = 0
    stopping_time: int | None = None
    completed: bool = False
    rounds: int = 0
    op_counters: list[int] = field(default_factory=list)
    packets_checked: int = 0
    conservation_violations: int = 0
    decode_mismatches: int = 0
    give_ups: int | None = None
    give_up_onsets: int | None = None
    give_up_attempts: int | None = None
    transmissions: int = 0
    failure_units: list[int] = field(default_factory=list)
    success_rounds: list[int] = field(default_factory=list)
    forget_events: int = 0
    records: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "event": "summary",
            "seed": self.seed,
            "run_index": self.run_index,
            "stopping_time": self.stopping_time,
            "completed": self.completed,
            "rounds": self.rounds,
            "transmissions": self.transmissions,
            "op_counters": list(self.op_counters),
            "packets_checked": self.packets_checked,
            "conservation_violations": self.conservation_violations,
            "decode_mismatches": self.decode_mismatches,
            "give_ups": self.give_ups,
            "give_up_onsets": self.give_up_onsets,
            "give_up_attempts": self.give_up_attempts,
            "forget_events": self.forget_events,
            "failure_units": list(self.failure_units),
            "success_rounds": list(self.success_rounds),
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps(r, separators=(",", ":")) for r in self.records]
        lines.append(json.dumps(self.summary(), separators=(",", ":")))
        return "\n".join(lines) + "\n"


# -- model steps -----------------------------------------------------------------


@dataclass
class Deliveries:
    """What one round moved: emitted packets and (sender, receiver) pairs in
    the order they were applied."""

    emitters: np.ndarray
    packets: np.ndarray
    senders: np.ndarray
    receivers: np.ndarray


def step_sync_broadcast(pop: Population, graph: DirectedGraph, rng: np.random.Generator) -> Deliveries:
    """Every node emits once from its pre-round state; each packet reaches all
    out-neighbours; a node applies its deliveries in a seeded random order."""
    n = pop.n
    if graph.n != n:
        raise ValidationError("graph and population differ in node count")
    everyone = np.arange(n)
    packets = pop.emit(everyone, rng)
    incoming = graph.adj.T
    keys = np.where(incoming, rng.random((n, n)), 2.0)
    order = np.argsort(keys, axis=1, kind="stable")
    indeg = incoming.sum(axis=1)
    senders = order[np.arange(n)[None, :] < indeg[:, None]]
    receivers = np.repeat(everyone, indeg)
    pop.receive_broadcast(incoming, packets, senders, receivers, rng)
    return Deliveries(everyone, packets, senders, receivers)


def step_async_single_transfer(pop: Population, dist: EdgeDistribution, rng: np.random.Generator) -> Deliveries:
    """One ordered edge sampled from ``dist`` carries one packet."""
    u, v = dist.sample(rng)
    pkt = pop.emit([u], rng)
    pop.receive([v], pkt, rng)
    return Deliveries(np.array([u]), pkt, np.array([u]), np.array([v]))


def step_async_broadcast(pop: Population, graph: DirectedGraph, rng: np.random.Generator) -> Deliveries:
    """A uniformly random node broadcasts one packet to its out-neighbours."""
    u = int(rng.integers(pop.n))
    pkt = pop.emit([u], rng)
    receivers = graph.out_neighbors(u)
    pop.receive(receivers, np.repeat(pkt, len(receivers), axis=0), rng)
    return Deliveries(np.array([u]), pkt, np.full(len(receivers), u), receivers)


def stopping_check(pop: Population, recipients: Sequence[int] | None = None) -> bool:
    """True iff every recipient's decode basis spans F_q^k."""
    if recipients is None:
        recipients = np.flatnonzero(pop.is_recipient)
    return bool(np.all(pop.decode_rank(recipients) == pop.k))


@dataclass
class ProjectionEvents:
    """Per tracked direction: whether the round was a success, its failure
    units, and the nodes that learned or forgot it."""

    success: np.ndarray
    failures: np.ndarray
    learned: list[np.ndarray]
    forgot: list[np.ndarray]


def record_projection_events(before: np.ndarray, after: np.ndarray, delivered: np.ndarray) -> ProjectionEvents:
    """Classify a round per direction.

    ``before``/``after`` are (n, d) knowledge matrices; ``delivered[u, v]``
    marks a packet moved from u to v this round.  The frontier is every
    ignorant node that received from a knowing node.  A round with r > 0
    forgetters counts as r failures; otherwise a frontier node that stayed
    ignorant makes it one failure.
    """
    before = np.asarray(before, dtype=bool)
    after = np.asarray(after, dtype=bool)
    reached = (delivered.T.astype(np.int64) @ before.astype(np.int64)) > 0
    frontier = reached & ~before
    forgot = before & ~after
    missed = (frontier & ~after).any(axis=0)
    n_forgot = forgot.sum(axis=0)
    failures = np.where(n_forgot > 0, n_forgot, missed.astype(np.int64))
    d = before.shape[1]
    return ProjectionEvents(
        success=failures == 0,
        failures=failures,
        learned=[np.flatnonzero(after[:, j] & ~before[:, j]) for j in range(d)],
        forgot=[np.flatnonzero(forgot[:, j]) for j in range(d)],
    )


# -- driver --------------------------------------------------------------------------


def _ints(a) -> list:
    return np.asarray(a).tolist()


def _bitmaps(knowledge: np.ndarray) -> list[int]:
    weights = [1 << u for u in range(knowledge.shape[0])]
    return [sum(w for w, bit in zip(weights, col) if bit) for col in knowledge.T.tolist()]


def run(config: SimulationConfig) -> SimulationTrace:
    f, n, k, l = config.field, config.n, config.k, config.payload_length
    msg_ss, proto_ss, topo_ss, dir_ss = np.random.SeedSequence([config.seed, config.run_index]).spawn(4)
    messages = f.random(np.random.default_rng(msg_ss), (k, l))
    pop = Population.from_placement(
        f, config.policy, messages, config.placement, n, config.recipients
    )
    rng = np.random.default_rng(proto_ss)
    topo_rng = np.random.default_rng(topo_ss)
    topo = config.topology
    topo.reset()
    tracked = (
        sample_directions(k, f, config.tracked_directions, np.random.default_rng(dir_ss))
        if config.tracked_directions
        else np.zeros((0, k), dtype=np.int64)
    )
    watch = topo.watch_directions(k)
    view_dirs = np.concatenate([tracked, watch]).astype(np.int64)
    d = len(tracked)
    need_knowledge = len(view_dirs) > 0
    full = config.record == "full"
    everyone = np.arange(n)
    recipients = np.array(config.recipient_list, dtype=np.int64)

    trace = SimulationTrace(n=n, k=k, seed=config.seed, run_index=config.run_index)
    trace.failure_units = [0] * d
    trace.success_rounds = [0] * d
    if full:
        trace.records.append({
            "event": "config", "n": n, "k": k, "payload_length": l, "q": f.q,
            "field_kind": f.kind, "reduction": f.reduction, "policy": config.policy.kind,
            "s": config.policy.s, "model": config.model, "seed": config.seed, "run_index": config.run_index,
            "recipients": _ints(recipients), "directions": _ints(tracked),
            "messages": _ints(messages),
        })
        _record_states(trace, pop, 0, "initial_state")

    knowledge = pop.knows(everyone, view_dirs) if need_knowledge else None
    if full and d:
        trace.records.append({"round": 0, "event": "initial_knowledge", "bitmaps": _bitmaps(knowledge[:, :d])})

    stop = None
    for t in range(config.round_budget):
        if stopping_check(pop, recipients):
            stop = t
            break
        view = NetworkView(t, view_dirs, knowledge.copy()) if need_knowledge else None
        if config.model == "async-single-transfer":
            dist = topo.distribution_at(t, view, topo_rng)
            moved = step_async_single_transfer(pop, dist, rng)
            if full:
                u, v = int(moved.senders[0]), int(moved.receivers[0])
                trace.records.append({"round": t, "event": "edge", "u": u, "v": v})
        else:
            graph = topology_at(topo, t, view, topo_rng)
            if config.model == "sync-broadcast":
                moved = step_sync_broadcast(pop, graph, rng)
            else:
                moved = step_async_broadcast(pop, graph, rng)
            if full:
                trace.records.append({"round": t, "event": "graph", "edges": [list(e) for e in graph.sorted_edges()]})
        trace.rounds = t + 1
        trace.transmissions += len(moved.senders)
        if config.check_conservation:
            ok = conserves(f, moved.packets, messages)
            trace.packets_checked += len(ok)
            trace.conservation_violations += int((~ok).sum())
        if full:
            _record_round(trace, pop, t, moved)
        if need_knowledge:
            after = pop.knows(everyone, view_dirs)
            if d:
                delivered = np.zeros((n, n), dtype=bool)
                delivered[moved.senders, moved.receivers] = True
                ev = record_projection_events(knowledge[:, :d], after[:, :d], delivered)
                trace.failure_units = [a + int(b) for a, b in zip(trace.failure_units, ev.failures)]
                trace.success_rounds = [a + int(b) for a, b in zip(trace.success_rounds, ev.success)]
                trace.forget_events += int(sum(len(x) for x in ev.forgot))
                if full:
                    trace.records.append({"round": t, "event": "knowledge", "bitmaps": _bitmaps(after[:, :d])})
                    trace.records.append({"round": t, "event": "projection", "failures": _ints(ev.failures)})
                    for j, nodes in enumerate(ev.forgot):
                        if len(nodes):
                            trace.records.append({"round": t, "event": "forget", "direction": j, "nodes": _ints(nodes)})
            knowledge = after
    else:
        if stopping_check(pop, recipients):
            stop = config.round_budget

    trace.stopping_time = stop
    trace.completed = stop is not None
    trace.op_counters = _ints(pop.ops)
    if config.check_conservation:
        ok = conserves(f, pop.stored_rows(), messages)
        trace.packets_checked += len(ok)
        trace.conservation_violations += int((~ok).sum())
    if trace.completed:
        for u in recipients.tolist():
            if not np.array_equal(pop.decode(u), messages):
                trace.decode_mismatches += 1
    if isinstance(topo, Lemma3Adversary):
        trace.give_ups = topo.give_ups
        trace.give_up_onsets = topo.onsets
        trace.give_up_attempts = topo.attempts
    return trace


def _record_states(trace: SimulationTrace, pop: Population, t: int, event: str) -> None:
    gens = pop.generators(np.arange(pop.n))
    for u in range(pop.n):
        rows = gens[u][(gens[u][:, : pop.k] != 0).any(axis=1)]
        trace.records.append({"round": t, "event": event, "node": u, "rows": _ints(rows)})


def _record_round(trace: SimulationTrace, pop: Population, t: int, moved: Deliveries) -> None:
    for i, u in enumerate(moved.emitters.tolist()):
        sel = moved.senders == u
        trace.records.append({
            "round": t, "event": "transmit", "sender": u,
            "receivers": _ints(moved.receivers[sel]),
            "packet": _ints(moved.packets[i]),
        })
    order: dict[int, list[int]] = {}
    for s, r in zip(moved.senders.tolist(), moved.receivers.tolist()):
        order.setdefault(r, []).append(s)
    if order:
        trace.records.append({"round": t, "event": "delivery_order", "order": [[r, ss] for r, ss in sorted(order.items())]})
    _record_states(trace, pop, t, "state")


def replay_check(records: Sequence[dict]) -> list[str]:
    """Recompute recorded knowledge from the recorded node states.

    Uses plain integer arithmetic (no numpy field code) and returns a list of
    discrepancies; an empty list means the trace is self-consistent.  Also
    checks that every transmitted packet conserves the message matrix.
    """
    cfg = next(r for r in records if r.get("event") == "config")
    spec = FieldSpec(cfg["field_kind"], cfg["q"], cfg["reduction"])
    k, n = cfg["k"], cfg["n"]
    dirs = cfg["directions"]
    msgs = cfg["messages"]

    def mul(a: int, b: int) -> int:
        return int(spec.mul(a, b))

    def dot(a, b) -> int:
        acc = 0
        for x, y in zip(a, b):
            acc = int(spec.add(acc, mul(x, y)))
        return acc

    problems = []
    states: dict[int, list] = {}
    for rec in records:
        ev = rec.get("event")
        if ev in ("initial_state", "state"):
            states[rec["node"]] = rec["rows"]
        elif ev in ("initial_knowledge", "knowledge"):
            for j, mu in enumerate(dirs):
                bits = sum(1 << u for u in range(n) if any(dot(row[:k], mu) for row in states.get(u, [])))
                if bits != rec["bitmaps"][j]:
                    problems.append(f"round {rec['round']}: direction {j} bitmap {rec['bitmaps'][j]} != replay {bits}")
        elif ev == "transmit":
            pkt = rec["packet"]
            for c in range(cfg["payload_length"]):
                want = dot(pkt[:k], [msgs[i][c] for i in range(k)])
                if want != pkt[k + c]:
                    problems.append(f"round {rec['round']}: packet from {rec['sender']} breaks conservation")
                    break
    return problems
