"""Dynamic directed graphs, topology controllers, and exact expansion metrics.

Metrics that need a minimum over vertex subsets enumerate all of them as
bitmasks, so they are exact and capped at small n (a :class:`CapacityError`
is raised beyond the cap rather than silently sampling).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import networkx as nx
from networkx.algorithms.connectivity import build_auxiliary_node_connectivity, local_node_connectivity
from networkx.algorithms.flow import build_residual_network
import numpy as np

from .errors import CapacityError, ConfigParseError, ConfigurationError, ValidationError

ISOPERIMETRY_MAX_N = 20
WINDOWED_MAX_N = 16


class DirectedGraph:
    """Immutable directed graph on nodes ``0..n-1`` without self-loops."""

    __slots__ = ("n", "adj", "_edges")

    def __init__(self, n: int, edges: Iterable[tuple[int, int]] = ()):
        if n < 0:
            raise ValidationError("n must be non-negative")
        adj = np.zeros((n, n), dtype=bool)
        for u, v in edges:
            if not (0 <= u < n and 0 <= v < n):
                raise ValidationError(f"edge ({u}, {v}) outside [0, {n})")
            if u == v:
                raise ValidationError(f"self-loop at {u}")
            adj[u, v] = True
        self._init(n, adj)

    def _init(self, n: int, adj: np.ndarray) -> None:
        adj.setflags(write=False)
        self.n = n
        self.adj = adj
        self._edges = None

    @classmethod
    def from_adjacency(cls, adj) -> DirectedGraph:
        adj = np.array(adj, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValidationError("adjacency must be square")
        if adj.diagonal().any():
            raise ValidationError("self-loops are not allowed")
        g = cls.__new__(cls)
        g._init(adj.shape[0], adj)
        return g

    @property
    def edges(self) -> frozenset[tuple[int, int]]:
        if self._edges is None:
            us, vs = np.nonzero(self.adj)
            self._edges = frozenset(zip(us.tolist(), vs.tolist()))
        return self._edges

    def sorted_edges(self) -> list[tuple[int, int]]:
        us, vs = np.nonzero(self.adj)
        return list(zip(us.tolist(), vs.tolist()))

    def out_neighbors(self, u: int) -> np.ndarray:
        return np.flatnonzero(self.adj[u])

    def in_neighbors(self, v: int) -> np.ndarray:
        return np.flatnonzero(self.adj[:, v])

    def symmetrized(self) -> DirectedGraph:
        return DirectedGraph.from_adjacency(self.adj | self.adj.T)

    def closed_out_masks(self) -> list[int]:
        """Bitmask of {u} together with the out-neighbours of u, per node."""
        return [(1 << u) | sum(1 << int(v) for v in self.out_neighbors(u)) for u in range(self.n)]

    def __eq__(self, other) -> bool:
        return isinstance(other, DirectedGraph) and self.n == other.n and np.array_equal(self.adj, other.adj)

    def __hash__(self) -> int:
        return hash((self.n, np.packbits(self.adj).tobytes()))

    def __repr__(self) -> str:
        return f"DirectedGraph(n={self.n}, edges={len(self.edges)})"


def diameter(g: DirectedGraph) -> float:
    """Largest directed shortest-path distance; inf if not strongly connected."""
    worst = 0
    for s in range(g.n):
        dist = {s: 0}
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in g.out_neighbors(u).tolist():
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        if len(dist) < g.n:
            return math.inf
        worst = max(worst, max(dist.values()))
    return worst


# -- fixtures ------------------------------------------------------------------


def _undirected(n: int, pairs: Iterable[tuple[int, int]]) -> DirectedGraph:
    edges = set()
    for u, v in pairs:
        edges.add((u, v))
        edges.add((v, u))
    return DirectedGraph(n, edges)


def graph_generator(kind: str, **params) -> DirectedGraph:
    """Deterministic fixtures; undirected families carry both edge orientations.

    kinds: complete(n), empty(n), path(n), cycle(n), star(n), hypercube(d),
    circulant(n, offsets), scripted(n, edges).
    """
    if kind not in ("complete", "empty", "path", "cycle", "star", "hypercube", "circulant", "scripted"):
        raise ValidationError(f"unknown graph kind {kind!r}")
    try:
        if kind == "complete":
            n = _positive(params.pop("n"))
            return DirectedGraph.from_adjacency(~np.eye(n, dtype=bool))
        if kind == "empty":
            return DirectedGraph(_positive(params.pop("n")))
        if kind == "path":
            n = _positive(params.pop("n"))
            return _undirected(n, ((i, i + 1) for i in range(n - 1)))
        if kind == "cycle":
            n = params.pop("n")
            if n < 3:
                raise ValidationError("a cycle needs n >= 3")
            return _undirected(n, ((i, (i + 1) % n) for i in range(n)))
        if kind == "star":
            n = _positive(params.pop("n"))
            return _undirected(n, ((0, i) for i in range(1, n)))
        if kind == "hypercube":
            d = params.pop("d")
            if d < 0:
                raise ValidationError("hypercube dimension must be >= 0")
            n = 1 << d
            return _undirected(n, ((u, u ^ (1 << b)) for u in range(n) for b in range(d)))
        if kind == "circulant":
            n = _positive(params.pop("n"))
            offsets = sorted(set(params.pop("offsets")))
            if not offsets or any(not 0 < o < n for o in offsets):
                raise ValidationError(f"circulant offsets must lie in (0, {n})")
            return _undirected(n, ((u, (u + o) % n) for u in range(n) for o in offsets))
        if kind == "scripted":
            return DirectedGraph(params.pop("n"), params.pop("edges"))
    except KeyError as exc:
        raise ValidationError(f"{kind} graph needs parameter {exc.args[0]!r}") from None
    finally:
        if params:
            raise ValidationError(f"unexpected parameters for {kind}: {sorted(params)}")
    raise AssertionError(kind)  # pragma: no cover


def _positive(n: int) -> int:
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValidationError(f"node count must be a positive integer, got {n!r}")
    return int(n)


def parse_graph(text: str) -> DirectedGraph:
    """``"path:32"``, ``"cycle:6"``, ``"hypercube:3"``, ``"circulant:12:1,2"``."""
    parts = text.strip().split(":")
    kind, args = parts[0], parts[1:]
    try:
        if kind == "hypercube" and len(args) == 1:
            return graph_generator(kind, d=int(args[0]))
        if kind == "circulant" and len(args) == 2:
            return graph_generator(kind, n=int(args[0]), offsets=[int(o) for o in args[1].split(",")])
        if kind in ("complete", "empty", "path", "cycle", "star") and len(args) == 1:
            return graph_generator(kind, n=int(args[0]))
    except ValueError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"bad graph spec {text!r}: {exc}") from None
    raise ValidationError(f"bad graph spec {text!r}")


# -- schedule files ------------------------------------------------------------


def parse_schedule(text: str, path: str | None = None) -> list[DirectedGraph]:
    """One round per line after an ``n <count>`` header.

    A round line holds ``u>v`` (directed) and ``u-v`` (both orientations)
    tokens, a fixture spec such as ``complete`` or ``cycle:6``, or ``empty``.
    ``#`` starts a comment.
    """
    n = None
    rounds: list[DirectedGraph] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if n is None:
            head = line.split()
            if len(head) != 2 or head[0] != "n" or not head[1].isdigit():
                raise ConfigParseError("expected header 'n <count>'", path, lineno)
            n = int(head[1])
            continue
        try:
            rounds.append(_parse_round(line, n))
        except ValidationError as exc:
            raise ConfigParseError(str(exc), path, lineno) from None
    if n is None:
        raise ConfigParseError("missing 'n <count>' header", path)
    if not rounds:
        raise ConfigParseError("schedule has no rounds", path)
    return rounds


def _parse_round(line: str, n: int) -> DirectedGraph:
    if line == "empty":
        return DirectedGraph(n)
    if line == "complete":
        return graph_generator("complete", n=n)
    if ":" in line:
        g = parse_graph(line)
        if g.n != n:
            raise ValidationError(f"round graph has {g.n} nodes, header says {n}")
        return g
    edges = []
    for tok in line.split():
        sep = ">" if ">" in tok else "-"
        a, _, b = tok.partition(sep)
        if not (a.isdigit() and b.isdigit()):
            raise ValidationError(f"bad edge token {tok!r}")
        u, v = int(a), int(b)
        edges.append((u, v))
        if sep == "-":
            edges.append((v, u))
    return DirectedGraph(n, edges)


def load_schedule(path: str | Path) -> list[DirectedGraph]:
    return parse_schedule(Path(path).read_text(encoding="utf-8"), str(path))


def dump_schedule(schedule: Sequence[DirectedGraph]) -> str:
    if not schedule:
        raise ValidationError("empty schedule")
    lines = [f"n {schedule[0].n}"]
    for g in schedule:
        edges = g.sorted_edges()
        lines.append(" ".join(f"{u}>{v}" for u, v in edges) if edges else "empty")
    return "\n".join(lines) + "\n"


# -- edge distributions ----------------------------------------------------------


class EdgeDistribution:
    """Probability weights on ordered pairs, held as exact fractions."""

    def __init__(self, n: int, weights: dict[tuple[int, int], Fraction | int | float]):
        clean: dict[tuple[int, int], Fraction] = {}
        for (u, v), w in weights.items():
            if not (0 <= u < n and 0 <= v < n) or u == v:
                raise ValidationError(f"invalid pair ({u}, {v})")
            w = Fraction(w)
            if w < 0:
                raise ValidationError("negative edge weight")
            if w:
                clean[(u, v)] = w
        total = sum(clean.values(), Fraction(0))
        if abs(total - 1) > Fraction(1, 10**12):
            raise ValidationError(f"weights sum to {total}, not 1")
        if total != 1:
            clean = {e: w / total for e, w in clean.items()}
        self.n = n
        self.weights = clean
        self._pairs = sorted(clean)
        denom = math.lcm(*(w.denominator for w in clean.values())) if clean else 1
        self._denom = denom
        self._cum = np.cumsum([int(clean[e] * denom) for e in self._pairs])

    @classmethod
    def uniform(cls, graph: DirectedGraph) -> EdgeDistribution:
        edges = graph.sorted_edges()
        if not edges:
            raise ValidationError("uniform distribution over an empty edge set")
        w = Fraction(1, len(edges))
        return cls(graph.n, {e: w for e in edges})

    @classmethod
    def point(cls, n: int, u: int, v: int) -> EdgeDistribution:
        return cls(n, {(u, v): Fraction(1)})

    def sample(self, rng: np.random.Generator) -> tuple[int, int]:
        x = int(rng.integers(self._denom))
        return self._pairs[int(np.searchsorted(self._cum, x, side="right"))]

    def __eq__(self, other) -> bool:
        return isinstance(other, EdgeDistribution) and self.n == other.n and self.weights == other.weights

    def __hash__(self) -> int:
        return hash((self.n, tuple(sorted(self.weights.items()))))


# -- network view and topology controllers -----------------------------------------


@dataclass(frozen=True)
class NetworkView:
    """Read-only knowledge snapshot handed to the topology controller.

    ``knowledge[u, j]`` says whether node u knows ``directions[j]``; taken
    before any of round ``t``'s randomness is drawn.
    """

    t: int
    directions: np.ndarray
    knowledge: np.ndarray

    def __post_init__(self) -> None:
        for arr in (self.directions, self.knowledge):
            arr.setflags(write=False)

    def column(self, direction) -> np.ndarray:
        direction = np.asarray(direction)
        hits = np.flatnonzero((self.directions == direction).all(axis=1))
        if not len(hits):
            raise ConfigurationError(f"direction {direction.tolist()} is not tracked by the view")
        return self.knowledge[:, hits[0]]


class TopologyPolicy:
    kind = "abstract"

    def graph_at(self, t: int, view: NetworkView | None, rng: np.random.Generator) -> DirectedGraph:
        raise NotImplementedError

    def distribution_at(self, t: int, view: NetworkView | None, rng: np.random.Generator) -> EdgeDistribution:
        return EdgeDistribution.uniform(self.graph_at(t, view, rng))

    def watch_directions(self, k: int) -> np.ndarray:
        """Directions the controller needs in its view."""
        return np.zeros((0, k), dtype=np.int64)

    @property
    def needs_view(self) -> bool:
        return False

    def reset(self) -> None:
        pass


class StaticTopology(TopologyPolicy):
    kind = "static"

    def __init__(self, graph: DirectedGraph):
        self.graph = graph
        self.n = graph.n
        self._dist = None

    def graph_at(self, t, view, rng):
        return self.graph

    def distribution_at(self, t, view, rng):
        if self._dist is None:
            self._dist = EdgeDistribution.uniform(self.graph)
        return self._dist

    def schedule(self, length: int) -> list[DirectedGraph]:
        return [self.graph] * length


class PeriodicSchedule(TopologyPolicy):
    """Cycles through ``graphs``: G(t) = graphs[t mod len]."""

    kind = "periodic-schedule"

    def __init__(self, graphs: Sequence[DirectedGraph]):
        if not graphs:
            raise ValidationError("empty schedule")
        if len({g.n for g in graphs}) != 1:
            raise ValidationError("schedule graphs differ in node count")
        self.graphs = list(graphs)
        self.n = graphs[0].n
        self._dists: dict[int, EdgeDistribution] = {}

    def graph_at(self, t, view, rng):
        return self.graphs[t % len(self.graphs)]

    def distribution_at(self, t, view, rng):
        i = t % len(self.graphs)
        if i not in self._dists:
            self._dists[i] = EdgeDistribution.uniform(self.graphs[i])
        return self._dists[i]

    def schedule(self, length: int) -> list[DirectedGraph]:
        return [self.graphs[t % len(self.graphs)] for t in range(length)]


class ScriptedTopology(PeriodicSchedule):
    """Explicit per-round graphs; the last one persists after the script ends."""

    kind = "scripted"

    def graph_at(self, t, view, rng):
        return self.graphs[min(t, len(self.graphs) - 1)]

    def distribution_at(self, t, view, rng):
        return super().distribution_at(min(t, len(self.graphs) - 1), view, rng)

    def schedule(self, length: int) -> list[DirectedGraph]:
        return [self.graphs[min(t, len(self.graphs) - 1)] for t in range(length)]


def _lemma3_partner(knows: np.ndarray, v: int) -> int | None:
    ignorant = np.flatnonzero(~knows)
    ignorant = ignorant[ignorant != v]
    return int(ignorant[0]) if len(ignorant) else None


def _lemma3_graph(n: int, v: int, w: int | None) -> DirectedGraph:
    adj = ~np.eye(n, dtype=bool)
    if w is not None:
        adj[v, :] = False
        adj[:, v] = False
        adj[v, w] = adj[w, v] = True
    return DirectedGraph.from_adjacency(adj)


def adversary_lemma3(view: NetworkView, v: int, direction) -> DirectedGraph:
    """Clique on everyone but ``v``; ``v`` hangs off one node ignorant of
    ``direction``, or joins everyone once no such node is left."""
    knows = view.column(direction)
    return _lemma3_graph(len(knows), v, _lemma3_partner(knows, v))


class Lemma3Adversary(TopologyPolicy):
    """Adaptive adversary that starves ``v`` of one fixed direction.

    The direction defaults to e_1.  ``v`` defaults to the lowest-index node
    that does not know the direction at t = 0.
    """

    kind = "lemma3-adversary"

    def __init__(self, n: int, direction=None, v: int | None = None):
        self.n = n
        self.requested_direction = None if direction is None else np.asarray(direction, dtype=np.int64)
        self.requested_v = v
        self.reset()

    def reset(self) -> None:
        self.direction = self.requested_direction
        self.v = self.requested_v
        self.give_ups = 0
        self.rounds = 0
        self._chosen = False
        self._graphs: dict[int | None, DirectedGraph] = {}
        # rounds that still had an ignorant partner, and how many of those
        # were followed by a give-up round
        self.attempts = 0
        self.onsets = 0
        self._held = False

    @property
    def needs_view(self) -> bool:
        return True

    def watch_directions(self, k: int) -> np.ndarray:
        if self.direction is None:
            if k < 1:
                raise ConfigurationError("the lemma3 adversary needs k >= 1")
            self.direction = np.eye(k, dtype=np.int64)[0]
        if self.direction.shape != (k,) or not self.direction.any():
            raise ConfigurationError("adversary direction must be a nonzero length-k vector")
        return self.direction[None, :]

    def graph_at(self, t, view, rng):
        if view is None:
            raise ConfigurationError("the lemma3 adversary needs a network view")
        if self.direction is None:
            self.watch_directions(view.directions.shape[1])
        knows = view.column(self.direction)
        if not self._chosen:
            ignorant = np.flatnonzero(~knows)
            if len(ignorant) < 2:
                raise ConfigurationError("direction must start unknown to at least two nodes")
            if self.v is None:
                self.v = int(ignorant[0])
            elif knows[self.v]:
                raise ConfigurationError(f"node {self.v} already knows the adversary's direction")
            self._chosen = True
        self.rounds += 1
        w = _lemma3_partner(knows, self.v)
        if self._held:
            self.attempts += 1
            self.onsets += w is None
        self._held = w is not None
        if w is None:
            self.give_ups += 1
        if w not in self._graphs:
            self._graphs[w] = _lemma3_graph(self.n, self.v, w)
        return self._graphs[w]


def topology_at(policy: TopologyPolicy, t: int, view: NetworkView | None, rng: np.random.Generator) -> DirectedGraph:
    return policy.graph_at(t, view, rng)


# -- metrics -----------------------------------------------------------------------


def vertex_connectivity(g: DirectedGraph) -> int:
    """Minimum over non-adjacent ordered pairs of the local vertex
    connectivity; ``n - 1`` when every ordered pair is adjacent.

    ``nx.node_connectivity`` only samples pairs and overestimates on some
    digraphs, so every pair goes through the exact local max-flow.
    """
    if g.n < 2:
        raise ValidationError("vertex connectivity needs n >= 2")
    dg = nx.DiGraph()
    dg.add_nodes_from(range(g.n))
    dg.add_edges_from(g.sorted_edges())
    if not nx.is_strongly_connected(dg):
        return 0
    aux = build_auxiliary_node_connectivity(dg)
    residual = build_residual_network(aux, "capacity")
    best = g.n - 1
    for a in range(g.n):
        for b in range(g.n):
            if a != b and not g.adj[a, b]:
                best = min(best, local_node_connectivity(dg, a, b, auxiliary=aux, residual=residual, cutoff=best))
    return best


def _check_cap(n: int, cap: int) -> None:
    if n > cap:
        raise CapacityError(
            f"exact subset enumeration is capped at n={cap} (got {n}); "
            "use a sampled lower bound for larger graphs"
        )


def _closed_hood_table(g: DirectedGraph) -> np.ndarray:
    """hood[S] = S together with its out-neighbourhood, for every bitmask S."""
    hood = np.zeros(1 << g.n, dtype=np.int64)
    for i, mask in enumerate(g.closed_out_masks()):
        half = 1 << i
        hood[half : 2 * half] = hood[:half] | mask
    return hood


def _subset_sizes(n: int) -> np.ndarray:
    return np.bitwise_count(np.arange(1 << n, dtype=np.int64)).astype(np.int64)


def _min_ratio(num: np.ndarray, den: np.ndarray) -> Fraction:
    best = None
    for d in np.unique(den).tolist():
        cand = Fraction(int(num[den == d].min()), int(d))
        if best is None or cand < best:
            best = cand
    return best


def isoperimetric_number(g: DirectedGraph) -> Fraction:
    """min over proper nonempty S of (|S ∪ N(S)| - |S|) / min(|S|, |V \\ S|)."""
    _check_cap(g.n, ISOPERIMETRY_MAX_N)
    if g.n < 2:
        raise ValidationError("isoperimetric number needs n >= 2")
    hood = _closed_hood_table(g)
    sizes = _subset_sizes(g.n)
    subsets = np.arange(1, (1 << g.n) - 1)
    size = sizes[subsets]
    grown = np.bitwise_count(hood[subsets]).astype(np.int64) - size
    return _min_ratio(grown, np.minimum(size, g.n - size))


def relaxed_isoperimetric_number(
    schedule: Sequence[DirectedGraph], delta: int, horizon: int | None = None
) -> Fraction:
    """Windowed multi-step expansion of a dynamic graph.

    For every proper nonempty S and every start t in [0, horizon], S is pushed
    through ``delta`` consecutive closed neighbourhoods; the union of the
    intermediate sets is charged against min(|S|, |V \\ S|) * delta.
    """
    if delta < 1:
        raise ValidationError("delta must be >= 1")
    if not schedule:
        raise ValidationError("empty schedule")
    n = schedule[0].n
    _check_cap(n, WINDOWED_MAX_N)
    if n < 2:
        raise ValidationError("relaxed isoperimetry needs n >= 2")
    if horizon is None:
        horizon = len(schedule) - delta
    if horizon < 0 or len(schedule) < horizon + delta:
        raise ValidationError(f"schedule of length {len(schedule)} is shorter than horizon + delta")
    tables: dict[int, np.ndarray] = {}

    def table(g: DirectedGraph) -> np.ndarray:
        if id(g) not in tables:
            tables[id(g)] = _closed_hood_table(g)
        return tables[id(g)]

    subsets = np.arange(1, (1 << n) - 1)
    size = _subset_sizes(n)[subsets]
    den = np.minimum(size, n - size) * delta
    best = None
    for t in range(horizon + 1):
        cur = subsets
        union = subsets.copy()
        for i in range(t, t + delta):
            cur = table(schedule[i])[cur]
            union |= cur
        value = _min_ratio(np.bitwise_count(union).astype(np.int64) - size, den)
        if best is None or value < best:
            best = value
    return best


def min_average_cut(
    dists: Sequence[EdgeDistribution], delta: int, directed: bool = True
) -> Fraction:
    """min over proper nonempty S and window start t of the mean crossing mass.

    By default only pairs leaving S count: a transfer helps only when it
    moves from the side holding a message to the other.  An undirected edge
    is two ordered pairs, so each orientation contributes its own mass.
    ``directed=False`` counts every pair with exactly one endpoint in S.
    """
    if delta < 1:
        raise ValidationError("delta must be >= 1")
    if len(dists) < delta:
        raise ValidationError("fewer distributions than the window length")
    n = dists[0].n
    _check_cap(n, WINDOWED_MAX_N)
    if n < 2:
        raise ValidationError("cuts need n >= 2")
    denom = math.lcm(*(w.denominator for d in dists for w in d.weights.values()))
    subsets = np.arange(1, (1 << n) - 1)
    member = [((subsets >> u) & 1).astype(bool) for u in range(n)]
    masses: dict[int, np.ndarray] = {}

    def mass(d: EdgeDistribution) -> np.ndarray:
        key = id(d)
        if key not in masses:
            out = np.zeros(len(subsets), dtype=object if denom > 2**40 else np.int64)
            for (u, v), w in d.weights.items():
                wi = int(w * denom)
                crossing = member[u] & ~member[v]
                if not directed:
                    crossing = crossing | (member[v] & ~member[u])
                out[crossing] += wi
            masses[key] = out
        return masses[key]

    best = None
    for t in range(len(dists) - delta + 1):
        total = sum(mass(dists[i]) for i in range(t, t + delta))
        value = Fraction(int(total.min()), denom * delta)
        if best is None or value < best:
            best = value
    return best


def fraction_str(x: Fraction | int) -> str:
    x = Fraction(x)
    return f"{x.numerator}/{x.denominator}"
