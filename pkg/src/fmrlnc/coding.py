"""Packets, per-node memory policies, and the projection predicate.

Node state lives in a :class:`Population`: stacked numpy arrays holding the
pinned source packets, the active store and the decode basis of every node,
so that a synchronous round (or ten thousand independent estimator trials)
is a handful of array operations.  :class:`NodeState` is a view of one node
and carries the single-node operations.

A packet is stored as one row of length ``k + l``: the coefficient vector
followed by the payload.  Every update is linear over the whole row, which is
what keeps ``payload == mu @ M`` true for every packet ever produced.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import NotReadyError, UsageError, ValidationError
from .field import FieldSpec

POLICY_KINDS = ("unlimited", "accumulator", "recombinator")


@dataclass(frozen=True, eq=False)
class Packet:
    mu: np.ndarray
    payload: np.ndarray

    @property
    def k(self) -> int:
        return len(self.mu)

    @property
    def l(self) -> int:  # noqa: E743
        return len(self.payload)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.mu, self.payload])

    @classmethod
    def from_vector(cls, vec, k: int) -> Packet:
        vec = np.asarray(vec, dtype=np.int64)
        return cls(vec[:k].copy(), vec[k:].copy())

    def to_record(self) -> dict:
        return {"mu": [int(x) for x in self.mu], "payload": [int(x) for x in self.payload]}

    def __eq__(self, other) -> bool:
        if not isinstance(other, Packet):
            return NotImplemented
        return np.array_equal(self.mu, other.mu) and np.array_equal(self.payload, other.payload)

    def __repr__(self) -> str:
        return f"Packet(mu={self.mu.tolist()}, payload={self.payload.tolist()})"


@dataclass(frozen=True)
class MemoryPolicy:
    """How a node folds received packets into its active store.

    ``unlimited`` keeps every received packet active (or, with
    ``innovative_only``, a basis of their span); the finite kinds keep ``s``
    slots.
    """

    kind: str
    s: int | None = None
    innovative_only: bool = True

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ValidationError(f"unknown memory policy {self.kind!r}")
        if self.kind == "unlimited":
            if self.s is not None:
                raise ValidationError("the unlimited policy takes no slot count")
        elif self.s is None or self.s < 1:
            raise ValidationError(f"{self.kind} needs s >= 1, got {self.s}")

    @classmethod
    def unlimited(cls, innovative_only: bool = True) -> MemoryPolicy:
        return cls("unlimited", None, innovative_only)

    @classmethod
    def accumulator(cls, s: int) -> MemoryPolicy:
        return cls("accumulator", s)

    @classmethod
    def recombinator(cls, s: int) -> MemoryPolicy:
        return cls("recombinator", s)

    @property
    def finite(self) -> bool:
        return self.kind != "unlimited"

    def __str__(self) -> str:
        if self.finite:
            return f"{self.kind}(s={self.s})"
        return "unlimited" + ("" if self.innovative_only else "(keep-all)")


@dataclass(frozen=True)
class ReceiveOutcome:
    learned: frozenset
    forgotten: frozenset
    slots_touched: int


def _grouping(nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stable sort order, group starts in sorted order, and each entry's
    position among the earlier entries for the same node."""
    m = len(nodes)
    order = np.argsort(nodes, kind="stable")
    sorted_nodes = nodes[order]
    boundary = np.ones(m, dtype=bool)
    boundary[1:] = sorted_nodes[1:] != sorted_nodes[:-1]
    starts = np.flatnonzero(boundary)
    sizes = np.diff(np.append(starts, m))
    occ = np.empty(m, dtype=np.int64)
    occ[order] = np.arange(m) - np.repeat(starts, sizes)
    return order, starts, occ


def _occurrence(nodes: np.ndarray) -> np.ndarray:
    """Position of each entry among the earlier entries for the same node."""
    if len(nodes) == 0:
        return np.zeros(0, dtype=np.int64)
    return _grouping(nodes)[2]


class _Basis:
    """Per-node span kept in reduced row echelon form, row i pivoting on column i.

    Rows without a pivot are zero, which lets a vector be reduced against the
    whole basis with one field product.
    """

    def __init__(self, field: FieldSpec, n: int, k: int, w: int):
        self.field = field
        self.k = k
        self.rows = np.zeros((n, k, w), dtype=np.int64)
        self.rank = np.zeros(n, dtype=np.int64)

    def insert(self, nodes: np.ndarray, vecs: np.ndarray) -> np.ndarray:
        """Insert one vector per (distinct) node; returns the innovative mask."""
        f, k = self.field, self.k
        basis = self.rows[nodes]
        resid = f.sub(vecs, f.matmul(vecs[:, None, :k], basis)[:, 0, :])
        nonzero = resid[:, :k] != 0
        innovative = nonzero.any(axis=1)
        if not innovative.any():
            return innovative
        idx = np.flatnonzero(innovative)
        mi = len(idx)
        piv = nonzero[idx].argmax(axis=1)
        new = resid[idx]
        new = f.mul(new, f.inv(new[np.arange(mi), piv])[:, None])
        sub = basis[idx]
        col = np.take_along_axis(sub, piv[:, None, None], axis=2)
        sub = f.sub(sub, f.mul(col, new[:, None, :]))
        sub[np.arange(mi), piv] = new
        self.rows[nodes[idx]] = sub
        self.rank[nodes[idx]] += 1
        return innovative

    def insert_sequence(self, nodes: np.ndarray, vecs: np.ndarray) -> None:
        """Insert entries in order; a node may appear several times."""
        if len(nodes) < 2 or np.bincount(nodes).max() == 1:
            self.insert(nodes, vecs)
            return
        occ = _occurrence(nodes)
        for layer in range(int(occ.max()) + 1 if len(occ) else 0):
            sel = occ == layer
            self.insert(nodes[sel], vecs[sel])


class Population:
    """Memory and decode state of ``n`` nodes running one policy."""

    def __init__(
        self,
        field: FieldSpec,
        k: int,
        l: int,  # noqa: E741
        policy: MemoryPolicy,
        n: int,
        recipients: Iterable[int] | np.ndarray | None = None,
    ):
        if k < 0 or l < 0 or n < 0:
            raise ValidationError("k, l and n must be non-negative")
        self.field = field
        self.k = k
        self.l = l
        self.w = k + l
        self.n = n
        self.policy = policy
        self.pinned = np.zeros((n, 0, self.w), dtype=np.int64)
        self.pinned_count = np.zeros(n, dtype=np.int64)
        self._active_basis: _Basis | None = None
        if policy.finite:
            self.active = np.zeros((n, policy.s, self.w), dtype=np.int64)
        elif policy.innovative_only:
            self._active_basis = _Basis(field, n, k, self.w)
            self.active = self._active_basis.rows
        else:
            self.active = np.zeros((n, 0, self.w), dtype=np.int64)
        self.count = np.zeros(n, dtype=np.int64)
        self.is_recipient = np.zeros(n, dtype=bool)
        if recipients is None:
            self.is_recipient[:] = True
        else:
            self.is_recipient[np.asarray(list(recipients), dtype=np.int64)] = True
        self.decoder = _Basis(field, n, k, self.w)
        self.ops = np.zeros(n, dtype=np.int64)
        self.received = np.zeros(n, dtype=np.int64)

    # -- construction -------------------------------------------------------

    @classmethod
    def from_placement(
        cls,
        field: FieldSpec,
        policy: MemoryPolicy,
        messages: np.ndarray,
        placement: Mapping[int, Iterable[int]],
        n: int,
        recipients: Iterable[int] | None = None,
    ) -> Population:
        """Distribute ``messages`` (k x l); ``placement`` maps 1-based index to nodes."""
        messages = field.check(messages, "messages")
        k, l = messages.shape
        pop = cls(field, k, l, policy, n, recipients)
        for index in sorted(placement):
            for node in sorted(set(placement[index])):
                pop.add_source(node, index, messages[index - 1])
        return pop

    def add_source(self, node: int, index: int, message) -> None:
        """Give ``node`` message ``index`` (1-based) as a pinned source packet."""
        if not 0 <= node < self.n:
            raise ValidationError(f"node {node} outside [0, {self.n})")
        vec = make_source_packet(index, message, self.k).vector
        held = self.pinned[node, : self.pinned_count[node], : self.k]
        if held.size and np.any(held[:, index - 1] != 0):
            raise ValidationError(f"node {node} already holds message {index}")
        if self.pinned_count[node] == self.pinned.shape[1]:
            self.pinned = np.concatenate(
                [self.pinned, np.zeros((self.n, 1, self.w), dtype=np.int64)], axis=1
            )
        self.pinned[node, self.pinned_count[node]] = vec
        self.pinned_count[node] += 1
        one = np.array([node])
        if self.policy.finite:
            if self.count[node] < self.policy.s:
                self.active[node, self.count[node]] = vec
                self.count[node] += 1
        elif self._active_basis is not None:
            self._active_basis.insert(one, vec[None])
        else:
            self._append(one, vec[None])
        if self.is_recipient[node]:
            self.decoder.insert(one, vec[None])

    def set_active(self, nodes, rows) -> None:
        """Overwrite the slots of finite-memory nodes (test and estimator setup)."""
        if not self.policy.finite:
            raise UsageError("set_active applies to finite-memory policies")
        nodes = np.asarray(nodes, dtype=np.int64)
        rows = self.field.check(rows, "slot contents")
        if rows.ndim != 3 or rows.shape[0] != len(nodes) or rows.shape[2] != self.w:
            raise ValidationError("rows must have shape (len(nodes), slots, k + l)")
        if rows.shape[1] > self.policy.s:
            raise ValidationError(f"at most s={self.policy.s} slots")
        self.active[nodes] = 0
        self.active[nodes, : rows.shape[1]] = rows
        self.count[nodes] = rows.shape[1]

    # -- views ----------------------------------------------------------------

    def generators(self, nodes) -> np.ndarray:
        """Rows that emission and knowledge range over, zero-padded (m, G, k+l)."""
        nodes = np.asarray(nodes, dtype=np.int64)
        if not self.policy.finite:
            # pinned packets were inserted into the active store and stay in its span
            return self.active[nodes]
        return np.concatenate([self.pinned[nodes], self.active[nodes]], axis=1)

    def active_size(self, nodes) -> np.ndarray:
        nodes = np.asarray(nodes, dtype=np.int64)
        if self._active_basis is not None:
            return self._active_basis.rank[nodes]
        return self.count[nodes]

    def decode_rank(self, nodes=None) -> np.ndarray:
        if nodes is None:
            return self.decoder.rank.copy()
        return self.decoder.rank[np.asarray(nodes, dtype=np.int64)]

    def node(self, index: int) -> NodeState:
        return NodeState(self, index)

    # -- protocol operations ----------------------------------------------------

    def emit(self, nodes, rng: np.random.Generator) -> np.ndarray:
        """One packet per entry of ``nodes``: independent uniform coefficients
        on every generator (zero coefficients allowed)."""
        nodes = np.asarray(nodes, dtype=np.int64)
        gens = self.generators(nodes)
        alpha = self.field.random(rng, gens.shape[:2])
        used = self.active_size(nodes)
        if self.policy.finite:
            used = used + self.pinned_count[nodes]
        self.ops += np.bincount(nodes, weights=used, minlength=self.n).astype(np.int64)
        return self.field.matmul(alpha[:, None, :], gens)[:, 0, :]

    def receive(self, nodes, packets, rng: np.random.Generator) -> np.ndarray:
        """Deliver ``packets[i]`` to ``nodes[i]``, in order per node.

        Returns the number of active slots touched per delivery.
        """
        f, k = self.field, self.k
        nodes = np.asarray(nodes, dtype=np.int64)
        packets = np.asarray(packets, dtype=np.int64)
        m = len(nodes)
        if packets.shape != (m, self.w):
            raise ValidationError(f"packets must have shape ({m}, {self.w}), got {packets.shape}")
        if m == 0:
            return np.zeros(0, dtype=np.int64)
        self.received += np.bincount(nodes, minlength=self.n)
        order, starts, occ = _grouping(nodes)

        want = self.is_recipient[nodes] & (self.decoder.rank[nodes] < k)
        if want.any():
            self.decoder.insert_sequence(nodes[want], packets[want])

        policy = self.policy
        touched = np.zeros(m, dtype=np.int64)
        if policy.kind == "accumulator":
            s = policy.s
            fill = occ < (s - self.count[nodes])
            alpha = f.random(rng, (m, s))
            if fill.any():
                fn = nodes[fill]
                self.active[fn, self.count[fn] + occ[fill]] = packets[fill]
                self.count += np.bincount(fn, minlength=self.n)
            rest = ~fill
            if rest.any():
                # addition commutes, so fold per node in sorted order
                sel = order[rest[order]]
                rn = nodes[sel]
                head = np.ones(len(rn), dtype=bool)
                head[1:] = rn[1:] != rn[:-1]
                cut = np.flatnonzero(head)
                contrib = f.mul(alpha[sel][:, :, None], packets[sel][:, None, :])
                if f.char2:
                    folded = np.bitwise_xor.reduceat(contrib, cut, axis=0)
                else:
                    folded = np.add.reduceat(contrib, cut, axis=0)
                self.active[rn[cut]] = f.add(self.active[rn[cut]], folded)
            touched[:] = s
        elif policy.kind == "recombinator":
            s = policy.s
            for layer in range(int(occ.max()) + 1):
                sel = np.flatnonzero(occ == layer)
                u, p = nodes[sel], packets[sel]
                full = self.count[u] >= s
                if (~full).any():
                    uf = u[~full]
                    self.active[uf, self.count[uf]] = p[~full]
                    self.count[uf] += 1
                if full.any():
                    uu = u[full]
                    stack = np.concatenate([self.active[uu], p[full][:, None, :]], axis=1)
                    mix = f.random(rng, (len(uu), s, s + 1))
                    self.active[uu] = f.matmul(mix, stack)
            touched[:] = s
        elif self._active_basis is not None:
            self._active_basis.insert_sequence(nodes, packets)
            touched[:] = self._active_basis.rank[nodes]
        else:
            for layer in range(int(occ.max()) + 1):
                sel = occ == layer
                self._append(nodes[sel], packets[sel])
            touched[:] = self.count[nodes]
        self.ops += np.bincount(nodes, weights=touched, minlength=self.n).astype(np.int64)
        return touched

    def receive_broadcast(self, incoming, packets, senders, receivers, rng: np.random.Generator) -> None:
        """Apply one synchronous broadcast round.

        ``incoming[v, u]`` marks a delivery u -> v, ``packets[u]`` is u's
        emission, and ``(senders, receivers)`` lists deliveries in the order
        they are applied.  Once every receiving accumulator has all s slots
        occupied the order no longer matters, and the fold becomes one dense
        field product with i.i.d. uniform coefficients.
        """
        s = self.policy.s
        if self.policy.kind != "accumulator" or (self.count[receivers] < s).any():
            self.receive(receivers, packets[senders], rng)
            return
        f, k = self.field, self.k
        self.received += np.bincount(receivers, minlength=self.n)
        want = self.is_recipient[receivers] & (self.decoder.rank[receivers] < k)
        if want.any():
            self.decoder.insert_sequence(receivers[want], packets[senders[want]])
        coeff = np.where(incoming[None], f.random(rng, (s,) + incoming.shape), 0)
        self.active = f.add(self.active, f.matmul(coeff, packets).transpose(1, 0, 2))
        self.ops += s * np.bincount(receivers, minlength=self.n)

    def _append(self, nodes: np.ndarray, vecs: np.ndarray) -> None:
        need = int(self.count[nodes].max()) + 1
        if need > self.active.shape[1]:
            grow = max(need, 2 * self.active.shape[1]) - self.active.shape[1]
            self.active = np.concatenate(
                [self.active, np.zeros((self.n, grow, self.w), dtype=np.int64)], axis=1
            )
        self.active[nodes, self.count[nodes]] = vecs
        self.count[nodes] += 1

    def knows(self, nodes, directions) -> np.ndarray:
        """(len(nodes), len(directions)) knowledge matrix."""
        directions = np.asarray(directions, dtype=np.int64).reshape(-1, self.k)
        gens = self.generators(nodes)[:, :, : self.k]
        out = np.zeros((gens.shape[0], len(directions)), dtype=bool)
        if gens.shape[1] == 0:
            return out
        present = gens.any(axis=2)
        if 2 * present.sum() > present.size:
            return (self.field.matmul(gens, directions.T) != 0).any(axis=1)
        # mostly padding (many pinned sources at few nodes): skip zero rows
        owner, slot = np.nonzero(present)
        if len(owner) == 0:
            return out
        hits = self.field.matmul(gens[owner, slot], directions.T) != 0
        held, starts = np.unique(owner, return_index=True)
        out[held] = np.logical_or.reduceat(hits, starts, axis=0)
        return out

    def knows_each(self, nodes, directions) -> np.ndarray:
        """Whether ``nodes[i]`` knows ``directions[i]``."""
        directions = np.asarray(directions, dtype=np.int64)
        gens = self.generators(nodes)[:, :, : self.k]
        if gens.shape[1] == 0:
            return np.zeros(gens.shape[0], dtype=bool)
        return (self.field.matmul(gens, directions[:, :, None])[:, :, 0] != 0).any(axis=1)

    def decode(self, node: int) -> np.ndarray:
        """The k x l message matrix recovered at a recipient."""
        from .field import mat_solve

        if not self.is_recipient[node]:
            raise UsageError(f"node {node} is not a recipient")
        rank = int(self.decoder.rank[node])
        if rank < self.k:
            raise NotReadyError(rank, self.k)
        rows = self.decoder.rows[node]
        return mat_solve(rows[:, : self.k], rows[:, self.k :], self.field)

    def stored_rows(self) -> np.ndarray:
        """Every pinned, active and buffered row currently held, stacked."""
        parts = []
        for u in range(self.n):
            parts.append(self.pinned[u, : self.pinned_count[u]])
            if self._active_basis is None:
                parts.append(self.active[u, : self.count[u]])
            else:
                parts.append(self.active[u])
            parts.append(self.decoder.rows[u])
        return np.concatenate(parts) if parts else np.zeros((0, self.w), dtype=np.int64)


def conserves(field: FieldSpec, rows, messages) -> np.ndarray:
    """Per row: payload equals mu @ M."""
    rows = np.asarray(rows, dtype=np.int64).reshape(-1, messages.shape[0] + messages.shape[1])
    k = messages.shape[0]
    if len(rows) == 0:
        return np.zeros(0, dtype=bool)
    expect = field.matmul(rows[:, :k], messages) if k else np.zeros_like(rows[:, k:])
    return (expect == rows[:, k:]).all(axis=1)


class NodeState:
    """One node of a :class:`Population`."""

    def __init__(self, population: Population, index: int, label=None):
        self.population = population
        self.index = index
        self.id = index if label is None else label

    @property
    def policy(self) -> MemoryPolicy:
        return self.population.policy

    @property
    def is_recipient(self) -> bool:
        return bool(self.population.is_recipient[self.index])

    @property
    def op_counter(self) -> int:
        return int(self.population.ops[self.index])

    def _packets(self, rows) -> list[Packet]:
        k = self.population.k
        return [Packet.from_vector(r, k) for r in rows]

    @property
    def pinned(self) -> list[Packet]:
        p, i = self.population, self.index
        return self._packets(p.pinned[i, : p.pinned_count[i]])

    @property
    def active(self) -> list[Packet]:
        p, i = self.population, self.index
        if p._active_basis is not None:
            rows = p.active[i]
            return self._packets(rows[(rows[:, : p.k] != 0).any(axis=1)])
        return self._packets(p.active[i, : p.count[i]])

    @property
    def decode_buffer(self) -> list[Packet]:
        p, i = self.population, self.index
        if not self.is_recipient:
            return []
        rows = p.decoder.rows[i]
        return self._packets(rows[(rows[:, : p.k] != 0).any(axis=1)])

    @property
    def rank(self) -> int:
        return int(self.population.decoder.rank[self.index])

    def emit(self, rng: np.random.Generator) -> Packet:
        vec = self.population.emit([self.index], rng)[0]
        return Packet.from_vector(vec, self.population.k)

    def receive(self, pkt: Packet, rng: np.random.Generator, directions=()) -> ReceiveOutcome:
        p = self.population
        if pkt.k != p.k or pkt.l != p.l:
            raise ValidationError(f"packet dimensions ({pkt.k}, {pkt.l}) != ({p.k}, {p.l})")
        dirs = np.asarray(directions, dtype=np.int64).reshape(-1, p.k)
        before = p.knows([self.index], dirs)[0] if len(dirs) else np.zeros(0, dtype=bool)
        touched = p.receive([self.index], p.field.check(pkt.vector, "packet")[None], rng)
        after = p.knows([self.index], dirs)[0] if len(dirs) else np.zeros(0, dtype=bool)
        as_key = [tuple(int(x) for x in d) for d in dirs]
        return ReceiveOutcome(
            learned=frozenset(as_key[j] for j in np.flatnonzero(after & ~before)),
            forgotten=frozenset(as_key[j] for j in np.flatnonzero(before & ~after)),
            slots_touched=int(touched[0]),
        )

    def knows(self, mu) -> bool:
        p = self.population
        mu = p.field.check(mu, "direction")
        if mu.shape != (p.k,):
            raise ValidationError(f"direction must have length {p.k}")
        if not mu.any():
            raise ValidationError("the zero direction is excluded")
        return bool(p.knows([self.index], mu[None])[0, 0])

    def decode(self) -> list[np.ndarray]:
        return list(self.population.decode(self.index))


# -- functional entry points ------------------------------------------------------


def make_source_packet(i: int, message, k: int) -> Packet:
    """(e_i, m_i) for the 1-based message index ``i``."""
    if not 1 <= i <= k:
        raise ValidationError(f"message index {i} outside [1, {k}]")
    mu = np.zeros(k, dtype=np.int64)
    mu[i - 1] = 1
    return Packet(mu, np.array(message, dtype=np.int64))


def node_init(
    node_id,
    policy: MemoryPolicy,
    initial_messages,
    k: int,
    is_recipient: bool,
    field: FieldSpec,
    payload_length: int | None = None,
) -> NodeState:
    """A standalone node holding ``initial_messages`` ((index, message) pairs)."""
    items = list(initial_messages.items() if isinstance(initial_messages, Mapping) else initial_messages)
    indices = [i for i, _ in items]
    if len(set(indices)) != len(indices):
        raise ValidationError("duplicate initial message index")
    if payload_length is None:
        if not items:
            raise ValidationError("payload_length is required when no messages are given")
        payload_length = len(items[0][1])
    pop = Population(field, k, payload_length, policy, 1, [0] if is_recipient else [])
    for i, msg in items:
        msg = field.check(msg, "message")
        if msg.shape != (payload_length,):
            raise ValidationError("message length differs from payload_length")
        pop.add_source(0, i, msg)
    return NodeState(pop, 0, label=node_id)


def emit(node: NodeState, rng: np.random.Generator) -> Packet:
    return node.emit(rng)


def receive(node: NodeState, pkt: Packet, rng: np.random.Generator, directions=()) -> ReceiveOutcome:
    return node.receive(pkt, rng, directions)


def knows(node: NodeState, mu) -> bool:
    return node.knows(mu)


def decode(node: NodeState) -> list[np.ndarray]:
    return node.decode()


def sample_directions(k: int, field: FieldSpec, count: int, rng: np.random.Generator) -> np.ndarray:
    """The k unit vectors followed by ``count - k`` distinct random nonzero vectors."""
    total = field.q**k - 1
    if count < k:
        raise ValidationError(f"count={count} is smaller than the {k} unit vectors")
    if count > total:
        raise ValidationError(f"only {total} nonzero vectors exist in F_{field.q}^{k}")
    units = np.eye(k, dtype=np.int64)
    extra = count - k
    if extra == 0:
        return units
    if total <= 1 << 16:
        codes = np.arange(1, total + 1)
        digits = (codes[:, None] // field.q ** np.arange(k - 1, -1, -1)) % field.q
        is_unit = (digits != 0).sum(axis=1) == 1
        is_unit &= digits.max(axis=1) == 1
        pool = digits[~is_unit]
        pick = rng.choice(len(pool), size=extra, replace=False)
        return np.concatenate([units, pool[np.sort(pick)]])
    seen = {tuple(u) for u in units.tolist()}
    out = []
    while len(out) < extra:
        v = field.random(rng, k)
        key = tuple(v.tolist())
        if key in seen or not v.any():
            continue
        seen.add(key)
        out.append(v)
    return np.concatenate([units, np.array(out, dtype=np.int64)])
