from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fmrlnc.coding import (
    MemoryPolicy,
    Packet,
    Population,
    conserves,
    decode,
    emit,
    knows,
    make_source_packet,
    node_init,
    receive,
    sample_directions,
)
from fmrlnc.errors import NotReadyError, UsageError, ValidationError
from fmrlnc.experiments import exact_receive
from fmrlnc.field import FieldSpec

from oracles import Field, knows as oracle_knows, nonzero_vectors

GF2, GF3, GF16 = FieldSpec.parse("2"), FieldSpec.parse("3"), FieldSpec.parse("16")
ACC1, REC1 = MemoryPolicy.accumulator(1), MemoryPolicy.recombinator(1)
POLICIES = [MemoryPolicy.unlimited(), MemoryPolicy.unlimited(False), ACC1, REC1,
            MemoryPolicy.accumulator(2), MemoryPolicy.recombinator(3)]


def pkt(mu, payload=()):
    return Packet(np.array(mu), np.array(payload, dtype=np.int64))


def frequencies(rows) -> dict:
    counts = Counter(tuple(r) for r in np.asarray(rows).tolist())
    n = sum(counts.values())
    return {k: v / n for k, v in counts.items()}


# -- packets and initialisation ----------------------------------------------------


def test_source_packet():
    p = make_source_packet(1, [7, 8], 3)
    assert p.mu.tolist() == [1, 0, 0] and p.payload.tolist() == [7, 8]
    with pytest.raises(ValidationError):
        make_source_packet(0, [1], 3)
    with pytest.raises(ValidationError):
        make_source_packet(4, [1], 3)


def test_source_packet_conserves():
    m = np.array([[1, 2], [3, 4], [0, 5]])
    for i in range(1, 4):
        p = make_source_packet(i, m[i - 1], 3)
        assert conserves(GF16, p.vector[None], m).all()


def test_init_empty():
    node = node_init(0, ACC1, {}, 2, False, GF2, payload_length=1)
    assert node.active == [] and node.pinned == []


def test_init_one_message():
    node = node_init("a", ACC1, {2: [1, 1]}, 3, True, GF2)
    expected = make_source_packet(2, [1, 1], 3)
    assert node.active == [expected] and node.pinned == [expected]
    assert node.decode_buffer == [expected] and node.rank == 1


def test_init_two_messages_single_slot_knowledge():
    node = node_init(0, ACC1, {1: [0], 2: [1]}, 2, False, GF2)
    assert len(node.pinned) == 2 and len(node.active) == 1
    gens = [p.mu.tolist() for p in node.pinned + node.active]
    for mu in nonzero_vectors(2, 2):
        assert node.knows(list(mu)) == oracle_knows(Field(2), gens, mu)
        assert node.knows(list(mu))


def test_init_duplicate_index():
    with pytest.raises(ValidationError):
        node_init(0, ACC1, [(1, [0]), (1, [1])], 2, False, GF2)


# -- emission ------------------------------------------------------------------------


def test_emit_single_slot_is_half_zero():
    pop = Population(GF2, 2, 0, ACC1, 40_000, recipients=())
    pop.set_active(np.arange(40_000), np.tile([[1, 0]], (40_000, 1, 1)))
    freq = frequencies(pop.emit(np.arange(40_000), np.random.default_rng(1)))
    assert set(freq) == {(0, 0), (1, 0)}
    assert abs(freq[(0, 0)] - 0.5) < 0.01


def test_emit_no_packets_gives_zero():
    node = node_init(0, ACC1, {}, 3, False, GF16, payload_length=2)
    p = emit(node, np.random.default_rng(0))
    assert not p.mu.any() and not p.payload.any()


def test_emit_nonorthogonal_probability():
    q, m = 16, 60_000
    rng = np.random.default_rng(4)
    pop = Population(GF16, 3, 0, MemoryPolicy.accumulator(2), m, recipients=())
    slots = np.zeros((m, 2, 3), dtype=np.int64)
    slots[:, 0] = [1, 0, 0]
    slots[:, 1] = GF16.random(rng, (m, 3))
    pop.set_active(np.arange(m), slots)
    mu = np.array([1, 0, 0])
    hit = (pop.emit(np.arange(m), rng) @ mu) != 0
    sigma = np.sqrt((1 / q) * (1 - 1 / q) / m)
    assert abs(hit.mean() - (1 - 1 / q)) <= 3 * sigma


def test_emit_counts_ops_and_leaves_state():
    node = node_init(0, MemoryPolicy.accumulator(3), {1: [5], 2: [6]}, 2, False, GF16)
    before = [p.vector.tolist() for p in node.active]
    emit(node, np.random.default_rng(0))
    assert node.op_counter == 4  # two pinned plus two filled slots
    assert [p.vector.tolist() for p in node.active] == before


# -- reception ------------------------------------------------------------------------


def test_accumulator_example_distribution():
    m = 40_000
    pop = Population(GF2, 2, 0, ACC1, m, recipients=())
    nodes = np.arange(m)
    pop.set_active(nodes, np.tile([[1, 0]], (m, 1, 1)))
    pop.receive(nodes, np.tile([0, 1], (m, 1)), np.random.default_rng(2))
    freq = frequencies(pop.active[:, 0])
    exact = exact_receive(2, "accumulator", (1, 0), (0, 1))
    assert exact == {(1, 0): Fraction(1, 2), (1, 1): Fraction(1, 2)}
    assert set(freq) == set(exact)
    assert all(abs(freq[v] - float(p)) < 0.01 for v, p in exact.items())


def test_single_slot_variants_differ_in_exact_law():
    # With a second basis direction in play the recombinator can drop the
    # stored vector entirely; the accumulator cannot.
    acc = exact_receive(2, "accumulator", (1, 0), (0, 1))
    rec = exact_receive(2, "recombinator", (1, 0), (0, 1))
    assert rec == {v: Fraction(1, 4) for v in [(0, 0), (1, 0), (0, 1), (1, 1)]}
    assert acc != rec
    # in one dimension they coincide
    for q in (2, 3):
        assert exact_receive(q, "accumulator", (1,), (1,)) == exact_receive(q, "recombinator", (1,), (1,))


def test_zero_packet_leaves_accumulator():
    node = node_init(0, MemoryPolicy.accumulator(2), {1: [3]}, 2, False, GF16)
    node.receive(pkt([0, 1], [9]), np.random.default_rng(0))  # fills the empty slot
    before = [p.vector.tolist() for p in node.active]
    receive(node, pkt([0, 0], [0]), np.random.default_rng(1))
    assert [p.vector.tolist() for p in node.active] == before


def test_empty_slots_filled_first():
    node = node_init(0, MemoryPolicy.recombinator(3), {}, 3, False, GF16, payload_length=0)
    for i, mu in enumerate([[1, 0, 0], [0, 2, 0]]):
        out = receive(node, pkt(mu), np.random.default_rng(i))
        assert out.slots_touched == 3
    assert [p.mu.tolist() for p in node.active] == [[1, 0, 0], [0, 2, 0]]


def test_slots_touched():
    rng = np.random.default_rng(0)
    finite = node_init(0, MemoryPolicy.accumulator(4), {}, 3, False, GF16, payload_length=0)
    keep_all = node_init(0, MemoryPolicy.unlimited(False), {}, 3, False, GF16, payload_length=0)
    for i in range(1, 6):
        p = pkt(GF16.random(rng, 3))
        assert receive(finite, p, rng).slots_touched == 4
        assert receive(keep_all, p, rng).slots_touched == i


def test_dimension_mismatch():
    node = node_init(0, ACC1, {1: [1, 2]}, 2, True, GF16)
    with pytest.raises(ValidationError):
        receive(node, pkt([1, 0, 0], [1, 2]), np.random.default_rng(0))
    with pytest.raises(ValidationError):
        receive(node, pkt([1, 0], [1]), np.random.default_rng(0))


def test_recipient_buffers_before_policy():
    node = node_init(0, ACC1, {1: [4]}, 2, True, GF16)
    out = receive(node, pkt([0, 1], [7]), np.random.default_rng(0), directions=[[0, 1]])
    assert node.rank == 2
    assert out.learned | out.forgotten <= {(0, 1)}
    assert not (out.learned & out.forgotten)


def test_non_recipient_has_no_buffer():
    node = node_init(0, ACC1, {1: [4]}, 2, False, GF16)
    receive(node, pkt([0, 1], [7]), np.random.default_rng(0))
    assert node.decode_buffer == [] and node.rank == 0


# -- knowledge ---------------------------------------------------------------------


def test_knows_examples():
    node = node_init(0, ACC1, {1: [0]}, 2, False, GF2)
    assert knows(node, [1, 1]) and not knows(node, [0, 1])
    full = node_init(0, MemoryPolicy.unlimited(), {1: [0], 2: [0], 3: [1]}, 3, False, GF3)
    assert all(full.knows(list(mu)) for mu in nonzero_vectors(3, 3))


def test_knows_rejects_bad_directions():
    node = node_init(0, ACC1, {1: [0]}, 2, False, GF2)
    with pytest.raises(ValidationError):
        knows(node, [0, 0])
    with pytest.raises(ValidationError):
        knows(node, [1])


# -- decoding ------------------------------------------------------------------------


def test_decode_unit_buffer():
    msgs = {1: [1, 2], 2: [3, 4], 3: [5, 6]}
    node = node_init(0, MemoryPolicy.unlimited(), msgs, 3, True, GF16)
    assert [m.tolist() for m in decode(node)] == [msgs[i] for i in (1, 2, 3)]


def test_decode_not_ready():
    node = node_init(0, ACC1, {1: [1], 2: [2]}, 3, True, GF16)
    with pytest.raises(NotReadyError) as info:
        decode(node)
    assert info.value.rank == 2 and info.value.k == 3


def test_decode_non_recipient():
    node = node_init(0, ACC1, {1: [1]}, 1, False, GF16)
    with pytest.raises(UsageError):
        decode(node)


# -- directions --------------------------------------------------------------------


def test_sample_directions_small():
    dirs = sample_directions(2, GF2, 3, np.random.default_rng(0))
    assert sorted(map(tuple, dirs.tolist())) == [(0, 1), (1, 0), (1, 1)]


@pytest.mark.parametrize("f,k,count", [(GF2, 5, 20), (GF16, 6, 70), (FieldSpec.parse("2^16"), 3, 67)])
def test_sample_directions_distinct_and_deterministic(f, k, count):
    a = sample_directions(k, f, count, np.random.default_rng(3))
    b = sample_directions(k, f, count, np.random.default_rng(3))
    assert np.array_equal(a, b)
    assert a.any(axis=1).all()
    assert len({tuple(r) for r in a.tolist()}) == count
    assert np.array_equal(a[:k], np.eye(k, dtype=np.int64))


def test_sample_directions_errors():
    with pytest.raises(ValidationError):
        sample_directions(2, GF2, 4, np.random.default_rng(0))
    with pytest.raises(ValidationError):
        sample_directions(3, GF2, 2, np.random.default_rng(0))


# -- properties over random reception sequences ----------------------------------------

packets = st.lists(st.lists(st.integers(0, 2), min_size=3, max_size=3), min_size=1, max_size=12)


@given(policy=st.sampled_from(POLICIES), incoming=packets, seed=st.integers(0, 2**16))
def test_pinned_directions_never_forgotten(policy, incoming, seed):
    rng = np.random.default_rng(seed)
    node = node_init(0, policy, {2: [1]}, 3, True, GF3)
    pinned = [p.vector.tolist() for p in node.pinned]
    guarded = [mu for mu in nonzero_vectors(3, 3) if mu[1] != 0]
    for mu in incoming:
        receive(node, pkt(mu, [0]), rng)
        assert [p.vector.tolist() for p in node.pinned] == pinned
        assert all(node.knows(list(mu)) for mu in guarded)


@given(keep_all=st.booleans(), incoming=packets, seed=st.integers(0, 2**16))
def test_unlimited_knowledge_is_monotone(keep_all, incoming, seed):
    rng = np.random.default_rng(seed)
    node = node_init(0, MemoryPolicy.unlimited(not keep_all), {}, 3, False, GF3, payload_length=0)
    known: set = set()
    for mu in incoming:
        receive(node, pkt(mu), rng)
        now = {v for v in nonzero_vectors(3, 3) if node.knows(list(v))}
        assert known <= now
        known = now


@given(policy=st.sampled_from(POLICIES), seed=st.integers(0, 2**16), field=st.sampled_from(["3", "16", "2^16"]))
def test_conservation_after_random_traffic(policy, seed, field):
    f = FieldSpec.parse(field)
    rng = np.random.default_rng(seed)
    n, k, l = 6, 3, 2
    msgs = f.random(rng, (k, l))
    pop = Population.from_placement(f, policy, msgs, {1: [0], 2: [1], 3: [2, 3]}, n, recipients=[4, 5])
    for _ in range(5):
        senders = rng.integers(0, n, 8)
        receivers = rng.integers(0, n, 8)
        out = pop.emit(senders, rng)
        assert conserves(f, out, msgs).all()
        pop.receive(receivers, out, rng)
    assert conserves(f, pop.stored_rows(), msgs).all()
    assert (pop.active_size(np.arange(n)) <= (policy.s or 10**9)).all()


def test_batched_receive_matches_sequential_for_bases():
    # innovative-only storage is a deterministic function of the packets
    f = GF16
    rng = np.random.default_rng(8)
    vecs = f.random(rng, (10, 5))
    nodes = np.array([0, 1, 0, 0, 2, 1, 0, 2, 2, 0])
    batched = Population(f, 4, 1, MemoryPolicy.unlimited(), 3)
    batched.receive(nodes, vecs, rng)
    single = Population(f, 4, 1, MemoryPolicy.unlimited(), 3)
    for u, v in zip(nodes, vecs):
        single.receive([u], v[None], rng)
    assert np.array_equal(batched.active, single.active)
    assert np.array_equal(batched.decoder.rows, single.decoder.rows)
    for u in range(3):
        assert f.rank(vecs[nodes == u][:, :4]) == batched.decode_rank([u])[0]


def test_dense_broadcast_fold_matches_enumeration():
    # receiver slot c and two deliveries p1, p2: c + a1 p1 + a2 p2
    m, reps = 200, 100
    f = GF2
    recv = np.arange(m) * 3
    slots = np.zeros((3 * m, 1, 3), dtype=np.int64)
    slots[recv, 0] = [1, 0, 0]
    slots[recv + 1, 0] = [0, 1, 0]
    slots[recv + 2, 0] = [0, 0, 1]
    incoming = np.zeros((3 * m, 3 * m), dtype=bool)
    incoming[recv, recv + 1] = incoming[recv, recv + 2] = True
    senders = np.stack([recv + 1, recv + 2], axis=1).ravel()
    receivers = np.repeat(recv, 2)
    rng = np.random.default_rng(5)
    seen = []
    for _ in range(reps):
        pop = Population(f, 3, 0, ACC1, 3 * m, recipients=())
        pop.set_active(np.arange(3 * m), slots)
        pop.receive_broadcast(incoming, slots[:, 0, :], senders, receivers, rng)
        seen.append(pop.active[recv, 0])
        assert (pop.ops[recv] == 2).all()
    freq = frequencies(np.concatenate(seen))
    assert set(freq) == {(1, a, b) for a in (0, 1) for b in (0, 1)}
    assert all(abs(p - 0.25) < 0.015 for p in freq.values())
