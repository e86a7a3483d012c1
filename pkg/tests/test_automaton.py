import hashlib
import itertools
import random
import struct
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from merkle_automaton.automaton import (
    ChainClock,
    Dfa,
    commit_trace,
    run,
    step,
    transition_hash,
    verify_output_trace,
    verify_trace,
)
from merkle_automaton.crypto import Digest, KeyPair
from merkle_automaton.errors import DomainError, EmptyInputError, ValidationError
from merkle_automaton.ledger import Chain, append_block, verify_anchor
from merkle_automaton.merkle import build_tree, prove_inclusion


def _h(b):
    return hashlib.sha256(b).digest()


def _ce(tag, *fields):
    out = bytes([tag])
    for f in fields:
        raw = f.encode() if isinstance(f, str) else struct.pack(">q", f)
        out += struct.pack(">I", len(raw)) + raw
    return out


def oracle_root(hashes):
    nodes = [_h(b"\x00" + x) for x in hashes]
    while len(nodes) > 1:
        nxt = [_h(b"\x01" + nodes[i] + nodes[i + 1]) for i in range(0, len(nodes) - 1, 2)]
        nodes = nxt + ([nodes[-1]] if len(nodes) % 2 else [])
    return nodes[0]


EVEN_ONES = Dfa.build(
    {("q0", "0"): ("q0", "e"), ("q0", "1"): ("q1", "o"), ("q1", "0"): ("q1", "o"), ("q1", "1"): ("q0", "e")},
    "q0",
    ["q0"],
)

SIGNER = KeyPair.from_seed(b"automaton-tests")


def _committed(dfa, word, chain=None):
    chain = chain if chain is not None else Chain()
    if not chain.blocks:
        append_block(chain, (), 0)
    trace = run(dfa, word, ChainClock(chain))
    root, loc = commit_trace(trace, chain, SIGNER)
    return trace, root, loc, chain


def test_step_definitional():
    nxt, out, rec = step(EVEN_ONES, "q0", "1", 5)
    assert (nxt, out) == ("q1", "o")
    assert rec.record_hash == _h(_ce(0x01, "q0", "1", "q1", 5))
    assert rec.hash_ok()


def test_step_pure_and_time_sensitive():
    assert step(EVEN_ONES, "q0", "1", 5) == step(EVEN_ONES, "q0", "1", 5)
    assert step(EVEN_ONES, "q0", "1", 5)[2].record_hash != step(EVEN_ONES, "q0", "1", 6)[2].record_hash


def test_step_domain_errors():
    with pytest.raises(DomainError):
        step(EVEN_ONES, "q0", "2", 0)
    with pytest.raises(DomainError):
        step(EVEN_ONES, "q9", "1", 0)
    with pytest.raises(DomainError):
        run(EVEN_ONES, "1x")


def test_run_examples():
    t = run(EVEN_ONES, "")
    assert t.accepted and t.records == [] and t.final_state == "q0"
    t = run(EVEN_ONES, "11")
    assert t.accepted
    assert [(r.from_state, r.to_state) for r in t.records] == [("q0", "q1"), ("q1", "q0")]
    assert not run(EVEN_ONES, "1").accepted


def test_run_chained_continuity():
    t = run(EVEN_ONES, "0110101", clock_source=iter(range(100)).__next__)
    for a, b in zip(t.records, t.records[1:]):
        assert a.to_state == b.from_state
        assert a.timestamp <= b.timestamp


def test_run_rejects_backward_clock():
    ticks = iter([5, 4])
    with pytest.raises(ValidationError):
        run(EVEN_ONES, "11", ticks.__next__)


def test_dfa_totality_checked():
    with pytest.raises(ValidationError):
        Dfa.build({("a", "0"): "a", ("b", "0"): "a", ("a", "1"): "b"}, "a", [])
    with pytest.raises(ValidationError):
        Dfa.build({("a", "0"): "a"}, "a", ["zz"])


def test_dfa_text_roundtrip():
    text = "# even ones\nstart: q0\naccept: q0\nq0 0 -> q0 / e\nq0 1 -> q1 / o\nq1 0 -> q1 / o\nq1 1 -> q0 / e\n"
    dfa = Dfa.parse(text)
    assert dfa == EVEN_ONES
    assert Dfa.parse(dfa.dumps()) == dfa
    assert dfa.canonical() == EVEN_ONES.canonical()
    with pytest.raises(ValidationError):
        Dfa.parse("q0 0 -> q0\n")
    with pytest.raises(ValidationError):
        Dfa.parse("start: q0\nq0 0 q0\n")


def test_commit_single_record_root():
    trace, root, _, _ = _committed(EVEN_ONES, "1")
    assert root == _h(b"\x00" + trace.records[0].record_hash)


def test_commit_four_records_matches_brute_force():
    trace, root, loc, chain = _committed(EVEN_ONES, "1011")
    assert root == oracle_root(trace.record_hashes)
    assert verify_anchor(chain, loc, root, SIGNER.public_point)


def test_commit_empty_trace_rejected():
    with pytest.raises(EmptyInputError):
        commit_trace(run(EVEN_ONES, ""), Chain(), SIGNER)


def test_commit_anchors_output_chain_head():
    trace, _, loc, chain = _committed(EVEN_ONES, "110")
    height, index = trace.anchors[1]
    tx = chain.block(height).transactions[index]
    assert tx.merkle_root == trace.output_root_chain().head
    assert tx.metadata == b"outputs"
    assert trace.output_root_chain().verify()


def test_verify_trace_honest():
    trace, root, _, chain = _committed(EVEN_ONES, "11")
    assert verify_trace(EVEN_ONES, "11", trace, root, chain)
    assert verify_trace(EVEN_ONES, "11", trace, root, chain, SIGNER.public_point)
    assert not verify_trace(EVEN_ONES, "11", trace, root, chain, KeyPair.from_seed(b"x").public_point)


def test_verify_trace_rejected_word():
    trace, root, _, chain = _committed(EVEN_ONES, "1")
    assert not verify_trace(EVEN_ONES, "1", trace, root, chain)


def test_verify_trace_unanchored():
    chain = Chain()
    append_block(chain, (), 0)
    trace = run(EVEN_ONES, "11", ChainClock(chain))
    root = build_tree(trace.record_hashes).root
    assert not verify_trace(EVEN_ONES, "11", trace, root, chain)


def test_verify_trace_word_mismatch():
    trace, root, _, chain = _committed(EVEN_ONES, "11")
    assert not verify_trace(EVEN_ONES, "00", trace, root, chain)
    assert not verify_trace(EVEN_ONES, "110", trace, root, chain)


def _mutations(rec, dfa):
    states = sorted(dfa.states) + ["zz"]
    symbols = sorted(dfa.alphabet) + ["#"]
    for s in states:
        if s != rec.from_state:
            yield replace(rec, from_state=s)
        if s != rec.to_state:
            yield replace(rec, to_state=s)
    for a in symbols:
        if a != rec.symbol:
            yield replace(rec, symbol=a)
    for dt in (-1, 1, 1000):
        yield replace(rec, timestamp=rec.timestamp + dt)
    for byte in range(0, 32, 7):
        bad = bytearray(rec.record_hash)
        bad[byte] ^= 0x80
        yield replace(rec, record_hash=Digest(bytes(bad)))


def test_mutation_sweep_every_field_every_record():
    word = "1100"
    trace, root, _, chain = _committed(EVEN_ONES, word)
    assert verify_trace(EVEN_ONES, word, trace, root, chain)
    count = 0
    for i, rec in enumerate(trace.records):
        for mutated in _mutations(rec, EVEN_ONES):
            records = list(trace.records)
            records[i] = mutated
            assert not verify_trace(EVEN_ONES, word, replace(trace, records=records), root, chain)
            count += 1
    assert count > 40


def test_mutation_with_rehash_still_caught():
    # a forger who recomputes the record hash still breaks the anchored root
    word = "11"
    trace, root, _, chain = _committed(EVEN_ONES, word)
    rec = trace.records[0]
    t = rec.timestamp + 1
    forged = replace(rec, timestamp=t, record_hash=transition_hash(rec.from_state, rec.symbol, rec.to_state, t))
    assert not verify_trace(EVEN_ONES, word, replace(trace, records=[forged, trace.records[1]]), root, chain)


def test_verify_output_trace():
    trace = run(EVEN_ONES, "1101")
    proofs = [trace.output_proof(i) for i in range(4)]
    assert verify_output_trace(trace.outputs, proofs, trace.per_step_roots)
    assert verify_output_trace([o.canonical() for o in trace.outputs], proofs, trace.per_step_roots)
    assert verify_output_trace([], [], [])
    with pytest.raises(ValidationError):
        verify_output_trace(trace.outputs, proofs[:3], trace.per_step_roots)


def test_verify_output_trace_cross_wired():
    trace = run(EVEN_ONES, "1101")
    proofs = [trace.output_proof(i) for i in range(4)]
    for i, j in itertools.permutations(range(4), 2):
        wired = list(proofs)
        wired[i] = proofs[j]
        assert not verify_output_trace(trace.outputs, wired, trace.per_step_roots)


def test_output_roots_are_cumulative():
    trace = run(EVEN_ONES, "101")
    for n in range(3):
        leaves = [_ce(0x17, o.step, o.from_state, o.symbol, o.to_state, o.output) for o in trace.outputs[: n + 1]]
        assert trace.outputs[n].step == n
        assert trace.per_step_roots[n] == oracle_root(leaves)


def all_dfas(n_states):
    states = [f"s{i}" for i in range(n_states)]
    keys = [(q, a) for q in states for a in "01"]
    for targets in itertools.product(states, repeat=len(keys)):
        delta = {k: (t, "") for k, t in zip(keys, targets)}
        for mask in range(1 << n_states):
            accepting = frozenset(s for i, s in enumerate(states) if mask >> i & 1)
            yield Dfa(frozenset(states), frozenset("01"), delta, "s0", accepting)


def classical_oracle(dfa, word):
    q = dfa.start
    for a in word:
        q = dfa.delta[(q, a)][0]
    return q in dfa.accepting


WORDS = ["".join(w) for n in range(1, 9) for w in itertools.product("01", repeat=n)]


def test_language_soundness_two_states_exhaustive():
    dfas = list(all_dfas(1)) + list(all_dfas(2))
    assert len(dfas) == 2 + 64
    chain = Chain()
    append_block(chain, (), 0)
    for dfa in dfas:
        for w in WORDS:
            trace, root, _, _ = _committed(dfa, w, chain)
            assert verify_trace(dfa, w, trace, root, chain) == classical_oracle(dfa, w)


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 4), st.data())
def test_language_soundness_sampled(n_states, data):
    states = [f"s{i}" for i in range(n_states)]
    delta = {(q, a): (data.draw(st.sampled_from(states)), "") for q in states for a in "01"}
    accepting = frozenset(data.draw(st.sets(st.sampled_from(states))))
    dfa = Dfa(frozenset(states), frozenset("01"), delta, "s0", accepting)
    w = data.draw(st.sampled_from(WORDS))
    trace, root, _, chain = _committed(dfa, w)
    assert verify_trace(dfa, w, trace, root, chain) == classical_oracle(dfa, w)
