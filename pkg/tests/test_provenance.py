import random
from dataclasses import fields, replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from merkle_automaton.crypto import Digest, KeyPair, SignatureValue, digest
from merkle_automaton.errors import BoundsError, DelegationError, MissingReferenceError, RevocationError, ValidationError
from merkle_automaton.ledger import Chain, append_block
from merkle_automaton.memory import commit_fragment, make_provenance
from merkle_automaton.merkle import leaf_hash, node_hash
from merkle_automaton.provenance import (
    DecisionLog,
    DecisionRecord,
    RotationCertificate,
    RotationLedger,
    build_causal_trail,
    check_epoch_validity,
    decision_root,
    delegate,
    epoch_status,
    graph_digest_for,
    record_decision,
    revoke,
    rotate_key,
    trail_sufficient,
    verify_decision_chain,
    verify_fragment_provenance,
    verify_ledger,
    verify_rotation_chain,
)

OPERATOR = KeyPair.from_seed(b"operator")
EMPTY_G = graph_digest_for(None)


def oracle_root(leaves):
    level = [leaf_hash(x) for x in leaves]
    while len(level) > 1:
        nxt = [node_hash(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def counter_hook(state, inp, graph):
    """A counter automaton: adds the input byte, decides on parity."""
    n = int.from_bytes(state, "big") + inp[0]
    return (b"even" if n % 2 == 0 else b"odd"), n.to_bytes(8, "big")


def honest_log(n=5, refs_for=None, knowledge=None, seed=0):
    rng = random.Random(seed)
    chain = Chain()
    append_block(chain, (), 0)
    log = DecisionLog()
    state = (0).to_bytes(8, "big")
    inputs = [bytes([rng.randrange(256)]) for _ in range(n)]
    for i, inp in enumerate(inputs):
        refs = (refs_for or {}).get(i, ())
        g = graph_digest_for(knowledge, refs)
        d, nxt = counter_hook(state, inp, g)
        record_decision(log, d, digest(state), digest(inp), g, 10 + i, fragment_refs=refs)
        state = nxt
    log.anchor(chain, OPERATOR)
    return log, chain, inputs


def audit(log, chain, inputs, records=None, root=None, **kw):
    records = log.records if records is None else records
    return verify_decision_chain(
        records,
        log.root() if root is None else root,
        counter_hook,
        initial_state=(0).to_bytes(8, "big"),
        inputs=inputs,
        chain=chain,
        **kw,
    )


# -- decision log -------------------------------------------------------------


def test_single_record_root():
    log = DecisionLog()
    rec = record_decision(log, b"d", digest(b"s"), digest(b"i"), EMPTY_G, 1)
    assert log.root() == leaf_hash(rec.record_digest)


def test_root_matches_oracle():
    log, _, _ = honest_log(3)
    assert log.root() == oracle_root([r.record_digest for r in log.records])
    for n in range(1, 12):
        log, _, _ = honest_log(n, seed=n)
        assert log.root() == oracle_root([r.record_digest for r in log.records])


def test_delegation():
    log = DecisionLog()
    helper = KeyPair.from_seed(b"helper")
    sub_d = digest(b"sub-decision")
    dg = delegate(b"approve", sub_d, helper)
    rec = record_decision(log, b"approve", digest(b"s"), digest(b"i"), EMPTY_G, 1, [dg])
    assert rec.delegations[0].verify(b"approve")
    assert not rec.delegations[0].verify(b"deny")
    with pytest.raises(DelegationError):
        record_decision(log, b"deny", digest(b"s"), digest(b"i"), EMPTY_G, 2, [dg])
    assert len(log) == 1


def test_record_rejects_malformed_digest():
    with pytest.raises(ValidationError):
        record_decision(DecisionLog(), b"d", b"short", digest(b"i"), EMPTY_G, 1)


def test_periodic_anchoring():
    chain = Chain()
    append_block(chain, (), 0)
    log = DecisionLog(anchor_every=2)
    for i in range(5):
        record_decision(log, b"d", digest(b"s"), digest(bytes([i])), EMPTY_G, i, chain=chain, signer=OPERATOR)
    assert [n for n, _ in log.anchors] == [2, 4]


def test_log_roundtrip():
    log, _, _ = honest_log(4)
    log.records[1] = replace(log.records[1], delegations=(delegate(log.records[1].decision, digest(b"x"), OPERATOR),))
    again = DecisionLog.from_canonical(log.canonical())
    assert again.records == log.records and again.anchors == log.anchors


def test_root_changes_iff_append():
    log, _, _ = honest_log(3)
    before = log.root()
    assert log.root() == before
    record_decision(log, b"x", digest(b"s"), digest(b"i"), EMPTY_G, 99)
    assert log.root() != before


def test_verify_decision_chain_honest():
    log, chain, inputs = honest_log(5)
    verdict = audit(log, chain, inputs, operator_pk=OPERATOR.public_point)
    assert verdict.valid and verdict.liable_party is None


def test_verify_decision_chain_altered_decision():
    log, chain, inputs = honest_log(5)
    bad = list(log.records)
    bad[2] = replace(bad[2], decision=b"tampered")
    verdict = audit(log, chain, inputs, records=bad, root=decision_root(bad))
    assert not verdict.determinism and not verdict.anchored and verdict.state_replay
    assert (2, "determinism") in verdict.failures
    assert verdict.liable_party == "operator"


def test_verify_decision_chain_unanchored():
    log, chain, inputs = honest_log(5)
    record_decision(log, *counter_hook_record(log, inputs))
    verdict = audit(log, chain, inputs + [b"\x01"])
    assert verdict.state_replay and verdict.determinism and verdict.access and not verdict.anchored


def counter_hook_record(log, inputs):
    state = (0).to_bytes(8, "big")
    for inp in inputs:
        _, state = counter_hook(state, inp, EMPTY_G)
    d, _ = counter_hook(state, b"\x01", EMPTY_G)
    return d, digest(state), digest(b"\x01"), EMPTY_G, 50


def test_verify_decision_chain_wrong_operator():
    log, chain, inputs = honest_log(3)
    assert not audit(log, chain, inputs, operator_pk=KeyPair.from_seed(b"x").public_point).anchored


def _mutations(rec):
    yield replace(rec, decision=rec.decision + b"!")
    yield replace(rec, state_digest=digest(rec.state_digest))
    yield replace(rec, input_digest=digest(rec.input_digest))
    yield replace(rec, graph_digest=digest(rec.graph_digest))
    yield replace(rec, committed_at=rec.committed_at + 1)
    yield replace(rec, delegations=(delegate(rec.decision, digest(b"x"), OPERATOR),))
    yield replace(rec, fragment_refs=("00" * 32,))


def test_decision_mutation_sweep():
    log, chain, inputs = honest_log(4)
    assert len(list(_mutations(log.records[0]))) == len(fields(DecisionRecord))
    for i in range(len(log.records)):
        for mutated in _mutations(log.records[i]):
            records = list(log.records)
            records[i] = mutated
            assert not audit(log, chain, inputs, records=records).valid
            # even re-rooted and re-anchored, the content checks catch it
            assert not audit(log, chain, inputs, records=records, root=decision_root(records)).valid


def test_decision_chain_access_condition(env):
    f1 = env.commit(b"fact one", contexts=("ops",))
    f2 = env.commit(b"fact two", t=2)
    knowledge = env.store.dag
    refs = {1: (f1.node_id,), 3: (f1.node_id, f2.node_id)}
    log, _, inputs = honest_log(4, refs_for=refs, knowledge=knowledge)
    log.anchor(env.chain, OPERATOR)
    assert audit(log, env.chain, inputs, knowledge=knowledge).valid
    assert not audit(log, env.chain, inputs).access
    other = Chain()
    append_block(other, (), 0)
    log.anchor(other, OPERATOR)
    # fragments anchored elsewhere do not verify on this chain
    assert not audit(log, other, inputs, knowledge=knowledge).access


# -- causal trails ------------------------------------------------------------


def test_trail_examples():
    log, _, _ = honest_log(5)
    t = build_causal_trail(log.records, 3, {3: [(2, "premise")]})
    assert t.entries == ((2, "premise"),)
    assert build_causal_trail(log.records, 3, {}).entries == ()
    with pytest.raises(BoundsError):
        build_causal_trail(log.records, 5, {})
    with pytest.raises(ValidationError):
        build_causal_trail(log.records, 3, {3: [(4, "premise")]})
    with pytest.raises(ValidationError):
        build_causal_trail(log.records, 3, {3: [(1, "hunch")]})


def oracle_needed(deps, k):
    """Fixed-point over 'needed by something needed'."""
    need = set()
    changed = True
    while changed:
        changed = False
        for j in list(need | {k}):
            for i, _ in deps.get(j, ()):
                if i not in need:
                    need.add(i)
                    changed = True
    return need


@settings(max_examples=200, deadline=None)
@given(st.randoms(use_true_random=False), st.integers(2, 12))
def test_trail_minimal_leave_one_out(rng, n):
    records = [DecisionRecord(bytes([i]), digest(b"s"), digest(b"i"), EMPTY_G, i) for i in range(n)]
    roles = ["premise", "inference-step", "conditional-branch", "delegation"]
    deps = {j: [(i, rng.choice(roles)) for i in range(j) if rng.random() < 0.25] for j in range(n)}
    k = rng.randrange(n)
    trail = build_causal_trail(records, k, deps)
    assert set(trail.indices()) == oracle_needed(deps, k)
    assert trail_sufficient(trail, deps)
    for j in trail.indices():
        assert not trail_sufficient(trail, deps, [x for x in trail.indices() if x != j])


# -- rotation -----------------------------------------------------------------


def keys(n):
    return [KeyPair.from_seed(f"epoch-{i}".encode()) for i in range(n)]


def new_ledger(chain, n_rotations=0):
    ks = keys(n_rotations + 1)
    ledger = RotationLedger("alice", ks[0].public_point, created_at=0)
    ledger.anchor(chain, ks[0])
    for i in range(n_rotations):
        rotate_key(ledger, ks[i], ks[i + 1], 100 * (i + 1), chain=chain)
    return ledger, ks


def fresh_chain():
    c = Chain()
    append_block(c, (), 0)
    return c


def test_single_rotation():
    chain = fresh_chain()
    ledger, ks = new_ledger(chain, 1)
    cert = ledger.certificates[0]
    assert cert.signature_ok() and cert.epoch == 1 and cert.prev_pk == ks[0].public_point
    assert verify_ledger(ledger, chain)


def test_three_rotations_verify():
    chain = fresh_chain()
    ledger, ks = new_ledger(chain, 3)
    assert verify_rotation_chain(ledger.certificates, ks[0].public_point)
    assert verify_ledger(ledger, chain)
    assert ledger.current_pk == ks[3].public_point


def test_rotation_errors():
    chain = fresh_chain()
    ledger, ks = new_ledger(chain, 1)
    with pytest.raises(ValidationError):
        rotate_key(ledger, ks[0], KeyPair.from_seed(b"n"), 300)
    revoke(ledger, ks[1].public_point, 150)
    with pytest.raises(RevocationError):
        rotate_key(ledger, ks[1], KeyPair.from_seed(b"n"), 300)
    with pytest.raises(MissingReferenceError):
        revoke(ledger, KeyPair.from_seed(b"stranger").public_point, 1)


def test_broken_links():
    chain = fresh_chain()
    ledger, ks = new_ledger(chain, 3)
    certs = ledger.certificates
    assert verify_rotation_chain(certs[:2], ks[0].public_point)
    assert not verify_rotation_chain([certs[0], certs[2]], ks[0].public_point)
    assert not verify_rotation_chain(certs, ks[1].public_point)


def _cert_mutations(c):
    other = KeyPair.from_seed(b"other")
    yield replace(c, epoch=c.epoch + 1)
    yield replace(c, prev_pk=other.public_point)
    yield replace(c, new_pk=other.public_point)
    yield replace(c, rotated_at=c.rotated_at + 1)
    yield replace(c, cert_sig=SignatureValue(c.cert_sig.data[:32] + bytes(32), c.cert_sig.signer_public))
    yield replace(c, horizon=c.horizon + 1)


def test_cert_field_mutation_sweep():
    chain = fresh_chain()
    ledger, ks = new_ledger(chain, 3)
    root = ledger.root()
    proofs = [ledger.inclusion(e) for e in range(1, 4)]
    assert verify_rotation_chain(ledger.certificates, ks[0].public_point, root, proofs)
    assert len(list(_cert_mutations(ledger.certificates[0]))) == len(fields(RotationCertificate))
    for i in range(3):
        for m in _cert_mutations(ledger.certificates[i]):
            certs = list(ledger.certificates)
            certs[i] = m
            assert not verify_rotation_chain(certs, ks[0].public_point, root, proofs)


def test_ledger_roundtrip():
    chain = fresh_chain()
    ledger, ks = new_ledger(chain, 2)
    revoke(ledger, ks[0].public_point, 5, chain=chain, signer=ks[2])
    again = RotationLedger.from_canonical(ledger.canonical())
    assert again == ledger and verify_ledger(again, chain)


def test_ledger_tamper_detected():
    chain = fresh_chain()
    ledger, _ = new_ledger(chain, 2)
    ledger.revocations.append((Digest(bytes(32)), 1))
    assert not verify_ledger(ledger, chain)


def test_epoch_validity_boundaries():
    chain = fresh_chain()
    ledger, ks = new_ledger(chain, 2)
    c = ledger.certificates[0]
    pk = ks[1].public_point
    assert check_epoch_validity(ledger, pk, c.rotated_at)
    assert check_epoch_validity(ledger, pk, c.rotated_at + c.horizon)
    assert not check_epoch_validity(ledger, pk, c.rotated_at + c.horizon + 1)
    assert epoch_status(ledger, pk, c.rotated_at + c.horizon + 1) == "historical"
    assert epoch_status(ledger, pk, c.rotated_at - 1) == "premature"
    revoke(ledger, pk, 500)
    assert check_epoch_validity(ledger, pk, 500)
    assert not check_epoch_validity(ledger, pk, 501)
    assert epoch_status(ledger, pk, 501) == "revoked"
    with pytest.raises(MissingReferenceError):
        check_epoch_validity(ledger, KeyPair.from_seed(b"nobody").public_point, 1)


# -- fragment provenance ------------------------------------------------------


def provenance_fragment(env, ledger, ks, epoch, data=b"observation", claim=None):
    prov = make_provenance(data, b"sensor", 1000 + epoch, ks[epoch], claim if claim is not None else epoch)
    return commit_fragment(env.store, data, prov, 1, env.shared, env.chain, context=env.context, signer=env.agent)


def test_fragment_provenance_after_rotations(env):
    ledger, ks = new_ledger(env.chain, 2)
    f = provenance_fragment(env, ledger, ks, 2)
    assert verify_fragment_provenance(f, b"observation", ledger, env.chain)
    assert not verify_fragment_provenance(f, b"other", ledger, env.chain)


def test_fragment_provenance_wrong_epoch_claim(env):
    ledger, ks = new_ledger(env.chain, 2)
    f = provenance_fragment(env, ledger, ks, 1, claim=2)
    assert not verify_fragment_provenance(f, b"observation", ledger, env.chain)
    f = provenance_fragment(env, ledger, ks, 1, claim=7)
    assert not verify_fragment_provenance(f, b"observation", ledger, env.chain)


def test_fragment_provenance_truncated_chain(env):
    ledger, ks = new_ledger(env.chain, 2)
    f = provenance_fragment(env, ledger, ks, 2)
    ledger.certificates = ledger.certificates[1:]
    assert not verify_fragment_provenance(f, b"observation", ledger, env.chain)


def test_fragment_provenance_revoked_before_use(env):
    ledger, ks = new_ledger(env.chain, 1)
    f = provenance_fragment(env, ledger, ks, 1)
    revoke(ledger, ks[1].public_point, 2000, chain=env.chain, signer=ks[1])
    assert verify_fragment_provenance(f, b"observation", ledger, env.chain)
    revoke(ledger, ks[1].public_point, 10, chain=env.chain, signer=ks[1])
    assert not verify_fragment_provenance(f, b"observation", ledger, env.chain)


def test_immutability_under_rotation(env):
    ledger, ks = new_ledger(env.chain, 0)
    more = keys(6)
    committed = []
    for e in range(5):
        committed.append(provenance_fragment(env, ledger, more, e, data=f"obs {e}".encode()))
        for f, i in zip(committed, range(len(committed))):
            assert verify_fragment_provenance(f, f"obs {i}".encode(), ledger, env.chain)
        rotate_key(ledger, more[e], more[e + 1], 100 * (e + 1), chain=env.chain)
    for i, f in enumerate(committed):
        assert verify_fragment_provenance(f, f"obs {i}".encode(), ledger, env.chain)
