"""Command-line front end over a workspace directory.

Every command prints one JSON document on stdout; logs go to stderr.
Exit codes: 0 success, 1 a verification (or query) came back false,
2 any other error, 64 usage error.

The workspace defaults to ``$MERKLE_AUTOMATON_WORKSPACE`` or the current
directory and holds::

    workspace.json   config (median window, lattice size, policy id)
    identity.key     32-byte root seed, hex; every key is derived from it
    chain.bin        the simulated chain
    store.log        the knowledge store record log
    aorg.bin         the reasoning graph
    decisions.bin    the decision log; audit.json keeps inputs and annotations
    rotation.bin     the identity's rotation ledger
    traces.json      committed automaton traces, keyed by root
    zk.json          salted commitments made with ``zk commit``
"""

from __future__ import annotations

import argparse
import base64
import fcntl
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Any

from .access import (
    AccessContext,
    Deny,
    Lattice,
    access_fragment,
    issue_credential,
    prove_level,
    query_fingerprint,
    verify_level,
)
from .automaton import Dfa, ExecutionTrace, OutputEvent, TransitionRecord, commit_trace, run, verify_trace
from .crypto import Digest, KeyPair, SharedSecret, digest, ecdh, hkdf, random_bytes
from .errors import MerkleAutomatonError, VerificationGateError, WorkspaceError
from .ledger import Chain, anchor_and_seal, append_block
from .memory import (
    KnowledgeStore,
    Modality,
    apply,
    closure,
    commit_fragment,
    diff,
    make_provenance,
    verify_fragment,
)
from .merkle import build_tree, commitment_for
from .provenance import (
    DecisionLog,
    RotationLedger,
    build_causal_trail,
    epoch_status,
    graph_digest_for,
    record_decision,
    revoke,
    rotate_key,
    verify_decision_chain,
    verify_ledger,
    verify_rotation_chain,
)
from .reasoning import Aorg, Statement, add_node, check_output, entails, make_output, parse
from .zkmem import CombinedProof, HidingInclusionProof, combine, verify_combined, zk_prove_inclusion, zk_verify_inclusion

log = logging.getLogger("merkle_automaton")

ENV_WORKSPACE = "MERKLE_AUTOMATON_WORKSPACE"
SCHEMA_VERSION = 1
EXIT_OK, EXIT_FALSE, EXIT_ERROR, EXIT_USAGE = 0, 1, 2, 64


class UsageError(Exception):
    pass


class VerificationFalse(Exception):
    """Carries the JSON body of a negative verification result."""

    def __init__(self, body: dict):
        super().__init__("verification false")
        self.body = body


def _hex(b: bytes) -> str:
    return bytes(b).hex()


def _unhex(s: str, what: str = "value") -> bytes:
    try:
        return bytes.fromhex(s)
    except ValueError:
        raise UsageError(f"{what} must be hex") from None


def _text(b: bytes) -> dict:
    try:
        return {"text": b.decode("utf-8")}
    except UnicodeDecodeError:
        return {"base64": base64.b64encode(b).decode()}


# -- workspace ----------------------------------------------------------------


class Workspace:
    def __init__(self, root: Path):
        self.root = root
        cfg_path = root / "workspace.json"
        if not cfg_path.exists():
            raise WorkspaceError(f"no workspace at {root} (run init)")
        self.config = json.loads(cfg_path.read_text())
        self.seed = bytes.fromhex((root / "identity.key").read_text().strip())
        self.lattice = Lattice(self.config["l_max"])
        self.chain = Chain.load(root / "chain.bin")
        self.store = KnowledgeStore.open(root / "store.log", self.lattice)
        self._aorg: Aorg | None = None
        self._decisions: DecisionLog | None = None
        self._rotation: RotationLedger | None = None

    # keys are all derived from the root seed
    def derive(self, label: str, n: int = 0) -> bytes:
        return hkdf(self.seed, None, label.encode() + n.to_bytes(8, "big"), 32)

    def epoch_key(self, epoch: int) -> KeyPair:
        return KeyPair.from_seed(self.derive("identity-epoch", epoch))

    @property
    def signer(self) -> KeyPair:
        return self.epoch_key(self.rotation.epoch)

    @property
    def shared(self) -> SharedSecret:
        agent = KeyPair.from_seed(self.derive("storage-agent"))
        holder = KeyPair.from_seed(self.derive("storage-holder"))
        return ecdh(agent.secret_scalar, holder.public_point)

    @property
    def context(self) -> AccessContext:
        policy = self.config["policy"]
        return AccessContext(0, query_fingerprint(policy), digest(b"workspace"), policy.encode())

    def path(self, name: str) -> Path:
        return self.root / name

    @property
    def aorg(self) -> Aorg:
        if self._aorg is None:
            p = self.path("aorg.bin")
            self._aorg = Aorg.from_canonical(p.read_bytes()) if p.exists() else Aorg()
        return self._aorg

    @property
    def decisions(self) -> DecisionLog:
        if self._decisions is None:
            p = self.path("decisions.bin")
            self._decisions = DecisionLog.from_canonical(p.read_bytes()) if p.exists() else DecisionLog()
        return self._decisions

    @property
    def rotation(self) -> RotationLedger:
        if self._rotation is None:
            p = self.path("rotation.bin")
            if p.exists():
                self._rotation = RotationLedger.from_canonical(p.read_bytes())
            else:
                self._rotation = RotationLedger("self", self.epoch_key(0).public_point)
        return self._rotation

    def read_json(self, name: str, default: Any) -> Any:
        p = self.path(name)
        return json.loads(p.read_text()) if p.exists() else default

    def write_json(self, name: str, obj: Any) -> None:
        _atomic_write(self.path(name), json.dumps(obj, sort_keys=True, indent=1).encode())

    def save_chain(self) -> None:
        _atomic_write(self.path("chain.bin"), self.chain.to_bytes())

    def save_aorg(self) -> None:
        _atomic_write(self.path("aorg.bin"), self.aorg.canonical())

    def save_decisions(self) -> None:
        _atomic_write(self.path("decisions.bin"), self.decisions.canonical())

    def save_rotation(self) -> None:
        _atomic_write(self.path("rotation.bin"), self.rotation.canonical())

    def fragment(self, node_id: str):
        return self.store.dag.require(node_id)

    def plaintext(self, node_id: str) -> bytes:
        f = self.fragment(node_id)
        out = access_fragment(f, self.shared, [f.level], self.context, self.chain, self.lattice)
        if isinstance(out, Deny):
            raise VerificationFalse({"digest": node_id, "granted": False, "reason": out.reason})
        return out

    def digests(self) -> dict:
        return {
            "chain_digest": _hex(digest(self.chain.to_bytes())),
            "store_digest": _hex(self.store.digest()),
            "height": len(self.chain) - 1,
        }


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


@contextmanager
def _locked(root: Path):
    """Exclusive write lock on the workspace for the duration of a command."""
    with open(root / ".lock", "a+") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def _workspace_root(args) -> Path:
    return Path(args.workspace or os.environ.get(ENV_WORKSPACE) or ".").resolve()


# -- commands -----------------------------------------------------------------


def cmd_init(args) -> dict:
    root = _workspace_root(args)
    root.mkdir(parents=True, exist_ok=True)
    if (root / "workspace.json").exists() and not args.force:
        raise WorkspaceError(f"workspace already exists at {root}; pass --force to overwrite")
    if args.median_window < 1:
        raise UsageError("--median-window must be >= 1")
    Lattice(args.l_max)
    for name in ("store.log", "aorg.bin", "decisions.bin", "rotation.bin", "audit.json", "traces.json", "zk.json"):
        (root / name).unlink(missing_ok=True)
    seed = digest(args.seed.encode()) if args.seed is not None else random_bytes(32)
    (root / "identity.key").write_text(seed.hex() + "\n")
    config = {"schema": SCHEMA_VERSION, "median_window": args.median_window, "l_max": args.l_max, "policy": args.policy}
    (root / "workspace.json").write_text(json.dumps(config, sort_keys=True, indent=1) + "\n")
    chain = Chain(median_window=args.median_window)
    append_block(chain, (), 0)
    chain.save(root / "chain.bin")
    (root / "store.log").write_bytes(b"")
    ws = Workspace(root)
    return {"workspace": str(root), "height": 0, "identity": _hex(ws.signer.public_point), **ws.digests()}


def cmd_status(ws: Workspace, args) -> dict:
    return {
        **ws.digests(),
        "fragments": len(ws.store.dag),
        "aorg_nodes": len(ws.aorg),
        "decisions": len(ws.decisions),
        "epoch": ws.rotation.epoch,
    }


# chain


def _block_json(b) -> dict:
    return {
        "height": b.height,
        "prev_header_hash": _hex(b.prev_header_hash),
        "timestamp": b.timestamp,
        "header_hash": _hex(b.header_hash),
        "transactions": [
            {
                "epoch_id": tx.epoch_id,
                "merkle_root": _hex(tx.merkle_root),
                "signature": _hex(tx.signature),
                "metadata": tx.metadata.decode("utf-8", "replace"),
                "tag": _hex(tx.tag),
            }
            for tx in b.transactions
        ],
    }


def cmd_chain_verify(ws: Workspace, args) -> dict:
    body = {"valid": ws.chain.verify(), "length": len(ws.chain)}
    if not body["valid"]:
        raise VerificationFalse(body)
    return body


def cmd_chain_show(ws: Workspace, args) -> dict:
    height = len(ws.chain) - 1 if args.height is None else args.height
    return _block_json(ws.chain.block(height))


def cmd_chain_anchor(ws: Workspace, args) -> dict:
    root = _unhex(args.root, "root")
    if len(root) != 32:
        raise UsageError("root must be 32 bytes")
    loc = anchor_and_seal(ws.chain, root, len(ws.chain), ws.signer, args.metadata.encode(), args.timestamp)
    ws.save_chain()
    return {"root": args.root, "locator": list(loc)}


# mem


def _observed_at(ws: Workspace, args) -> int:
    return args.time if args.time is not None else ws.chain.next_timestamp()


def _read_stdin() -> bytes:
    return sys.stdin.buffer.read()


def _modalities(items) -> tuple[Modality, ...]:
    out = []
    for item in items or ():
        kind, _, value = item.partition("=")
        out.append(Modality(kind, value))
    return tuple(out)


def _fragment_json(f) -> dict:
    return {
        "digest": f.node_id,
        "level": f.level,
        "locator": list(f.anchor_locator),
        "source": f.provenance.source_id.decode("utf-8", "replace"),
        "observed_at": f.provenance.observed_at,
        "originator": _hex(f.provenance.originator),
        "epoch": f.provenance.epoch,
        "contexts": list(f.contexts),
        "modality": [{"kind": m.kind, "value": m.value} for m in f.modality],
    }


def _commit(ws: Workspace, data: bytes, args):
    prov = make_provenance(data, args.source.encode(), _observed_at(ws, args), ws.signer, ws.rotation.epoch)
    return commit_fragment(
        ws.store,
        data,
        prov,
        args.level,
        ws.shared,
        ws.chain,
        context=ws.context,
        signer=ws.signer,
        modality=_modalities(args.modality),
        contexts=args.context or (),
    )


def cmd_mem_commit(ws: Workspace, args) -> dict:
    f = _commit(ws, _read_stdin(), args)
    ws.save_chain()
    return _fragment_json(f)


def cmd_mem_verify(ws: Workspace, args) -> dict:
    ok = verify_fragment(ws.fragment(args.digest), ws.chain)
    body = {"digest": args.digest, "valid": ok}
    if not ok:
        raise VerificationFalse(body)
    return body


def cmd_mem_read(ws: Workspace, args) -> dict:
    f = ws.fragment(args.digest)
    if args.clearance < f.level:
        raise VerificationFalse({"digest": args.digest, "granted": False, "reason": "insufficient clearance"})
    return {"digest": args.digest, "granted": True, **_text(ws.plaintext(args.digest))}


def cmd_mem_refine(ws: Workspace, args) -> dict:
    parent = ws.plaintext(args.parent)
    child = _read_stdin()
    delta = diff(parent, child)
    if apply(parent, delta) != child:
        raise MerkleAutomatonError("delta does not reproduce the child")
    prov = make_provenance(child, args.source.encode(), _observed_at(ws, args), ws.signer, ws.rotation.epoch)
    f = commit_fragment(
        KnowledgeStore(None, ws.lattice),
        child,
        prov,
        args.level,
        ws.shared,
        ws.chain,
        context=ws.context,
        signer=ws.signer,
        contexts=args.context or (),
    )
    ws.store.refine(args.parent, f, delta)
    ws.save_chain()
    return {**_fragment_json(f), "parent": args.parent, "edits": len(delta.edits)}


def cmd_mem_closure(ws: Workspace, args) -> dict:
    return {"digest": args.digest, "closure": closure(ws.store.dag, args.digest)}


def cmd_mem_list(ws: Workspace, args) -> dict:
    return {"fragments": [_fragment_json(f) for _, f in sorted(ws.store.fragments.items())]}


# automaton


def _word(args) -> list[str]:
    return args.word.split(args.sep) if args.sep else list(args.word)


def _trace_json(dfa: Dfa, word: list[str], trace: ExecutionTrace, signer: bytes) -> dict:
    return {
        "dfa": dfa.dumps(),
        "word": word,
        "start": trace.start,
        "records": [[r.from_state, r.symbol, r.to_state, r.timestamp, _hex(r.record_hash)] for r in trace.records],
        "outputs": [[o.step, o.from_state, o.symbol, o.to_state, o.output] for o in trace.outputs],
        "per_step_roots": [_hex(r) for r in trace.per_step_roots],
        "anchors": [list(a) for a in trace.anchors],
        "accepted": trace.accepted,
        "signer": _hex(signer),
    }


def _trace_from_json(obj: dict) -> ExecutionTrace:
    return ExecutionTrace(
        obj["start"],
        [TransitionRecord(a, b, c, t, Digest(bytes.fromhex(h))) for a, b, c, t, h in obj["records"]],
        [OutputEvent(*o) for o in obj["outputs"]],
        [Digest(bytes.fromhex(r)) for r in obj["per_step_roots"]],
        [tuple(a) for a in obj["anchors"]],
        obj["accepted"],
    )


def cmd_automaton_run(ws: Workspace, args) -> dict:
    dfa = Dfa.load(args.dfa)
    word = _word(args)
    trace = run(dfa, word, ws.chain.next_timestamp())
    root, loc = commit_trace(trace, ws.chain, ws.signer)
    traces = ws.read_json("traces.json", {})
    traces[_hex(root)] = _trace_json(dfa, word, trace, ws.signer.public_point)
    ws.write_json("traces.json", traces)
    ws.save_chain()
    return {
        "root": _hex(root),
        "locator": list(loc),
        "accepted": trace.accepted,
        "final_state": trace.final_state,
        "outputs": [o.output for o in trace.outputs],
    }


def cmd_automaton_verify(ws: Workspace, args) -> dict:
    traces = ws.read_json("traces.json", {})
    if args.root not in traces:
        raise WorkspaceError(f"no committed trace with root {args.root}")
    obj = traces[args.root]
    dfa = Dfa.load(args.dfa) if args.dfa else Dfa.parse(obj["dfa"])
    word = _word(args) if args.word is not None else obj["word"]
    ok = verify_trace(dfa, word, _trace_from_json(obj), bytes.fromhex(args.root), ws.chain, bytes.fromhex(obj["signer"]))
    body = {"root": args.root, "accepted": ok}
    if not ok:
        raise VerificationFalse(body)
    return body


# reason


def _parents(items) -> list[tuple[str, str]]:
    out = []
    for item in items or ():
        node, sep, rule = item.partition(":")
        if not sep:
            raise UsageError(f"--parent wants NODE:RULE, got {item!r}")
        out.append((node, rule))
    return out


def _clock(ws: Workspace) -> int:
    return ws.chain.tip.timestamp


def cmd_reason_add(ws: Workspace, args) -> dict:
    node = add_node(ws.aorg, args.proposition, _parents(args.parent), ws.signer, _clock(ws), args.temporal)
    ws.save_aorg()
    return {"node": node, "root": _hex(ws.aorg.root())}


def _statements(ws: Workspace, digests) -> list[Statement]:
    return [Statement(parse(ws.plaintext(d).decode("utf-8")), ws.fragment(d)) for d in digests or ()]


def _record_derivation(ws: Workspace, derivation) -> str:
    ids: dict = {}
    clock = _clock(ws)
    by_prop = {n.proposition: nid for nid, n in ws.aorg.nodes.items() if not n.temporal}
    for p in derivation.premises:
        ids[p] = by_prop.get(p) or add_node(ws.aorg, p, [], ws.signer, clock)
    for rule_id, prem, concl in derivation.steps:
        if concl in by_prop and concl not in ids:
            ids[concl] = by_prop[concl]
            continue
        ids[concl] = add_node(ws.aorg, concl, [(ids[q], rule_id) for q in prem], ws.signer, clock)
    return ids[derivation.steps[-1][2]] if derivation.steps else ids[derivation.premises[0]]


def cmd_reason_entail(ws: Workspace, args) -> dict:
    kb = [parse(f) for f in args.fact or ()] + _statements(ws, args.statement)
    query = parse(args.query)
    d = entails(kb, query, ws.chain)
    body: dict = {"query": str(query), "entailed": d is not None}
    if d is None:
        raise VerificationFalse(body)
    body["premises"] = [str(p) for p in d.premises]
    body["steps"] = [{"rule": r, "premises": [str(p) for p in prem], "conclusion": str(c)} for r, prem, c in d.steps]
    if args.record:
        body["node"] = _record_derivation(ws, d)
        body["root"] = _hex(ws.aorg.root())
        ws.save_aorg()
    return body


def cmd_reason_verify_output(ws: Workspace, args) -> dict:
    ws.aorg.require(args.node)
    out = make_output(ws.aorg, args.node, ws.signer, _clock(ws), args.depth)
    verdict = check_output(out, ws.aorg.root(), ws.signer.public_point, args.rule)
    body = {
        "node": args.node,
        "proposition": str(out.proposition),
        "valid": verdict.valid,
        "checks": {
            "closure": verdict.closure,
            "inclusion": verdict.inclusion,
            "acyclic": verdict.acyclic,
            "certificates": verdict.certificates,
            "signature": verdict.signature,
        },
        "trace": [e.node.node_id for e in out.trace],
    }
    if not verdict.valid:
        raise VerificationFalse(body)
    return body


# audit


def _audit_hook(ws: Workspace):
    """Decision = whether the query follows from the referenced statements."""

    def hook(state: bytes, inp: bytes, graph: bytes) -> tuple[bytes, bytes]:
        spec = json.loads(inp)
        try:
            d = entails(_statements(ws, spec["statements"]), parse(spec["query"]), ws.chain)
            decision = b"entailed" if d is not None else b"not-entailed"
        except (VerificationGateError, VerificationFalse):
            decision = b"gate-failed"
        return decision, digest(state + decision)

    return hook


def _audit_input(query: str, statements) -> bytes:
    return json.dumps({"query": query, "statements": sorted(statements or ())}, sort_keys=True).encode()


def cmd_audit_record(ws: Workspace, args) -> dict:
    audit = ws.read_json("audit.json", {"inputs": [], "dependencies": {}, "anchor_signers": []})
    hook = _audit_hook(ws)
    state = b""
    for inp in audit["inputs"]:
        _, state = hook(state, base64.b64decode(inp), b"")
    inp = _audit_input(args.query, args.statement)
    refs = sorted(args.statement or ())
    g = graph_digest_for(ws.store.dag, refs)
    decision, _ = hook(state, inp, g)
    k = len(ws.decisions)
    deps = []
    for item in args.depends or ():
        j, _, role = item.partition(":")
        deps.append([int(j), role or "premise"])
    rec = record_decision(ws.decisions, decision, digest(state), digest(inp), g, _clock(ws), fragment_refs=refs)
    loc = ws.decisions.anchor(ws.chain, ws.signer)
    audit["inputs"].append(base64.b64encode(inp).decode())
    audit["dependencies"][str(k)] = deps
    audit["anchor_signers"].append(_hex(ws.signer.public_point))
    build_causal_trail(ws.decisions.records, k, _deps(audit))
    ws.write_json("audit.json", audit)
    ws.save_decisions()
    ws.save_chain()
    return {
        "index": k,
        "decision": rec.decision.decode(),
        "record_digest": _hex(rec.record_digest),
        "root": _hex(ws.decisions.root()),
        "locator": list(loc),
    }


def _deps(audit: dict) -> dict:
    return {int(k): [(j, r) for j, r in v] for k, v in audit["dependencies"].items()}


def cmd_audit_verify(ws: Workspace, args) -> dict:
    audit = ws.read_json("audit.json", {"inputs": [], "dependencies": {}, "anchor_signers": []})
    if not ws.decisions.records:
        raise WorkspaceError("decision log is empty")
    signer = bytes.fromhex(audit["anchor_signers"][-1]) if audit["anchor_signers"] else None
    verdict = verify_decision_chain(
        ws.decisions.records,
        ws.decisions.root(),
        _audit_hook(ws),
        initial_state=b"",
        inputs=[base64.b64decode(i) for i in audit["inputs"]],
        chain=ws.chain,
        knowledge=ws.store.dag,
        operator_pk=signer,
    )
    body = {
        "valid": verdict.valid,
        "state_replay": verdict.state_replay,
        "access": verdict.access,
        "determinism": verdict.determinism,
        "anchored": verdict.anchored,
        "failures": [list(f) for f in verdict.failures],
        "liable_party": verdict.liable_party,
        "records": len(ws.decisions),
    }
    if not verdict.valid:
        raise VerificationFalse(body)
    return body


def cmd_audit_trail(ws: Workspace, args) -> dict:
    audit = ws.read_json("audit.json", {"inputs": [], "dependencies": {}, "anchor_signers": []})
    trail = build_causal_trail(ws.decisions.records, args.k, _deps(audit))
    return {"k": args.k, "entries": [{"index": j, "role": r} for j, r in trail.entries]}


# id


def cmd_id_show(ws: Workspace, args) -> dict:
    led = ws.rotation
    return {
        "identity": led.identity,
        "epoch": led.epoch,
        "public_key": _hex(led.current_pk),
        "genesis_key": _hex(led.genesis_pk),
        "revocations": [[_hex(k), t] for k, t in led.revocations],
    }


def cmd_id_rotate(ws: Workspace, args) -> dict:
    led = ws.rotation
    old = ws.epoch_key(led.epoch)
    new = ws.epoch_key(led.epoch + 1)
    at = args.at if args.at is not None else ws.chain.next_timestamp()
    cert = rotate_key(led, old, new, at, args.horizon, chain=ws.chain)
    ws.save_rotation()
    ws.save_chain()
    return {
        "epoch": cert.epoch,
        "prev_pk": _hex(cert.prev_pk),
        "new_pk": _hex(cert.new_pk),
        "rotated_at": cert.rotated_at,
        "horizon": cert.horizon,
        "root": _hex(led.root()),
        "locator": list(led.anchor_locator),
    }


def cmd_id_revoke(ws: Workspace, args) -> dict:
    led = ws.rotation
    revoke(led, led.key_at(args.epoch), args.at, chain=ws.chain, signer=ws.signer)
    ws.save_rotation()
    ws.save_chain()
    return {"epoch": args.epoch, "revoked_at": args.at, "root": _hex(led.root())}


def cmd_id_verify_chain(ws: Workspace, args) -> dict:
    led = ws.rotation
    if led.anchor_locator is None:
        ok = led.epoch == 0 and not led.revocations
    else:
        ok = verify_ledger(led, ws.chain)
    ok = ok and verify_rotation_chain(led.certificates, led.genesis_pk)
    body = {"valid": ok, "epochs": led.epoch + 1}
    if not ok:
        raise VerificationFalse(body)
    return body


def cmd_id_status(ws: Workspace, args) -> dict:
    led = ws.rotation
    status = epoch_status(led, led.key_at(args.epoch), args.at)
    body = {"epoch": args.epoch, "at": args.at, "status": status, "valid": status == "valid"}
    if status != "valid":
        raise VerificationFalse(body)
    return body


# zk and access


def cmd_zk_commit(ws: Workspace, args) -> dict:
    zk = ws.read_json("zk.json", {"commitments": []})
    index = len(zk["commitments"])
    salt = ws.derive("zk-salt", index)[:16]
    c = commitment_for(_read_stdin(), salt)
    zk["commitments"].append(_hex(c))
    ws.write_json("zk.json", zk)
    tree = build_tree([bytes.fromhex(x) for x in zk["commitments"]])
    return {"index": index, "commitment": _hex(c), "salt": _hex(salt), "root": _hex(tree.root)}


def cmd_zk_root(ws: Workspace, args) -> dict:
    zk = ws.read_json("zk.json", {"commitments": []})
    if not zk["commitments"]:
        raise WorkspaceError("no commitments yet")
    return {"root": _hex(build_tree([bytes.fromhex(x) for x in zk["commitments"]]).root), "leaves": len(zk["commitments"])}


def _credential(ws: Workspace, clearance: int):
    return issue_credential(ws.derive("level-credential"), ws.lattice.l_max, clearance)


def cmd_zk_prove(ws: Workspace, args) -> dict:
    zk = ws.read_json("zk.json", {"commitments": []})
    tree = build_tree([bytes.fromhex(x) for x in zk["commitments"]])
    proof = zk_prove_inclusion(_read_stdin(), _unhex(args.salt, "salt"), tree, args.context.encode())
    body = {"root": _hex(tree.root), "proof": _hex(proof.to_bytes()), "combined": False}
    if args.level is not None:
        cred = _credential(ws, args.clearance)
        combined = combine(proof, args.level, prove_level(cred, args.level), cred.anchor)
        body.update(proof=_hex(combined.to_bytes()), combined=True, anchor=_hex(cred.anchor), level=args.level)
    return body


def cmd_zk_verify(ws: Workspace, args) -> dict:
    proof = HidingInclusionProof.from_bytes(_unhex(args.proof, "proof"))
    ok = zk_verify_inclusion(proof, _unhex(args.root, "root"), args.context.encode())
    body = {"valid": ok}
    if not ok:
        raise VerificationFalse(body)
    return body


def cmd_zk_verify_combined(ws: Workspace, args) -> dict:
    proof = CombinedProof.from_bytes(_unhex(args.proof, "proof"))
    ok = verify_combined(proof, _unhex(args.root, "root"), _unhex(args.anchor, "anchor"), args.level, args.context.encode())
    body = {"valid": ok}
    if not ok:
        raise VerificationFalse(body)
    return body


def cmd_access_prove_level(ws: Workspace, args) -> dict:
    cred = _credential(ws, args.clearance)
    return {"level": args.level, "proof": _hex(prove_level(cred, args.level)), "anchor": _hex(cred.anchor)}


def cmd_access_verify_level(ws: Workspace, args) -> dict:
    ok = verify_level(_unhex(args.proof, "proof"), _unhex(args.anchor, "anchor"), args.level)
    body = {"valid": ok, "level": args.level}
    if not ok:
        raise VerificationFalse(body)
    return body


def cmd_access_read(ws: Workspace, args) -> dict:
    return cmd_mem_read(ws, args)


# export / import

_EXPORT_FILES = {"chain": "chain.bin", "store": "store.log", "aorg": "aorg.bin"}


def _export_bytes(ws: Workspace, what: str) -> bytes:
    if what == "chain":
        return ws.chain.to_bytes()
    if what == "store":
        return ws.store.to_bytes()
    return ws.aorg.canonical()


def _export_json(ws: Workspace, what: str) -> dict:
    if what == "chain":
        return {
            "chain_id": ws.chain.chain_id,
            "median_window": ws.chain.median_window,
            "blocks": [_block_json(b) for b in ws.chain.blocks],
        }
    if what == "store":
        return {
            "fragments": [_fragment_json(f) for _, f in sorted(ws.store.fragments.items())],
            "edges": [list(e) for e in sorted(ws.store.dag.edges)],
            "store_digest": _hex(ws.store.digest()),
        }
    g = ws.aorg
    return {
        "root": _hex(g.root()) if len(g) else None,
        "nodes": [
            {
                "id": nid,
                "hash": _hex(g.nodes[nid].node_hash),
                "proposition": str(g.nodes[nid].proposition),
                "committed_at": g.nodes[nid].committed_at,
                "parents": [{"node": p, "rule": r} for p, r in g.nodes[nid].parents],
                "proof_sketch": _hex(g.nodes[nid].proof_sketch),
                "author": _hex(g.nodes[nid].author_sig.signer_public),
                "temporal": g.nodes[nid].temporal,
            }
            for nid in g.order
        ],
    }


def cmd_export(ws: Workspace, args) -> dict:
    if args.format == "json":
        doc = _export_json(ws, args.what)
        if args.out:
            Path(args.out).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
            return {"what": args.what, "format": "json", "path": args.out}
        return doc
    if not args.out:
        raise UsageError("binary export needs --out")
    raw = _export_bytes(ws, args.what)
    Path(args.out).write_bytes(raw)
    return {"what": args.what, "format": "binary", "path": args.out, "bytes": len(raw), "digest": _hex(digest(raw))}


def cmd_import(ws: Workspace, args) -> dict:
    raw = Path(args.file).read_bytes()
    target = ws.path(_EXPORT_FILES[args.what])
    if target.exists() and target.stat().st_size and not args.force:
        raise WorkspaceError(f"{target.name} is not empty; pass --force to replace it")
    if args.what == "chain":
        chain = Chain.from_bytes(raw)
        if not chain.verify():
            raise VerificationFalse({"what": "chain", "valid": False})
        body = {"root": _hex(chain.tip.header_hash)}
    elif args.what == "store":
        tmp = target.with_suffix(".import")
        tmp.write_bytes(raw)
        try:
            store = KnowledgeStore.open(tmp, ws.lattice)
        finally:
            tmp.unlink()
        body = {"root": _hex(store.digest())}
    else:
        g = Aorg.from_canonical(raw)
        body = {"root": _hex(g.root()) if len(g) else None}
    _atomic_write(target, raw)
    return {"what": args.what, "digest": _hex(digest(raw)), **body}


# -- argument parsing ---------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="merkle-automaton", description="Hash-committed automata and knowledge stores.")
    p.add_argument("--workspace", "-w", help=f"workspace directory (default ${ENV_WORKSPACE} or .)")
    p.add_argument("--verbose", "-v", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("init", help="create a workspace")
    s.add_argument("--force", action="store_true")
    s.add_argument("--seed", help="derive all keys from this text (reproducible workspaces)")
    s.add_argument("--median-window", type=int, default=11)
    s.add_argument("--l-max", type=int, default=5)
    s.add_argument("--policy", default="default")
    s.set_defaults(func=cmd_init, needs_ws=False)

    s = sub.add_parser("status", help="digests and counts")
    s.set_defaults(func=cmd_status, writes=False)

    chain = sub.add_parser("chain", help="verify, show or anchor on the chain").add_subparsers(dest="sub", required=True)
    s = chain.add_parser("verify")
    s.set_defaults(func=cmd_chain_verify, writes=False)
    s = chain.add_parser("show")
    s.add_argument("--height", type=int)
    s.set_defaults(func=cmd_chain_show, writes=False)
    s = chain.add_parser("anchor")
    s.add_argument("root")
    s.add_argument("--metadata", default="")
    s.add_argument("--timestamp", type=int)
    s.set_defaults(func=cmd_chain_anchor)

    mem = sub.add_parser("mem", help="knowledge store fragments").add_subparsers(dest="sub", required=True)
    for name, func in (("commit", cmd_mem_commit), ("refine", cmd_mem_refine)):
        s = mem.add_parser(name, help="payload on stdin")
        if name == "refine":
            s.add_argument("parent")
        s.add_argument("--level", type=int, required=True)
        s.add_argument("--source", required=True)
        s.add_argument("--time", type=int)
        s.add_argument("--context", action="append")
        if name == "commit":
            s.add_argument("--modality", action="append", help="kind=value")
        s.set_defaults(func=func)
    s = mem.add_parser("verify")
    s.add_argument("digest")
    s.set_defaults(func=cmd_mem_verify, writes=False)
    s = mem.add_parser("read")
    s.add_argument("digest")
    s.add_argument("--clearance", type=int, required=True)
    s.set_defaults(func=cmd_mem_read, writes=False)
    s = mem.add_parser("closure")
    s.add_argument("digest")
    s.set_defaults(func=cmd_mem_closure, writes=False)
    s = mem.add_parser("list")
    s.set_defaults(func=cmd_mem_list, writes=False)

    auto = sub.add_parser("automaton", help="run and verify committed DFA traces").add_subparsers(dest="sub", required=True)
    s = auto.add_parser("run")
    s.add_argument("--dfa", required=True)
    s.add_argument("--word", required=True)
    s.add_argument("--sep")
    s.set_defaults(func=cmd_automaton_run)
    s = auto.add_parser("verify")
    s.add_argument("root")
    s.add_argument("--dfa")
    s.add_argument("--word")
    s.add_argument("--sep")
    s.set_defaults(func=cmd_automaton_verify, writes=False)

    reason = sub.add_parser("reason", help="reasoning graph and entailment").add_subparsers(dest="sub", required=True)
    s = reason.add_parser("add")
    s.add_argument("proposition")
    s.add_argument("--parent", action="append", help="NODE:RULE")
    s.add_argument("--temporal")
    s.set_defaults(func=cmd_reason_add)
    s = reason.add_parser("entail")
    s.add_argument("query")
    s.add_argument("--fact", action="append")
    s.add_argument("--statement", action="append", help="fragment digest whose plaintext is a proposition")
    s.add_argument("--record", action="store_true", help="append the derivation to the reasoning graph")
    s.set_defaults(func=cmd_reason_entail)
    s = reason.add_parser("verify-output")
    s.add_argument("node")
    s.add_argument("--depth", type=int)
    s.add_argument("--rule", action="append")
    s.set_defaults(func=cmd_reason_verify_output, writes=False)

    audit = sub.add_parser("audit", help="decision log and causal trails").add_subparsers(dest="sub", required=True)
    s = audit.add_parser("record")
    s.add_argument("--query", required=True)
    s.add_argument("--statement", action="append")
    s.add_argument("--depends", action="append", help="INDEX:ROLE")
    s.set_defaults(func=cmd_audit_record)
    s = audit.add_parser("verify")
    s.set_defaults(func=cmd_audit_verify, writes=False)
    s = audit.add_parser("trail")
    s.add_argument("--k", type=int, required=True)
    s.set_defaults(func=cmd_audit_trail, writes=False)

    ident = sub.add_parser("id", help="key rotation ledger").add_subparsers(dest="sub", required=True)
    s = ident.add_parser("show")
    s.set_defaults(func=cmd_id_show, writes=False)
    s = ident.add_parser("rotate")
    s.add_argument("--horizon", type=int, default=10**6)
    s.add_argument("--at", type=int)
    s.set_defaults(func=cmd_id_rotate)
    s = ident.add_parser("revoke")
    s.add_argument("--epoch", type=int, required=True)
    s.add_argument("--at", type=int, required=True)
    s.set_defaults(func=cmd_id_revoke)
    s = ident.add_parser("verify-chain")
    s.set_defaults(func=cmd_id_verify_chain, writes=False)
    s = ident.add_parser("status")
    s.add_argument("--epoch", type=int, required=True)
    s.add_argument("--at", type=int, required=True)
    s.set_defaults(func=cmd_id_status, writes=False)

    zk = sub.add_parser("zk", help="hiding inclusion proofs").add_subparsers(dest="sub", required=True)
    s = zk.add_parser("commit", help="payload on stdin")
    s.set_defaults(func=cmd_zk_commit)
    s = zk.add_parser("root")
    s.set_defaults(func=cmd_zk_root, writes=False)
    s = zk.add_parser("prove", help="payload on stdin")
    s.add_argument("--salt", required=True)
    s.add_argument("--context", default="")
    s.add_argument("--level", type=int)
    s.add_argument("--clearance", type=int)
    s.set_defaults(func=cmd_zk_prove, writes=False)
    s = zk.add_parser("verify")
    s.add_argument("--proof", required=True)
    s.add_argument("--root", required=True)
    s.add_argument("--context", default="")
    s.set_defaults(func=cmd_zk_verify, writes=False)
    s = zk.add_parser("verify-combined")
    s.add_argument("--proof", required=True)
    s.add_argument("--root", required=True)
    s.add_argument("--anchor", required=True)
    s.add_argument("--level", type=int, required=True)
    s.add_argument("--context", default="")
    s.set_defaults(func=cmd_zk_verify_combined, writes=False)

    acc = sub.add_parser("access", help="level credentials and gated reads").add_subparsers(dest="sub", required=True)
    s = acc.add_parser("prove-level")
    s.add_argument("--clearance", type=int, required=True)
    s.add_argument("--level", type=int, required=True)
    s.set_defaults(func=cmd_access_prove_level, writes=False)
    s = acc.add_parser("verify-level")
    s.add_argument("--proof", required=True)
    s.add_argument("--anchor", required=True)
    s.add_argument("--level", type=int, required=True)
    s.set_defaults(func=cmd_access_verify_level, writes=False)
    s = acc.add_parser("read")
    s.add_argument("digest")
    s.add_argument("--clearance", type=int, required=True)
    s.set_defaults(func=cmd_access_read, writes=False)

    s = sub.add_parser("export", help="write chain, store or graph")
    s.add_argument("what", choices=sorted(_EXPORT_FILES))
    s.add_argument("--format", choices=("binary", "json"), default="binary")
    s.add_argument("--out")
    s.set_defaults(func=cmd_export, writes=False)

    s = sub.add_parser("import", help="replace chain, store or graph from a file")
    s.add_argument("what", choices=sorted(_EXPORT_FILES))
    s.add_argument("file")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_import)
    return p


def _emit(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")
    sys.stdout.flush()


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        if not getattr(args, "needs_ws", True):
            _emit(args.func(args))
            return EXIT_OK
        root = _workspace_root(args)
        if not (root / "workspace.json").exists():
            raise WorkspaceError(f"no workspace at {root} (run init)")
        if getattr(args, "writes", True):
            with _locked(root):
                body = args.func(Workspace(root), args)
        else:
            body = args.func(Workspace(root), args)
        _emit(body)
        return EXIT_OK
    except VerificationFalse as exc:
        _emit(exc.body)
        return EXIT_FALSE
    except VerificationGateError as exc:
        _emit({"valid": False, "error": str(exc)})
        return EXIT_FALSE
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except (MerkleAutomatonError, OSError, ValueError, KeyError) as exc:
        body = {"error": type(exc).__name__, "message": str(exc)}
        witness = getattr(exc, "witness", None)
        if witness is not None:
            body["witness"] = [str(w) for w in witness]
        log.debug("command failed", exc_info=True)
        _emit(body)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
