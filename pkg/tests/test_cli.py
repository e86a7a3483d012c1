import base64
import io
import json
import sys
from pathlib import Path

import pytest

from merkle_automaton.cli import main
from merkle_automaton.ledger import Chain
from merkle_automaton.memory import KnowledgeStore
from merkle_automaton.reasoning import Aorg

EVEN_ONES = "start: e\naccept: e\ne 0 -> e\ne 1 -> o / flip\no 0 -> o\no 1 -> e / flip\n"


class Cli:
    def __init__(self, root: Path, capsys, monkeypatch):
        self.root = root
        self.capsys = capsys
        self.monkeypatch = monkeypatch

    def __call__(self, *argv, stdin: bytes = b""):
        self.monkeypatch.setattr(sys, "stdin", io.TextIOWrapper(io.BytesIO(stdin)))
        self.capsys.readouterr()
        code = main(["--workspace", str(self.root), *argv])
        out = self.capsys.readouterr().out.strip()
        return code, (json.loads(out) if out else None)


@pytest.fixture
def cli(tmp_path, capsys, monkeypatch):
    c = Cli(tmp_path / "ws", capsys, monkeypatch)
    assert c("init", "--seed", "fixture")[0] == 0
    return c


def test_init_and_reinit(cli):
    code, body = cli("chain", "verify")
    assert code == 0 and body == {"valid": True, "length": 1}
    code, body = cli("init", "--seed", "x")
    assert code == 2 and body["error"] == "WorkspaceError"
    assert cli("init", "--seed", "x", "--force")[0] == 0


def test_missing_workspace(tmp_path, capsys, monkeypatch):
    c = Cli(tmp_path / "nowhere", capsys, monkeypatch)
    assert c("chain", "verify")[0] == 2


def test_env_var_workspace(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("MERKLE_AUTOMATON_WORKSPACE", str(tmp_path / "envws"))
    assert main(["init", "--seed", "e"]) == 0
    assert (tmp_path / "envws" / "chain.bin").exists()


def test_usage_errors(cli):
    assert cli("frobnicate")[0] == 64
    assert cli("mem", "commit")[0] == 64
    assert cli("zk", "verify", "--proof", "zz", "--root", "00")[0] == 64


def test_mem_commit_schema(cli):
    code, body = cli("mem", "commit", "--level", "2", "--source", "doc1", stdin=b"payload")
    assert code == 0
    assert len(body["digest"]) == 64 and len(body["locator"]) == 2 and body["level"] == 2
    assert cli("mem", "verify", body["digest"])[0] == 0
    code, body2 = cli("mem", "read", body["digest"], "--clearance", "2")
    assert code == 0 and body2["text"] == "payload"
    assert cli("mem", "read", body["digest"], "--clearance", "1")[0] == 1


def test_mem_verify_tampered_store(cli):
    _, body = cli("mem", "commit", "--level", "1", "--source", "s", stdin=b"some payload bytes")
    store = KnowledgeStore.open(cli.root / "store.log")
    ct = store.dag.nodes[body["digest"]].ciphertext.ciphertext
    raw = bytearray((cli.root / "store.log").read_bytes())
    pos = bytes(raw).index(ct)
    raw[pos] ^= 1
    (cli.root / "store.log").write_bytes(bytes(raw))
    code, out = cli("mem", "verify", body["digest"])
    assert code == 1 and out["valid"] is False


def test_mem_refine_and_closure(cli):
    _, a = cli("mem", "commit", "--level", "1", "--source", "s", stdin=b"version one")
    code, b = cli("mem", "refine", a["digest"], "--level", "1", "--source", "s", stdin=b"version two!")
    assert code == 0 and b["parent"] == a["digest"]
    _, c = cli("mem", "closure", b["digest"])
    assert c["closure"] == sorted([a["digest"], b["digest"]])
    assert cli("mem", "read", b["digest"], "--clearance", "1")[1]["text"] == "version two!"


def test_automaton_run_verify(cli, tmp_path):
    dfa = tmp_path / "even.dfa"
    dfa.write_text(EVEN_ONES)
    code, body = cli("automaton", "run", "--dfa", str(dfa), "--word", "0110")
    assert code == 0 and body["accepted"] and body["outputs"] == ["", "flip", "flip", ""]
    assert cli("automaton", "verify", body["root"])[0] == 0
    assert cli("automaton", "verify", body["root"], "--word", "0111")[0] == 1
    _, rej = cli("automaton", "run", "--dfa", str(dfa), "--word", "01")
    assert not rej["accepted"]
    assert cli("automaton", "verify", rej["root"])[0] == 1


def test_reason_flow(cli):
    _, a = cli("reason", "add", "A")
    _, ab = cli("reason", "add", "A -> B")
    code, b = cli("reason", "add", "B", "--parent", f"{a['node']}:modus-ponens", "--parent", f"{ab['node']}:modus-ponens")
    assert code == 0
    code, v = cli("reason", "verify-output", b["node"])
    assert code == 0 and v["valid"] and all(v["checks"].values())
    code, v = cli("reason", "verify-output", b["node"], "--rule", "conjunction-elim")
    assert code == 1 and not v["checks"]["certificates"]
    code, err = cli("reason", "add", "!B", "--parent", f"{a['node']}:modus-ponens")
    assert code == 2


def test_reason_inconsistent_node_reports_witness(cli):
    _, a = cli("reason", "add", "A")
    _, ana = cli("reason", "add", "A -> !A")
    code, err = cli("reason", "add", "!A", "--parent", f"{a['node']}:modus-ponens", "--parent", f"{ana['node']}:modus-ponens")
    assert code == 2 and err["error"] == "ConsistencyViolation" and err["witness"] == ["A", "!A"]


def test_entail_not_entailed_and_gate(cli):
    assert cli("reason", "entail", "sub(a,c)", "--fact", "sub(a,b)")[0] == 1
    _, f = cli("mem", "commit", "--level", "1", "--source", "s", stdin=b"sub(a,b)")
    code, body = cli("reason", "entail", "sub(a,c)", "--statement", f["digest"], "--fact", "sub(b,c)")
    assert code == 0 and body["entailed"]


def test_id_namespace(cli):
    assert cli("id", "verify-chain")[0] == 0
    for _ in range(3):
        assert cli("id", "rotate", "--horizon", "100")[0] == 0
    code, show = cli("id", "show")
    assert show["epoch"] == 3
    assert cli("id", "verify-chain")[1]["valid"]
    _, rot = cli("id", "rotate", "--horizon", "100", "--at", "500")
    assert cli("id", "status", "--epoch", "4", "--at", "600")[0] == 0
    assert cli("id", "status", "--epoch", "4", "--at", "601")[1]["status"] == "historical"
    assert cli("id", "revoke", "--epoch", "4", "--at", "550")[0] == 0
    assert cli("id", "status", "--epoch", "4", "--at", "560")[1]["status"] == "revoked"
    assert cli("id", "rotate", "--at", "700")[0] == 2
    assert cli("id", "verify-chain")[0] == 0


def test_zk_and_access(cli):
    salts = []
    for d in (b"alpha", b"beta", b"gamma"):
        _, c = cli("zk", "commit", stdin=d)
        salts.append(c["salt"])
    root = c["root"]
    code, p = cli("zk", "prove", "--salt", salts[1], "--context", "q1", stdin=b"beta")
    assert code == 0 and p["root"] == root
    assert cli("zk", "verify", "--proof", p["proof"], "--root", root, "--context", "q1")[0] == 0
    assert cli("zk", "verify", "--proof", p["proof"], "--root", root, "--context", "q2")[0] == 1
    assert cli("zk", "prove", "--salt", salts[0], stdin=b"beta")[0] == 2
    code, cp = cli("zk", "prove", "--salt", salts[2], "--level", "2", "--clearance", "4", stdin=b"gamma")
    args = ["zk", "verify-combined", "--proof", cp["proof"], "--root", root, "--anchor", cp["anchor"]]
    assert cli(*args, "--level", "2")[0] == 0
    assert cli(*args, "--level", "3")[0] == 1
    _, lp = cli("access", "prove-level", "--clearance", "3", "--level", "1")
    assert cli("access", "verify-level", "--proof", lp["proof"], "--anchor", lp["anchor"], "--level", "1")[0] == 0
    assert cli("access", "verify-level", "--proof", lp["proof"], "--anchor", lp["anchor"], "--level", "2")[0] == 1
    assert cli("access", "prove-level", "--clearance", "1", "--level", "3")[0] == 2


def test_export_json_aorg(cli):
    _, a = cli("reason", "add", "A")
    _, ab = cli("reason", "add", "A -> B")
    cli("reason", "add", "B", "--parent", f"{a['node']}:modus-ponens", "--parent", f"{ab['node']}:modus-ponens")
    code, doc = cli("export", "aorg", "--format", "json")
    assert code == 0 and len(doc["nodes"]) == 3 and all(len(n["hash"]) == 64 for n in doc["nodes"])


def test_export_import_roundtrip(cli, tmp_path):
    cli("mem", "commit", "--level", "1", "--source", "s", stdin=b"x")
    cli("reason", "add", "A")
    for what in ("chain", "store", "aorg"):
        out1, out2 = tmp_path / f"{what}.1", tmp_path / f"{what}.2"
        assert cli("export", what, "--out", str(out1))[0] == 0
        assert cli("export", what, "--out", str(out2))[0] == 0
        assert out1.read_bytes() == out2.read_bytes()
        assert cli("import", what, str(out1))[0] == 2
        code, body = cli("import", what, str(out1), "--force")
        assert code == 0
        assert cli("export", what, "--out", str(out2))[0] == 0
        assert out1.read_bytes() == out2.read_bytes()
    assert Chain.from_bytes((tmp_path / "chain.1").read_bytes()).verify()
    assert len(Aorg.from_canonical((tmp_path / "aorg.1").read_bytes())) == 1
    assert cli("export", "chain")[0] == 64


def demo_script(cli):
    """commit -> anchor -> entail -> verify-output -> audit verify."""
    codes = []
    _, f1 = cli("mem", "commit", "--level", "1", "--source", "kb", stdin=b"sub(Dog,Mammal)")
    _, f2 = cli("mem", "commit", "--level", "1", "--source", "kb", stdin=b"sub(Mammal,Animal)")
    code, anchored = cli("chain", "anchor", "ab" * 32)
    codes.append(code)
    code, e = cli("reason", "entail", "sub(Dog,Animal)", "--statement", f1["digest"], "--statement", f2["digest"], "--record")
    codes.append(code)
    codes.append(cli("reason", "verify-output", e["node"])[0])
    codes.append(cli("audit", "record", "--query", "sub(Dog,Animal)", "--statement", f1["digest"], "--statement", f2["digest"])[0])
    codes.append(cli("audit", "verify")[0])
    _, status = cli("status")
    return codes, status


def test_demo_script_reproducible(tmp_path, capsys, monkeypatch):
    results = []
    for run_id in range(2):
        c = Cli(tmp_path / f"run{run_id}", capsys, monkeypatch)
        c("init", "--seed", "demo")
        results.append(demo_script(c))
    (codes1, s1), (codes2, s2) = results
    assert codes1 == codes2 == [0, 0, 0, 0, 0]
    assert s1["chain_digest"] == s2["chain_digest"] and s1["store_digest"] == s2["store_digest"]


def test_audit_tamper(cli):
    _, f = cli("mem", "commit", "--level", "1", "--source", "kb", stdin=b"A")
    cli("audit", "record", "--query", "A", "--statement", f["digest"])
    audit = json.loads((cli.root / "audit.json").read_text())
    forged = json.dumps({"query": "B", "statements": [f["digest"]]}, sort_keys=True).encode()
    audit["inputs"][0] = base64.b64encode(forged).decode()
    (cli.root / "audit.json").write_text(json.dumps(audit))
    code, v = cli("audit", "verify")
    assert code == 1 and v["liable_party"] == "operator"


def test_audit_malformed_input_is_operational_error(cli):
    _, f = cli("mem", "commit", "--level", "1", "--source", "kb", stdin=b"A")
    cli("audit", "record", "--query", "A", "--statement", f["digest"])
    audit = json.loads((cli.root / "audit.json").read_text())
    audit["inputs"][0] = base64.b64encode(b"not json").decode()
    (cli.root / "audit.json").write_text(json.dumps(audit))
    assert cli("audit", "verify")[0] == 2
