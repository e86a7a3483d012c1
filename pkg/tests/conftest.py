from dataclasses import dataclass

import pytest

from merkle_automaton.access import AccessContext, query_fingerprint
from merkle_automaton.crypto import KeyPair, SharedSecret, digest, ecdh
from merkle_automaton.ledger import Chain, append_block
from merkle_automaton.memory import KnowledgeStore, commit_fragment, make_provenance


@dataclass
class Env:
    agent: KeyPair
    holder: KeyPair
    originator: KeyPair
    shared: SharedSecret
    context: AccessContext
    chain: Chain
    store: KnowledgeStore

    def commit(self, data: bytes, level: int = 1, t: int = 1, **kw):
        prov = make_provenance(data, b"source", t, self.originator)
        return commit_fragment(
            self.store, data, prov, level, self.shared, self.chain, context=self.context, signer=self.agent, **kw
        )


def make_env() -> Env:
    agent = KeyPair.from_seed(b"agent")
    holder = KeyPair.from_seed(b"holder")
    chain = Chain()
    append_block(chain, (), 0)
    ctx = AccessContext(1, query_fingerprint(b"q"), digest(b"root-ref"), b"policy-1")
    return Env(agent, holder, KeyPair.from_seed(b"origin"), ecdh(agent.secret_scalar, holder.public_point), ctx, chain, KnowledgeStore())


@pytest.fixture
def env() -> Env:
    return make_env()
