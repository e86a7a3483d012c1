"""Entailment over verified statements and regulatory permissibility."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Union

from ..errors import VerificationGateError
from ..ledger import Chain
from ..memory import KnowledgeFragment, payload_digest_for, verify_fragment
from .logic import Derivation, Proposition, derive, parse, permitted


def statement_bytes(prop: Proposition) -> bytes:
    """The plaintext a statement fragment must hold: the proposition's text."""
    return str(prop).encode("utf-8")


@dataclass(frozen=True)
class Statement:
    """A proposition backed by a committed fragment whose plaintext is its text."""

    proposition: Proposition
    fragment: KnowledgeFragment

    def verify(self, chain: Chain) -> bool:
        f = self.fragment
        bound = payload_digest_for(statement_bytes(self.proposition), f.provenance, f.modality) == f.payload_digest
        return bound and verify_fragment(f, chain)


KbItem = Union[Proposition, Statement]


def _gate(kb: Iterable[KbItem], chain: Chain | None) -> list[Proposition]:
    props = []
    for item in kb:
        if isinstance(item, Statement):
            if chain is None or not item.verify(chain):
                raise VerificationGateError(f"statement {item.proposition} is not backed by a verifying fragment")
            props.append(item.proposition)
        else:
            props.append(item)
    return props


def entails(kb: Iterable[KbItem], query: Proposition | str, chain: Chain | None = None) -> Derivation | None:
    """Forward-chain ``kb`` to a fixpoint and return a derivation of ``query``.

    ``Statement`` members must verify against ``chain``; if any fails the whole
    query is void and raises. Bare propositions are taken as trusted axioms.
    """
    if isinstance(query, str):
        query = parse(query)
    return derive(_gate(kb, chain), query)


@dataclass
class NamedGraph:
    jurisdiction: str
    members: list[KbItem] = field(default_factory=list)


def permissible(action: str, graph: NamedGraph | Iterable[KbItem], chain: Chain | None = None) -> bool:
    kb = graph.members if isinstance(graph, NamedGraph) else graph
    return entails(kb, permitted(action), chain) is not None
