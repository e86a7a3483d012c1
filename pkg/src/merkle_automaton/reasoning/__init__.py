"""Deductive machinery over hash-committed propositions."""

from .aorg import (
    Aorg,
    Contradiction,
    Output,
    OutputVerdict,
    ReasoningNode,
    TraceEntry,
    add_node,
    check_consistency,
    check_output,
    make_output,
    replay_node,
    sign_output,
    verify_output,
)
from .kb import NamedGraph, Statement, entails, permissible, statement_bytes
from .logic import (
    RULES,
    And,
    Atom,
    Derivation,
    Implies,
    InferenceRule,
    Not,
    Proposition,
    Triple,
    derive,
    is_a,
    neg,
    parse,
    permitted,
    saturate,
    sub,
    verify_edge,
)
from .policy import (
    ConflictWitness,
    Morphism,
    PolicyEdge,
    PolicyGraph,
    PolicyPath,
    derive_policy,
    detect_conflict,
    supersede,
    verify_version_chain,
)
