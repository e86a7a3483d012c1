"""Exception hierarchy.

Verification routines return ``False`` (or a verdict object) when evidence does
not check out; exceptions are reserved for malformed input, broken
preconditions and environment failures.
"""


class MerkleAutomatonError(Exception):
    pass


# crypto_core
class LengthError(MerkleAutomatonError, ValueError):
    pass


class PointValidationError(MerkleAutomatonError, ValueError):
    pass


class AuthenticationError(MerkleAutomatonError):
    """AEAD tag mismatch: wrong key, wrong level, wrong aad, or tampering."""


class SignatureDecodeError(MerkleAutomatonError, ValueError):
    pass


class RandomnessError(MerkleAutomatonError, OSError):
    pass


# shared
class EmptyInputError(MerkleAutomatonError, ValueError):
    pass


class BoundsError(MerkleAutomatonError, IndexError):
    pass


class ValidationError(MerkleAutomatonError, ValueError):
    pass


class MissingReferenceError(MerkleAutomatonError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


# ledger
class TimeRegressionError(MerkleAutomatonError, ValueError):
    pass


# automaton
class DomainError(MerkleAutomatonError, ValueError):
    pass


# memory
class ProvenanceError(MerkleAutomatonError):
    pass


class AcyclicityError(MerkleAutomatonError):
    pass


class DeltaCorruptionError(MerkleAutomatonError, ValueError):
    pass


# access
class LatticeError(MerkleAutomatonError, ValueError):
    pass


class CannotProveError(MerkleAutomatonError):
    pass


class VerificationGateError(MerkleAutomatonError):
    """Raised when an operation is handed a fragment that does not verify."""


# zkmem
class NotAMemberError(MerkleAutomatonError):
    pass


class ChainLinkError(MerkleAutomatonError):
    pass


# reasoning
class ConsistencyViolation(MerkleAutomatonError):
    def __init__(self, message: str, witness=None):
        super().__init__(message)
        self.witness = witness


class JustificationError(MerkleAutomatonError):
    pass


class TraceabilityError(MerkleAutomatonError):
    pass


class UnderivableError(MerkleAutomatonError):
    pass


# provenance
class DelegationError(MerkleAutomatonError):
    pass


class RevocationError(MerkleAutomatonError):
    pass


# cli
class WorkspaceError(MerkleAutomatonError):
    pass
