"""Exception types raised by kmsflow.

Certification routines come in two flavours: report-style functions return a
:class:`kmsflow.reports.Report` and never raise on a failed check, while
constructive operations (building a generator, extracting a Kraus family, ...)
raise one of the exceptions below when a precondition or postcondition is
violated.  Exceptions that wrap a report carry it in the ``report`` attribute.
"""


class KmsflowError(Exception):
    """Base class for all kmsflow errors."""


class DimensionMismatch(KmsflowError):
    """Operands do not share the same matrix dimension."""


class NotHermitian(KmsflowError):
    """A matrix required to be Hermitian is not, within tolerance."""


class NotPSD(KmsflowError):
    """A matrix required to be positive semidefinite has a negative eigenvalue
    below tolerance."""


class WrongLevel(KmsflowError):
    """A superoperator was used at the wrong representation level
    (algebra-level where an L2-level map was required, or vice versa)."""


class EmptyKrausList(KmsflowError):
    """A Kraus family must contain at least one operator."""


class UnitalityViolated(KmsflowError):
    """The map does not annihilate (or fix) the identity within tolerance."""


class NotHermiticityPreserving(KmsflowError):
    """The map does not satisfy S(X*) = S(X)* on the matrix-unit basis."""


class ReportError(KmsflowError):
    """Base class for errors carrying a certification report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class PreconditionFailed(ReportError):
    """An input failed the certification required by the operation."""


class CertificationFailed(ReportError):
    """A constructed object failed its own certification."""


class Infeasible(ReportError):
    """The alternating-projection solver found no feasible point within the
    iteration budget."""


class InsufficientRange(KmsflowError):
    """Quadrature truncation range is too short (or the density matrix too
    ill-conditioned) for the requested accuracy."""


class GramNotPSD(KmsflowError):
    """The quotient Gram form has a negative eigenvalue beyond tolerance,
    signalling a non-CND input."""


class ReconstructionFailure(KmsflowError):
    """The derivation does not reproduce the generator's sesquilinear form."""


class NonIntegralMultiplicity(KmsflowError):
    """dim H is not an integer multiple of n^2."""


class DerivationRecoveryFailure(KmsflowError):
    """Recovered commutator matrices do not implement the component
    derivations within tolerance."""


class InconsistentPsi(KmsflowError):
    """The supplied completely positive map is not consistent with the
    generator it is paired with."""


class GramMismatch(KmsflowError):
    """Gram matrices of two spanning families disagree beyond tolerance."""

    def __init__(self, message, max_deviation=None, index=None):
        super().__init__(message)
        self.max_deviation = max_deviation
        self.index = index


class NotJFixed(KmsflowError):
    """A vector required to be fixed by the modular conjugation is not."""


class NoConvergence(KmsflowError):
    """An iterative solver did not converge within its iteration budget."""


class SchemaError(KmsflowError):
    """A JSON document does not match the expected schema."""
