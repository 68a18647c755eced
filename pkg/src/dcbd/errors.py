"""Exception taxonomy shared across the package.

Exit-code mapping for the CLI: usage/config problems are ``UsageError``,
model-structure problems (loops, incompatible contracts, bad connections)
derive from ``ModelError``, and numerical failures derive from
``NumericalError``.
"""


class DcbdError(Exception):
    """Base class for all package-specific errors."""


class UsageError(DcbdError):
    """Bad command-line flags or malformed configuration files."""


class ModelError(DcbdError):
    """Structurally invalid model (rejected before/at compile time)."""


class NumericalError(DcbdError):
    """Runtime numerical failure."""


# --- tape ---------------------------------------------------------------

class ShapeMismatch(ModelError):
    pass


class UnknownOp(ModelError):
    pass


class NonScalarRoot(ModelError):
    pass


class NonFiniteValue(NumericalError):
    pass


# --- blocks -------------------------------------------------------------

class EmptyTimeBase(ModelError):
    pass


class MissingInput(ModelError):
    pass


class ImplicitSolveDiverged(NumericalError):
    pass


class SingularJacobian(NumericalError):
    pass


# --- compose ------------------------------------------------------------

class DimMismatch(ModelError):
    pass


class KindMismatch(ModelError):
    pass


class InputAlreadyDriven(ModelError):
    pass


class InvalidConnection(ModelError):
    pass


class AlgebraicLoop(ModelError):
    def __init__(self, cycles):
        self.cycles = cycles
        listing = "; ".join(" -> ".join(str(p) for p in c) for c in cycles)
        super().__init__(f"algebraic loop(s) detected: {listing}")


# --- contracts ----------------------------------------------------------

class PortMismatch(ModelError):
    pass


class Incompatible(ModelError):
    pass


class GridMismatch(ModelError):
    pass


# --- nn -----------------------------------------------------------------

class DegenerateDirection(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


# --- optimize -----------------------------------------------------------

class BarrierInfeasible(NumericalError):
    pass


class NonFiniteLoss(NumericalError):
    pass


class EmptyInterval(ModelError):
    pass


class NonScalarLoss(ModelError):
    pass
