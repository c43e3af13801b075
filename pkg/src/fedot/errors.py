"""Exception hierarchy shared by the solver, fabric and application layers."""


class FedOTError(Exception):
    """Base class for all package errors."""


class ProblemError(FedOTError, ValueError):
    """An input violates a documented precondition."""


class NonFiniteCost(ProblemError):
    pass


class NonPositiveEpsilon(ProblemError):
    pass


class UnderflowDivide(FedOTError, ArithmeticError):
    """A Sinkhorn denominator fell to the kernel floor.

    Raised instead of silently producing ``inf`` scalings; it signals that the
    regularization is too small for float64 on this instance.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class IndivisibleDimension(ProblemError):
    pass


class MissingBlock(ProblemError):
    pass


class DuplicateBlock(ProblemError):
    pass


class FabricError(FedOTError):
    """Communication failure inside the message fabric."""


class FrameError(FabricError, ValueError):
    """Malformed wire frame or payload of the wrong length."""


class PeerLost(FabricError):
    """A participant disconnected or never arrived at a collective."""


class Deadlock(PeerLost):
    """Simulator: every live participant is blocked and nothing can progress."""


class BackpressureDropped(FabricError):
    pass


class DegenerateSum(ProblemError):
    pass


class BracketNotFound(FedOTError):
    """The transport-cost constraint has no sign change on the search interval."""


class ConfigError(FedOTError, ValueError):
    pass
