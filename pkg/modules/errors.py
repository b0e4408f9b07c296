"""
Exception hierarchy for ergolab.

Argument precondition failures raise ``ValueError``; failures of the
numerics or of a generated sample raise one of the classes below so the
CLI can report them with a one-line diagnostic.
"""

from typing import Optional


class ErgolabError(Exception):
    """Base class for all domain errors"""
    pass


class ConfigError(ErgolabError):
    """Invalid experiment configuration; names the offending key"""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class EnvironmentRejected(ErgolabError):
    """A model or a generated sample violates the environment axioms"""
    pass


class AtomError(ErgolabError):
    """The requested point is not an atom of the environment"""
    pass


class ConvergenceError(ErgolabError):
    """Iterative solver did not reach the requested residual"""

    def __init__(self, message: str, residual: Optional[float] = None,
                 iterations: Optional[int] = None):
        self.residual = residual
        self.iterations = iterations
        detail = []
        if residual is not None:
            detail.append(f"residual={residual:.3e}")
        if iterations is not None:
            detail.append(f"iterations={iterations}")
        suffix = f" ({', '.join(detail)})" if detail else ""
        super().__init__(f"{message}{suffix}")


class TruncationError(ErgolabError):
    """A truncation, quadrature or series-length budget cannot be met"""
    pass


class InvariantViolation(ErgolabError):
    """An asserted structural invariant failed"""
    pass
