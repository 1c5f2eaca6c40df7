"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`ImplicitMotionError`, so callers (and the command line front end)
can tell numerical/input failures from programming errors.
"""


class ImplicitMotionError(Exception):
    """Base class for all package errors."""


class InputError(ImplicitMotionError, ValueError):
    """Malformed user input (expressions, problem files, dimensions)."""


class NumericalError(ImplicitMotionError, ArithmeticError):
    """A numerical procedure failed or a standing hypothesis was violated."""


# -- expressions -------------------------------------------------------------

class ExprSyntaxError(InputError):
    """Expression text does not follow the grammar.

    ``offset`` is the byte offset into the UTF-8 encoded source at which
    the problem was detected.
    """

    def __init__(self, message, offset=0, source=""):
        self.offset = offset
        self.source = source
        super().__init__(f"{message} (at byte {offset})")


class UnknownVariable(ExprSyntaxError):
    """Identifier is neither a listed variable, a function nor a constant."""


class ArityError(ExprSyntaxError):
    """A function was called with the wrong number of arguments."""


class DomainError(NumericalError):
    """Expression evaluated outside its domain (log of 0, x/0, ...)."""


class NonSmoothPoint(DomainError):
    """Derivative requested where the expression is not differentiable."""


# -- manifold / dynamics -----------------------------------------------------

class SingularB(NumericalError):
    """The partial Jacobian with respect to the y block is singular."""


class SignFlip(NumericalError):
    """sign det B differs from the sign pinned at the first evaluation."""


class NoConvergence(NumericalError):
    """An iterative solver ran out of iterations or diverged."""


class TangencyViolation(NumericalError):
    """A field declared tangent to the manifold is not."""


class StepUnderflow(NumericalError):
    """An adaptive step size dropped below its floor."""


class IntegrationFailure(NumericalError):
    """Trajectory integration broke down (non-finite state, box exit...)."""


# -- degree ------------------------------------------------------------------

class DegenerateZero(NumericalError):
    """A zero with (numerically) singular Jacobian; no index is assigned."""


class NotAdmissible(NumericalError):
    """The map vanishes on, or too close to, the region's boundary."""


class QuadratureNotConverged(NumericalError):
    """Mean-value quadrature did not stabilise within the node budget."""


# -- continuation ------------------------------------------------------------

class SingularShootJacobian(NumericalError):
    """Shooting Jacobian is singular (fold or resonance)."""


class BudgetExceeded(NumericalError):
    """Work budget exhausted. ``curve`` holds the partial result, if any."""

    def __init__(self, message, curve=None):
        self.curve = curve
        super().__init__(message)


class DegreeIsZero(NumericalError):
    """The degree is zero, so no branch is guaranteed to exist."""
