"""Exception types shared across the package."""


class ImmlabError(Exception):
    """Base class for package errors."""


class DegreeMismatchError(ImmlabError, ValueError):
    """Coefficient or sample array does not match the grid band limit."""


class ImmersionRegularityError(ImmlabError, ValueError):
    """Candidate immersion is degenerate (metric determinant too small)."""


class ConvergenceError(ImmlabError, RuntimeError):
    """An iterative solver failed to reach its tolerance."""


class ShapeSpecError(ImmlabError, ValueError):
    """A shape specification string or immersion file is malformed."""
