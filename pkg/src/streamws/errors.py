"""Exception types raised across the package."""

from __future__ import annotations


class StreamWSError(Exception):
    """Base class for every error raised by streamws."""


class OutOfDomainVote(StreamWSError):
    def __init__(self, row: int, col: int, value: int) -> None:
        super().__init__(f"vote {value} at ({row}, {col}) is outside the label domain")
        self.row = row
        self.col = col
        self.value = value


class TooFewSources(StreamWSError):
    pass


class InvalidClass(StreamWSError):
    pass


class DegenerateBatch(StreamWSError):
    pass


class NotInvertible(StreamWSError):
    pass


class NoConvergence(StreamWSError):
    """Iterative solver hit its cap; ``result`` holds the best iterate."""

    def __init__(self, iterations: int, residual: float, result=None) -> None:
        super().__init__(
            f"no convergence after {iterations} iterations (residual {residual:.3e})"
        )
        self.iterations = iterations
        self.residual = residual
        self.result = result


class SignAmbiguity(StreamWSError):
    """The sign-consistency graph over the mask is disconnected."""

    def __init__(self, components: list[list[int]]) -> None:
        super().__init__(f"sign graph has {len(components)} components: {components}")
        self.components = components


class Underdetermined(StreamWSError):
    pass


class NonPositiveC(StreamWSError):
    pass


class NoCoverage(StreamWSError):
    pass


class TooLarge(StreamWSError):
    pass


class LengthMismatch(StreamWSError):
    pass


class TooFewExamples(StreamWSError):
    pass
