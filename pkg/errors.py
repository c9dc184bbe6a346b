"""Error types raised by the toolkit. The CLI maps `exit_code` to the process status."""

from typing import Any, Dict, Optional


class LifetimeToolkitError(Exception):
    exit_code = 1


class InvalidInputError(LifetimeToolkitError, ValueError):
    exit_code = 2


class NotEmbeddableError(InvalidInputError):
    """Torus point set too spread out to be embedded isometrically in Euclidean space."""


class SizeLimitError(InvalidInputError):
    """A brute-force builder was asked for more points than it is allowed to handle."""


class DegenerateInputError(InvalidInputError):
    pass


class DensitySpecError(InvalidInputError):
    pass


class UnsupportedCombinationError(InvalidInputError):
    pass


class ResolutionError(LifetimeToolkitError):
    """A threshold or test cannot be resolved from the available samples."""

    exit_code = 3


class LoopExtractionError(LifetimeToolkitError):
    pass


class ExperimentError(LifetimeToolkitError):
    pass


class ConjectureFalsifiedError(ExperimentError):
    """A lifetime exceeded a conjectured maximum. Carries the offending configuration."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.details = details or {}
