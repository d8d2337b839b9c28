"""Exception types shared across the package."""


class EahtError(Exception):
    """Base class for all package-specific errors."""


class ZeroLikelihood(EahtError):
    """Observation is impossible under every hypothesis that carries belief mass."""


class ParamOutOfRange(EahtError, ValueError):
    """A model or config parameter violates its documented range."""


class CalibrationDiverged(EahtError):
    """Channel calibration produced a legitimate-side flip probability >= 0.5."""


class ShapeMismatch(EahtError, ValueError):
    """Array argument has the wrong length or shape for the given model."""


class BadAgentIndex(EahtError, IndexError):
    """Agent index outside the branch range of a multi-agent network."""


class GenomeArchMismatch(EahtError, ValueError):
    """Loaded genome architecture does not fit the requested environment."""


class EvaluationFailed(EahtError):
    """A fitness evaluation raised; carries the population row that failed."""

    def __init__(self, row: int, cause: BaseException):
        super().__init__(f"fitness evaluation failed for population row {row}: {cause!r}")
        self.row = row
        self.cause = cause

    def __reduce__(self):
        return (EvaluationFailed, (self.row, self.cause))


class ConfigError(EahtError, ValueError):
    """Experiment config rejected; names the offending field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message

    def __reduce__(self):
        return (ConfigError, (self.field, self.message))
