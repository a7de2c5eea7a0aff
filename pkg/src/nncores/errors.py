"""Exception types raised across the package."""


class NNCoResError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(NNCoResError, ValueError):
    pass


class DimensionMismatch(NNCoResError, ValueError):
    pass


class ShapeMismatch(NNCoResError, ValueError):
    pass


class InvalidWidths(NNCoResError, ValueError):
    pass


class NuggetExhausted(NNCoResError, RuntimeError):
    """Even the largest nugget on the ladder failed to condition the covariance."""


class StaleResidualCache(NNCoResError, RuntimeError):
    """Residuals were computed for a different parameter vector than the current one."""


class MissingDerivative(NNCoResError, ValueError):
    pass


class WrongProblem(NNCoResError, ValueError):
    pass


class InvalidViscosity(NNCoResError, ValueError):
    pass


class SolveFailed(NNCoResError, RuntimeError):
    pass


class CflViolation(NNCoResError, ValueError):
    pass


class NonFiniteLoss(NNCoResError, FloatingPointError):
    def __init__(self, epoch: int, value: float = float("nan")):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}")
        self.epoch = epoch
        self.value = value


class TransformUndefined(NNCoResError, ValueError):
    pass


class LengthMismatch(NNCoResError, ValueError):
    pass


class ConfigInvalid(NNCoResError, ValueError):
    """Configuration failed to parse or validate.

    ``field`` names the offending key path and ``line`` the source line when
    the failure is a JSON syntax error.
    """

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        parts = [message]
        if field:
            parts.append(f"field={field}")
        if line is not None:
            parts.append(f"line={line}")
        super().__init__("; ".join(parts))
        self.field = field
        self.line = line
