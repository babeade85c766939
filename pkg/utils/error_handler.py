"""Exception hierarchy and error formatting for the LTM scaling lab."""

from typing import Any

from utils.logger import get_logger

logger = get_logger('error_handler')


class LabError(Exception):
    """Base class for every error the lab raises on purpose.

    ``code`` is a stable machine string; recovery hints and CLI exit codes
    are keyed on it.
    """

    code = 'lab_error'


class ValidationError(LabError, ValueError):
    """Custom exception for input validation errors."""

    code = 'validation'

    def __init__(self, field: str, value: Any, message: str):
        self.field = field
        self.value = value
        self.message = message
        super().__init__(f'Validation error in {field}: {message}')


class PlanValidationError(ValidationError):
    """An experiment plan violates a campaign guard."""

    code = 'plan'


class ArgumentError(LabError, ValueError):
    """An argument lies outside the range an operation accepts."""

    code = 'argument'


class DimensionError(LabError, ValueError):
    """Tensor shapes do not line up."""

    code = 'dimension'

    def __init__(self, op: str, left: tuple[int, ...], right: tuple[int, ...]):
        self.op = op
        self.left = tuple(left)
        self.right = tuple(right)
        super().__init__(f'{op}: incompatible shapes {self.left} and {self.right}')


class ContractError(LabError, RuntimeError):
    """A caller broke an operation's precondition."""

    code = 'contract'


class DomainError(LabError, ValueError):
    """A distribution or fit parameter lies outside its mathematical domain."""

    code = 'domain'


class QuadratureError(LabError, RuntimeError):
    """Numeric integration did not reach the requested tolerance."""

    code = 'quadrature'

    def __init__(self, achieved: float, tolerance: float):
        self.achieved = achieved
        self.tolerance = tolerance
        super().__init__(
            f'quadrature did not converge: achieved accuracy {achieved:.3e} '
            f'> tolerance {tolerance:.3e}'
        )


class FitConvergenceError(LabError, RuntimeError):
    """An iterative fit stopped before converging."""

    code = 'fit_convergence'

    def __init__(self, message: str, best: Any = None):
        self.best = best
        super().__init__(message)


class NonFiniteGradientError(LabError, FloatingPointError):
    """An optimizer step saw NaN or Inf in a gradient."""

    code = 'non_finite_gradient'

    def __init__(self, tensor_name: str):
        self.tensor_name = tensor_name
        super().__init__(f'non-finite gradient in tensor {tensor_name!r}')


class CorpusError(LabError):
    """A corpus is empty, missing or unreadable."""

    code = 'corpus'


class CheckpointError(LabError):
    """A checkpoint file is missing, truncated or of an unknown version."""

    code = 'checkpoint'


def require(condition: bool, field: str, value: Any, message: str) -> None:
    """Raise ValidationError(field, value, message) unless condition holds."""
    if not condition:
        raise ValidationError(field, value, message)


_ARGUMENT_SUGGESTIONS = {
    'axis': 'Supported axes: params, compute, data',
    'metric': 'Supported metrics: mse, crps, nll',
    'horizon': 'Horizon must be an integer >= 0.',
    'n_samples': 'n_samples must be an integer >= 1.',
    'f_d': 'f_d must lie in (0, 1].',
    'transport': 'Supported transports: stdio, sse',
}


def format_validation_error(
    field: str, value: Any, expected_format: str | None = None
) -> dict[str, Any]:
    """Validation envelope for a tool argument rejected before the call.

    Without ``expected_format`` the suggestion comes from the per-argument table.
    """
    if expected_format:
        suggestion = f'Expected format: {expected_format}'
    else:
        suggestion = _ARGUMENT_SUGGESTIONS.get(field, f'Check the value of {field}.')
    return {
        'status': 'error',
        'error_code': 'validation',
        'field': field,
        'value': str(value)[:100],
        'message': f"'{field}' value is invalid.",
        'suggestion': suggestion,
    }


def describe_exception(exc: BaseException) -> dict[str, Any]:
    """Turn an exception into the fields shared by CLI and tool error output."""
    info: dict[str, Any] = {
        'error_code': getattr(exc, 'code', 'internal'),
        'error_type': type(exc).__name__,
    }
    if isinstance(exc, ValidationError):
        info['field'] = exc.field
        info['value'] = str(exc.value)[:100]
    elif isinstance(exc, NonFiniteGradientError):
        info['tensor'] = exc.tensor_name
    elif isinstance(exc, QuadratureError):
        info['achieved'] = exc.achieved
    logger.debug(f'Described exception: {info}')
    return info
