"""Response envelopes and JSON helpers shared by the CLI and the MCP tools."""

import importlib.metadata
import math
from typing import Any

import numpy as np

try:
    LAB_VERSION = importlib.metadata.version('ltm-scaling-lab')
except importlib.metadata.PackageNotFoundError:
    # running from a source checkout
    LAB_VERSION = '0.1.0-dev'


def error_response(message: str, **kwargs) -> dict[str, Any]:
    """Envelope for a failed call; ``kwargs`` usually come from ``describe_exception``."""
    return {'status': 'error', 'message': message, **kwargs}


def success_response(data: Any = None, **kwargs) -> dict[str, Any]:
    """Envelope for a successful call. ``data`` is omitted only when it is None."""
    response: dict[str, Any] = {'status': 'success'}
    if data is not None:
        response['data'] = data
    return {**response, **kwargs}


def json_safe(value: Any) -> Any:
    """Make a result JSON-clean.

    NaN and infinities become None, numpy scalars become Python numbers and
    arrays and tuples become lists, recursively.
    """
    if isinstance(value, np.ndarray):
        return json_safe(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {k: json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    return value
