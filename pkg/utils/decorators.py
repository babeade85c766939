"""Decorators for MCP tools to reduce boilerplate code."""

from __future__ import annotations

import inspect
import time
from collections.abc import Callable
from functools import wraps
from pathlib import Path
from typing import Any

from mcp.types import ToolAnnotations

from utils.common import error_response, json_safe
from utils.error_handler import LabError, describe_exception, format_validation_error
from utils.logger import get_logger

logger = get_logger('decorators')

VALID_AXES = ('params', 'compute', 'data')
VALID_METRICS = ('mse', 'crps', 'nll')

# argument name -> predicate; failing arguments get a validation envelope
_ARGUMENT_CHECKS: dict[str, Callable[[Any], bool]] = {
    'horizon': lambda v: isinstance(v, int) and v >= 0,
    'n_samples': lambda v: isinstance(v, int) and v >= 1,
    'axis': lambda v: v in VALID_AXES,
    'metric': lambda v: v in VALID_METRICS,
    'f_d': lambda v: isinstance(v, (int, float)) and 0 < v <= 1,
}

# arguments that must name an existing file or directory
_PATH_ARGUMENTS = {
    'manifest_path': Path.is_file,
    'config_path': Path.is_file,
    'cache_path': Path.is_file,
    'checkpoint_path': Path.is_file,
    'series_path': Path.is_file,
    'campaign_dir': Path.is_dir,
}


def with_argument_validation(func: Callable) -> Callable:
    """Decorator validating well-known tool arguments before the call.

    Checks ``horizon``, ``n_samples``, ``axis``, ``metric`` and ``f_d``
    ranges, and that path arguments point at existing files or directories.
    """

    @wraps(func)
    async def wrapper(*args, **kwargs):
        sig = inspect.signature(func)
        bound_args = sig.bind(*args, **kwargs)
        bound_args.apply_defaults()

        for name, value in bound_args.arguments.items():
            check = _ARGUMENT_CHECKS.get(name)
            if check is not None and value is not None and not check(value):
                return format_validation_error(name, value)
            exists = _PATH_ARGUMENTS.get(name)
            if exists is not None and value is not None and not exists(Path(value)):
                return format_validation_error(name, value, 'an existing path')

        return await func(*args, **kwargs)

    return wrapper


def with_error_handling(func: Callable) -> Callable:
    """Turn every failure into an error envelope carrying recovery hints.

    Lab errors are expected outcomes (missing cache, bad plan, diverged
    run) and are logged as warnings; anything else is logged with its
    traceback and reported as ``internal``. Successful dict results are
    passed through ``json_safe`` so NaN metrics reach the client as null.
    """

    @wraps(func)
    async def wrapper(*args, **kwargs):
        from utils.recovery_hints import enrich_error_response

        try:
            result = await func(*args, **kwargs)
        except LabError as e:
            logger.warning(f'{func.__name__}: {e.code}: {e}')
            return enrich_error_response(error_response(str(e), **describe_exception(e)))
        except Exception as e:
            logger.error(f'{func.__name__} failed: {e}', exc_info=True)
            return enrich_error_response(
                error_response(f'Failed in {func.__name__}: {e}', **describe_exception(e))
            )

        if isinstance(result, dict):
            result = enrich_error_response(json_safe(result))
        return result

    return wrapper


def with_logging(func: Callable) -> Callable:
    """Log each call with its bound arguments, and how long successful calls took."""

    @wraps(func)
    async def wrapper(*args, **kwargs):
        bound = inspect.signature(func).bind(*args, **kwargs)
        bound.apply_defaults()
        logger.info(f'{func.__name__} called with: {dict(bound.arguments)}')

        started = time.perf_counter()
        result = await func(*args, **kwargs)

        if isinstance(result, dict) and result.get('status') == 'success':
            logger.info(
                f'{func.__name__} completed successfully in {time.perf_counter() - started:.2f}s'
            )
        return result

    return wrapper


def lab_tool_handler(
    description: str,
    annotations: ToolAnnotations | None = None,
    meta: dict[str, Any] | None = None,
):
    """Register an async function as an MCP tool wrapped in the lab's tool chain.

    Calls pass through logging, then error handling, then argument
    validation before reaching the tool body.

    Args:
        description: Tool description shown to MCP clients
        annotations: One of the presets in ``utils.tool_annotations``
        meta: Extra MCP metadata such as ``anthropic/searchHint``
    """

    def decorator(func: Callable) -> Callable:
        from server import mcp

        wrapped = with_logging(with_error_handling(with_argument_validation(func)))
        return mcp.tool(description=description, annotations=annotations, meta=meta)(wrapped)

    return decorator
