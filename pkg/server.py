"""FastMCP server exposing the lab's corpus, training, scaling and forecast tools."""

import os
import signal
import sys
from collections.abc import AsyncIterator
from contextlib import asynccontextmanager, suppress
from typing import Literal

from mcp.server.fastmcp import FastMCP

from utils.logger import get_logger
from utils.settings import get_cache_dir, get_mcp_host, get_mcp_port

logger = get_logger('server')

Transport = Literal['stdio', 'sse']


def _raise_keyboard_interrupt(signum, frame):
    # anyio already turns KeyboardInterrupt into an orderly shutdown
    raise KeyboardInterrupt


@asynccontextmanager
async def app_lifespan(app: FastMCP) -> AsyncIterator[None]:
    """Route SIGTERM into the shutdown path and report where corpora are read from."""
    previous = None
    if sys.platform != 'win32':
        try:
            previous = signal.signal(signal.SIGTERM, _raise_keyboard_interrupt)
        except ValueError as e:
            # not on the main thread
            logger.warning(f'SIGTERM handler not installed: {e}')

    cache_dir = get_cache_dir()
    n_corpora = len(list(cache_dir.glob('*.ltmc')))
    logger.info(f'Lab server ready: {n_corpora} corpus cache(s) in {cache_dir}')
    try:
        yield
    finally:
        if previous is not None:
            with suppress(ValueError):
                signal.signal(signal.SIGTERM, previous)
        logger.info('Lab server stopped')


mcp = FastMCP('ltm-lab', host=get_mcp_host(), port=get_mcp_port(), lifespan=app_lifespan)


def _register_http_health_endpoint() -> None:
    """Plain GET /health for the SSE transport, answered without an MCP session."""

    @mcp.custom_route('/health', methods=['GET'])
    async def health_endpoint(request):
        from starlette.responses import JSONResponse

        from utils.health import get_health_info

        return JSONResponse(await get_health_info(), headers={'Cache-Control': 'no-store'})


def register_tools() -> None:
    """Import the tool modules; their decorators register each tool on ``mcp``."""
    import tools.corpus_tools  # noqa: F401
    import tools.forecast_tools  # noqa: F401
    import tools.health_tools  # noqa: F401
    import tools.scaling_tools  # noqa: F401
    import tools.training_tools  # noqa: F401


def run(transport: Transport = 'stdio') -> None:
    """Register every tool and serve until interrupted.

    Args:
        transport: 'stdio' for local clients, 'sse' to listen on
            LTM_LAB_MCP_HOST:LTM_LAB_MCP_PORT
    """
    os.environ['LTM_LAB_MCP_TRANSPORT'] = transport
    if transport == 'sse':
        _register_http_health_endpoint()
        logger.info(f'Serving SSE on {mcp.settings.host}:{mcp.settings.port}')

    register_tools()

    logger.info(f'Starting MCP server ({transport})')
    try:
        mcp.run(transport=transport)
    except Exception as e:
        logger.error(f'MCP server stopped with an error: {e}', exc_info=True)
        raise
