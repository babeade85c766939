"""Server health for MCP clients."""

from typing import Any

from utils.common import success_response
from utils.decorators import lab_tool_handler
from utils.health import get_health_info
from utils.tool_annotations import READ_ONLY


@lab_tool_handler(
    description=(
        'Report lab server health: version, uptime, transport, the corpus cache directory '
        'with its number of .ltmc caches, and numpy/scipy/pandas/matplotlib versions. '
        'Call before starting long training runs or sweeps. Takes no parameters.'
    ),
    annotations=READ_ONLY,
    meta={
        'anthropic/alwaysLoad': True,
        'anthropic/searchHint': 'health status version uptime cache numpy',
    },
)
async def health_check() -> dict[str, Any]:
    return success_response(data=await get_health_info())
