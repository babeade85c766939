"""Health information for the lab's MCP server."""

import importlib.metadata
import os
import time
from typing import Any

from utils.common import LAB_VERSION
from utils.logger import get_logger
from utils.settings import get_cache_dir

logger = get_logger('health')

_started_at = time.monotonic()

NUMERIC_PACKAGES = ('numpy', 'scipy', 'pandas', 'matplotlib')


def _package_versions() -> dict[str, str | None]:
    versions: dict[str, str | None] = dict.fromkeys(NUMERIC_PACKAGES)
    for name in NUMERIC_PACKAGES:
        try:
            versions[name] = importlib.metadata.version(name)
        except importlib.metadata.PackageNotFoundError:
            logger.warning(f'{name} is not installed')
    return versions


async def get_health_info() -> dict[str, Any]:
    """Version, uptime, transport, corpus cache directory and numeric library versions."""
    cache_dir = get_cache_dir()
    info = {
        'status': 'ok',
        'version': LAB_VERSION,
        'uptime_seconds': round(time.monotonic() - _started_at, 2),
        'transport': os.getenv('LTM_LAB_MCP_TRANSPORT', 'unknown'),
        'cache': {'dir': str(cache_dir), 'corpora': sum(1 for _ in cache_dir.glob('*.ltmc'))},
        'packages': _package_versions(),
    }
    logger.debug(f'Health: uptime={info["uptime_seconds"]}s corpora={info["cache"]["corpora"]}')
    return info
