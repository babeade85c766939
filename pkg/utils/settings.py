"""Environment-driven settings for the LTM scaling lab."""

import os
from pathlib import Path

from utils.logger import get_logger

logger = get_logger('settings')

DEFAULT_CACHE_DIR = Path.home() / '.cache' / 'ltm-lab'


def get_cache_dir() -> Path:
    """Resolve the corpus cache root: LTM_LAB_CACHE_DIR, else ~/.cache/ltm-lab.

    The directory is created if missing.
    """
    env_dir = os.getenv('LTM_LAB_CACHE_DIR')
    if env_dir:
        cache_dir = Path(os.path.expanduser(env_dir))
        logger.debug(f'Using cache dir from environment: {cache_dir}')
    else:
        cache_dir = DEFAULT_CACHE_DIR
    cache_dir.mkdir(parents=True, exist_ok=True)
    return cache_dir


def default_cache_path(manifest_path: str | Path) -> Path:
    """Cache file a manifest ingests into when no output path is given."""
    return get_cache_dir() / f'{Path(manifest_path).stem}.ltmc'


def get_mcp_host() -> str:
    """Host for the SSE transport (defaults to localhost)."""
    return os.getenv('LTM_LAB_MCP_HOST', '127.0.0.1')


def get_mcp_port() -> int:
    """Port for the SSE transport."""
    return int(os.getenv('LTM_LAB_MCP_PORT', '8256'))
