"""Logging for the LTM scaling lab.

Every module logs through ``get_logger(<module>)``, which returns an adapter
over ``ltm_lab.<module>``. Handlers sit on the ``ltm_lab`` parent: stderr
always, plus ``$LTM_LAB_LOG_DIR/ltm-lab.log`` unless the variable is set
to an empty string. Campaign workers started with ``--parallel`` append to
the same file, so the format carries the process id.
"""

import logging
import os
import sys
from functools import cache
from pathlib import Path

LOG_FORMAT = (
    '%(asctime)s - %(name)s - %(levelname)s - %(process)d - '
    '[%(filename)s:%(lineno)d] - %(message)s'
)
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'
LOG_FILE_NAME = 'ltm-lab.log'


@cache
def _configure() -> logging.Logger:
    root = logging.getLogger('ltm_lab')
    level_name = os.getenv('LTM_LAB_LOG_LEVEL', 'INFO').upper()
    root.setLevel(getattr(logging, level_name, logging.INFO))

    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    log_dir = os.getenv('LTM_LAB_LOG_DIR', 'logs')
    if log_dir:
        Path(log_dir).mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(Path(log_dir) / LOG_FILE_NAME))

    formatter = logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT)
    for handler in handlers:
        handler.setFormatter(formatter)
        root.addHandler(handler)
    return root


@cache
def get_logger(name: str) -> logging.LoggerAdapter:
    """Adapter for ``ltm_lab.<name>`` with the component name as extra context."""
    _configure()
    return logging.LoggerAdapter(logging.getLogger(f'ltm_lab.{name}'), {'component': name})
