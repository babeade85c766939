"""Reusable MCP tool annotation presets.

Tool modules import these instead of repeating ToolAnnotations inline.
"""

from mcp.types import ToolAnnotations

# Inspect caches, indexes and run logs without writing anything
READ_ONLY = ToolAnnotations(readOnlyHint=True, destructiveHint=False, openWorldHint=False)

# Training and sweeps: write new run directories, may take a long time
LONG_RUNNING = ToolAnnotations(
    readOnlyHint=False, destructiveHint=False, idempotentHint=False, openWorldHint=False
)

# Deterministic writers (cache, fit report, forecast CSV): same inputs, same bytes
IDEMPOTENT_WRITE = ToolAnnotations(
    readOnlyHint=False, destructiveHint=False, idempotentHint=True, openWorldHint=False
)
