"""Corpus ingestion and inspection tools."""

import asyncio
from typing import Any

from lab.commands import cmd_describe, cmd_ingest
from utils.common import success_response
from utils.decorators import lab_tool_handler
from utils.tool_annotations import IDEMPOTENT_WRITE, READ_ONLY


@lab_tool_handler(
    description=(
        'Build a corpus cache from a JSON manifest: materialize synthetic and CSV sources, '
        'normalize every series, split 95/5 per source and write the binary cache. '
        'Returns split sizes and the per-source balance report (sources above ~15% are flagged). '
        'Re-ingesting the same manifest gives a byte-identical cache. '
        'Related: describe_corpus, train_run.'
    ),
    annotations=IDEMPOTENT_WRITE,
    meta={'anthropic/searchHint': 'ingest corpus manifest dataset cache build'},
)
async def ingest_corpus(manifest_path: str, output_path: str | None = None) -> dict[str, Any]:
    """Ingest a manifest into a corpus cache.

    Args:
        manifest_path: Path to manifest.json
        output_path: Cache file to write. Defaults to <cache dir>/<manifest stem>.ltmc

    Returns:
        Ingest summary response
    """
    result = await asyncio.to_thread(cmd_ingest, manifest_path, output_path)
    return success_response(data=result)


@lab_tool_handler(
    description=(
        'Describe an existing corpus cache: seq_len, train/test series and point counts, '
        'and the per-source balance report. Related: ingest_corpus.'
    ),
    annotations=READ_ONLY,
    meta={'anthropic/searchHint': 'corpus cache balance sources describe'},
)
async def describe_corpus(cache_path: str) -> dict[str, Any]:
    """Describe a corpus cache.

    Args:
        cache_path: Path to a .ltmc cache file

    Returns:
        Corpus description response
    """
    result = await asyncio.to_thread(cmd_describe, cache_path)
    return success_response(data=result)
