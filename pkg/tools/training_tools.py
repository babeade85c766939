"""Training and campaign inspection tools."""

import asyncio
from typing import Any

from lab.commands import cmd_list_runs, cmd_train
from lab.trainer import RunStatus
from utils.common import error_response, success_response
from utils.decorators import lab_tool_handler
from utils.tool_annotations import LONG_RUNNING, READ_ONLY


@lab_tool_handler(
    description=(
        'Train one model from a run config (train.json) on a cached corpus. '
        'Writes runlog.jsonl, best.ltmk and summary.json into the run directory and returns the summary: '
        'status (COMPLETED, EARLY_STOPPED or DIVERGED), min test MSE/CRPS/NLL and final compute. '
        'This can take a long time for large step budgets. '
        'Related: ingest_corpus (build the cache first).'
    ),
    annotations=LONG_RUNNING,
    meta={'anthropic/searchHint': 'train model run transformer fit'},
)
async def train_run(config_path: str) -> dict[str, Any]:
    """Run one training job.

    Args:
        config_path: Path to a run config JSON file

    Returns:
        Run summary response; a DIVERGED run is reported as an error
    """
    result = await asyncio.to_thread(cmd_train, config_path)
    run_dir = str(result.run_dir) if result.run_dir else None
    if result.status == RunStatus.DIVERGED:
        return error_response(
            'Training diverged',
            error_code='diverged',
            data=result.summary,
            run_dir=run_dir,
        )
    return success_response(data=result.summary, run_dir=run_dir)


@lab_tool_handler(
    description=(
        'List the cells of a finished campaign from its index.json: cell id, parameter count, '
        'lr_max, f_d, status, attempts and min test CRPS, plus best lr_max per size for LR sweeps. '
        'Related: fit_scaling_law.'
    ),
    annotations=READ_ONLY,
    meta={'anthropic/searchHint': 'campaign sweep runs index list'},
)
async def list_campaign_runs(campaign_dir: str) -> dict[str, Any]:
    """List campaign cells.

    Args:
        campaign_dir: Campaign output directory holding index.json

    Returns:
        Campaign listing response
    """
    result = await asyncio.to_thread(cmd_list_runs, campaign_dir)
    return success_response(data=result)
