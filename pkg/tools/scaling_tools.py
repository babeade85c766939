"""Scaling-law fitting tool."""

import asyncio
from typing import Any

from lab.commands import cmd_fit, parse_offset
from utils.common import success_response
from utils.decorators import lab_tool_handler
from utils.tool_annotations import IDEMPOTENT_WRITE


@lab_tool_handler(
    description=(
        'Fit a power law L = (A/A0)^(-B0) to min test loss of a campaign along one axis '
        '(params, compute or data) for one metric (mse, crps or nll). Runs a single fit and a '
        'broken fit; the post-break segment is reported when a break is found. '
        'The compute axis uses the compute frontier across all runs. DIVERGED runs are excluded. '
        "NLL gets offset 2 by default; offset='auto' picks the smallest integer making all values positive. "
        'Writes fit-<axis>-<metric>.json and .svg into the campaign directory.'
    ),
    annotations=IDEMPOTENT_WRITE,
    meta={'anthropic/searchHint': 'scaling law power law fit exponent'},
)
async def fit_scaling_law(
    campaign_dir: str,
    axis: str = 'params',
    metric: str = 'crps',
    offset: str = '2',
) -> dict[str, Any]:
    """Fit a scaling law for a campaign.

    Args:
        campaign_dir: Campaign output directory holding index.json
        axis: params, compute or data
        metric: mse, crps or nll
        offset: 'auto' or a number added to NLL values

    Returns:
        Fit report response
    """
    result = await asyncio.to_thread(
        cmd_fit, campaign_dir, axis, metric, parse_offset(offset)
    )
    return success_response(data=result)
