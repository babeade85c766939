"""Forecasting tool."""

import asyncio
from typing import Any

from lab.commands import cmd_forecast
from utils.common import success_response
from utils.decorators import lab_tool_handler
from utils.tool_annotations import IDEMPOTENT_WRITE


@lab_tool_handler(
    description=(
        'Forecast a univariate series from a trained checkpoint by autoregressive sampling. '
        'Returns the per-step mean and 16th/84th percentile band and writes forecast.csv, '
        'insequence.csv and forecast.svg. holdout keeps the last points back as truth and '
        'reports forecast MSE against them. A fixed seed gives identical output. '
        'Related: train_run (produces best.ltmk).'
    ),
    annotations=IDEMPOTENT_WRITE,
    meta={'anthropic/searchHint': 'forecast predict rollout samples series'},
)
async def forecast_series(
    checkpoint_path: str,
    series_path: str,
    horizon: int,
    n_samples: int = 100,
    seed: int = 0,
    holdout: int = 0,
    out_dir: str = 'forecast',
) -> dict[str, Any]:
    """Forecast a series.

    Args:
        checkpoint_path: Path to a .ltmk checkpoint
        series_path: CSV holding the series (a 'value' column or the first numeric column)
        horizon: Steps to forecast (>= 0)
        n_samples: Sampled trajectories (>= 1)
        seed: Sampling seed
        holdout: Trailing points withheld as truth
        out_dir: Output directory

    Returns:
        Forecast response
    """
    result = await asyncio.to_thread(
        cmd_forecast,
        checkpoint_path,
        series_path,
        horizon,
        n_samples=n_samples,
        seed=seed,
        holdout=holdout,
        out_dir=out_dir,
    )
    return success_response(data=result)
