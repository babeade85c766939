"""Command implementations shared by the ``ltm-lab`` CLI and the MCP tools.

Each ``cmd_*`` function takes plain paths and numbers, does the work, and
returns a JSON-ready dict. Errors propagate as ``LabError`` subclasses; the
callers decide how to present them.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

import numpy as np

from lab.campaign import execute_run, load_campaign_runs, read_index, run_campaign
from lab.configfile import load_manifest, load_plan, load_run_config, write_templates
from lab.datapipe import (
    Corpus,
    balance_report,
    build_corpus,
    derive_seed,
    read_series_csv,
    scale_dataset,
    split,
)
from lab.reporting import (
    fit_report,
    plot_fit_svg,
    plot_forecast_svg,
    write_campaign_report,
    write_forecast_csv,
    write_insequence_csv,
    write_json,
)
from lab.scalinglab import extract_points, fit_broken_power_law, resolve_offset
from lab.storage import load_checkpoint, read_corpus_cache, write_corpus_cache
from lab.trainer import RunStatus, TrainResult
from lab.tsformer import (
    ForecastResult,
    InSequencePrediction,
    forecast_rollout,
    in_sequence_prediction,
)
from utils.error_handler import ArgumentError, ValidationError
from utils.logger import get_logger
from utils.settings import default_cache_path

logger = get_logger('commands')


def cmd_init(directory: str | Path, force: bool = False) -> dict[str, Any]:
    written = write_templates(directory, overwrite=force)
    return {'written': [str(p) for p in written]}


def cmd_ingest(manifest_path: str | Path, output_path: str | Path | None = None) -> dict[str, Any]:
    """Build, balance-check, split and cache the corpus a manifest describes.

    The manifest's ``f_d`` scales the training split before it is cached.
    """
    manifest_path = Path(manifest_path)
    manifest, manifest_hash = load_manifest(manifest_path)
    output = Path(output_path) if output_path else default_cache_path(manifest_path)
    corpus = build_corpus(manifest, manifest_path.parent)
    report = balance_report(corpus)
    train, test = split(corpus, manifest.split_seed, manifest.test_fraction)
    if manifest.f_d < 1:
        rng = np.random.default_rng(derive_seed(manifest.split_seed, 'ingest', 'scale_dataset'))
        train = scale_dataset(train, manifest.f_d, rng, manifest.seq_len)
    output.parent.mkdir(parents=True, exist_ok=True)
    write_corpus_cache(output, train, test, manifest.seq_len, manifest_hash)
    logger.info(f'Ingested {manifest_path} into {output}')
    return {
        'cache': str(output),
        'manifest_hash': manifest_hash,
        'train_series': len(train),
        'test_series': len(test),
        'train_points': train.total_points,
        'test_points': test.total_points,
        'balance': report.to_dict(),
    }


def cmd_describe(cache_path: str | Path) -> dict[str, Any]:
    """Split sizes and the balance report of an existing corpus cache."""
    cache = read_corpus_cache(cache_path)
    combined = Corpus(cache.train.records + cache.test.records)
    return {
        'cache': str(cache_path),
        'seq_len': cache.seq_len,
        'manifest_hash': cache.header.get('manifest_hash'),
        'train_series': len(cache.train),
        'test_series': len(cache.test),
        'train_points': cache.train.total_points,
        'test_points': cache.test.total_points,
        'balance': balance_report(combined).to_dict(),
    }


def cmd_train(config_path: str | Path) -> TrainResult:
    config = load_run_config(config_path)
    logger.info(f'Training from {config_path} into {config.run_dir}')
    return execute_run(
        config.model,
        config.train,
        config.cache,
        config.run_dir,
        f_d=config.f_d,
        data_seed=config.data_seed,
    )


def cmd_sweep(plan_path: str | Path, parallel: int = 1) -> dict[str, Any]:
    if parallel < 1:
        raise ArgumentError(f'parallel must be >= 1, got {parallel}')
    plan = load_plan(plan_path)
    index = run_campaign(plan, parallel=parallel)
    index['campaign_dir'] = str(plan.output_dir)
    return index


def cmd_list_runs(campaign_dir: str | Path) -> dict[str, Any]:
    index = read_index(campaign_dir)
    return {
        'kind': index['kind'],
        'n_cells': index['n_cells'],
        'cells': [
            {
                k: cell.get(k)
                for k in ('cell_id', 'n_params', 'lr_max', 'f_d', 'status', 'attempts', 'min_test_crps')
            }
            for cell in index['cells']
        ],
        'best_lr_per_size': index.get('best_lr_per_size'),
    }


def cmd_fit(
    campaign_dir: str | Path,
    axis: str,
    metric: str,
    offset: float | str = 2.0,
    out_dir: str | Path | None = None,
) -> dict[str, Any]:
    """Single and broken power-law fits of min test loss along one axis."""
    campaign_dir = Path(campaign_dir)
    _, runs = load_campaign_runs(campaign_dir)
    points = extract_points(runs, axis, metric, offset)
    if len(points) < 2:
        raise ArgumentError(
            f'need at least 2 usable points on the {axis} axis, found {len(points)}'
        )
    broken = fit_broken_power_law(points)
    usable = [r for r in runs if r.status != RunStatus.DIVERGED and r.entries]
    shift = resolve_offset(usable, metric, offset)
    report = fit_report(points, broken, axis, metric, shift)
    target = Path(out_dir) if out_dir else campaign_dir
    stem = f'fit-{axis}-{metric}'
    report_path = write_json(target / f'{stem}.json', report)
    svg_path = plot_fit_svg(points, broken, target / f'{stem}.svg', axis, metric)
    logger.info(
        f'Fit {axis}/{metric}: B0={broken.headline.B0:.6g} '
        f'log10_A0={broken.headline.log10_A0:.6g} ({broken.flag})'
    )
    return {**report, 'report_path': str(report_path), 'svg_path': str(svg_path)}


def _rescale_forecast(result: ForecastResult, mean: float, std: float) -> ForecastResult:
    def back(a):
        return None if a is None else a * std + mean

    return ForecastResult(
        trajectories=back(result.trajectories),
        mean=back(result.mean),
        lower=back(result.lower),
        upper=back(result.upper),
    )


def _rescale_insequence(pred: InSequencePrediction, mean: float, std: float) -> InSequencePrediction:
    return InSequencePrediction(
        targets=pred.targets * std + mean,
        mu=pred.mu * std + mean,
        lower=pred.lower * std + mean,
        upper=pred.upper * std + mean,
    )


def cmd_forecast(
    checkpoint_path: str | Path,
    series_path: str | Path,
    horizon: int,
    n_samples: int = 100,
    seed: int = 0,
    holdout: int = 0,
    column: str | None = None,
    out_dir: str | Path = 'forecast',
) -> dict[str, Any]:
    """Roll a checkpoint forward from the end of a series.

    The context is standardized with its own mean and standard deviation and
    forecasts are mapped back to the raw scale. ``holdout`` keeps the last
    points of the series back as truth.
    """
    if holdout < 0:
        raise ArgumentError(f'holdout must be >= 0, got {holdout}')
    model, meta = load_checkpoint(checkpoint_path)
    series = read_series_csv(series_path, column)
    if holdout >= series.size:
        raise ArgumentError(f'holdout {holdout} leaves no context in a series of {series.size}')
    context = series[: series.size - holdout] if holdout else series
    truth = series[series.size - holdout :] if holdout else None

    center = float(context.mean())
    scale = float(context.std())
    if scale == 0.0:
        scale = 1.0
    normalized = (context - center) / scale

    result = _rescale_forecast(
        forecast_rollout(model, normalized, horizon, n_samples, rng=seed), center, scale
    )
    insequence = None
    if normalized.size >= 2:
        insequence = _rescale_insequence(in_sequence_prediction(model, normalized), center, scale)

    out_dir = Path(out_dir)
    written = [str(write_forecast_csv(out_dir / 'forecast.csv', result, truth))]
    if insequence is not None:
        written.append(str(write_insequence_csv(out_dir / 'insequence.csv', insequence)))
    written.append(str(plot_forecast_svg(context, result, out_dir / 'forecast.svg', truth, insequence)))

    payload: dict[str, Any] = {
        'horizon': result.horizon,
        'n_samples': n_samples,
        'seed': seed,
        'checkpoint_step': meta.get('step'),
        'mean': result.mean.tolist(),
        'p16': None if result.lower is None else result.lower.tolist(),
        'p84': None if result.upper is None else result.upper.tolist(),
        'written': written,
    }
    if truth is not None and result.horizon:
        n = min(truth.size, result.horizon)
        payload['forecast_mse'] = float(np.mean((result.mean[:n] - truth[:n]) ** 2))
    return payload


def cmd_report(campaign_dir: str | Path, out_dir: str | Path | None = None) -> dict[str, Any]:
    campaign_dir = Path(campaign_dir)
    index = read_index(campaign_dir)
    target = Path(out_dir) if out_dir else campaign_dir / 'report'
    written = write_campaign_report(index, target)
    return {'written': [str(p) for p in written]}


def parse_offset(value: str | float) -> float | str:
    """``'auto'`` or a number; anything else is a ValidationError."""
    if isinstance(value, (int, float)):
        return float(value)
    if value == 'auto':
        return value
    try:
        return float(value)
    except ValueError as e:
        raise ValidationError('offset', value, "expected 'auto' or a number") from e
