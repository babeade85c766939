"""CSV, JSON and SVG artifacts: fit reports, forecasts and campaign tables.

SVGs are rendered with matplotlib's Agg backend, a fixed ``svg.hashsalt``
and no date metadata, so identical inputs give identical bytes.
"""

from __future__ import annotations

import json
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from lab.scalinglab import BreakFlag, BrokenPowerLawFit  # noqa: E402
from lab.trainer import RunStatus  # noqa: E402
from lab.tsformer import ForecastResult, InSequencePrediction  # noqa: E402
from utils.logger import get_logger  # noqa: E402

logger = get_logger('reporting')

REPORT_SCHEMA_VERSION = 1
SVG_SETTINGS = {'svg.hashsalt': 'ltm-lab', 'svg.fonttype': 'none', 'path.simplify': False}
AXIS_LABELS = {
    'params': 'parameters $N_p$',
    'compute': 'compute $\\mathcal{C}$ (FLOPs)',
    'data': 'training points',
}


def _save_svg(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format='svg', metadata={'Date': None})
    plt.close(fig)
    logger.info(f'Wrote {path}')
    return path


def write_json(path: str | Path, payload: dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    return path


def fit_report(
    points: Sequence[tuple[float, float]],
    broken: BrokenPowerLawFit,
    axis: str,
    metric: str,
    offset: float,
) -> dict[str, Any]:
    headline = broken.headline
    return {
        'schema_version': REPORT_SCHEMA_VERSION,
        'axis': axis,
        'metric': metric,
        'offset': offset,
        'n_points': len(points),
        'points': [[float(a), float(loss)] for a, loss in points],
        'single': broken.single.to_dict(),
        'broken': broken.to_dict(),
        'headline': {
            'B0': headline.B0,
            'log10_A0': headline.log10_A0,
            'rss': headline.rss,
            'n_points': headline.n_points,
            'segment': 'post_break' if headline is not broken.single else 'single',
        },
    }


def plot_fit_svg(
    points: Sequence[tuple[float, float]],
    broken: BrokenPowerLawFit,
    path: str | Path,
    axis: str,
    metric: str,
) -> Path:
    """Log-log scatter with the single fit, the headline fit and any break marker."""
    a = np.array([p[0] for p in points], dtype=np.float64)
    loss = np.array([p[1] for p in points], dtype=np.float64)
    grid = np.geomspace(a.min(), a.max(), 200)
    with plt.rc_context(SVG_SETTINGS):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.loglog(a, loss, 'o', color='tab:blue', label='runs')
        ax.loglog(grid, broken.single.predict(grid), '--', color='tab:gray',
                  label=f'single fit $B_0$={broken.single.B0:.4f}')
        if broken.flag == BreakFlag.BREAK and broken.break_A is not None:
            post = grid[grid >= broken.break_A]
            ax.loglog(post, broken.post.predict(post), '-', color='tab:red',
                      label=f'post-break $B_0$={broken.post.B0:.4f}')
            ax.axvline(broken.break_A, color='tab:red', linestyle=':', linewidth=1)
        ax.set_xlabel(AXIS_LABELS.get(axis, axis))
        ax.set_ylabel(f'min test {metric}')
        ax.legend(loc='best', fontsize='small')
        fig.tight_layout()
        return _save_svg(fig, Path(path))


def forecast_frame(result: ForecastResult, truth: np.ndarray | None = None) -> pd.DataFrame:
    """One row per forecast step: mean, 16th/84th percentiles, truth, samples."""
    columns: dict[str, Any] = {
        'step': np.arange(1, result.horizon + 1, dtype=np.int64),
        'mean': result.mean,
        'p16': result.lower if result.lower is not None else np.zeros(0),
        'p84': result.upper if result.upper is not None else np.zeros(0),
    }
    if truth is not None:
        padded = np.full(result.horizon, np.nan)
        known = np.asarray(truth, dtype=np.float64)[: result.horizon]
        padded[: known.size] = known
        columns['truth'] = padded
    for i in range(result.trajectories.shape[0]):
        columns[f'sample_{i}'] = result.trajectories[i]
    return pd.DataFrame(columns)


def write_forecast_csv(
    path: str | Path, result: ForecastResult, truth: np.ndarray | None = None
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    forecast_frame(result, truth).to_csv(path, index=False, float_format='%.10g')
    return path


def write_insequence_csv(path: str | Path, prediction: InSequencePrediction) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = prediction.targets.size
    frame = pd.DataFrame(
        {
            'position': np.arange(-n + 1, 1, dtype=np.int64),
            'value': prediction.targets,
            'mu': prediction.mu,
            'p16': prediction.lower,
            'p84': prediction.upper,
        }
    )
    frame.to_csv(path, index=False, float_format='%.10g')
    return path


def plot_forecast_svg(
    context: np.ndarray,
    result: ForecastResult,
    path: str | Path,
    truth: np.ndarray | None = None,
    insequence: InSequencePrediction | None = None,
) -> Path:
    """Context, in-sequence band, roll-out mean with its 1-sigma band, and truth."""
    context = np.asarray(context, dtype=np.float64)
    past = np.arange(-context.size + 1, 1)
    future = np.arange(1, result.horizon + 1)
    with plt.rc_context(SVG_SETTINGS):
        fig, ax = plt.subplots(figsize=(8, 4))
        ax.plot(past, context, color='black', linewidth=1, label='context')
        if insequence is not None:
            n = insequence.targets.size
            positions = np.arange(-n + 1, 1)
            ax.plot(positions, insequence.mu, color='tab:green', linewidth=1, label='in-sequence')
            ax.fill_between(positions, insequence.lower, insequence.upper, color='tab:green', alpha=0.2)
        if result.horizon:
            ax.plot(future, result.mean, color='tab:blue', label='forecast mean')
            ax.fill_between(future, result.lower, result.upper, color='tab:blue', alpha=0.25,
                            label='1$\\sigma$ band')
        if truth is not None and result.horizon:
            known = np.asarray(truth)[: result.horizon]
            ax.plot(future[: known.size], known, color='tab:red', linewidth=1,
                    label='truth')
        ax.axvline(0.5, color='tab:gray', linestyle=':', linewidth=1)
        ax.set_xlabel('step')
        ax.legend(loc='best', fontsize='small')
        fig.tight_layout()
        return _save_svg(fig, Path(path))


SUMMARY_COLUMNS = [
    'cell_id', 'n_params', 'd_model', 'n_layers', 'n_heads', 'aspect_ratio', 'lr_max',
    'f_d', 'status', 'attempts', 'min_test_mse', 'min_test_crps', 'min_test_nll',
    'final_compute',
]


def campaign_frame(index: dict[str, Any]) -> pd.DataFrame:
    rows = []
    for cell in index['cells']:
        rows.append(
            {
                **{k: cell.get(k) for k in SUMMARY_COLUMNS if k in cell},
                'd_model': cell['model']['d_model'],
                'n_layers': cell['model']['n_layers'],
                'n_heads': cell['model']['n_heads'],
            }
        )
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def architecture_tables(frame: pd.DataFrame) -> dict[str, pd.DataFrame]:
    """Min CRPS against aspect ratio and against head count, DIVERGED cells excluded."""
    usable = frame[frame['status'] != RunStatus.DIVERGED.value]
    return {
        'aspect': usable.groupby(['n_params', 'aspect_ratio'], as_index=False)['min_test_crps'].min(),
        'heads': usable.groupby(['n_params', 'n_heads'], as_index=False)['min_test_crps'].min(),
    }


def plot_lr_sweep_svg(frame: pd.DataFrame, path: str | Path) -> Path:
    """Min CRPS against lr_max per model size; DIVERGED cells drawn as crosses."""
    with plt.rc_context(SVG_SETTINGS):
        fig, ax = plt.subplots(figsize=(6, 4))
        for size, group in frame.sort_values('lr_max').groupby('n_params', sort=True):
            ok = group[group['status'] != RunStatus.DIVERGED.value]
            line, = ax.semilogx(ok['lr_max'], ok['min_test_crps'], 'o-', label=f'$N_p$={size}')
            bad = group[group['status'] == RunStatus.DIVERGED.value]
            if len(bad):
                ceiling = frame['min_test_crps'].max()
                ax.semilogx(bad['lr_max'], np.full(len(bad), ceiling), 'x',
                            color=line.get_color(), markersize=8)
        ax.set_xlabel('lr_max')
        ax.set_ylabel('min test CRPS')
        ax.legend(loc='best', fontsize='small')
        fig.tight_layout()
        return _save_svg(fig, Path(path))


def write_campaign_report(index: dict[str, Any], out_dir: str | Path) -> list[Path]:
    """Summary CSV, architecture tables and (for LR sweeps) the LR plot."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame = campaign_frame(index)
    written = [out_dir / 'summary.csv']
    frame.to_csv(written[0], index=False, float_format='%.10g')
    for name, table in architecture_tables(frame).items():
        target = out_dir / f'arch-{name}.csv'
        table.to_csv(target, index=False, float_format='%.10g')
        written.append(target)
    if index.get('kind') == 'lr_sweep':
        written.append(plot_lr_sweep_svg(frame, out_dir / 'lr-sweep.svg'))
    return written
