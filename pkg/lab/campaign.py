"""Sweep campaigns over model size, data fraction, learning rate and architecture."""

from __future__ import annotations

import itertools
import json
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import StrEnum
from pathlib import Path
from typing import Any

import numpy as np

from lab.datapipe import derive_seed, scale_dataset
from lab.scalinglab import RunSeries, fit_optimal_lr
from lab.storage import read_corpus_cache
from lab.trainer import (
    RUNLOG_NAME,
    RunStatus,
    TrainConfig,
    TrainResult,
    read_runlog,
    train,
    write_summary,
)
from lab.tsformer import ModelConfig, TimeSeriesTransformer, aspect_ratio
from utils.error_handler import (
    CorpusError,
    FitConvergenceError,
    PlanValidationError,
    ValidationError,
)
from utils.logger import get_logger

logger = get_logger('campaign')

INDEX_NAME = 'index.json'
INDEX_SCHEMA_VERSION = 1
GRID_AXES = ('d_model', 'n_layers', 'n_heads', 'lr_max', 'f_d')
PARAM_SCALING_HEADS = 4
MAX_ASPECT_RATIO = 70
LR_BACKOFF_FACTOR = 0.8
MAX_LR_RETRIES = 4
MIN_SIZES_FOR_LR_FIT = 4


class CampaignKind(StrEnum):
    PARAM_SCALING = 'param_scaling'
    DATA_SCALING = 'data_scaling'
    LR_SWEEP = 'lr_sweep'
    ARCH_SWEEP = 'arch_sweep'


@dataclass(frozen=True)
class ExperimentPlan:
    kind: CampaignKind
    root_seed: int
    output_dir: Path
    cache: Path
    base_model: dict[str, Any] = field(default_factory=dict)
    base_train: dict[str, Any] = field(default_factory=dict)
    grid: dict[str, list[Any]] = field(default_factory=dict)

    @property
    def retries_diverged(self) -> bool:
        return self.kind in (CampaignKind.PARAM_SCALING, CampaignKind.DATA_SCALING)


@dataclass(frozen=True)
class CellSpec:
    index: int
    cell_id: str
    model: ModelConfig
    train: TrainConfig
    f_d: float
    seed: int


def expand_grid(plan: ExperimentPlan) -> list[CellSpec]:
    """Cartesian product of the grid axes, in GRID_AXES order."""
    unknown = sorted(set(plan.grid) - set(GRID_AXES))
    if unknown:
        raise ValidationError('grid', unknown, f'grid axes must be among {GRID_AXES}')
    empty = sorted(k for k, v in plan.grid.items() if not v)
    if empty:
        raise ValidationError('grid', empty, 'grid axes need at least one value')

    base_model = ModelConfig.from_dict(plan.base_model)
    base_train = TrainConfig.from_dict(plan.base_train)
    defaults = {
        'd_model': base_model.d_model,
        'n_layers': base_model.n_layers,
        'n_heads': base_model.n_heads,
        'lr_max': base_train.lr_max,
        'f_d': 1.0,
    }
    axes = [plan.grid.get(name, [defaults[name]]) for name in GRID_AXES]
    cells = []
    for i, (d_model, n_layers, n_heads, lr_max, f_d) in enumerate(itertools.product(*axes)):
        cell_id = f'{i:03d}-dm{d_model}-nl{n_layers}-h{n_heads}-lr{lr_max:g}-fd{f_d:g}'
        seed = derive_seed(plan.root_seed, 'cell', cell_id) % 2**32
        cells.append(
            CellSpec(
                index=i,
                cell_id=cell_id,
                model=replace(base_model, d_model=int(d_model), n_layers=int(n_layers), n_heads=int(n_heads)),
                train=replace(base_train, lr_max=float(lr_max), seed=seed),
                f_d=float(f_d),
                seed=seed,
            )
        )
    return cells


def validate_plan(plan: ExperimentPlan, cells: list[CellSpec]) -> None:
    """Reject plans that break a campaign guard, before anything runs."""
    for cell in cells:
        if cell.model.n_layers < 1:
            raise PlanValidationError('n_layers', cell.model.n_layers, f'cell {cell.cell_id} needs >= 1 layer')
        if not 0 < cell.f_d <= 1:
            raise PlanValidationError('f_d', cell.f_d, f'cell {cell.cell_id}: f_d must lie in (0, 1]')

    if plan.kind == CampaignKind.PARAM_SCALING:
        for cell in cells:
            if cell.model.n_heads != PARAM_SCALING_HEADS:
                raise PlanValidationError(
                    'n_heads', cell.model.n_heads,
                    f'param_scaling fixes n_heads to {PARAM_SCALING_HEADS} (cell {cell.cell_id})',
                )
            ratio = aspect_ratio(cell.model)
            if ratio >= MAX_ASPECT_RATIO:
                raise PlanValidationError(
                    'aspect_ratio', str(ratio),
                    f'param_scaling needs d_model/n_layers < {MAX_ASPECT_RATIO} (cell {cell.cell_id})',
                )
    elif plan.kind == CampaignKind.DATA_SCALING:
        fixed = {(c.model, c.train.lr_max) for c in cells}
        if len(fixed) != 1:
            raise PlanValidationError(
                'grid', sorted(plan.grid), 'data_scaling holds the model fixed and varies f_d only'
            )
    elif plan.kind == CampaignKind.LR_SWEEP:
        if len(plan.grid.get('lr_max', [])) < 2:
            raise PlanValidationError('lr_max', plan.grid.get('lr_max'), 'lr_sweep needs >= 2 lr_max values')


def execute_run(
    model_config: ModelConfig,
    train_config: TrainConfig,
    cache_path: Path,
    run_dir: Path,
    f_d: float = 1.0,
    data_seed: int = 0,
) -> TrainResult:
    """Load the cached corpus, scale it, initialize a model and train it."""
    cache = read_corpus_cache(cache_path)
    if cache.seq_len != model_config.seq_len:
        logger.warning(
            f'Corpus was ingested for seq_len={cache.seq_len}, model uses {model_config.seq_len}'
        )
    train_corpus = scale_dataset(
        cache.train,
        f_d,
        np.random.default_rng(derive_seed(data_seed, 'scale_dataset')),
        model_config.seq_len,
    )
    if len(train_corpus) == 0:
        raise CorpusError(f'f_d={f_d} dropped every training series')
    if len(cache.test) == 0:
        raise CorpusError('corpus cache has no test series')
    model = TimeSeriesTransformer.initialize(model_config, seed=train_config.seed)
    return train(
        model,
        train_corpus,
        cache.test,
        train_config,
        run_dir=run_dir,
        extra_config={
            'f_d': f_d,
            'data_seed': data_seed,
            'corpus': cache.header.get('manifest_hash'),
        },
    )


def run_cell(cell: CellSpec, plan: ExperimentPlan) -> dict[str, Any]:
    """Run one grid cell; DIVERGED param/data cells retry with lr_max * 0.8."""
    relative_dir = Path('runs') / cell.cell_id
    run_dir = plan.output_dir / relative_dir
    lr_max = cell.train.lr_max
    attempts = 0
    while True:
        attempts += 1
        if run_dir.exists():
            shutil.rmtree(run_dir)
        result = execute_run(
            cell.model,
            replace(cell.train, lr_max=lr_max),
            plan.cache,
            run_dir,
            f_d=cell.f_d,
            data_seed=plan.root_seed,
        )
        if (
            result.status != RunStatus.DIVERGED
            or not plan.retries_diverged
            or attempts > MAX_LR_RETRIES
        ):
            break
        logger.warning(
            f'Cell {cell.cell_id} diverged at lr_max={lr_max:g}; retrying with {lr_max * LR_BACKOFF_FACTOR:g}'
        )
        lr_max *= LR_BACKOFF_FACTOR

    summary = dict(result.summary, attempts=attempts, lr_max=lr_max)
    write_summary(run_dir, summary)
    logger.info(f'Cell {cell.cell_id}: {summary["status"]} after {attempts} attempt(s)')
    return {
        'index': cell.index,
        'cell_id': cell.cell_id,
        'run_dir': relative_dir.as_posix(),
        'model': cell.model.to_dict(),
        'aspect_ratio': float(aspect_ratio(cell.model)),
        'n_params': summary['n_params'],
        'lr_max_requested': cell.train.lr_max,
        'lr_max': lr_max,
        'f_d': cell.f_d,
        'seed': cell.seed,
        'status': summary['status'],
        'attempts': attempts,
        'train_points': summary['train_points'],
        'final_compute': summary['final_compute'],
        'min_test_mse': summary['min_test_mse'],
        'min_test_crps': summary['min_test_crps'],
        'min_test_nll': summary['min_test_nll'],
    }


def _run_cell_job(job: tuple[CellSpec, ExperimentPlan]) -> dict[str, Any]:
    cell, plan = job
    return run_cell(cell, plan)


def select_best_lr(
    records: list[dict[str, Any]], metric: str = 'crps'
) -> dict[str, dict[str, Any]]:
    """Best lr_max per model size by minimum test metric; DIVERGED cells never win."""
    key = f'min_test_{metric}'
    best: dict[int, dict[str, Any]] = {}
    for record in records:
        if record['status'] == RunStatus.DIVERGED or record.get(key) is None:
            continue
        size = int(record['n_params'])
        if size not in best or record[key] < best[size][key]:
            best[size] = record
    return {
        str(size): {'lr_max': r['lr_max'], 'cell_id': r['cell_id'], key: r[key]}
        for size, r in sorted(best.items())
    }


def run_campaign(plan: ExperimentPlan, parallel: int = 1) -> dict[str, Any]:
    """Run every grid cell and write the campaign index."""
    cells = expand_grid(plan)
    validate_plan(plan, cells)
    if not plan.cache.is_file():
        raise CorpusError(f'corpus cache {str(plan.cache)!r} does not exist')
    plan.output_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f'Campaign {plan.kind}: {len(cells)} cells, parallel={parallel}')

    if parallel > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            records = list(pool.map(_run_cell_job, [(cell, plan) for cell in cells]))
    else:
        records = [run_cell(cell, plan) for cell in cells]

    index: dict[str, Any] = {
        'schema_version': INDEX_SCHEMA_VERSION,
        'kind': str(plan.kind),
        'root_seed': plan.root_seed,
        'cache': str(plan.cache),
        'n_cells': len(records),
        'cells': records,
    }
    if plan.kind == CampaignKind.LR_SWEEP:
        best = select_best_lr(records)
        index['best_lr_per_size'] = best
        if len(best) >= MIN_SIZES_FOR_LR_FIT:
            points = [(int(size), entry['lr_max']) for size, entry in best.items()]
            try:
                index['optimal_lr_fit'] = fit_optimal_lr(points).to_dict()
            except FitConvergenceError as e:
                logger.warning(f'Optimal-LR fit did not converge: {e}')
                index['optimal_lr_fit'] = {'error': str(e), 'best': e.best.to_dict() if e.best else None}
    write_index(plan.output_dir, index)
    return index


def write_index(campaign_dir: Path, index: dict[str, Any]) -> Path:
    path = campaign_dir / INDEX_NAME
    path.write_text(json.dumps(index, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    return path


def read_index(campaign_dir: str | Path) -> dict[str, Any]:
    campaign_dir = Path(campaign_dir)
    if not campaign_dir.is_dir():
        raise ValidationError('campaign_dir', str(campaign_dir), 'directory does not exist')
    path = campaign_dir / INDEX_NAME
    if not path.is_file():
        raise ValidationError('campaign_dir', str(campaign_dir), f'no {INDEX_NAME} found')
    return json.loads(path.read_text(encoding='utf-8'))


def load_campaign_runs(campaign_dir: str | Path) -> tuple[dict[str, Any], list[RunSeries]]:
    """Index plus each cell's run log, in index order."""
    campaign_dir = Path(campaign_dir)
    index = read_index(campaign_dir)
    runs = []
    for cell in index['cells']:
        log_path = campaign_dir / cell['run_dir'] / RUNLOG_NAME
        entries = tuple(read_runlog(log_path)) if log_path.is_file() else ()
        runs.append(
            RunSeries(
                run_id=cell['cell_id'],
                status=RunStatus(cell['status']),
                n_params=int(cell['n_params']),
                train_points=int(cell['train_points']),
                entries=entries,
            )
        )
    return index, runs
