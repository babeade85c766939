"""JSON config files: corpus manifests, run configs and experiment plans.

Relative paths inside a file resolve against that file's directory.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from lab.campaign import CampaignKind, ExperimentPlan
from lab.datapipe import CorpusManifest, SourceSpec, SynthSpec, synth_spec_from_options
from lab.trainer import TrainConfig
from lab.tsformer import ModelConfig
from utils.error_handler import ValidationError, require
from utils.logger import get_logger

logger = get_logger('configfile')

SCHEMA_VERSION = 1
MANIFEST_KEYS = {'schema_version', 'seq_len', 'f_d', 'split_seed', 'test_fraction', 'sources'}
SOURCE_KEYS = {'label', 'kind', 'options'}
CSV_OPTION_KEYS = {'path', 'format', 'column'}
SYNTH_OPTION_KEYS = {'total_points', 'families', 'min_length', 'max_length', 'seed'}
RUN_KEYS = {'schema_version', 'model', 'train', 'data', 'run_dir'}
DATA_KEYS = {'cache', 'f_d', 'seed'}
PLAN_DATA_KEYS = {'cache'}
PLAN_KEYS = {
    'schema_version', 'kind', 'root_seed', 'output_dir', 'data',
    'base_model', 'base_train', 'grid',
}


def read_json(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ValidationError('path', str(path), 'file does not exist')
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise ValidationError('path', str(path), f'invalid JSON: {e}') from e
    if not isinstance(data, dict):
        raise ValidationError('path', str(path), 'top level must be a JSON object')
    return data


def _check_keys(
    section: str, data: dict[str, Any], allowed: set[str], required: set[str] = frozenset()
) -> None:
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ValidationError(section, unknown, f'unknown keys {unknown}')
    missing = sorted(required - set(data))
    if missing:
        raise ValidationError(section, missing, f'missing keys {missing}')


def _check_schema(data: dict[str, Any]) -> None:
    version = data.get('schema_version', SCHEMA_VERSION)
    require(
        version == SCHEMA_VERSION,
        'schema_version',
        version,
        f'only schema_version {SCHEMA_VERSION} is supported',
    )


def _resolve(base: Path, value: str | None) -> Path | None:
    if value is None:
        return None
    path = Path(value).expanduser()
    return path if path.is_absolute() else base / path


def canonical_hash(data: dict[str, Any]) -> str:
    canonical = json.dumps(data, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def parse_manifest(data: dict[str, Any], base_dir: Path) -> CorpusManifest:
    _check_keys('manifest', data, MANIFEST_KEYS, {'sources'})
    _check_schema(data)
    sources = []
    for raw in data['sources']:
        _check_keys('sources', raw, SOURCE_KEYS, {'label', 'kind'})
        options = dict(raw.get('options', {}))
        if raw['kind'] == 'synth':
            _check_keys(f'sources.{raw["label"]}', options, SYNTH_OPTION_KEYS, {'total_points'})
            synth_spec_from_options(options)
        elif raw['kind'] == 'csv':
            _check_keys(f'sources.{raw["label"]}', options, CSV_OPTION_KEYS, {'path'})
            options['path'] = str(_resolve(base_dir, options['path']))
        else:
            raise ValidationError('kind', raw['kind'], "expected 'synth' or 'csv'")
        sources.append(SourceSpec(label=raw['label'], kind=raw['kind'], options=options))
    kwargs = {k: data[k] for k in ('seq_len', 'f_d', 'split_seed', 'test_fraction') if k in data}
    return CorpusManifest(sources=tuple(sources), **kwargs)


def load_manifest(path: str | Path) -> tuple[CorpusManifest, str]:
    """Parse a manifest; also return the hash identifying its content."""
    path = Path(path)
    data = read_json(path)
    manifest = parse_manifest(data, path.parent)
    return manifest, canonical_hash(data)


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    cache: Path
    run_dir: Path
    f_d: float = 1.0
    data_seed: int = 0


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    data = read_json(path)
    _check_keys('run config', data, RUN_KEYS, {'data'})
    _check_schema(data)
    data_section = data['data']
    _check_keys('data', data_section, DATA_KEYS, {'cache'})
    return RunConfig(
        model=ModelConfig.from_dict(data.get('model', {})),
        train=TrainConfig.from_dict(data.get('train', {})),
        cache=_resolve(path.parent, data_section['cache']),
        run_dir=_resolve(path.parent, data.get('run_dir', 'runs/' + path.stem)),
        f_d=float(data_section.get('f_d', 1.0)),
        data_seed=int(data_section.get('seed', 0)),
    )


def load_plan(path: str | Path) -> ExperimentPlan:
    path = Path(path)
    data = read_json(path)
    _check_keys('plan', data, PLAN_KEYS, {'kind', 'data', 'grid'})
    _check_schema(data)
    data_section = data['data']
    _check_keys('data', data_section, PLAN_DATA_KEYS, {'cache'})
    try:
        kind = CampaignKind(data['kind'])
    except ValueError as e:
        raise ValidationError(
            'kind', data['kind'], f'expected one of {[k.value for k in CampaignKind]}'
        ) from e
    return ExperimentPlan(
        kind=kind,
        root_seed=int(data.get('root_seed', 0)),
        output_dir=_resolve(path.parent, data.get('output_dir', 'campaigns/' + path.stem)),
        cache=_resolve(path.parent, data_section['cache']),
        base_model=dict(data.get('base_model', {})),
        base_train=dict(data.get('base_train', {})),
        grid={k: list(v) for k, v in data['grid'].items()},
    )


@dataclass(frozen=True)
class Templates:
    manifest: dict[str, Any] = field(default_factory=dict)
    run: dict[str, Any] = field(default_factory=dict)
    plan: dict[str, Any] = field(default_factory=dict)


def default_templates(cache_name: str = 'corpus.ltmc') -> Templates:
    """Template files with every default spelled out."""
    manifest = {
        'schema_version': SCHEMA_VERSION,
        'seq_len': ModelConfig().seq_len,
        'f_d': 1.0,
        'split_seed': 0,
        'test_fraction': 0.05,
        'sources': [
            {
                'label': 'synth',
                'kind': 'synth',
                'options': {'total_points': 2_000_000, 'seed': 0, **_synth_defaults()},
            }
        ],
    }
    run = {
        'schema_version': SCHEMA_VERSION,
        'model': ModelConfig().to_dict(),
        'train': TrainConfig().to_dict(),
        'data': {'cache': cache_name, 'f_d': 1.0, 'seed': 0},
        'run_dir': 'runs/train',
    }
    plan = {
        'schema_version': SCHEMA_VERSION,
        'kind': CampaignKind.PARAM_SCALING.value,
        'root_seed': 0,
        'output_dir': 'campaigns/param_scaling',
        'data': {'cache': cache_name},
        'base_model': ModelConfig().to_dict(),
        'base_train': TrainConfig().to_dict(),
        'grid': {'d_model': [16, 32, 64], 'n_layers': [1, 2], 'lr_max': [1e-3]},
    }
    return Templates(manifest=manifest, run=run, plan=plan)


def _synth_defaults() -> dict[str, Any]:
    recipe = SynthSpec(total_points=1)
    return {
        'families': list(recipe.families),
        'min_length': recipe.min_length,
        'max_length': recipe.max_length,
    }


def write_templates(directory: str | Path, overwrite: bool = False) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    templates = default_templates()
    files = {
        directory / 'manifest.json': templates.manifest,
        directory / 'train.json': templates.run,
        directory / 'plan.json': templates.plan,
    }
    if not overwrite:
        for target in files:
            if target.exists():
                raise ValidationError('path', str(target), 'already exists; pass --force to overwrite')
    written = []
    for target, content in files.items():
        target.write_text(json.dumps(content, indent=2) + '\n', encoding='utf-8')
        written.append(target)
        logger.info(f'Wrote template {target}')
    return written
