"""Shared fixtures for all tests.

Keeps log files and corpus caches out of the working tree and provides
tiny model/train configs and small synthetic corpora.
"""

import os

# Must be set before utils.logger configures its handlers on first import
os.environ.setdefault('LTM_LAB_LOG_DIR', '')

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from lab.datapipe import Corpus, SeriesRecord, SynthSpec, normalize_corpus, split, synth_corpus  # noqa: E402
from lab.trainer import TrainConfig  # noqa: E402
from lab.tsformer import ModelConfig  # noqa: E402

TINY_SEQ_LEN = 8


@pytest.fixture(autouse=True)
def isolated_cache_dir(tmp_path, monkeypatch):
    """Point LTM_LAB_CACHE_DIR at a per-test directory."""
    cache_dir = tmp_path / 'cache'
    monkeypatch.setenv('LTM_LAB_CACHE_DIR', str(cache_dir))
    return cache_dir


@pytest.fixture
def tiny_model_config():
    return ModelConfig(d_model=4, n_heads=1, n_layers=1, seq_len=TINY_SEQ_LEN)


@pytest.fixture
def tiny_train_config():
    return TrainConfig(
        batch_size=4,
        total_steps=6,
        warmup_steps=2,
        lr_max=1e-2,
        eval_every=3,
        eval_fraction=1.0,
        eval_batch_size=16,
        seed=0,
    )


@pytest.fixture
def small_corpus():
    """Two synthetic families, normalized: 4000 points in series of 40-80."""
    recipe = SynthSpec(
        total_points=4000,
        families=('sine_slow', 'ar2_persistent'),
        min_length=40,
        max_length=80,
    )
    return normalize_corpus(synth_corpus(recipe, seed=0))


@pytest.fixture
def small_split(small_corpus):
    return split(small_corpus, seed=0, test_fraction=0.1)


@pytest.fixture
def make_corpus():
    """Factory: corpus with one series per given length, source 'src'."""

    def _factory(lengths, source='src', seed=0):
        rng = np.random.default_rng(seed)
        return Corpus(
            tuple(
                SeriesRecord(source, f'{source}-{i}', rng.standard_normal(n))
                for i, n in enumerate(lengths)
            )
        )

    return _factory


def tiny_manifest(cache_points: int = 3000) -> dict:
    """Manifest dict with one synthetic source of small series."""
    return {
        'schema_version': 1,
        'seq_len': TINY_SEQ_LEN,
        'f_d': 1.0,
        'split_seed': 0,
        'test_fraction': 0.1,
        'sources': [
            {
                'label': 'synth',
                'kind': 'synth',
                'options': {
                    'total_points': cache_points,
                    'seed': 0,
                    'families': ['sine_slow', 'ar2_persistent', 'random_walk'],
                    'min_length': 40,
                    'max_length': 80,
                },
            }
        ],
    }


def tiny_model_dict(**overrides) -> dict:
    base = {'d_model': 4, 'n_heads': 1, 'n_layers': 1, 'seq_len': TINY_SEQ_LEN}
    base.update(overrides)
    return base


def tiny_train_dict(**overrides) -> dict:
    base = {
        'batch_size': 4,
        'total_steps': 6,
        'warmup_steps': 2,
        'lr_max': 1e-2,
        'eval_every': 3,
        'eval_fraction': 1.0,
        'eval_batch_size': 16,
    }
    base.update(overrides)
    return base
