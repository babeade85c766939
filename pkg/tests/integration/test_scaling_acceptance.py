"""Desk-scale scaling study at full size.

Three models of roughly 1e3, 1e4 and 1e5 parameters trained for 5000 steps
(batch 64, 64-step windows) on a 2e6-point synthetic corpus, plus a data
sweep on the 1e4 model. Expect a few hours on a desktop CPU; set
LTM_LAB_RUN_SLOW=1 to run it.
"""

import json

import pytest

from lab.campaign import load_campaign_runs
from lab.commands import cmd_ingest, cmd_sweep
from lab.scalinglab import extract_points
from tests.integration.conftest import slow_enabled

pytestmark = [
    pytest.mark.integration,
    pytest.mark.slow,
    pytest.mark.skipif(not slow_enabled(), reason='set LTM_LAB_RUN_SLOW=1'),
]

SEQ_LEN = 64
TRAIN = {
    'batch_size': 64,
    'total_steps': 5000,
    'warmup_steps': 500,
    'lr_max': 1e-3,
    'eval_every': 250,
    'eval_fraction': 0.25,
    'eval_batch_size': 256,
}
# 1403, 11115 and 75715 parameters at one layer and four heads
WIDTHS = [8, 24, 64]


@pytest.fixture(scope='module')
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp('acceptance')
    manifest = {
        'seq_len': SEQ_LEN,
        'split_seed': 0,
        'sources': [{'label': 'synth', 'kind': 'synth', 'options': {'total_points': 2_000_000, 'seed': 0}}],
    }
    (root / 'manifest.json').write_text(json.dumps(manifest), encoding='utf-8')
    ingested = cmd_ingest(root / 'manifest.json', root / 'corpus.ltmc')
    assert ingested['balance']['warnings'] == []
    return root


def _campaign(root, name, kind, grid, d_model=24):
    plan = {
        'kind': kind,
        'root_seed': 0,
        'data': {'cache': 'corpus.ltmc'},
        'base_model': {'d_model': d_model, 'n_heads': 4, 'n_layers': 1, 'seq_len': SEQ_LEN},
        'base_train': TRAIN,
        'grid': grid,
    }
    path = root / f'{name}.json'
    path.write_text(json.dumps(plan), encoding='utf-8')
    return cmd_sweep(path)


def _strictly_decreasing(values):
    return all(b < a for a, b in zip(values, values[1:], strict=False))


def _non_increasing(values):
    return all(b <= a for a, b in zip(values, values[1:], strict=False))


class TestScalingAcceptance:
    """Bigger models and more data give lower held-out loss."""

    def test_model_size(self, corpus_dir):
        index = _campaign(corpus_dir, 'params', 'param_scaling', {'d_model': WIDTHS})
        cells = sorted(index['cells'], key=lambda c: c['n_params'])
        assert [c['n_params'] for c in cells] == [1403, 11115, 75715]
        assert all(c['status'] != 'DIVERGED' for c in cells)
        for metric in ('nll', 'mse', 'crps'):
            assert _strictly_decreasing([c[f'min_test_{metric}'] for c in cells]), metric

        _, runs = load_campaign_runs(corpus_dir / 'campaigns' / 'params')
        frontier = extract_points(runs, 'compute', 'nll')
        computes = [c for c, _ in frontier]
        assert computes == sorted(computes)
        assert _non_increasing([loss for _, loss in frontier])

    def test_data_fraction(self, corpus_dir):
        index = _campaign(corpus_dir, 'data', 'data_scaling', {'f_d': [0.125, 0.5, 1.0]})
        cells = sorted(index['cells'], key=lambda c: c['f_d'])
        assert all(c['n_params'] == 11115 for c in cells)
        points = [c['train_points'] for c in cells]
        assert points == sorted(points)
        assert _non_increasing([c['min_test_nll'] for c in cells])
