"""Tests for the tool decorators."""

import logging

import pytest

from utils.decorators import with_argument_validation, with_error_handling, with_logging
from utils.error_handler import CorpusError


@with_argument_validation
async def _forecast_like(horizon: int, n_samples: int = 10, axis: str = 'params', f_d: float = 1.0):
    return {'status': 'success', 'horizon': horizon}


@with_argument_validation
async def _needs_paths(cache_path: str, campaign_dir: str | None = None):
    return {'status': 'success'}


@with_error_handling
async def _raises(exc):
    raise exc


@with_error_handling
async def _returns(value):
    return value


class TestArgumentValidation:
    """with_argument_validation"""

    async def test_valid_arguments_pass(self):
        assert (await _forecast_like(3))['status'] == 'success'

    @pytest.mark.parametrize(
        ('kwargs', 'field'),
        [
            ({'horizon': -1}, 'horizon'),
            ({'horizon': 2.5}, 'horizon'),
            ({'horizon': 1, 'n_samples': 0}, 'n_samples'),
            ({'horizon': 1, 'axis': 'tokens'}, 'axis'),
            ({'horizon': 1, 'f_d': 0.0}, 'f_d'),
            ({'horizon': 1, 'f_d': 1.5}, 'f_d'),
        ],
    )
    async def test_rejections(self, kwargs, field):
        out = await _forecast_like(**kwargs)
        assert out['status'] == 'error'
        assert out['error_code'] == 'validation'
        assert out['field'] == field
        assert out['suggestion']

    async def test_zero_horizon_allowed(self):
        assert (await _forecast_like(0))['horizon'] == 0

    async def test_missing_file(self, tmp_path):
        out = await _needs_paths(str(tmp_path / 'missing.ltmc'))
        assert out['field'] == 'cache_path'
        assert 'existing path' in out['suggestion']

    async def test_directory_is_not_a_file(self, tmp_path):
        out = await _needs_paths(str(tmp_path))
        assert out['field'] == 'cache_path'

    async def test_directory_argument(self, tmp_path):
        cache = tmp_path / 'c.ltmc'
        cache.write_bytes(b'')
        assert (await _needs_paths(str(cache), str(tmp_path)))['status'] == 'success'
        assert (await _needs_paths(str(cache), str(cache)))['field'] == 'campaign_dir'

    async def test_none_skips_path_check(self, tmp_path):
        cache = tmp_path / 'c.ltmc'
        cache.write_bytes(b'')
        assert (await _needs_paths(str(cache), None))['status'] == 'success'


class TestErrorHandling:
    """with_error_handling"""

    async def test_lab_error_becomes_enriched_envelope(self):
        out = await _raises(CorpusError('cache missing'))
        assert out['status'] == 'error'
        assert out['error_code'] == 'corpus'
        assert out['error_type'] == 'CorpusError'
        assert 'cache missing' in out['message']
        assert out['recovery_hints']

    async def test_unexpected_error_is_internal(self):
        out = await _raises(KeyError('k'))
        assert out['error_code'] == 'internal'

    async def test_non_finite_values_sanitized(self):
        out = await _returns({'status': 'success', 'data': {'nll': float('nan')}})
        assert out['data']['nll'] is None

    async def test_non_dict_passes_through(self):
        assert await _returns([1, 2]) == [1, 2]


class TestLogging:
    """with_logging"""

    async def test_logs_call_and_success(self, caplog):
        @with_logging
        async def sample_tool(x: int, y: int = 2):
            return {'status': 'success'}

        with caplog.at_level(logging.INFO, logger='ltm_lab.decorators'):
            await sample_tool(1)

        messages = [r.getMessage() for r in caplog.records]
        assert "sample_tool called with: {'x': 1, 'y': 2}" in messages
        assert any(m.startswith('sample_tool completed successfully in ') for m in messages)

    async def test_error_result_not_logged_as_success(self, caplog):
        @with_logging
        async def failing_tool():
            return {'status': 'error'}

        with caplog.at_level(logging.INFO, logger='ltm_lab.decorators'):
            await failing_tool()

        assert not any('completed successfully' in r.getMessage() for r in caplog.records)
