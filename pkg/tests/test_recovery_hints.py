"""Tests for recovery hints module."""

import pytest

from utils.error_handler import (
    CheckpointError,
    CorpusError,
    NonFiniteGradientError,
    PlanValidationError,
    QuadratureError,
    ValidationError,
    describe_exception,
)
from utils.recovery_hints import _HINT_REGISTRY, enrich_error_response, get_recovery_hints


class TestGetRecoveryHints:
    """Tests for the hint lookup."""

    def test_corpus_points_at_ingest(self):
        hints = get_recovery_hints('corpus')
        assert any('ltm-lab ingest' in h for h in hints['recovery_hints'])
        assert 'ingest_corpus' in hints['related_tools']

    def test_unknown_code(self):
        assert get_recovery_hints('nope') == {'recovery_hints': [], 'related_tools': []}

    def test_none_code(self):
        assert get_recovery_hints(None)['recovery_hints'] == []

    def test_returned_lists_are_copies(self):
        hints = get_recovery_hints('diverged')
        hints['recovery_hints'].append('mutated')
        assert 'mutated' not in _HINT_REGISTRY['diverged']['recovery_hints']

    @pytest.mark.parametrize(
        'exc',
        [
            ValidationError('f', 1, 'bad'),
            PlanValidationError('n_heads', 2, 'bad'),
            CorpusError('x'),
            CheckpointError('x'),
            NonFiniteGradientError('w'),
            QuadratureError(1e-3, 1e-8),
        ],
    )
    def test_every_exception_code_has_hints(self, exc):
        assert get_recovery_hints(describe_exception(exc)['error_code'])['recovery_hints']


class TestEnrichErrorResponse:
    """Tests for enrich_error_response."""

    def test_adds_hints_to_errors(self):
        out = enrich_error_response({'status': 'error', 'error_code': 'checkpoint', 'message': 'm'})
        assert out['recovery_hints']
        assert out['related_tools'] == ['train_run']

    def test_success_untouched(self):
        response = {'status': 'success', 'data': {}}
        assert enrich_error_response(response) == {'status': 'success', 'data': {}}

    def test_existing_hints_kept(self):
        response = {'status': 'error', 'error_code': 'corpus', 'recovery_hints': ['custom']}
        assert enrich_error_response(response)['recovery_hints'] == ['custom']

    def test_unknown_code_adds_nothing(self):
        out = enrich_error_response({'status': 'error', 'error_code': 'mystery'})
        assert 'recovery_hints' not in out
        assert 'related_tools' not in out

    def test_quadrature_has_no_related_tools(self):
        out = enrich_error_response({'status': 'error', 'error_code': 'quadrature'})
        assert out['recovery_hints']
        assert 'related_tools' not in out


class TestDescribeException:
    """Fields shared by CLI and tool error output."""

    def test_validation_fields(self):
        info = describe_exception(ValidationError('horizon', -1, 'must be >= 0'))
        assert info == {'error_code': 'validation', 'error_type': 'ValidationError', 'field': 'horizon', 'value': '-1'}

    def test_gradient_names_tensor(self):
        assert describe_exception(NonFiniteGradientError('head.mu.out.w'))['tensor'] == 'head.mu.out.w'

    def test_plain_exception_is_internal(self):
        assert describe_exception(RuntimeError('x'))['error_code'] == 'internal'
