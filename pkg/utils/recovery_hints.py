"""Recovery hints for error responses, keyed by error code."""

from typing import Any

# Hint registry: error code -> {recovery_hints, related_tools}
_HINT_REGISTRY: dict[str, dict[str, list[str]]] = {
    'corpus': {
        'recovery_hints': [
            'The corpus cache is missing, empty or unreadable.',
            'Build it first: ltm-lab ingest <manifest.json>',
        ],
        'related_tools': ['ingest_corpus', 'describe_corpus'],
    },
    'checkpoint': {
        'recovery_hints': [
            'The checkpoint file is missing, truncated or of an unknown version.',
            'Use best.ltmk from a finished run directory.',
        ],
        'related_tools': ['train_run'],
    },
    'validation': {
        'recovery_hints': [
            'A config value or argument is invalid; the message names the field.',
            'Run ltm-lab init <dir> to see a template with every default.',
        ],
        'related_tools': [],
    },
    'plan': {
        'recovery_hints': [
            'The experiment plan breaks a campaign guard.',
            'param_scaling needs n_heads=4 and d_model/n_layers < 70; data_scaling may vary f_d only.',
        ],
        'related_tools': ['list_campaign_runs'],
    },
    'argument': {
        'recovery_hints': [
            'An argument is outside its accepted range (e.g. horizon >= 0, n_samples >= 1, 0 < f_d <= 1).',
        ],
        'related_tools': [],
    },
    'domain': {
        'recovery_hints': [
            'A value lies outside its mathematical domain.',
            'Log-likelihood fits need positive values: use offset=2 or offset=auto.',
        ],
        'related_tools': ['fit_scaling_law'],
    },
    'non_finite_gradient': {
        'recovery_hints': [
            'Training produced NaN or Inf gradients; lower lr_max or enable grad_clip_norm.',
        ],
        'related_tools': ['train_run'],
    },
    'diverged': {
        'recovery_hints': [
            'The run diverged (NaN loss or train NLL far above its starting value).',
            'Lower lr_max, lengthen warmup_steps or set grad_clip_norm, then train again.',
        ],
        'related_tools': ['train_run'],
    },
    'contract': {
        'recovery_hints': [
            'An internal precondition failed (e.g. every target masked out).',
            'Check that the corpus series are longer than one point.',
        ],
        'related_tools': ['describe_corpus'],
    },
    'fit_convergence': {
        'recovery_hints': [
            'The fit did not converge; add more sizes to the LR sweep or drop outlying runs.',
        ],
        'related_tools': ['list_campaign_runs'],
    },
    'quadrature': {
        'recovery_hints': [
            'Numeric integration missed its tolerance; loosen the tolerance or give finite support bounds.',
        ],
        'related_tools': [],
    },
    'dimension': {
        'recovery_hints': [
            'Tensor shapes do not line up; the message names both shapes.',
            'Check that seq_len in the run config matches the checkpoint.',
        ],
        'related_tools': [],
    },
}


def _copy_hints(hints: dict[str, list[str]]) -> dict[str, list[str]]:
    """Return a shallow copy of a hints entry to protect the registry."""
    return {
        'recovery_hints': list(hints['recovery_hints']),
        'related_tools': list(hints['related_tools']),
    }


def get_recovery_hints(error_code: str | None) -> dict[str, list[str]]:
    """Look up recovery hints for an error code.

    Returns:
        Dict with 'recovery_hints' and 'related_tools' lists.
        Returns empty lists if no hints match.
    """
    hints = _HINT_REGISTRY.get(error_code or '')
    if hints:
        return _copy_hints(hints)
    return {'recovery_hints': [], 'related_tools': []}


def enrich_error_response(response: dict[str, Any]) -> dict[str, Any]:
    """Add recovery hints to an error response dict.

    Only modifies dicts with status='error'; success responses and dicts
    that already carry hints are returned unchanged.
    """
    if not isinstance(response, dict) or response.get('status') != 'error':
        return response

    # Already enriched, keep the existing hints
    if 'recovery_hints' in response:
        return response

    hints = get_recovery_hints(response.get('error_code'))
    if hints['recovery_hints']:
        response['recovery_hints'] = hints['recovery_hints']
    if hints['related_tools']:
        response['related_tools'] = hints['related_tools']
    return response
