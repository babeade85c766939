"""Decoder-only time-series transformer with a Student's-t distribution head."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Any

import numpy as np
from scipy import stats

from lab import tensor as T
from lab.tensor import Tensor
from utils.error_handler import ArgumentError, DimensionError, ValidationError, require
from utils.logger import get_logger

logger = get_logger('tsformer')

SIGMA_FLOOR = 1e-6
NU_OFFSET = 2.0
MASK_FILL = -1e30
HEAD_NAMES = ('mu', 'sigma', 'nu')
BAND_QUANTILES = (0.16, 0.84)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters. The feed-forward width equals ``d_model``."""

    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 1
    seq_len: int = 256
    theta_out: int = 3
    head_hidden_layers: int = 4
    pre_layer_norm: bool = True

    def __post_init__(self):
        # n_layers == 0 is only meant for degenerate test configs
        require(self.d_model >= 1, 'd_model', self.d_model, 'must be >= 1')
        require(self.n_heads >= 1, 'n_heads', self.n_heads, 'must be >= 1')
        require(self.n_layers >= 0, 'n_layers', self.n_layers, 'must be >= 0')
        require(self.seq_len >= 2, 'seq_len', self.seq_len, 'must be >= 2')
        require(
            self.d_model % self.n_heads == 0,
            'n_heads',
            self.n_heads,
            f'must divide d_model={self.d_model}',
        )
        require(
            self.theta_out == len(HEAD_NAMES),
            'theta_out',
            self.theta_out,
            'the Student-t head has exactly 3 outputs (mu, sigma, nu)',
        )
        require(
            self.head_hidden_layers >= 1,
            'head_hidden_layers',
            self.head_hidden_layers,
            'must be >= 1',
        )

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ModelConfig:
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError('model', unknown, f'unknown keys {unknown}')
        return cls(**data)


@dataclass(frozen=True)
class StudentTParams:
    """Per-position predictive parameters, each shaped [batch, seq_len]."""

    mu: Tensor
    sigma: Tensor
    nu: Tensor

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.mu.data, self.sigma.data, self.nu.data


def count_parameters(config: ModelConfig) -> int:
    """Closed-form trainable parameter count, weights and biases alike."""
    d = config.d_model
    norms = config.pre_layer_norm
    embedding = 2 * d
    positional = 2 * d
    attention = 4 * (d * d + d)
    feed_forward = 2 * d * d + 2 * d
    layer_norms = 4 * d if norms else 0
    final_norm = 2 * d if norms else 0
    head = config.theta_out * (
        config.head_hidden_layers * (d * d + d) + (d + 1)
    )
    per_layer = attention + feed_forward + layer_norms
    return embedding + positional + config.n_layers * per_layer + final_norm + head


def aspect_ratio(config: ModelConfig) -> Fraction:
    """d_model / n_layers, exactly."""
    if config.n_layers < 1:
        raise ArgumentError('aspect ratio is undefined for a model without layers')
    return Fraction(config.d_model, config.n_layers)


def parameter_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) inventory of every trainable tensor."""
    d = config.d_model
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ('embed.value.w', (1, d)),
        ('embed.value.b', (d,)),
        ('embed.position.w', (1, d)),
        ('embed.position.b', (d,)),
    ]
    for i in range(config.n_layers):
        prefix = f'layers.{i}'
        if config.pre_layer_norm:
            shapes += [(f'{prefix}.ln1.gain', (d,)), (f'{prefix}.ln1.bias', (d,))]
        for proj in ('q', 'k', 'v', 'o'):
            shapes += [(f'{prefix}.attn.{proj}.w', (d, d)), (f'{prefix}.attn.{proj}.b', (d,))]
        if config.pre_layer_norm:
            shapes += [(f'{prefix}.ln2.gain', (d,)), (f'{prefix}.ln2.bias', (d,))]
        shapes += [
            (f'{prefix}.ffn.in.w', (d, d)),
            (f'{prefix}.ffn.in.b', (d,)),
            (f'{prefix}.ffn.out.w', (d, d)),
            (f'{prefix}.ffn.out.b', (d,)),
        ]
    if config.pre_layer_norm:
        shapes += [('final_norm.gain', (d,)), ('final_norm.bias', (d,))]
    for head in HEAD_NAMES:
        for j in range(config.head_hidden_layers):
            shapes += [(f'head.{head}.hidden.{j}.w', (d, d)), (f'head.{head}.hidden.{j}.b', (d,))]
        shapes += [(f'head.{head}.out.w', (d, 1)), (f'head.{head}.out.b', (1,))]
    return shapes


def _initial_value(
    name: str, shape: tuple[int, ...], rng: np.random.Generator
) -> np.ndarray:
    if name.endswith('.gain'):
        return np.ones(shape)
    if name.endswith('.w'):
        bound = 1.0 / math.sqrt(shape[0])
        return rng.uniform(-bound, bound, size=shape)
    return np.zeros(shape)


class TimeSeriesTransformer:
    """Value/position embedding, causal attention stack and Student's-t head."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        expected = parameter_shapes(config)
        missing = [name for name, _ in expected if name not in params]
        if missing:
            raise ValidationError('params', missing[:3], 'missing parameter tensors')
        for name, shape in expected:
            if params[name].shape != shape:
                raise DimensionError(name, params[name].shape, shape)
        self.config = config
        self.params = {name: params[name] for name, _ in expected}
        positions = np.arange(config.seq_len, dtype=np.float64) / (config.seq_len - 1)
        self._positions = Tensor(positions.reshape(config.seq_len, 1))
        self._causal_keep = np.tril(np.ones((config.seq_len, config.seq_len), dtype=bool))

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0) -> TimeSeriesTransformer:
        """Uniform(+-1/sqrt(fan_in)) weights, zero biases, unit norm gains."""
        rng = np.random.default_rng(seed)
        params = {
            name: Tensor(_initial_value(name, shape, rng), requires_grad=True, name=name)
            for name, shape in parameter_shapes(config)
        }
        model = cls(config, params)
        logger.debug(
            f'Initialized model d_model={config.d_model} n_layers={config.n_layers} '
            f'n_params={model.n_params} seed={seed}'
        )
        return model

    @classmethod
    def from_state(
        cls, config: ModelConfig, state: dict[str, np.ndarray]
    ) -> TimeSeriesTransformer:
        params = {
            name: Tensor(value, requires_grad=True, name=name)
            for name, value in state.items()
        }
        return cls(config, params)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.numpy() for name, p in self.params.items()}

    def snapshot(self) -> TimeSeriesTransformer:
        """Detached copy, safe to share with read-only evaluation."""
        return TimeSeriesTransformer.from_state(self.config, self.state_dict())

    def embed(self, window: Tensor) -> Tensor:
        """[batch, seq_len] values -> [batch, seq_len, d_model] tokens."""
        seq_len = self.config.seq_len
        if window.ndim != 2 or window.shape[1] != seq_len:
            raise DimensionError('embed', window.shape, (-1, seq_len))
        p = self.params
        values = T.reshape(window, (window.shape[0], seq_len, 1))
        value_term = T.linear(values, p['embed.value.w'], p['embed.value.b'])
        position_term = T.linear(
            self._positions, p['embed.position.w'], p['embed.position.b']
        )
        return T.add(value_term, position_term)

    def _attention(self, x: Tensor, prefix: str) -> Tensor:
        p = self.params
        batch, seq_len, d = x.shape
        heads, head_dim = self.config.n_heads, self.config.head_dim

        def split(name: str) -> Tensor:
            projected = T.linear(x, p[f'{prefix}.attn.{name}.w'], p[f'{prefix}.attn.{name}.b'])
            return T.reshape(projected, (batch, seq_len, heads, head_dim))

        q = T.transpose(split('q'), (0, 2, 1, 3))
        k_t = T.transpose(split('k'), (0, 2, 3, 1))
        v = T.transpose(split('v'), (0, 2, 1, 3))
        scores = T.scale(T.matmul(q, k_t), 1.0 / math.sqrt(head_dim))
        scores = T.masked_fill(scores, self._causal_keep, MASK_FILL)
        weights = T.softmax(scores, axis=-1)
        context = T.transpose(T.matmul(weights, v), (0, 2, 1, 3))
        context = T.reshape(context, (batch, seq_len, d))
        return T.linear(context, p[f'{prefix}.attn.o.w'], p[f'{prefix}.attn.o.b'])

    def _feed_forward(self, x: Tensor, prefix: str) -> Tensor:
        p = self.params
        hidden = T.relu(T.linear(x, p[f'{prefix}.ffn.in.w'], p[f'{prefix}.ffn.in.b']))
        return T.linear(hidden, p[f'{prefix}.ffn.out.w'], p[f'{prefix}.ffn.out.b'])

    def decoder_forward(self, tokens: Tensor) -> Tensor:
        """Run the causal decoder stack; with zero layers this is the identity."""
        expected = (self.config.seq_len, self.config.d_model)
        if tokens.ndim != 3 or tokens.shape[1:] != expected:
            raise DimensionError('decoder_forward', tokens.shape, (-1, *expected))
        p = self.params
        x = tokens
        for i in range(self.config.n_layers):
            prefix = f'layers.{i}'
            h = x
            if self.config.pre_layer_norm:
                h = T.layer_norm(x, p[f'{prefix}.ln1.gain'], p[f'{prefix}.ln1.bias'])
            x = T.add(x, self._attention(h, prefix))
            h = x
            if self.config.pre_layer_norm:
                h = T.layer_norm(x, p[f'{prefix}.ln2.gain'], p[f'{prefix}.ln2.bias'])
            x = T.add(x, self._feed_forward(h, prefix))
        return x

    def _head_network(self, hidden: Tensor, head: str) -> Tensor:
        p = self.params
        h = hidden
        for j in range(self.config.head_hidden_layers):
            h = T.relu(T.linear(h, p[f'head.{head}.hidden.{j}.w'], p[f'head.{head}.hidden.{j}.b']))
        raw = T.linear(h, p[f'head.{head}.out.w'], p[f'head.{head}.out.b'])
        return T.reshape(raw, raw.shape[:-1])

    def head_forward(self, hidden: Tensor) -> StudentTParams:
        """Three per-position MLPs producing mu, sigma > 0 and nu > 2."""
        p = self.params
        if self.config.pre_layer_norm:
            hidden = T.layer_norm(hidden, p['final_norm.gain'], p['final_norm.bias'])
        mu = self._head_network(hidden, 'mu')
        sigma = T.add(T.softplus(self._head_network(hidden, 'sigma')), Tensor(SIGMA_FLOOR))
        nu = T.add(T.softplus(self._head_network(hidden, 'nu')), Tensor(NU_OFFSET))
        return StudentTParams(mu=mu, sigma=sigma, nu=nu)

    def forward(self, window: Tensor | np.ndarray) -> StudentTParams:
        if not isinstance(window, Tensor):
            window = Tensor(window)
        return self.head_forward(self.decoder_forward(self.embed(window)))

    def predict(self, inputs: np.ndarray) -> StudentTParams:
        """Forward pass outside any tape, for evaluation and sampling."""
        return self.forward(Tensor(np.asarray(inputs, dtype=np.float64)))


@dataclass(frozen=True)
class ForecastResult:
    """Sampled trajectories plus per-step mean and the 16th/84th percentile band."""

    trajectories: np.ndarray
    mean: np.ndarray
    lower: np.ndarray | None
    upper: np.ndarray | None

    @property
    def horizon(self) -> int:
        return int(self.trajectories.shape[1])


def _context_window(context: np.ndarray, seq_len: int) -> np.ndarray:
    window = np.zeros(seq_len)
    tail = context[-seq_len:]
    window[seq_len - tail.size :] = tail
    return window


def forecast_rollout(
    model: TimeSeriesTransformer,
    context,
    horizon: int,
    n_samples: int,
    rng: np.random.Generator | int = 0,
) -> ForecastResult:
    """Autoregressively sample ``n_samples`` trajectories ``horizon`` steps ahead.

    Each step samples from the Student's-t at the last position and slides
    the window, keeping the most recent ``seq_len`` values. Contexts shorter
    than ``seq_len`` are left-padded with zeros.
    """
    context = np.asarray(context, dtype=np.float64).reshape(-1)
    if context.size < 1:
        raise ArgumentError('forecast context needs at least one value')
    if horizon < 0:
        raise ArgumentError(f'horizon must be >= 0, got {horizon}')
    if n_samples < 1:
        raise ArgumentError(f'n_samples must be >= 1, got {n_samples}')
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)

    if horizon == 0:
        empty = np.zeros((n_samples, 0))
        return ForecastResult(trajectories=empty, mean=np.zeros(0), lower=None, upper=None)

    seq_len = model.config.seq_len
    windows = np.tile(_context_window(context, seq_len), (n_samples, 1))
    trajectories = np.empty((n_samples, horizon))
    for step in range(horizon):
        mu, sigma, nu = model.predict(windows).arrays()
        draw = mu[:, -1] + sigma[:, -1] * rng.standard_t(nu[:, -1])
        trajectories[:, step] = draw
        windows = np.concatenate([windows[:, 1:], draw[:, None]], axis=1)

    lower, upper = np.percentile(trajectories, [100 * q for q in BAND_QUANTILES], axis=0)
    return ForecastResult(
        trajectories=trajectories,
        mean=trajectories.mean(axis=0),
        lower=lower,
        upper=upper,
    )


@dataclass(frozen=True)
class InSequencePrediction:
    """Next-step predictions over the tail of a series with a 1-sigma band."""

    targets: np.ndarray
    mu: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def in_sequence_prediction(
    model: TimeSeriesTransformer, series
) -> InSequencePrediction:
    """Predict each of the last (up to ``seq_len``) values from the values before it."""
    series = np.asarray(series, dtype=np.float64).reshape(-1)
    if series.size < 2:
        raise ArgumentError('in-sequence prediction needs at least two values')
    seq_len = model.config.seq_len
    tail = series[-(seq_len + 1) :]
    inputs = _context_window(tail[:-1], seq_len)
    n_targets = tail.size - 1
    mu, sigma, nu = (a[0, -n_targets:] for a in model.predict(inputs[None, :]).arrays())
    lower = mu + sigma * stats.t.ppf(BAND_QUANTILES[0], nu)
    upper = mu + sigma * stats.t.ppf(BAND_QUANTILES[1], nu)
    return InSequencePrediction(targets=tail[1:], mu=mu, lower=lower, upper=upper)
