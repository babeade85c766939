"""AdamW training loop with warmup + cosine LR, periodic evaluation and run logs."""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Any

import numpy as np

from lab.datapipe import Corpus, WindowSampler, derive_seed, tile_windows
from lab.probmetrics import REPORTED_NLL_OFFSET, ScoreTriple, nll_loss, score_arrays
from lab.storage import save_checkpoint
from lab.tensor import Tape, Tensor, backward
from lab.tsformer import TimeSeriesTransformer
from utils.error_handler import (
    ArgumentError,
    DomainError,
    NonFiniteGradientError,
    ValidationError,
    require,
)
from utils.logger import get_logger

logger = get_logger('trainer')

RUNLOG_NAME = 'runlog.jsonl'
SUMMARY_NAME = 'summary.json'
BEST_CHECKPOINT_NAME = 'best.ltmk'


class RunStatus(StrEnum):
    COMPLETED = 'COMPLETED'
    EARLY_STOPPED = 'EARLY_STOPPED'
    DIVERGED = 'DIVERGED'


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer, schedule and evaluation settings.

    ``early_stop_patience`` counts evaluations without a new best test NLL;
    0 disables early stopping. ``grad_clip_norm`` of None disables clipping.
    """

    batch_size: int = 512
    total_steps: int = 100_000
    warmup_steps: int = 3000
    lr_max: float = 1e-3
    lr_min_fraction: float = 0.0
    eval_every: int = 200
    eval_fraction: float = 0.10
    eval_batch_size: int = 256
    early_stop_patience: int = 0
    seed: int = 0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip_norm: float | None = None
    divergence_factor: float = 10.0
    divergence_patience: int = 3

    def __post_init__(self):
        require(self.batch_size >= 1, 'batch_size', self.batch_size, 'must be >= 1')
        require(self.total_steps >= 1, 'total_steps', self.total_steps, 'must be >= 1')
        require(
            0 <= self.warmup_steps < self.total_steps,
            'warmup_steps',
            self.warmup_steps,
            f'must lie in [0, total_steps={self.total_steps})',
        )
        require(self.lr_max > 0, 'lr_max', self.lr_max, 'must be > 0')
        require(
            0 <= self.lr_min_fraction <= 1,
            'lr_min_fraction',
            self.lr_min_fraction,
            'must lie in [0, 1]',
        )
        require(self.eval_every >= 1, 'eval_every', self.eval_every, 'must be >= 1')
        require(
            0 < self.eval_fraction <= 1,
            'eval_fraction',
            self.eval_fraction,
            'must lie in (0, 1]',
        )
        require(self.eval_batch_size >= 1, 'eval_batch_size', self.eval_batch_size, 'must be >= 1')
        require(
            self.early_stop_patience >= 0,
            'early_stop_patience',
            self.early_stop_patience,
            'must be >= 0',
        )
        require(
            self.grad_clip_norm is None or self.grad_clip_norm > 0,
            'grad_clip_norm',
            self.grad_clip_norm,
            'must be > 0 or null',
        )

    @property
    def lr_min(self) -> float:
        return self.lr_min_fraction * self.lr_max

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TrainConfig:
        unknown = sorted(set(data) - set(cls.__dataclass_fields__))
        if unknown:
            raise ValidationError('train', unknown, f'unknown keys {unknown}')
        return cls(**data)


def lr_at_step(cfg: TrainConfig, step: int) -> float:
    """Linear warmup to lr_max, then cosine decay to lr_min at total_steps."""
    if not 0 <= step <= cfg.total_steps:
        raise ArgumentError(f'step {step} outside [0, {cfg.total_steps}]')
    if cfg.warmup_steps > 0 and step <= cfg.warmup_steps:
        return cfg.lr_max * step / cfg.warmup_steps
    progress = (step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps)
    return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros(cls, params: dict[str, Tensor]) -> AdamState:
        return cls(
            step=0,
            m={name: np.zeros(p.shape) for name, p in params.items()},
            v={name: np.zeros(p.shape) for name, p in params.items()},
        )


def adamw_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    cfg: TrainConfig,
) -> AdamState:
    """One bias-corrected Adam update with decoupled weight decay, in place.

    Parameters without a gradient are treated as having a zero gradient.
    """
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(name)

    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    correction1 = 1.0 - b1**state.step
    correction2 = 1.0 - b2**state.step
    for name, p in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros(p.shape)
        m = b1 * state.m[name] + (1.0 - b1) * grad
        v = b2 * state.v[name] + (1.0 - b2) * grad * grad
        state.m[name], state.v[name] = m, v
        update = (m / correction1) / (np.sqrt(v / correction2) + cfg.eps)
        p.assign(p.data - lr * cfg.weight_decay * p.data - lr * update)
    return state


def clip_grad_norm(
    grads: dict[str, np.ndarray], max_norm: float
) -> tuple[dict[str, np.ndarray], float]:
    """Scale all gradients together so their global L2 norm is at most max_norm."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm or norm == 0:
        return grads, norm
    factor = max_norm / norm
    return {name: g * factor for name, g in grads.items()}, norm


def compute_at_step(batch_size: int, n_params: int, seq_len: int, step: int) -> int:
    """Training compute 6 * B * N_p * L_seq * step as an exact Python integer."""
    for name, value in (('batch_size', batch_size), ('n_params', n_params), ('seq_len', seq_len)):
        if int(value) != value or value < 1:
            raise ArgumentError(f'{name} must be a positive integer, got {value}')
    if int(step) != step or step < 0:
        raise ArgumentError(f'step must be a non-negative integer, got {step}')
    return 6 * int(batch_size) * int(n_params) * int(seq_len) * int(step)


def evaluate(
    model,
    test_corpus: Corpus,
    eval_fraction: float,
    rng: np.random.Generator,
    batch_size: int = 256,
) -> ScoreTriple:
    """Score next-step predictions on a random ``eval_fraction`` of tiled test windows.

    ``model`` needs ``config.seq_len`` and ``predict(inputs)``.
    """
    if not 0 < eval_fraction <= 1:
        raise ArgumentError(f'eval_fraction must lie in (0, 1], got {eval_fraction}')
    windows, valid = tile_windows(test_corpus, model.config.seq_len)
    n = windows.shape[0]
    k = math.ceil(eval_fraction * n)
    if k >= n:
        chosen = np.arange(n)
    else:
        chosen = np.sort(rng.choice(n, size=k, replace=False))
    windows, valid = windows[chosen], valid[chosen]

    mus, sigmas, nus = [], [], []
    for start in range(0, windows.shape[0], batch_size):
        mu, sigma, nu = model.predict(windows[start : start + batch_size, :-1]).arrays()
        mus.append(mu)
        sigmas.append(sigma)
        nus.append(nu)
    mask = valid[:, 1:] & valid[:, :-1]
    return score_arrays(
        np.concatenate(mus),
        np.concatenate(sigmas),
        np.concatenate(nus),
        windows[:, 1:],
        mask,
    )


@dataclass(frozen=True)
class RunLogEntry:
    step: int
    lr: float
    train_nll: float
    test_mse: float
    test_crps: float
    test_nll: float
    test_nll_reported: float
    compute: int
    wall_clock_s: float
    config_hash: str
    run_id: str

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def read_runlog(path: str | Path) -> list[RunLogEntry]:
    path = Path(path)
    entries = []
    with open(path, encoding='utf-8') as fh:
        for line in fh:
            if line.strip():
                entries.append(RunLogEntry(**json.loads(line)))
    return entries


def hash_config(payload: dict[str, Any]) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


@dataclass
class TrainResult:
    status: RunStatus
    entries: list[RunLogEntry]
    summary: dict[str, Any]
    best_state: dict[str, np.ndarray] | None
    run_dir: Path | None = None

    @property
    def best_step(self) -> int | None:
        return self.summary.get('best_step')


def _summarize(
    status: RunStatus,
    entries: list[RunLogEntry],
    best_step: int | None,
    steps_done: int,
    compute: int,
    model: TimeSeriesTransformer,
    train_corpus: Corpus,
    cfg: TrainConfig,
    config_hash: str,
    run_id: str,
) -> dict[str, Any]:
    def minimum(attr: str) -> float | None:
        values = [getattr(e, attr) for e in entries if math.isfinite(getattr(e, attr))]
        return min(values) if values else None

    best_nll = minimum('test_nll')
    return {
        'status': str(status),
        'run_id': run_id,
        'config_hash': config_hash,
        'n_params': model.n_params,
        'lr_max': cfg.lr_max,
        'steps_completed': steps_done,
        'final_compute': compute,
        'train_points': train_corpus.total_points,
        'best_step': best_step,
        'min_test_mse': minimum('test_mse'),
        'min_test_crps': minimum('test_crps'),
        'min_test_nll': best_nll,
        'min_test_nll_reported': None if best_nll is None else best_nll + REPORTED_NLL_OFFSET,
        'n_evaluations': len(entries),
        'attempts': 1,
    }


def train(
    model: TimeSeriesTransformer,
    train_corpus: Corpus,
    test_corpus: Corpus,
    cfg: TrainConfig,
    run_dir: str | Path | None = None,
    extra_config: dict[str, Any] | None = None,
) -> TrainResult:
    """Train ``model`` in place and return its run log and best-NLL parameters.

    With ``run_dir`` the run log, the best checkpoint and ``summary.json`` are
    written there. A non-finite loss or gradient, or a head output outside the
    Student's-t domain, marks the run DIVERGED at once. So does an interval
    train NLL above ``divergence_factor`` times max(|initial NLL|, 1) for
    ``divergence_patience`` consecutive evaluations.
    """
    seq_len = model.config.seq_len
    config_hash = hash_config(
        {'model': model.config.to_dict(), 'train': cfg.to_dict(), **(extra_config or {})}
    )
    run_id = hashlib.sha1(config_hash.encode()).hexdigest()[:10]
    run_path = Path(run_dir) if run_dir is not None else None
    runlog = None
    if run_path is not None:
        run_path.mkdir(parents=True, exist_ok=True)
        runlog = open(run_path / RUNLOG_NAME, 'w', encoding='utf-8')

    sampler = WindowSampler(
        train_corpus, seq_len, np.random.default_rng(derive_seed(cfg.seed, 'sampler'))
    )
    eval_rng = np.random.default_rng(derive_seed(cfg.seed, 'eval'))
    state = AdamState.zeros(model.params)
    n_params = model.n_params
    started = time.perf_counter()

    logger.info(
        f'Starting run {run_id}: n_params={n_params} steps={cfg.total_steps} '
        f'batch={cfg.batch_size} lr_max={cfg.lr_max}'
    )

    status = RunStatus.COMPLETED
    entries: list[RunLogEntry] = []
    initial_nll: float | None = None
    interval_nll: list[float] = []
    strikes = 0
    since_best = 0
    best_nll = math.inf
    best_step: int | None = None
    best_state: dict[str, np.ndarray] | None = None
    steps_done = 0

    try:
        for step in range(1, cfg.total_steps + 1):
            lr = lr_at_step(cfg, step)
            batch = sampler.batch(cfg.batch_size)
            steps_done = step
            if batch.mask.any():
                for p in model.parameters():
                    p.zero_grad()
                try:
                    with np.errstate(over='ignore', invalid='ignore'), Tape() as tape:
                        loss = nll_loss(model.forward(batch.inputs), batch.targets, batch.mask)
                except DomainError as e:
                    logger.warning(f'Run {run_id}: head left its domain at step {step}: {e}')
                    status = RunStatus.DIVERGED
                    break
                train_nll = loss.item()
                if initial_nll is None:
                    initial_nll = train_nll
                if not math.isfinite(train_nll):
                    logger.warning(f'Run {run_id}: non-finite train NLL at step {step}')
                    status = RunStatus.DIVERGED
                    break
                interval_nll.append(train_nll)
                with np.errstate(over='ignore', invalid='ignore'):
                    grads = backward(loss, tape)
                if cfg.grad_clip_norm is not None:
                    grads, _ = clip_grad_norm(grads, cfg.grad_clip_norm)
                try:
                    adamw_step(model.params, grads, state, lr, cfg)
                except NonFiniteGradientError as e:
                    logger.warning(f'Run {run_id}: {e} at step {step}')
                    status = RunStatus.DIVERGED
                    break
            else:
                logger.debug(f'Step {step}: fully padded batch, no update')

            if step % cfg.eval_every != 0 and step != cfg.total_steps:
                continue

            try:
                with np.errstate(over='ignore', invalid='ignore'):
                    scores = evaluate(
                        model.snapshot(), test_corpus, cfg.eval_fraction, eval_rng, cfg.eval_batch_size
                    )
            except DomainError as e:
                logger.warning(f'Run {run_id}: evaluation failed at step {step}: {e}')
                status = RunStatus.DIVERGED
                break

            mean_train = float(np.mean(interval_nll)) if interval_nll else math.nan
            interval_nll = []
            entry = RunLogEntry(
                step=step,
                lr=lr,
                train_nll=mean_train,
                test_mse=scores.mse,
                test_crps=scores.crps,
                test_nll=scores.nll,
                test_nll_reported=scores.nll_reported,
                compute=compute_at_step(cfg.batch_size, n_params, seq_len, step),
                wall_clock_s=round(time.perf_counter() - started, 3),
                config_hash=config_hash,
                run_id=run_id,
            )
            entries.append(entry)
            if runlog is not None:
                runlog.write(entry.to_json() + '\n')
                runlog.flush()
            logger.info(
                f'step={step} lr={lr:.3e} train_nll={mean_train:.4f} test_mse={scores.mse:.4f} '
                f'test_crps={scores.crps:.4f} test_nll={scores.nll:.4f}'
            )

            reference = abs(initial_nll) if initial_nll is not None else 1.0
            limit = cfg.divergence_factor * max(reference, 1.0)
            if not math.isfinite(mean_train) or mean_train > limit or not math.isfinite(scores.nll):
                strikes += 1
                if strikes >= cfg.divergence_patience:
                    logger.warning(f'Run {run_id}: train NLL above {limit:.3f} for {strikes} evaluations')
                    status = RunStatus.DIVERGED
                    break
            else:
                strikes = 0

            if scores.nll < best_nll:
                best_nll, best_step, since_best = scores.nll, step, 0
                best_state = model.state_dict()
                if run_path is not None:
                    save_checkpoint(
                        run_path / BEST_CHECKPOINT_NAME,
                        model,
                        meta={'step': step, 'test_nll': scores.nll, 'run_id': run_id},
                    )
            else:
                since_best += 1
                if cfg.early_stop_patience and since_best >= cfg.early_stop_patience:
                    logger.info(f'Run {run_id}: early stop at step {step}, best step {best_step}')
                    status = RunStatus.EARLY_STOPPED
                    break
    finally:
        if runlog is not None:
            runlog.close()

    final_compute = compute_at_step(cfg.batch_size, n_params, seq_len, steps_done)
    summary = _summarize(
        status, entries, best_step, steps_done, final_compute, model,
        train_corpus, cfg, config_hash, run_id,
    )
    if best_step is not None and status != RunStatus.DIVERGED:
        best = next(e for e in entries if e.step == best_step)
        ScoreTriple(best.test_mse, best.test_crps, best.test_nll).check_reported_positive()
    if run_path is not None:
        write_summary(run_path, summary)
    logger.info(f'Run {run_id} finished with status {status} after {steps_done} steps')
    return TrainResult(
        status=status, entries=entries, summary=summary, best_state=best_state, run_dir=run_path
    )


def write_summary(run_dir: Path, summary: dict[str, Any]) -> Path:
    path = run_dir / SUMMARY_NAME
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    return path


def read_summary(run_dir: str | Path) -> dict[str, Any]:
    return json.loads((Path(run_dir) / SUMMARY_NAME).read_text(encoding='utf-8'))
