"""Scaling-law extraction from run logs.

All fits work on logarithms of both axes, so residuals are log-space
residuals.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass
from enum import StrEnum
from typing import Any

import numpy as np
from scipy import optimize

from lab.probmetrics import REPORTED_NLL_OFFSET
from lab.trainer import RunLogEntry, RunStatus
from utils.error_handler import ArgumentError, DomainError, FitConvergenceError, ValidationError
from utils.logger import get_logger

logger = get_logger('scalinglab')

METRICS = ('mse', 'crps', 'nll')
AXES = ('params', 'compute', 'data')
MIN_BROKEN_POINTS = 6
BREAK_EDGE_EXCLUSION = 2
NO_BREAK_IMPROVEMENT = 0.05
# single-law residuals below this are exact fits; no break can improve on them
RSS_FLOOR = 1e-20


@dataclass(frozen=True)
class PowerLawFit:
    """L(A) = 10 ** (B0 * (log10_A0 - log10 A))."""

    B0: float
    log10_A0: float
    rss: float
    n_points: int

    def predict(self, a) -> float | np.ndarray:
        value = 10.0 ** (self.B0 * (self.log10_A0 - np.log10(np.asarray(a, dtype=np.float64))))
        return float(value) if np.ndim(value) == 0 else value

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _as_positive_points(points: Iterable[Sequence[float]]) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray([tuple(p) for p in points], dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ArgumentError('points must be (A, L) pairs')
    a, loss = arr[:, 0], arr[:, 1]
    if np.any(a <= 0) or np.any(loss <= 0) or not np.all(np.isfinite(arr)):
        raise DomainError(
            'power-law fits need positive finite A and L; apply the log-likelihood offset first'
        )
    return a, loss


def _line_to_fit(slope: float, intercept_ln: float, rss: float, n: int) -> PowerLawFit:
    b0 = -slope
    intercept_log10 = intercept_ln / math.log(10.0)
    log10_a0 = intercept_log10 / b0 if b0 != 0 else math.copysign(math.inf, intercept_log10)
    return PowerLawFit(B0=b0, log10_A0=log10_a0, rss=rss, n_points=n)


def fit_power_law(points, weights=None) -> PowerLawFit:
    """Least squares of ln L on ln A."""
    a, loss = _as_positive_points(points)
    if a.size < 2:
        raise ArgumentError(f'need at least 2 points, got {a.size}')
    x, y = np.log(a), np.log(loss)
    design = np.column_stack([np.ones_like(x), x])
    w = np.ones_like(x) if weights is None else np.sqrt(np.asarray(weights, dtype=np.float64))
    coef, *_ = np.linalg.lstsq(design * w[:, None], y * w, rcond=None)
    residual = y - design @ coef
    rss = float(np.sum(residual * residual))
    return _line_to_fit(float(coef[1]), float(coef[0]), rss, int(a.size))


class BreakFlag(StrEnum):
    BREAK = 'BREAK'
    NO_BREAK = 'NO_BREAK'
    INSUFFICIENT_POINTS = 'INSUFFICIENT_POINTS'


@dataclass(frozen=True)
class BrokenPowerLawFit:
    """Two log-log segments joined continuously at ``break_A``.

    ``post`` is the reported law when ``flag`` is BREAK; otherwise the
    single fit is. ``rss`` always belongs to the two segments, in ln space.
    """

    break_A: float | None
    pre: PowerLawFit | None
    post: PowerLawFit | None
    rss: float
    single: PowerLawFit
    flag: BreakFlag
    improvement: float

    @property
    def headline(self) -> PowerLawFit:
        return self.post if self.flag == BreakFlag.BREAK and self.post is not None else self.single

    def to_dict(self) -> dict[str, Any]:
        return {
            'break_A': self.break_A,
            'pre': self.pre.to_dict() if self.pre else None,
            'post': self.post.to_dict() if self.post else None,
            'rss': self.rss,
            'single': self.single.to_dict(),
            'flag': str(self.flag),
            'improvement': self.improvement,
        }


def _segment_rss(x, y, slope, intercept) -> float:
    r = y - (intercept + slope * x)
    return float(np.sum(r * r))


def fit_broken_power_law(points) -> BrokenPowerLawFit:
    """Exhaustive search for a continuous break over observed abscissae."""
    a, loss = _as_positive_points(points)
    single = fit_power_law(np.column_stack([a, loss]))
    if a.size < MIN_BROKEN_POINTS:
        logger.info(f'{a.size} points is too few for a broken fit; using the single law')
        return BrokenPowerLawFit(
            break_A=None, pre=None, post=None, rss=single.rss, single=single,
            flag=BreakFlag.INSUFFICIENT_POINTS, improvement=0.0,
        )

    order = np.argsort(a, kind='stable')
    x, y = np.log(a[order]), np.log(loss[order])
    best: tuple[float, int, np.ndarray] | None = None
    for k in range(BREAK_EDGE_EXCLUSION, x.size - BREAK_EDGE_EXCLUSION):
        xb = x[k]
        design = np.column_stack([np.ones_like(x), x, np.maximum(0.0, x - xb)])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        residual = y - design @ coef
        rss = float(np.sum(residual * residual))
        logger.debug(f'break candidate A={math.exp(xb):.4g} rss={rss:.3e}')
        if best is None or rss < best[0]:
            best = (rss, k, coef)

    rss, k, (c0, s_pre, delta) = best
    xb = x[k]
    s_post = s_pre + delta
    c_post = c0 - delta * xb
    pre_mask, post_mask = x <= xb, x >= xb
    pre = _line_to_fit(
        s_pre, c0, _segment_rss(x[pre_mask], y[pre_mask], s_pre, c0), int(pre_mask.sum())
    )
    post = _line_to_fit(
        s_post, c_post, _segment_rss(x[post_mask], y[post_mask], s_post, c_post),
        int(post_mask.sum()),
    )
    # the hinge nests the single line, so any gain below zero is lstsq roundoff
    improvement = max(0.0, (single.rss - rss) / single.rss) if single.rss > RSS_FLOOR else 0.0
    flag = BreakFlag.BREAK if improvement >= NO_BREAK_IMPROVEMENT else BreakFlag.NO_BREAK
    return BrokenPowerLawFit(
        break_A=float(math.exp(xb)), pre=pre, post=post, rss=rss, single=single,
        flag=flag, improvement=improvement,
    )


@dataclass(frozen=True)
class FrontierPoint:
    compute: int | float
    loss: float
    run_id: str


def compute_frontier(runs: Mapping[str, Iterable[Sequence[float]]]) -> list[FrontierPoint]:
    """Running minimum of loss over all runs' (compute, loss) pairs, sorted by compute."""
    merged = [
        (c, float(loss), run_id)
        for run_id, pairs in runs.items()
        for c, loss in pairs
        if math.isfinite(float(loss))
    ]
    if not merged:
        raise ArgumentError('compute frontier needs at least one (compute, loss) point')
    merged.sort(key=lambda p: (p[0], p[1], p[2]))
    frontier: list[FrontierPoint] = []
    best_loss, best_run = math.inf, ''
    for c, loss, run_id in merged:
        if loss < best_loss:
            best_loss, best_run = loss, run_id
        frontier.append(FrontierPoint(compute=c, loss=best_loss, run_id=best_run))
    return frontier


@dataclass(frozen=True)
class OffsetPowerLawFit:
    """lr*(N_p) = a * N_p ** -b + c."""

    a: float
    b: float
    c: float
    rss: float

    def predict(self, n_params) -> float | np.ndarray:
        value = self.a * np.asarray(n_params, dtype=np.float64) ** (-self.b) + self.c
        return float(value) if np.ndim(value) == 0 else value

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def fit_optimal_lr(points, max_iterations: int = 500) -> OffsetPowerLawFit:
    """Fit a power law with constant offset to (N_p, best lr_max) pairs.

    The offset c is searched on [0, min lr) by bounded golden-section/Brent;
    for each c, a and b come from a linear fit of ln(lr - c) on ln N_p. The
    objective is the sum of squared log residuals of the full model.
    """
    n, lr = _as_positive_points(points)
    if n.size < 4:
        raise ArgumentError(f'need at least 4 points, got {n.size}')
    x, y = np.log(n), np.log(lr)
    upper = float(lr.min())
    design = np.column_stack([np.ones_like(x), x])

    def inner(c: float) -> tuple[float, float, float]:
        coef, *_ = np.linalg.lstsq(design, np.log(lr - c), rcond=None)
        a, b = math.exp(coef[0]), -float(coef[1])
        residual = np.log(a * n ** (-b) + c) - y
        return a, b, float(np.sum(residual * residual))

    def objective(c: float) -> float:
        return inner(c)[2]

    grid = upper * (1.0 - np.geomspace(1.0, 1e-6, 48))
    scores = [objective(c) for c in grid]
    k = int(np.argmin(scores))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, grid.size - 1)] if k + 1 < grid.size else upper * (1 - 1e-12)
    result = optimize.minimize_scalar(
        objective,
        bounds=(lo, hi),
        method='bounded',
        options={'xatol': upper * 1e-14, 'maxiter': max_iterations},
    )
    candidates = [(0.0, objective(0.0)), (float(grid[k]), scores[k])]
    if result.success:
        candidates.append((float(result.x), float(result.fun)))
    c_best, _ = min(candidates, key=lambda item: item[1])
    a, b, rss = inner(c_best)
    fit = OffsetPowerLawFit(a=a, b=b, c=c_best, rss=rss)
    if not result.success and c_best != 0.0:
        raise FitConvergenceError(
            f'offset power-law fit did not converge after {max_iterations} iterations', best=fit
        )
    if a <= 0 or b <= 0:
        logger.warning(f'Optimal-LR fit has non-positive a or b: a={a:.4g} b={b:.4g}')
    return fit


def loglik_offset(values: Iterable[float]) -> int:
    """Smallest non-negative integer k with v + k > 0 for every value."""
    values = [float(v) for v in values]
    if not values:
        raise ArgumentError('no values to offset')
    lowest = min(values)
    if lowest > 0:
        return 0
    return math.floor(-lowest) + 1


def _metric_values(entries: Sequence[RunLogEntry], metric: str) -> list[float]:
    if metric not in METRICS:
        raise ValidationError('metric', metric, f'expected one of {METRICS}')
    attr = f'test_{metric}'
    return [v for v in (getattr(e, attr) for e in entries) if math.isfinite(v)]


def min_loss_per_run(
    entries: Sequence[RunLogEntry], metric: str, nll_offset: float = REPORTED_NLL_OFFSET
) -> float:
    """Minimum test metric over a run; NLL gets ``nll_offset`` added."""
    values = _metric_values(entries, metric)
    if not values:
        raise ArgumentError('run log has no finite evaluations')
    best = min(values)
    return best + nll_offset if metric == 'nll' else best


@dataclass(frozen=True)
class RunSeries:
    """What the fitting stage needs to know about one finished run."""

    run_id: str
    status: RunStatus
    n_params: int
    train_points: int
    entries: tuple[RunLogEntry, ...]


def resolve_offset(runs: Sequence[RunSeries], metric: str, offset: float | str) -> float:
    if metric != 'nll':
        return 0.0
    if offset == 'auto':
        return float(loglik_offset(v for r in runs for v in _metric_values(r.entries, 'nll')))
    return float(offset)


def extract_points(
    runs: Sequence[RunSeries], axis: str, metric: str, offset: float | str = REPORTED_NLL_OFFSET
) -> list[tuple[float, float]]:
    """(A, min loss) points for one axis; DIVERGED runs are excluded."""
    if axis not in AXES:
        raise ValidationError('axis', axis, f'expected one of {AXES}')
    usable = [r for r in runs if r.status != RunStatus.DIVERGED and r.entries]
    shift = resolve_offset(usable, metric, offset)
    if axis == 'compute':
        attr = f'test_{metric}'
        frontier = compute_frontier(
            {r.run_id: [(e.compute, getattr(e, attr) + shift) for e in r.entries] for r in usable}
        )
        return [(float(p.compute), p.loss) for p in frontier]
    key = 'n_params' if axis == 'params' else 'train_points'
    points = [
        (float(getattr(r, key)), min_loss_per_run(r.entries, metric, nll_offset=shift))
        for r in usable
    ]
    return sorted(points)
