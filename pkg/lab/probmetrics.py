"""Probabilistic scoring for Student's-t predictions.

Aggregation everywhere is a flat mean over unmasked prediction positions,
not a per-series mean of means.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special, stats

from lab import tensor as T
from lab.tensor import Tensor
from lab.tsformer import StudentTParams
from utils.error_handler import ContractError, DimensionError, DomainError, QuadratureError
from utils.logger import get_logger

logger = get_logger('probmetrics')

REPORTED_NLL_OFFSET = 2.0


def _scalar_or_array(value: np.ndarray) -> float | np.ndarray:
    return float(value) if np.ndim(value) == 0 else value


def _check_scale(sigma: np.ndarray, nu: np.ndarray, min_nu: float = 0.0) -> None:
    if np.any(sigma <= 0):
        raise DomainError(f'sigma must be > 0, got min {np.min(sigma)!r}')
    if np.any(nu <= min_nu):
        raise DomainError(f'nu must be > {min_nu:g}, got min {np.min(nu)!r}')


def studentt_logpdf(y, mu, sigma, nu) -> float | np.ndarray:
    """Location-scale Student's-t log density, via log-gamma."""
    y, mu, sigma, nu = (np.asarray(a, dtype=np.float64) for a in (y, mu, sigma, nu))
    _check_scale(sigma, nu)
    z = (y - mu) / sigma
    log_norm = (
        special.gammaln((nu + 1.0) / 2.0)
        - special.gammaln(nu / 2.0)
        - 0.5 * np.log(nu * math.pi)
        - np.log(sigma)
    )
    return _scalar_or_array(log_norm - (nu + 1.0) / 2.0 * np.log1p(z * z / nu))


def _mask_array(mask, shape: tuple[int, ...]) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise DimensionError('mask', mask.shape, shape)
    return mask


def nll_loss(params: StudentTParams, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood over unmasked positions, as one tape op.

    Gradients with respect to mu, sigma and nu are analytic.
    """
    mu, sigma, nu = params.arrays()
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != mu.shape:
        raise DimensionError('nll_loss', mu.shape, targets.shape)
    keep = _mask_array(mask, mu.shape)
    count = int(keep.sum())
    if count == 0:
        raise ContractError('nll_loss: every position is masked')
    _check_scale(sigma, nu)

    z = (targets - mu) / sigma
    z2 = z * z
    neg_logpdf = -np.asarray(studentt_logpdf(targets, mu, sigma, nu))
    weight = keep / count
    value = np.sum(np.where(keep, neg_logpdf, 0.0)) / count

    def backward_fn(g):
        scale = g * weight
        denom = nu + z2
        d_mu = -(nu + 1.0) * z / (sigma * denom)
        d_sigma = 1.0 / sigma - (nu + 1.0) * z2 / (sigma * denom)
        d_nu = -(
            0.5 * (special.digamma((nu + 1.0) / 2.0) - special.digamma(nu / 2.0))
            - 0.5 / nu
            - 0.5 * np.log1p(z2 / nu)
            + (nu + 1.0) * z2 / (2.0 * nu * denom)
        )
        return (scale * d_mu, scale * d_sigma, scale * d_nu)

    return T.custom_op('nll', (params.mu, params.sigma, params.nu), np.asarray(value), backward_fn)


def point_mse(params: StudentTParams, targets, mask=None) -> float:
    """Mean squared error of the posterior mean, which is mu whenever nu > 1."""
    mu, _, nu = params.arrays()
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != mu.shape:
        raise DimensionError('point_mse', mu.shape, targets.shape)
    keep = _mask_array(mask, mu.shape)
    if not keep.any():
        raise ContractError('point_mse: every position is masked')
    if np.any(nu[keep] <= 1.0):
        raise DomainError('posterior mean is undefined for nu <= 1')
    err = (mu - targets)[keep]
    return float(np.mean(err * err))


def crps_studentt(y, mu, sigma, nu) -> float | np.ndarray:
    """Closed-form CRPS of a location-scale Student's-t forecast.

    Equals sigma * CRPS((y - mu) / sigma; 0, 1, nu). Requires nu > 1.
    """
    y, mu, sigma, nu = (np.asarray(a, dtype=np.float64) for a in (y, mu, sigma, nu))
    _check_scale(sigma, nu, min_nu=1.0)
    z = (y - mu) / sigma
    cdf = stats.t.cdf(z, nu)
    pdf = stats.t.pdf(z, nu)
    beta_ratio = np.exp(special.betaln(0.5, nu - 0.5) - 2.0 * special.betaln(0.5, nu / 2.0))
    standardized = (
        z * (2.0 * cdf - 1.0)
        + 2.0 * pdf * (nu + z * z) / (nu - 1.0)
        - 2.0 * np.sqrt(nu) / (nu - 1.0) * beta_ratio
    )
    return _scalar_or_array(sigma * standardized)


def crps_quadrature(
    y: float,
    cdf: Callable[[float], float],
    support: tuple[float, float] | None = None,
    tolerance: float = 1e-8,
    points: Sequence[float] | None = None,
    central_width: float = 50.0,
) -> float:
    """CRPS by adaptive integration of (F(x) - 1{x >= y})^2.

    With ``support`` the integral runs over that interval only. Without it a
    central piece around ``y`` is integrated and each infinite tail is added
    unless its contribution is below ``tolerance / 10``. ``points`` marks
    discontinuities of ``cdf`` inside finite pieces.
    """
    if tolerance <= 0:
        raise DomainError(f'tolerance must be > 0, got {tolerance}')
    y = float(y)

    def below(x: float) -> float:
        return cdf(x) ** 2

    def above(x: float) -> float:
        return (1.0 - cdf(x)) ** 2

    if support is not None:
        lo, hi = support
        pieces = [(below, min(lo, y), y), (above, y, max(hi, y))]
        tails: list[tuple[Callable[[float], float], float, float]] = []
    else:
        lo, hi = y - central_width, y + central_width
        pieces = [(below, lo, y), (above, y, hi)]
        tails = [(below, -np.inf, lo), (above, hi, np.inf)]

    total = 0.0
    achieved = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', integrate.IntegrationWarning)
        for fn, a, b in pieces:
            if b <= a:
                continue
            inner = [p for p in points or () if a < p < b] or None
            value, err = integrate.quad(
                fn, a, b, points=inner, epsabs=tolerance / 10, epsrel=0.0, limit=500
            )
            total += value
            achieved += err
        for fn, a, b in tails:
            value, err = integrate.quad(fn, a, b, epsabs=tolerance / 10, epsrel=0.0, limit=500)
            if value + err < tolerance / 10:
                continue
            total += value
            achieved += err

    if achieved > tolerance:
        raise QuadratureError(achieved, tolerance)
    return total


@dataclass(frozen=True)
class ScoreTriple:
    """Flat-mean MSE, CRPS and NLL over a set of next-step predictions."""

    mse: float
    crps: float
    nll: float

    @property
    def nll_reported(self) -> float:
        return self.nll + REPORTED_NLL_OFFSET

    def check_reported_positive(self) -> bool:
        """Soft check that nll + 2 is positive; warns instead of raising."""
        if self.nll_reported <= 0:
            logger.warning(
                f'Reported log-likelihood nll+2={self.nll_reported:.4f} is not positive; '
                'power-law fits on it need a larger offset'
            )
            return False
        return True


def score_arrays(mu, sigma, nu, targets, mask=None) -> ScoreTriple:
    """Score raw parameter arrays against targets."""
    mu, sigma, nu, targets = (np.asarray(a, dtype=np.float64) for a in (mu, sigma, nu, targets))
    keep = _mask_array(mask, mu.shape)
    if not keep.any():
        raise ContractError('score_arrays: every position is masked')
    m, s, n, y = mu[keep], sigma[keep], nu[keep], targets[keep]
    err = m - y
    return ScoreTriple(
        mse=float(np.mean(err * err)),
        crps=float(np.mean(crps_studentt(y, m, s, n))),
        nll=float(-np.mean(studentt_logpdf(y, m, s, n))),
    )
