"""Tests for power-law fitting and scaling-point extraction."""

import math

import numpy as np
import pytest

from lab.scalinglab import (
    BreakFlag,
    RunSeries,
    compute_frontier,
    extract_points,
    fit_broken_power_law,
    fit_optimal_lr,
    fit_power_law,
    loglik_offset,
    min_loss_per_run,
)
from lab.trainer import RunLogEntry, RunStatus
from utils.error_handler import ArgumentError, DomainError, ValidationError


def _law(a, b0, log10_a0):
    return 10.0 ** (b0 * (log10_a0 - np.log10(a)))


def _entry(step, mse, crps, nll, compute=None, run_id='r'):
    return RunLogEntry(
        step=step,
        lr=1e-3,
        train_nll=nll,
        test_mse=mse,
        test_crps=crps,
        test_nll=nll,
        test_nll_reported=nll + 2,
        compute=compute if compute is not None else step * 100,
        wall_clock_s=0.0,
        config_hash='h',
        run_id=run_id,
    )


def _run(run_id, n_params, train_points, losses, status=RunStatus.COMPLETED):
    entries = tuple(
        _entry(i + 1, m, c, n, compute=(i + 1) * n_params, run_id=run_id)
        for i, (m, c, n) in enumerate(losses)
    )
    return RunSeries(run_id, status, n_params, train_points, entries)


class TestPowerLaw:
    """Single log-log law."""

    def test_recovers_parameters(self):
        a = np.geomspace(1e4, 1e8, 10)
        fit = fit_power_law(np.column_stack([a, _law(a, 0.042, -19.47)]))
        assert fit.B0 == pytest.approx(0.042, rel=1e-9)
        assert fit.log10_A0 == pytest.approx(-19.47, rel=1e-9)
        assert fit.rss < 1e-20
        assert fit.n_points == 10
        assert fit.predict(1e6) == pytest.approx(0.0851, abs=1e-4)

    def test_weights_do_not_move_exact_fit(self):
        a = np.geomspace(10, 1e5, 6)
        points = np.column_stack([a, _law(a, 0.2, 8.0)])
        fit = fit_power_law(points, weights=[1, 2, 3, 4, 5, 6])
        assert fit.B0 == pytest.approx(0.2, rel=1e-9)

    def test_predict_vectorized(self):
        a = np.geomspace(10, 1e5, 5)
        fit = fit_power_law(np.column_stack([a, _law(a, 0.1, 7.0)]))
        assert np.allclose(fit.predict(a), _law(a, 0.1, 7.0), rtol=1e-9)

    def test_needs_positive_values(self):
        with pytest.raises(DomainError):
            fit_power_law([(1e3, 0.5), (1e4, -0.1)])

    def test_needs_two_points(self):
        with pytest.raises(ArgumentError):
            fit_power_law([(1e3, 0.5)])


class TestBrokenPowerLaw:
    """Continuous two-segment fit."""

    @staticmethod
    def _broken_points(break_index=5):
        a = np.geomspace(1e3, 1e9, 12)
        x = np.log(a)
        xb = x[break_index]
        y = 1.0 - 0.1 * x - 0.2 * np.maximum(0.0, x - xb)
        return a, np.column_stack([a, np.exp(y)])

    def test_recovers_break(self):
        a, points = self._broken_points()
        fit = fit_broken_power_law(points)
        assert fit.flag == BreakFlag.BREAK
        assert fit.break_A == pytest.approx(a[5], rel=1e-9)
        assert fit.pre.B0 == pytest.approx(0.1, rel=1e-6)
        assert fit.post.B0 == pytest.approx(0.3, rel=1e-6)
        assert fit.headline is fit.post
        assert fit.improvement > 0.99

    def test_order_of_points_does_not_matter(self):
        _, points = self._broken_points()
        shuffled = points[np.random.default_rng(0).permutation(len(points))]
        assert fit_broken_power_law(shuffled).break_A == fit_broken_power_law(points).break_A

    def test_rss_belongs_to_the_returned_segments(self):
        a = np.geomspace(1e3, 1e9, 12)
        x = np.log(a)
        noise = np.random.default_rng(4).normal(0.0, 0.05, a.size)
        y = 1.0 - 0.1 * x - 0.15 * np.maximum(0.0, x - x[6]) + noise
        fit = fit_broken_power_law(np.column_stack([a, np.exp(y)]))

        xb = math.log(fit.break_A)
        segment = [fit.pre if xi <= xb else fit.post for xi in x]
        predicted = np.array(
            [-s.B0 * xi + s.B0 * s.log10_A0 * math.log(10.0) for s, xi in zip(segment, x, strict=True)]
        )
        assert fit.rss == pytest.approx(float(np.sum((y - predicted) ** 2)), rel=1e-9)
        assert fit.rss <= fit.single.rss
        assert fit.improvement == pytest.approx((fit.single.rss - fit.rss) / fit.single.rss)

    def test_too_few_points(self):
        a = np.geomspace(1e3, 1e6, 5)
        fit = fit_broken_power_law(np.column_stack([a, _law(a, 0.1, 9.0)]))
        assert fit.flag == BreakFlag.INSUFFICIENT_POINTS
        assert fit.break_A is None
        assert fit.headline is fit.single

    def test_straight_line_has_no_break(self):
        a = np.geomspace(1e3, 1e9, 10)
        fit = fit_broken_power_law(np.column_stack([a, _law(a, 0.05, -10.0)]))
        assert fit.flag == BreakFlag.NO_BREAK
        assert fit.headline is fit.single
        assert fit.to_dict()['flag'] == 'NO_BREAK'


class TestOptimalLearningRate:
    """lr* = a * N^-b + c"""

    def test_recovers_offset_law(self):
        n = np.geomspace(1e3, 1e7, 8)
        lr = 0.5 * n**-0.3 + 1e-4
        fit = fit_optimal_lr(np.column_stack([n, lr]))
        assert fit.a == pytest.approx(0.5, rel=1e-3)
        assert fit.b == pytest.approx(0.3, rel=1e-3)
        assert fit.c == pytest.approx(1e-4, rel=1e-2)
        assert np.allclose(fit.predict(n), lr, rtol=1e-4)

    def test_zero_offset(self):
        n = np.geomspace(1e3, 1e7, 6)
        fit = fit_optimal_lr(np.column_stack([n, 0.2 * n**-0.25]))
        assert fit.b == pytest.approx(0.25, rel=1e-3)
        assert fit.c == pytest.approx(0.0, abs=1e-6)

    def test_needs_four_points(self):
        with pytest.raises(ArgumentError):
            fit_optimal_lr([(1e3, 1e-3), (1e4, 5e-4), (1e5, 3e-4)])


class TestFrontier:
    """Running minimum over compute."""

    def test_running_minimum(self):
        frontier = compute_frontier({'a': [(1, 5.0), (3, 2.0)], 'b': [(2, 3.0), (4, 4.0)]})
        assert [(p.compute, p.loss, p.run_id) for p in frontier] == [
            (1, 5.0, 'a'),
            (2, 3.0, 'b'),
            (3, 2.0, 'a'),
            (4, 2.0, 'a'),
        ]

    def test_non_finite_losses_skipped(self):
        frontier = compute_frontier({'a': [(1, math.nan), (2, 1.0)]})
        assert len(frontier) == 1

    def test_empty(self):
        with pytest.raises(ArgumentError):
            compute_frontier({})


class TestLogLikelihoodOffset:
    """Smallest shift making every value positive."""

    @pytest.mark.parametrize(
        ('values', 'expected'),
        [([-1.5, 0.3], 2), ([-2.0], 3), ([0.1, 4.0], 0), ([0.0], 1)],
    )
    def test_offset(self, values, expected):
        assert loglik_offset(values) == expected

    def test_empty(self):
        with pytest.raises(ArgumentError):
            loglik_offset([])


class TestExtractPoints:
    """Turning run logs into (A, L) points."""

    @pytest.fixture
    def runs(self):
        return [
            _run('small', 100, 5000, [(0.9, 0.6, -0.2), (0.8, 0.5, -0.4)]),
            _run('large', 1000, 5000, [(0.7, 0.4, -0.5), (0.75, 0.45, -0.6)]),
            _run('bad', 500, 5000, [(9.0, 9.0, 9.0)], status=RunStatus.DIVERGED),
        ]

    def test_params_axis_uses_minimum(self, runs):
        assert extract_points(runs, 'params', 'mse') == [(100.0, 0.8), (1000.0, 0.7)]

    def test_nll_gets_offset(self, runs):
        points = extract_points(runs, 'params', 'nll')
        assert points == [(100.0, pytest.approx(1.6)), (1000.0, pytest.approx(1.4))]

    def test_auto_offset(self, runs):
        points = extract_points(runs, 'params', 'nll', offset='auto')
        assert points == [(100.0, pytest.approx(0.6)), (1000.0, pytest.approx(0.4))]

    def test_data_axis(self, runs):
        runs[1] = _run('large', 1000, 9000, [(0.7, 0.4, -0.5)])
        assert extract_points(runs, 'data', 'crps') == [(5000.0, 0.5), (9000.0, 0.4)]

    def test_compute_axis_is_frontier(self, runs):
        points = extract_points(runs, 'compute', 'crps')
        assert [c for c, _ in points] == [100.0, 200.0, 1000.0, 2000.0]
        assert [loss for _, loss in points] == [0.6, 0.5, 0.4, 0.4]

    def test_unknown_axis(self, runs):
        with pytest.raises(ValidationError):
            extract_points(runs, 'tokens', 'mse')

    def test_min_loss_rejects_empty_log(self):
        with pytest.raises(ArgumentError):
            min_loss_per_run([], 'mse')
