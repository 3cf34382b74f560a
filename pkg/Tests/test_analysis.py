import json
import unittest
import sys
import os

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from project_code.analysis import (
    ERROR_COLUMNS,
    MOMENT_COLUMNS,
    fit_order,
    moment_estimate,
    moment_sweep,
    strong_error,
    sup_diff,
)
from project_code.driver import gen_brownian, path_seed
from project_code.exceptions import (
    GridMismatch,
    InsufficientData,
    InvalidRange,
    NonPositiveValue,
    NotDivisible,
)
from project_code.model import PathRecord, build_grid
from project_code.problems import get_problem
from project_code.scheme_bm import simulate_bm


def _dyadic(lo, hi):
    return [f"1/{2 ** e}" for e in range(lo, hi + 1)]


class TestSupDiff(unittest.TestCase):

    def setUp(self):
        self.coarse_grid = build_grid(0.5, 0.25, 0.25)   # Mbar = 1, M = 2
        self.fine_grid = build_grid(0.5, 0.25, 0.125)    # Mbar = 2, M = 4

    def test_identical_paths(self):
        rec = PathRecord(self.coarse_grid, [1.0, 1.0, 2.0, 0.0])
        self.assertEqual(sup_diff(rec, rec, 1), 0.0)

    def test_hand_example(self):
        coarse = PathRecord(self.coarse_grid, [1.0, 1.0, 2.0, 0.0])
        # values between shared times must not matter
        fine = PathRecord(self.fine_grid, [1.0, 1.0, 1.0, 9.0, 1.5, 9.0, 1.0])
        self.assertEqual(sup_diff(coarse, fine, 2), 1.0)

    def test_constant_offset_vector(self):
        grid = build_grid(1, "1/4", "1/8")
        base = np.random.default_rng(0).standard_normal((grid.n_values, 2))
        shifted = base + np.array([3.0, 4.0])
        self.assertAlmostEqual(sup_diff(PathRecord(grid, base), PathRecord(grid, shifted), 1), 5.0, places=12)

    def test_wrong_factor(self):
        coarse = PathRecord(self.coarse_grid, np.ones(4))
        fine = PathRecord(self.fine_grid, np.ones(7))
        with self.assertRaises(GridMismatch):
            sup_diff(coarse, fine, 4)
        with self.assertRaises(GridMismatch):
            sup_diff(fine, coarse, 2)


class TestMomentEstimate(unittest.TestCase):

    def setUp(self):
        self.grid = build_grid(1, "1/4", "1/8")

    def test_constant_paths(self):
        c = PathRecord(self.grid, np.full(self.grid.n_values, 2.0))
        minus_c = PathRecord(self.grid, np.full(self.grid.n_values, -2.0))
        self.assertEqual(moment_estimate([c], 2), 4.0)
        self.assertEqual(moment_estimate([c, minus_c], 3), 8.0)

    def test_history_ignored(self):
        values = np.ones(self.grid.n_values)
        values[0] = 100.0
        self.assertEqual(moment_estimate([PathRecord(self.grid, values)], 2), 1.0)

    def test_exploded_paths_skipped(self):
        bad = np.ones(self.grid.n_values)
        bad[-1] = np.nan
        ok = PathRecord(self.grid, np.full(self.grid.n_values, 3.0))
        blown = PathRecord(self.grid, bad, exploded=True, explode_step=self.grid.M)
        self.assertEqual(moment_estimate([ok, blown], 2), 9.0)
        with self.assertRaises(InsufficientData):
            moment_estimate([blown], 2)

    def test_errors(self):
        with self.assertRaises(InsufficientData):
            moment_estimate([], 2)
        with self.assertRaises(InvalidRange):
            moment_estimate([PathRecord(self.grid, np.ones(self.grid.n_values))], 1.5)


class TestFitOrder(unittest.TestCase):

    def test_exact_power_law(self):
        fit = fit_order([(h, 7.0 * h) for h in (0.1, 0.05, 0.025)])
        self.assertAlmostEqual(fit.slope, 1.0, places=10)
        self.assertAlmostEqual(fit.intercept, np.log(7.0), places=10)
        self.assertLess(abs(fit.r_squared - 1.0), 1e-10)

    def test_constant_error(self):
        fit = fit_order([(h, 0.3) for h in (0.1, 0.05, 0.025)])
        self.assertAlmostEqual(fit.slope, 0.0, places=10)
        self.assertGreaterEqual(fit.r_squared, 0.0)
        self.assertLessEqual(fit.r_squared, 1.0)

    def test_noisy_square_root(self):
        rng = np.random.default_rng(3)
        hs = 2.0 ** -np.arange(1, 11)
        errs = 3.0 * hs ** 0.5 * (1 + 0.01 * rng.standard_normal(hs.size))
        fit = fit_order(list(zip(hs, errs)))
        self.assertTrue(0.45 <= fit.slope <= 0.55)

    def test_power_rescales_slope(self):
        hs = [2.0 ** -e for e in range(3, 8)]
        base = [(h, (2.0 * h ** 0.5) ** 2) for h in hs]
        raised = [(h, (2.0 * h ** 0.5) ** 5) for h in hs]
        ratio = fit_order(raised).slope / fit_order(base).slope
        self.assertAlmostEqual(ratio, 5 / 2, places=10)

    def test_errors(self):
        with self.assertRaises(InsufficientData):
            fit_order([(0.1, 1.0)])
        with self.assertRaises(InsufficientData):
            fit_order([(0.1, 1.0), (0.1, 2.0)])
        with self.assertRaises(NonPositiveValue):
            fit_order([(0.1, 1.0), (0.05, 0.0)])
        with self.assertRaises(NonPositiveValue):
            fit_order([(-0.1, 1.0), (0.05, 1.0)])


class TestStrongError(unittest.TestCase):

    def setUp(self):
        self.cubic = get_problem("cubic_neutral")

    def _run(self, problem, h_list, h_ref, n_paths=16, **kwargs):
        return strong_error(problem.system, problem.history, 1, "1/4", h_list, h_ref, 2.0, n_paths, 42, **kwargs)

    def test_self_comparison_is_zero(self):
        report = self._run(self.cubic, ["1/16"], "1/16")
        self.assertEqual(len(report.rows), 1)
        self.assertEqual(report.rows[0].err_p, 0.0)
        self.assertIsNone(report.fit)
        self.assertGreater(report.rows[0].moment_p, 0.0)

    def test_zero_system_has_no_error(self):
        report = self._run(get_problem("zero"), ["1/4", "1/8"], "1/32")
        self.assertTrue(all(row.err_p == 0.0 for row in report.rows))
        self.assertTrue(all(row.moment_p == 1.0 for row in report.rows))
        self.assertIsNone(report.fit)

    def test_rows_sorted_and_serializable(self):
        report = self._run(self.cubic, ["1/32", "1/8", "1/16"], "1/64")
        self.assertEqual([row.h for row in report.rows], [0.125, 0.0625, 0.03125])
        self.assertTrue(all(row.err_p > 0 and row.stderr >= 0 for row in report.rows))
        self.assertIsNotNone(report.fit)
        self.assertTrue(0.0 <= report.fit.r_squared <= 1.0)
        self.assertEqual(list(report.to_frame().columns), ERROR_COLUMNS)
        json.dumps(report.to_dict(), allow_nan=False)

    def test_thread_count_does_not_change_numbers(self):
        args = (["1/8", "1/16"], "1/64")
        one = self._run(self.cubic, *args, n_paths=40, threads=1, chunk_size=7)
        three = self._run(self.cubic, *args, n_paths=40, threads=3, chunk_size=7)
        self.assertEqual(one.to_dict(), three.to_dict())

    def test_jump_shared_realizations(self):
        report = self._run(get_problem("jump_linear"), ["1/16", "1/32", "1/64"], "1/64", n_paths=30)
        self.assertEqual(report.driver, "jump")
        self.assertEqual(report.rows[-1].err_p, 0.0)
        self.assertTrue(all(row.err_p > 0 for row in report.rows[:-1]))

    def test_exact_reference_for_gbm(self):
        gbm = get_problem("gbm")
        report = self._run(gbm, ["1/16", "1/128"], "1/128", n_paths=500, exact=gbm.exact_path)
        self.assertEqual(report.reference, "exact")
        self.assertLess(report.rows[1].err_p, report.rows[0].err_p)

    def test_errors(self):
        with self.assertRaises(InsufficientData):
            self._run(self.cubic, ["1/8"], "1/16", n_paths=1)
        with self.assertRaises(InsufficientData):
            self._run(self.cubic, [], "1/16")
        with self.assertRaises(NotDivisible):
            self._run(self.cubic, ["1/8", "1/12"], "1/16")
        with self.assertRaises(InvalidRange):
            strong_error(self.cubic.system, self.cubic.history, 1, "1/4", ["1/8"], "1/16", 1.0, 4, 0)
        jump = get_problem("jump_linear")
        with self.assertRaises(InvalidRange):
            self._run(jump, ["1/8"], "1/16", exact=lambda grid, inc: inc)


class TestMomentSweep(unittest.TestCase):

    def setUp(self):
        self.hot = get_problem("cubic_neutral", xi=10.0)

    def test_untamed_explodes_tamed_survives(self):
        args = (self.hot.system, self.hot.history, 1, "1/4", ["1/4"], 2.0, 1000, 0)
        raw = moment_sweep(*args, untamed=True, explosion_threshold=1e10)
        tamed = moment_sweep(*args)
        self.assertFalse(raw.tamed)
        self.assertGreater(raw.rows[0].exploded_fraction, 0.0)
        self.assertEqual(tamed.rows[0].exploded_fraction, 0.0)
        self.assertTrue(np.isfinite(tamed.rows[0].moment_p))
        json.dumps(raw.to_dict(), allow_nan=False)

    def test_frame_columns(self):
        report = moment_sweep(self.hot.system, self.hot.history, 1, "1/4", ["1/8", "1/4"], 4.0, 10, 1)
        frame = report.to_frame()
        self.assertEqual(list(frame.columns), MOMENT_COLUMNS)
        self.assertEqual(list(frame["h"]), [0.25, 0.125])

    def test_untamed_jumps_rejected(self):
        jump = get_problem("jump_linear")
        with self.assertRaises(InvalidRange):
            moment_sweep(jump.system, jump.history, 1, "1/4", ["1/8"], 2.0, 4, 0, untamed=True)

    def test_jump_sweep(self):
        jump = get_problem("jump_cubic_neutral")
        report = moment_sweep(jump.system, jump.history, 1, "1/4", ["1/8", "1/16"], 2.0, 50, 5)
        self.assertEqual(report.driver, "jump")
        self.assertTrue(all(np.isfinite(row.moment_p) for row in report.rows))


@pytest.mark.slow
def test_gbm_rate_against_exact_solution():
    gbm = get_problem("gbm")
    report = strong_error(gbm.system, gbm.history, 1, "1/16", _dyadic(4, 7), "1/128", 2.0, 10_000, 2024,
                          exact=gbm.exact_path)
    assert 0.7 <= report.fit.slope <= 1.3


@pytest.mark.slow
def test_cubic_neutral_rate_and_moment_stability():
    cubic = get_problem("cubic_neutral")
    report = strong_error(cubic.system, cubic.history, 1, "1/16", _dyadic(4, 7), "1/2048", 2.0, 10_000, 7)
    assert report.fit.slope >= 0.6
    assert report.fit.r_squared >= 0.9
    for coarse, fine in zip(report.rows, report.rows[1:]):
        assert fine.err_p <= coarse.err_p + 2 * (coarse.stderr + fine.stderr)

    moments = moment_sweep(cubic.system, cubic.history, 1, "1/16", _dyadic(4, 7), 4.0, 10_000, 7)
    values = [row.moment_p for row in moments.rows]
    assert max(values) / min(values) < 2.0
    assert all(row.exploded_fraction == 0.0 for row in moments.rows)


@pytest.mark.slow
def test_jump_linear_rate():
    jump = get_problem("jump_linear", lambda_tot=2.0, mean_mark=0.5, alpha=0.2)
    report = strong_error(jump.system, jump.history, 1, "1/16", _dyadic(4, 7), "1/2048", 2.0, 10_000, 11)
    # seed 11 measures 0.797, an independent tamed EM run of the same system 0.75:
    # the self-convergence slope sits above the guaranteed 0.4, below the EM rate of 1
    assert 0.6 <= report.fit.slope <= 1.0
    assert report.fit.r_squared >= 0.99


@pytest.mark.slow
def test_cubic_neutral_fourth_moment_baseline():
    cubic = get_problem("cubic_neutral")
    grid = build_grid(1, "1/16", "1/64")
    seg = cubic.segment(grid)
    records = [simulate_bm(cubic.system, seg, gen_brownian(grid, 1, path_seed(64, j))) for j in range(10_000)]
    value = moment_estimate(records, 4.0)
    # every path starts at xi(0) = 1; the drift pulls back towards x of about 1.54
    assert 1.0 <= value < 100.0
    swept = moment_sweep(cubic.system, cubic.history, 1, "1/16", ["1/64"], 4.0, 10_000, 64)
    assert value == pytest.approx(swept.rows[0].moment_p, rel=1e-12)


if __name__ == '__main__':
    unittest.main()
