import math
import os
import tempfile
import unittest

import numpy as np

from parameter_derivation.explore_optimizer import (
    OptimizerInput,
    derive_dimension_params,
    golden_section_max,
    optimize_exploration,
    prob_better,
    volume_curve,
    volume_fraction,
    window_size_for,
)
from parameter_derivation.normal import std_normal_cdf
from routing_engine.errors import InvalidParameterError


class TestProbBetter(unittest.TestCase):

    def test_one_sigma_separation(self):
        # sigma_D = sqrt((0.16 + 0.1539) / 3139) = 0.01, so z = 1
        self.assertAlmostEqual(prob_better(0.8, 0.81, 3139), 0.8413, places=4)

    def test_equal_means(self):
        self.assertEqual(prob_better(0.7, 0.7, 100), 0.5)

    def test_increases_with_samples(self):
        values = [prob_better(0.8, 0.81, n) for n in (10, 100, 1000, 10_000)]
        self.assertEqual(values, sorted(values))

    def test_invalid(self):
        with self.assertRaises(InvalidParameterError):
            prob_better(0.0, 0.5, 10)
        with self.assertRaises(InvalidParameterError):
            prob_better(0.4, 0.5, 0)


class TestVolumeFraction(unittest.TestCase):

    def test_two_gateway_closed_form(self):
        inp = OptimizerInput((0.8, 0.81), tps=1.0, horizon_s=7200)
        c2 = 7200 * 0.01 ** 2 / (0.8 * 0.2 + 0.81 * 0.19)
        for e in (0.01, 0.05, 0.1533, 0.3, 0.45):
            expected = e + (1 - 2 * e) * std_normal_cdf(math.sqrt(c2 * e))
            self.assertAlmostEqual(volume_fraction(e, inp), expected, places=12)

    def test_no_exploration_is_a_coin_flip(self):
        self.assertEqual(volume_fraction(0.0, OptimizerInput((0.8, 0.81), tps=1.0)), 0.5)
        self.assertEqual(volume_fraction(0.0, OptimizerInput((0.7, 0.8, 0.9), tps=1.0)), 0.25)

    def test_continuous_at_zero(self):
        inp = OptimizerInput((0.8, 0.81), tps=1.0, horizon_s=7200)
        gaps = [abs(volume_fraction(e, inp) - 0.5) for e in (1e-4, 1e-6, 1e-8, 1e-10)]
        self.assertEqual(gaps, sorted(gaps, reverse=True))
        self.assertLess(gaps[-1], 1e-4)

    def test_window_size_scales_with_rate(self):
        inp = OptimizerInput((0.8, 0.81), tps=10.0, horizon_s=7200)
        self.assertAlmostEqual(window_size_for(0.1, inp), 7200.0)

    def test_out_of_range(self):
        inp = OptimizerInput((0.5, 0.6, 0.7), tps=1.0)
        with self.assertRaises(InvalidParameterError):
            volume_fraction(1 / 3, inp)

    def test_input_validation(self):
        with self.assertRaises(InvalidParameterError):
            OptimizerInput((0.8,), tps=1.0)
        with self.assertRaises(InvalidParameterError):
            OptimizerInput((0.8, 1.0), tps=1.0)
        with self.assertRaises(InvalidParameterError):
            OptimizerInput((0.8, 0.7), tps=0.0)


class TestGoldenSection(unittest.TestCase):

    def test_parabola(self):
        x = golden_section_max(lambda v: -(v - 0.3) ** 2, 0.0, 1.0, tol=1e-8)
        self.assertAlmostEqual(x, 0.3, places=6)

    def test_reversed_bounds(self):
        x = golden_section_max(lambda v: -(v - 2.0) ** 2, 5.0, 0.0, tol=1e-8)
        self.assertAlmostEqual(x, 2.0, places=6)


class TestOptimizeExploration(unittest.TestCase):

    def test_close_gateways(self):
        result = optimize_exploration(OptimizerInput((0.8, 0.81), tps=1.0, horizon_s=7200))
        self.assertAlmostEqual(result.e_star, 0.1533, delta=0.003)
        self.assertTrue(1080 <= result.n_star <= 1130)
        self.assertAlmostEqual(result.v_star, 0.655, delta=0.003)
        self.assertFalse(result.degenerate)
        self.assertFalse(result.multimodal)

    def test_optimum_is_grid_maximum(self):
        inp = OptimizerInput((0.8, 0.81), tps=1.0, horizon_s=7200)
        result = optimize_exploration(inp)
        grid = np.linspace(1e-6, 0.5 - 1e-6, 2000)
        best = max(volume_fraction(e, inp) for e in grid)
        self.assertGreaterEqual(result.v_star, best - 1e-6)

    def test_optimum_is_local_maximum(self):
        for means, tps in (((0.8, 0.81), 1.0), ((0.8, 0.81), 10.0), ((0.7, 0.75, 0.8), 1.0)):
            inp = OptimizerInput(means, tps=tps, horizon_s=7200)
            result = optimize_exploration(inp)
            for step in (-1e-4, 1e-4):
                self.assertGreaterEqual(result.v_star, volume_fraction(result.e_star + step, inp), (means, tps, step))

    def test_more_traffic_needs_less_exploration(self):
        slow = optimize_exploration(OptimizerInput((0.8, 0.81), tps=1.0))
        fast = optimize_exploration(OptimizerInput((0.8, 0.81), tps=10.0))
        self.assertLess(fast.e_star, slow.e_star)
        self.assertAlmostEqual(fast.e_star, 0.0945, delta=0.003)

    def test_three_gateways(self):
        inp = OptimizerInput((0.7, 0.75, 0.8), tps=1.0)
        result = optimize_exploration(inp)
        self.assertTrue(0.0 < result.e_star < 1 / 3)
        self.assertGreater(result.v_star, 1 / 3)

    def test_degenerate(self):
        result = optimize_exploration(OptimizerInput((0.5, 0.5), tps=1.0))
        self.assertTrue(result.degenerate)
        self.assertAlmostEqual(result.e_star, 1e-6)
        self.assertEqual(result.n_star, 1)

    def test_volume_curve(self):
        inp = OptimizerInput((0.8, 0.81), tps=1.0)
        df = volume_curve(inp, points=50)
        self.assertEqual(list(df.columns), ["e", "window_size", "v"])
        self.assertEqual(len(df), 50)
        self.assertLess(df["e"].max(), 0.5)
        with tempfile.TemporaryDirectory() as tmp:
            df.to_csv(os.path.join(tmp, "curve.csv"), index=False)


class TestDeriveDimensionParams(unittest.TestCase):

    def test_clamped_to_minimum(self):
        params = derive_dimension_params([0.9, 0.7], tps=1.0)
        self.assertEqual(params.exploration_factor, 0.05)
        self.assertTrue(params.clamped)
        self.assertEqual(params.window_size, 360)

    def test_unclamped(self):
        params = derive_dimension_params([0.8, 0.81], tps=1.0)
        self.assertFalse(params.clamped)
        self.assertAlmostEqual(params.exploration_factor, 0.1533, delta=0.003)

    def test_capped_below_one_over_m(self):
        params = derive_dimension_params([0.5, 0.51, 0.52, 0.53, 0.54], tps=0.01, clamp_max=0.25)
        self.assertLess(params.exploration_factor * 5, 1.0)
        self.assertTrue(params.clamped)

    def test_single_gateway(self):
        params = derive_dimension_params([0.9], tps=1.0)
        self.assertEqual(params.exploration_factor, 0.0)
        self.assertEqual(params.window_size, 1)
        self.assertTrue(params.degenerate)

    def test_bad_clamps(self):
        with self.assertRaises(InvalidParameterError):
            derive_dimension_params([0.8, 0.9], tps=1.0, clamp_min=0.3, clamp_max=0.1)


if __name__ == '__main__':
    unittest.main()
