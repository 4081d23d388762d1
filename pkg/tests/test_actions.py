import math

import numpy as np
import pytest

from steerlab import actions
from steerlab.actions import (calibrate_temperature, make_grid, mass_within_window,
                              one_hot_targets, soft_target_probs, soft_targets)

from oracles import softmax_direct


class TestMakeGrid:
    def test_three_point_grid(self):
        grid = make_grid(-1, 1, 3)
        np.testing.assert_array_equal(grid.values, [-1.0, 0.0, 1.0])

    def test_default_paper_grid(self):
        grid = make_grid()
        assert grid.n == 512
        assert grid.values[0] == -250.0 and grid.values[-1] == 250.0
        assert grid.spacing == pytest.approx(500.0 / 511.0)
        assert grid.spacing == pytest.approx(0.9785, abs=1e-4)

    def test_uniform_spacing_within_1e9(self):
        grid = make_grid(-250, 250, 512)
        diffs = np.diff(grid.values)
        assert np.all(diffs > 0)
        assert np.abs(diffs - grid.spacing).max() < 1e-9

    def test_degenerate_range_rejected(self):
        with pytest.raises(ValueError):
            make_grid(0, 0, 3)
        with pytest.raises(ValueError):
            make_grid(1, -1, 3)

    def test_too_few_points_rejected(self):
        with pytest.raises(ValueError):
            make_grid(-1, 1, 1)

    def test_values_immutable(self):
        grid = make_grid(-1, 1, 3)
        with pytest.raises(ValueError):
            grid.values[0] = 5.0


class TestSoftTargets:
    def test_three_point_example(self):
        probs = soft_target_probs([-1.0, 0.0, 1.0], a_gt=0.0, temperature=1.0)
        expected = softmax_direct([-1.0, 0.0, -1.0])
        np.testing.assert_allclose(probs, expected, rtol=1e-12)
        np.testing.assert_allclose(probs, [0.2119, 0.5761, 0.2119], atol=5e-5)

    def test_symmetric_grid_symmetric_probs(self):
        probs = soft_target_probs(np.linspace(-10, 10, 21), a_gt=0.0, temperature=3.0)
        np.testing.assert_allclose(probs, probs[::-1], atol=1e-15)

    @pytest.mark.parametrize("temperature", [1e-3, 0.1, 1.0, 42.0, 1e4])
    def test_sums_to_one(self, temperature):
        rng = np.random.default_rng(0)
        cand = rng.uniform(-250, 250, size=513)
        probs = soft_target_probs(cand, a_gt=float(cand[0]), temperature=temperature)
        assert abs(probs.sum() - 1.0) < 1e-9
        assert np.all(probs >= 0)

    def test_translation_covariance(self):
        cand = np.linspace(-5, 5, 11)
        base = soft_target_probs(cand, a_gt=1.0, temperature=2.0)
        for offset in (-37.5, 0.25, 111.0):
            shifted = soft_target_probs(cand + offset, a_gt=1.0 + offset, temperature=2.0)
            np.testing.assert_allclose(shifted, base, atol=1e-12)

    def test_one_hot_limit_as_temperature_vanishes(self):
        grid = make_grid()
        cand = np.concatenate([grid.values, [0.0]])
        probs = soft_target_probs(cand, a_gt=0.0, temperature=1e-6)
        assert probs.argmax() == len(cand) - 1
        assert probs.max() > 1.0 - 1e-6

    def test_maximal_at_appended_ground_truth(self):
        grid = make_grid()
        cand = np.concatenate([grid.values, [13.37]])
        tv = soft_targets(cand, a_gt=13.37, temperature=4.0)
        assert tv.probs.argmax() == len(cand) - 1
        assert tv.mode == "soft"

    def test_rejects_non_positive_temperature(self):
        with pytest.raises(ValueError):
            soft_target_probs([-1.0, 0.0, 1.0], 0.0, temperature=0.0)
        with pytest.raises(ValueError):
            soft_target_probs([-1.0, 0.0, 1.0], 0.0, temperature=-1.0)

    def test_tail_mass_monotone_in_temperature(self):
        grid = make_grid()
        temps = np.geomspace(0.01, 100.0, 12)
        tails = [1.0 - mass_within_window(grid, t, 5.0) for t in temps]
        assert all(a <= b + 1e-12 for a, b in zip(tails, tails[1:]))


class TestOneHot:
    def test_single_nonzero_entry(self):
        tv = one_hot_targets(6, 4)
        assert tv.probs.sum() == 1.0
        assert tv.probs[4] == 1.0
        assert np.count_nonzero(tv.probs) == 1

    def test_rejects_bad_index(self):
        with pytest.raises(ValueError):
            one_hot_targets(3, 3)


class TestCalibrateTemperature:
    def test_returns_single_boundary_temperature(self):
        grid = make_grid()
        t_star = calibrate_temperature(grid, mass=0.999, window_deg=5.0)
        assert t_star > 0
        # satisfies the condition at the returned value, fails just above it
        assert mass_within_window(grid, t_star, 5.0) >= 0.999
        assert mass_within_window(grid, t_star * 1.001, 5.0) < 0.999

    def test_paper_mass_condition_holds_after_calibration(self):
        grid = make_grid()
        t_star = calibrate_temperature(grid, mass=0.999, window_deg=5.0)
        cand = np.concatenate([grid.values, [grid.mid]])
        probs = soft_target_probs(cand, grid.mid, t_star)
        inside = np.abs(cand - grid.mid) <= 5.0
        assert probs[inside].sum() >= 0.999

    def test_one_hot_limit_as_mass_approaches_one(self):
        grid = make_grid()
        masses = [0.9, 0.999, 1 - 1e-6, 1 - 1e-9, 1 - 1e-12]
        temps = [calibrate_temperature(grid, mass=m, window_deg=5.0) for m in masses]
        assert all(b < a for a, b in zip(temps, temps[1:]))
        # at the tightest temperature the targets are effectively one-hot-like:
        # the appended GT dominates every grid point by a huge margin
        cand = np.concatenate([grid.values, [grid.mid]])
        probs = soft_target_probs(cand, grid.mid, temps[-1])
        assert probs[-1] == probs.max()

    def test_window_covering_grid_returns_lower_bracket(self):
        grid = make_grid(-10, 10, 21)
        t = calibrate_temperature(grid, mass=0.999, window_deg=100.0)
        assert t == pytest.approx(1e-12)

    def test_window_below_spacing_rejected(self):
        grid = make_grid(-250, 250, 11)  # spacing 50 deg
        with pytest.raises(ValueError, match="unattainable"):
            calibrate_temperature(grid, mass=0.999, window_deg=5.0)

    def test_rejects_bad_mass(self):
        grid = make_grid()
        for mass in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                calibrate_temperature(grid, mass=mass, window_deg=5.0)


class TestBinIndex:
    def test_center_of_grid(self):
        grid = make_grid(-1, 1, 3)
        assert grid.bin_index(0.0) == 1
        assert grid.bin_center(1) == 0.0

    def test_nearest_point(self):
        grid = make_grid(-1, 1, 3)
        assert grid.bin_index(0.4) == 1
        assert grid.bin_index(0.6) == 2

    def test_out_of_range_clamps_with_counted_warning(self):
        grid = make_grid()
        actions.reset_clamp_count()
        assert grid.bin_index(260.0) == 511
        assert grid.bin_index(-260.0) == 0
        assert actions.clamp_count() == 2
        grid.bin_indices([300.0, 0.0, -400.0])
        assert actions.clamp_count() == 4
        actions.reset_clamp_count()

    def test_round_trip_within_half_spacing(self):
        grid = make_grid()
        rng = np.random.default_rng(3)
        for a in rng.uniform(-250, 250, size=200):
            center = grid.bin_center(grid.bin_index(float(a)))
            assert abs(center - a) <= grid.spacing / 2 + 1e-12

    def test_vectorized_matches_scalar(self):
        grid = make_grid()
        rng = np.random.default_rng(4)
        angles = rng.uniform(-260, 260, size=100)
        vec = grid.bin_indices(angles)
        scalar = [grid.bin_index(float(a)) for a in angles]
        np.testing.assert_array_equal(vec, scalar)
        actions.reset_clamp_count()

    def test_bin_center_range_check(self):
        grid = make_grid(-1, 1, 3)
        with pytest.raises(ValueError):
            grid.bin_center(3)

    def test_normalize_maps_range_to_unit_interval(self):
        grid = make_grid()
        norm = grid.normalize([-250.0, 0.0, 250.0])
        np.testing.assert_allclose(norm, [-1.0, 0.0, 1.0], atol=1e-15)
