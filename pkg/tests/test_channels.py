"""Channelized training images and the pattern-based direct sampler."""

import numpy as np
import pytest

from ensmooth.core import Grid2D, InvalidInputError, RngStream, ScalarField
from ensmooth.channels import (
    DsParams,
    TrainingImage,
    direct_sampling,
    generate_channel_ti,
    sample_realizations,
    training_image_from_field,
)

PALETTE = (0.5, 2.3)


def small_ti(seed=21, n_channels=7):
    g = Grid2D(150, 150, 149 * 0.5, 149 * 0.25)
    return generate_channel_ti(g, n_channels, RngStream(seed))


class TestTrainingImage:
    def test_channel_fraction_counts_high_facies(self):
        g = Grid2D(2, 2, 1.0, 1.0)
        vals = np.array([[0.5, 2.3], [0.5, 0.5]])
        ti = TrainingImage(g, vals, PALETTE)
        assert ti.channel_fraction() == 0.25

    def test_rejects_values_outside_palette(self):
        g = Grid2D(2, 2, 1.0, 1.0)
        with pytest.raises(InvalidInputError):
            TrainingImage(g, np.array([[0.5, 1.0], [0.5, 0.5]]), PALETTE)

    def test_rejects_shape_mismatch(self):
        g = Grid2D(3, 2, 1.0, 1.0)
        with pytest.raises(InvalidInputError):
            TrainingImage(g, np.zeros((3, 3)) + 0.5, PALETTE)

    def test_adopting_a_field_round_trips(self):
        g = Grid2D(4, 3, 1.0, 1.0)
        vals = np.full(g.n_nodes, 0.5)
        vals[5] = 2.3
        ti = training_image_from_field(ScalarField(g, vals), PALETTE)
        assert np.array_equal(ti.values.ravel(), vals)


class TestGenerator:
    def test_values_come_from_the_palette(self):
        ti = small_ti()
        assert set(np.unique(ti.values)) <= set(PALETTE)

    def test_zero_channels_is_all_background(self):
        g = Grid2D(50, 50, 10.0, 10.0)
        ti = generate_channel_ti(g, 0, RngStream(1))
        assert ti.channel_fraction() == 0.0

    def test_more_channels_raise_the_fraction(self):
        g = Grid2D(120, 120, 30.0, 30.0)
        f2 = generate_channel_ti(g, 2, RngStream(3)).channel_fraction()
        f12 = generate_channel_ti(g, 12, RngStream(3)).channel_fraction()
        assert 0.0 < f2 < f12

    def test_bands_cross_the_whole_domain(self):
        ti = small_ti()
        assert np.all((ti.values == PALETTE[1]).any(axis=0))

    def test_reproducible_per_seed(self):
        a = small_ti(seed=8)
        b = small_ti(seed=8)
        c = small_ti(seed=9)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)

    def test_default_settings_hit_the_facies_windows(self):
        # prior-ensemble statistics depend on these one-point windows
        g = Grid2D(250, 250, 249 * 0.5, 249 * 0.25)
        ti = generate_channel_ti(g, 11, RngStream(97))
        assert 0.93 <= float(ti.values.mean()) <= 1.03
        assert 0.75 <= float(ti.values.std()) <= 0.85

    def test_parameter_validation(self):
        g = Grid2D(20, 20, 5.0, 5.0)
        with pytest.raises(InvalidInputError):
            generate_channel_ti(g, -1, RngStream(0))
        with pytest.raises(InvalidInputError):
            generate_channel_ti(g, 2, RngStream(0), amplitude_range=(0.0, 0.1))
        with pytest.raises(InvalidInputError):
            generate_channel_ti(g, 2, RngStream(0), width_range=(0.05, 0.01))


class TestDsParams:
    def test_bounds(self):
        with pytest.raises(InvalidInputError):
            DsParams(n_neighbors=0)
        with pytest.raises(InvalidInputError):
            DsParams(distance_threshold=1.5)
        with pytest.raises(InvalidInputError):
            DsParams(scan_fraction=0.0)


class TestDirectSampling:
    GRID = Grid2D(41, 41, 20.0, 10.0)
    DS = DsParams(distance_threshold=0.05)

    def test_realization_uses_only_palette_values(self):
        f = direct_sampling(small_ti(), self.GRID, RngStream(2), ds=self.DS)
        assert not np.any(np.isnan(f.values))
        assert set(np.unique(f.values)) <= set(PALETTE)

    def test_conditioning_is_honored_verbatim(self):
        cond = [(0, 2.3), (500, 0.5), (840, 2.3)]
        f = direct_sampling(small_ti(), self.GRID, RngStream(9),
                            conditioning=cond, ds=self.DS)
        for node, value in cond:
            assert f.values[node] == value

    def test_conditioning_node_bounds_checked(self):
        with pytest.raises(InvalidInputError):
            direct_sampling(small_ti(), self.GRID, RngStream(9),
                            conditioning=[(self.GRID.n_nodes, 0.5)])

    def test_same_stream_reproduces(self):
        ti = small_ti()
        a = direct_sampling(ti, self.GRID, RngStream(4), ds=self.DS)
        b = direct_sampling(ti, self.GRID, RngStream(4), ds=self.DS)
        assert np.array_equal(a.values, b.values)

    def test_path_seed_overrides_the_stream(self):
        ti = small_ti()
        ds = DsParams(distance_threshold=0.05, path_seed=5)
        a = direct_sampling(ti, self.GRID, RngStream(1), ds=ds)
        b = direct_sampling(ti, self.GRID, RngStream(2), ds=ds)
        assert np.array_equal(a.values, b.values)

    def test_ensemble_proportion_tracks_the_training_image(self):
        ti = small_ti()
        reals = sample_realizations(ti, self.GRID, 12, RngStream(5), ds=self.DS)
        fracs = [float(np.mean(r.values == PALETTE[1])) for r in reals]
        assert abs(np.mean(fracs) - ti.channel_fraction()) < 0.1

    def test_realizations_differ_across_children(self):
        ti = small_ti()
        reals = sample_realizations(ti, self.GRID, 3, RngStream(5), ds=self.DS)
        assert not np.array_equal(reals[0].values, reals[1].values)
        assert not np.array_equal(reals[1].values, reals[2].values)

    def test_realization_count_validated(self):
        with pytest.raises(InvalidInputError):
            sample_realizations(small_ti(), self.GRID, 0, RngStream(5))
