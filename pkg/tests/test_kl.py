"""Truncated expansion of exponential-covariance Gaussian fields."""

import numpy as np
import pytest

from ensmooth.core import Grid2D, InvalidInputError, RngStream
from ensmooth.kl import (
    CovarianceSpec,
    build_kl_basis,
    exp_covariance_matrix,
    kl_realize,
    sample_fields,
)

SPEC = CovarianceSpec(1.5, 0.5, 0.3, mean=2.0)
GRID = Grid2D(9, 5, 2.0, 1.0)

# top eigenvalues for SPEC on GRID, from the separable-kernel product
# structure (1-D weighted eigenproblems per axis, outer product, sort)
TOP6 = np.array([0.54516057, 0.30708321, 0.28034495,
                 0.16962100, 0.15791536, 0.15787172])


class TestCovarianceMatrix:
    def test_known_entries(self):
        c = exp_covariance_matrix(SPEC, GRID)
        assert np.allclose(np.diag(c), 1.5)
        i = GRID.node_index(0, 0)
        j = GRID.node_index(1, 0)  # dx = 0.25 apart
        assert np.isclose(c[i, j], 1.5 * np.exp(-0.25 / 0.5))
        k = GRID.node_index(0, 1)  # dy = 0.25 apart
        assert np.isclose(c[i, k], 1.5 * np.exp(-0.25 / 0.3))

    def test_symmetric(self):
        c = exp_covariance_matrix(SPEC, GRID)
        assert np.max(np.abs(c - c.T)) == 0.0

    def test_spec_validation(self):
        with pytest.raises(InvalidInputError):
            CovarianceSpec(0.0, 1.0, 1.0)
        with pytest.raises(InvalidInputError):
            CovarianceSpec(1.0, -1.0, 1.0)


class TestBasis:
    def test_matches_separable_product_eigenvalues(self):
        b = build_kl_basis(SPEC, GRID, 6)
        assert np.allclose(b.eigenvalues, TOP6, rtol=1e-6)

    def test_eigenvalues_descend_and_are_nonnegative(self):
        b = build_kl_basis(SPEC, GRID, 20)
        assert np.all(np.diff(b.eigenvalues) <= 1e-12)
        assert np.all(b.eigenvalues >= 0.0)

    def test_eigenfields_orthonormal_under_area_weights(self):
        b = build_kl_basis(SPEC, GRID, 12)
        w = GRID.cell_areas()
        gram = b.eigenfields.T @ (w[:, None] * b.eigenfields)
        assert np.max(np.abs(gram - np.eye(12))) < 1e-10

    def test_eigenfields_satisfy_weighted_eigenproblem(self):
        b = build_kl_basis(SPEC, GRID, 8)
        c = exp_covariance_matrix(SPEC, GRID)
        w = GRID.cell_areas()
        resid = c @ (w[:, None] * b.eigenfields) - b.eigenfields * b.eigenvalues
        assert np.max(np.abs(resid)) < 1e-8 * b.eigenvalues[0]

    def test_full_spectrum_reconstructs_covariance(self):
        g = Grid2D(7, 5, 1.0, 1.0)
        spec = CovarianceSpec(0.8, 0.4, 0.6)
        b = build_kl_basis(spec, g, g.n_nodes)
        c_hat = b.eigenfields @ (b.eigenvalues[:, None] * b.eigenfields.T)
        c = exp_covariance_matrix(spec, g)
        assert np.max(np.abs(c_hat - c)) < 1e-8

    def test_full_spectrum_captures_everything(self):
        g = Grid2D(7, 5, 1.0, 1.0)
        b = build_kl_basis(CovarianceSpec(0.8, 0.4, 0.6), g, g.n_nodes)
        assert abs(b.captured_fraction - 1.0) < 1e-12

    def test_captured_fraction_grows_with_modes(self):
        b5 = build_kl_basis(SPEC, GRID, 5)
        b15 = build_kl_basis(SPEC, GRID, 15)
        assert 0.0 < b5.captured_fraction < b15.captured_fraction < 1.0

    def test_mode_count_bounds(self):
        with pytest.raises(InvalidInputError):
            build_kl_basis(SPEC, GRID, 0)
        with pytest.raises(InvalidInputError):
            build_kl_basis(SPEC, GRID, GRID.n_nodes + 1)


class TestRealize:
    def test_zero_coefficients_give_the_mean(self):
        b = build_kl_basis(SPEC, GRID, 6)
        f = kl_realize(b, np.zeros(6))
        assert np.allclose(f.values, 2.0)

    def test_linear_in_coefficients(self):
        b = build_kl_basis(SPEC, GRID, 6)
        c1 = RngStream(3).generator.standard_normal(6)
        c2 = RngStream(4).generator.standard_normal(6)
        lhs = kl_realize(b, c1 + c2).values
        rhs = kl_realize(b, c1).values + kl_realize(b, c2).values - 2.0
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_single_mode_scales_with_sqrt_eigenvalue(self):
        b = build_kl_basis(SPEC, GRID, 4)
        e = np.zeros(4)
        e[2] = 1.0
        f = kl_realize(b, e)
        expected = 2.0 + np.sqrt(b.eigenvalues[2]) * b.eigenfields[:, 2]
        assert np.allclose(f.values, expected)

    def test_coefficient_length_checked(self):
        b = build_kl_basis(SPEC, GRID, 6)
        with pytest.raises(InvalidInputError):
            kl_realize(b, np.zeros(5))

    def test_sample_variance_matches_retained_spectrum(self):
        # area-integrated variance of draws approaches sum(eigenvalues)
        b = build_kl_basis(SPEC, GRID, 10)
        coeffs, fields = sample_fields(b, 4000, RngStream(11))
        w = GRID.cell_areas()
        dev = np.stack([f.values - 2.0 for f in fields])
        integrated = float(np.mean((dev**2) @ w))
        assert abs(integrated - b.eigenvalues.sum()) < 0.05 * b.eigenvalues.sum()

    def test_sampling_is_reproducible(self):
        b = build_kl_basis(SPEC, GRID, 6)
        c1, _ = sample_fields(b, 3, RngStream(7))
        c2, _ = sample_fields(b, 3, RngStream(7))
        assert np.array_equal(c1, c2)
        assert c1.shape == (6, 3)

    def test_sample_count_validated(self):
        b = build_kl_basis(SPEC, GRID, 6)
        with pytest.raises(InvalidInputError):
            sample_fields(b, 0, RngStream(7))
