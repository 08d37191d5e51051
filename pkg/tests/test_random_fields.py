import numpy as np
import pytest

from ldon.random_fields import GrfConfig, build_kle, grid_points, sample_field, sample_fields, se_kernel


def small_config(**overrides):
    kw = dict(grid=(8, 8), length_scales=(0.3, 0.3), variance=1.0, energy=0.99, seed=0)
    kw.update(overrides)
    return GrfConfig(**kw)


class TestConfigValidation:
    def test_rejects_bad_length_scales(self):
        with pytest.raises(ValueError, match="length scales"):
            small_config(length_scales=(0.0, 0.3))

    def test_rejects_negative_variance(self):
        with pytest.raises(ValueError, match="variance"):
            small_config(variance=-1.0)

    def test_rejects_energy_out_of_range(self):
        for e in (0.0, 1.5):
            with pytest.raises(ValueError, match="energy"):
                small_config(energy=e)

    def test_rejects_oversized_grid(self):
        with pytest.raises(ValueError, match="cap"):
            small_config(grid=(128, 64))

    def test_rejects_tiny_grid(self):
        with pytest.raises(ValueError, match="2x2"):
            small_config(grid=(1, 8))


class TestKernel:
    def test_diagonal_is_variance(self):
        pts = grid_points((6, 6))
        cov = se_kernel(pts, (0.2, 0.4), 2.5)
        assert np.allclose(np.diag(cov), 2.5)

    def test_symmetric_and_positive(self):
        pts = grid_points((6, 6))
        cov = se_kernel(pts, (0.2, 0.4), 1.0)
        assert np.array_equal(cov, cov.T)
        assert np.all(cov > 0)

    def test_decay_with_distance(self):
        pts = np.array([[0.0, 0.0], [0.1, 0.0], [0.9, 0.0]])
        cov = se_kernel(pts, (0.2, 0.2), 1.0)
        assert cov[0, 1] > cov[0, 2]


class TestBuildKle:
    def test_shapes_and_order(self):
        basis = build_kle(small_config())
        assert basis.points.shape == (64, 2)
        assert basis.modes.shape == (64, basis.n_modes)
        assert np.all(np.diff(basis.eigenvalues) <= 1e-12)
        assert np.all(basis.eigenvalues >= 0)

    def test_energy_fraction_met_minimally(self):
        cfg = small_config(energy=0.9)
        basis = build_kle(cfg)
        total = basis.total_energy
        kept = basis.eigenvalues.sum()
        assert kept >= 0.9 * total - 1e-12
        assert kept - basis.eigenvalues[-1] < 0.9 * total

    def test_full_energy_reproduces_kernel(self):
        cfg = small_config(energy=1.0)
        basis = build_kle(cfg)
        cov = se_kernel(basis.points, cfg.length_scales, cfg.variance)
        err = np.linalg.norm(basis.modes @ basis.modes.T - cov) / np.linalg.norm(cov)
        assert err < 1e-10

    def test_longer_scale_needs_fewer_modes(self):
        rough = build_kle(small_config(length_scales=(0.1, 0.1)))
        smooth = build_kle(small_config(length_scales=(0.5, 0.5)))
        assert smooth.n_modes < rough.n_modes

    def test_zero_variance_degenerates(self):
        basis = build_kle(small_config(variance=0.0))
        assert basis.n_modes == 0
        assert np.array_equal(sample_field(basis, 0), np.zeros((8, 8)))

    def test_transposition_invariance_of_retained_covariance(self):
        # With equal length scales on a square grid the covariance is
        # invariant under swapping the grid axes; the retained covariance
        # (basis-free spectral projector image) must inherit that symmetry.
        cfg = small_config(length_scales=(0.25, 0.25), energy=0.995)
        basis = build_kle(cfg)
        nx, ny = cfg.grid
        perm = np.arange(nx * ny).reshape(nx, ny).T.ravel()
        red = basis.modes @ basis.modes.T
        swapped = red[np.ix_(perm, perm)]
        scale = np.linalg.norm(red)
        assert np.linalg.norm(swapped - red) / scale < 1e-8


class TestSampling:
    def test_deterministic_per_seed(self):
        basis = build_kle(small_config())
        a = sample_field(basis, 123)
        b = sample_field(basis, 123)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, sample_field(basis, 124))

    def test_batch_matches_streams(self):
        from ldon.rng import Rng

        basis = build_kle(small_config(seed=42))
        batch = sample_fields(basis, 4)
        one = (basis.modes @ Rng(42, stream=2).normal(basis.n_modes)).reshape(8, 8)
        assert np.array_equal(batch[2], one)

    def test_batch_independent_of_count(self):
        basis = build_kle(small_config(seed=7))
        a = sample_fields(basis, 3)
        b = sample_fields(basis, 6)
        assert np.array_equal(a, b[:3])

    def test_empirical_moments(self):
        basis = build_kle(small_config(energy=0.999, seed=1))
        fields = sample_fields(basis, 3000).reshape(3000, -1)
        assert np.abs(fields.mean(axis=0)).max() < 0.1
        emp = fields.T @ fields / fields.shape[0]
        cov = basis.modes @ basis.modes.T
        rel = np.linalg.norm(emp - cov) / np.linalg.norm(cov)
        assert rel < 0.15

    def test_sample_count_validation(self):
        basis = build_kle(small_config())
        with pytest.raises(ValueError, match="count"):
            sample_fields(basis, 0)
