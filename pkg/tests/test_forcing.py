import numpy as np
import pytest

from sqglab import GridSpec
from sqglab import spectral as sp
from sqglab.forcing import (
    COS,
    SIN,
    NoiseSpec,
    RngStream,
    basis_function_samples,
    default_noise,
    enumerate_basis,
    make_noise,
    noise_from_shells,
    project_coefficients,
    project_physical,
    quadratic_variation,
    random_field,
    sample_increment,
    sample_increment_batch,
    spectral_sum,
)

from conftest import single_mode


class TestBasis:
    def test_first_shell(self):
        basis = enumerate_basis(1.0)
        got = [(e.lam, e.kx, e.ky, e.parity) for e in basis.entries]
        assert got == [(1.0, 0, 1, COS), (1.0, 0, 1, SIN), (1.0, 1, 0, COS), (1.0, 1, 0, SIN)]

    def test_two_shells(self):
        basis = enumerate_basis(2.0)
        assert len(basis) == 8
        lams = [e.lam for e in basis.entries]
        assert lams == [1.0] * 4 + [2.0] * 4
        second = {(e.kx, e.ky) for e in basis.entries if e.lam == 2.0}
        assert second == {(1, -1), (1, 1)}

    def test_ordering_non_decreasing_and_stable(self):
        basis = enumerate_basis(30.0)
        lams = basis.lam
        assert np.all(np.diff(lams) >= 0)
        again = enumerate_basis(30.0)
        assert [e for e in again.entries] == [e for e in basis.entries]

    def test_unit_l2_norm(self):
        for entry in enumerate_basis(5.0).entries:
            samples = basis_function_samples(entry, 64)
            integral = np.sum(samples**2) * (2 * np.pi / 64) ** 2
            assert abs(integral - 1.0) < 1e-12

    def test_max_lambda_validation(self):
        with pytest.raises(ValueError):
            enumerate_basis(0.5)


class TestAmplitudes:
    def test_unit_shell_sums(self):
        basis = enumerate_basis(1.0)
        spec = NoiseSpec(basis, np.ones(4))
        assert spectral_sum(spec, 0.0) == 4.0
        assert spectral_sum(spec, -0.5) == 4.0

    def test_two_shell_weighted_sum(self):
        spec = NoiseSpec(enumerate_basis(2.0), np.ones(8))
        assert abs(spectral_sum(spec, -0.5) - (4 + 4 / np.sqrt(2))) < 1e-14

    def test_zero_amplitudes(self):
        spec = NoiseSpec(enumerate_basis(2.0), np.zeros(8))
        for s in (-1.0, 0.0, 2.0):
            assert spectral_sum(spec, s) == 0.0

    def test_rules(self):
        spec = make_noise(4.0, "inverse_lambda")
        lam = spec.basis.lam
        assert np.allclose(spec.amplitudes, 1.0 / lam)
        shells = noise_from_shells([(1.0, 2.0), (4.0, 0.5)])
        assert np.all(shells.amplitudes[shells.basis.lam == 2.0] == 0.0)
        assert np.all(shells.amplitudes[shells.basis.lam == 1.0] == 2.0)

    def test_default_noise_band(self):
        spec = default_noise(16)
        assert np.max(spec.basis.lam) <= 64.0

    def test_misaligned_amplitudes(self):
        with pytest.raises(ValueError):
            NoiseSpec(enumerate_basis(2.0), np.ones(3))


class TestIncrements:
    def setup_method(self):
        self.grid = GridSpec(4)
        self.spec = NoiseSpec(enumerate_basis(2.0), np.ones(8))

    def test_zero_dt(self):
        inc = sample_increment(self.spec, 0.0, RngStream(1, 0), self.grid)
        assert not inc.any()

    def test_negative_dt_rejected(self):
        with pytest.raises(ValueError):
            sample_increment(self.spec, -0.1, RngStream(1, 0), self.grid)

    def test_deterministic_replay(self):
        a = sample_increment(self.spec, 0.1, RngStream(9, 2, 5), self.grid)
        b = sample_increment(self.spec, 0.1, RngStream(9, 2, 5), self.grid)
        assert np.array_equal(a, b)

    def test_counter_advances(self):
        rng = RngStream(9, 2)
        a = sample_increment(self.spec, 0.1, rng, self.grid)
        b = sample_increment(self.spec, 0.1, rng, self.grid)
        assert rng.counter == 2
        assert np.max(np.abs(a - b)) > 0

    def test_valid_spectrum(self):
        inc = sample_increment(self.spec, 0.5, RngStream(4, 1), self.grid)
        sp.validate_spectrum(inc, self.grid)

    def test_mean_square_norm(self):
        # E |increment|_{L2}^2 = dt * A_0
        rng = RngStream(7, 0)
        dt = 0.02
        vals = np.array(
            [sp.l2_sq(sample_increment(self.spec, dt, rng, self.grid)) for _ in range(4000)]
        )
        target = dt * spectral_sum(self.spec, 0.0)
        se = vals.std(ddof=1) / np.sqrt(len(vals))
        assert abs(vals.mean() - target) <= 3 * se

    def test_componentwise_zero_mean(self):
        rng = RngStream(15, 0)
        projs = np.array(
            [
                project_coefficients(
                    sample_increment(self.spec, 1.0, rng, self.grid), self.spec.basis, self.grid
                )
                for _ in range(4000)
            ]
        )
        se = projs.std(axis=0, ddof=1) / np.sqrt(projs.shape[0])
        assert np.all(np.abs(projs.mean(axis=0)) <= 3 * se)

    def test_independent_streams_uncorrelated(self):
        r1, r2 = RngStream(21, 0), RngStream(21, 1)
        p1, p2 = [], []
        for _ in range(4000):
            p1.append(project_coefficients(sample_increment(self.spec, 1.0, r1, self.grid), self.spec.basis, self.grid))
            p2.append(project_coefficients(sample_increment(self.spec, 1.0, r2, self.grid), self.spec.basis, self.grid))
        p1, p2 = np.asarray(p1), np.asarray(p2)
        n = p1.shape[0]
        cross = np.mean(p1 * p2, axis=0)
        se = np.std(p1 * p2, axis=0, ddof=1) / np.sqrt(n)
        assert np.all(np.abs(cross) <= 3 * se)

    def test_batch_matches_sequential(self):
        rngs = [RngStream(5, m) for m in range(3)]
        batch = sample_increment_batch(self.spec, 0.3, rngs, self.grid)
        seq = [
            sample_increment(self.spec, 0.3, RngStream(5, m), self.grid) for m in range(3)
        ]
        assert np.array_equal(batch, np.stack(seq))


class TestProjections:
    def test_cos_x_projection(self):
        grid = GridSpec(4)
        basis = enumerate_basis(1.0)
        theta = single_mode(grid, 1, 0, "cos")
        proj = project_coefficients(theta, basis, grid)
        expected = np.array([0.0, 0.0, np.sqrt(2) * np.pi, 0.0])
        assert np.allclose(proj, expected, atol=1e-13)

    def test_physical_projection_matches(self):
        grid = GridSpec(6)
        basis = enumerate_basis(5.0)
        theta = random_field(grid, RngStream(2, 0), band=2)
        a = project_coefficients(theta, basis, grid)
        b = project_physical(sp.to_physical(theta, grid), basis)
        assert np.allclose(a, b, atol=1e-12)

    def test_quadratic_variation(self):
        grid = GridSpec(4)
        basis = enumerate_basis(1.0)
        spec = NoiseSpec(basis, np.array([2.0, 0.0, 1.0, 0.0]))
        theta = single_mode(grid, 1, 0, "cos", amp=3.0)
        # only the cos(x) entry projects: (theta, e) = 3 sqrt(2) pi, a = 1
        expected = (3 * np.sqrt(2) * np.pi) ** 2
        assert abs(quadratic_variation(theta, spec, grid) - expected) < 1e-10


class TestRandomField:
    def test_band_and_rms(self):
        grid = GridSpec(16)
        theta = random_field(grid, RngStream(3, 0), band=4, rms=2.0)
        sp.validate_spectrum(theta, grid)
        N = grid.cutoff
        outside = theta.copy()
        outside[N - 4 : N + 5, N - 4 : N + 5] = 0
        assert not outside.any()
        rms = np.sqrt(sp.l2_sq(theta) / sp.FOUR_PI_SQ)
        assert abs(rms - 2.0) < 1e-12
