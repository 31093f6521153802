import numpy as np
import pytest

from sqglab import GridSpec, SimConfig, run_ensemble, run_trajectory
from sqglab import functionals as fn
from sqglab import spectral as sp
from sqglab.forcing import NoiseSpec, enumerate_basis

from conftest import random_fields, single_mode

PI = np.pi


class TestConservedQuantities:
    def test_mass(self, grid8):
        assert fn.mass_m(single_mode(grid8, 1, 0, "cos")) == pytest.approx(PI**2)

    def test_energy_minus_half(self, grid8):
        assert fn.energy_minus_half(single_mode(grid8, 1, 0, "cos"), grid8) == pytest.approx(PI**2)
        assert fn.energy_minus_half(single_mode(grid8, 2, 0, "cos"), grid8) == pytest.approx(PI**2 / 2)


class TestCasimirQuadrature:
    def test_square(self, grid8):
        val = fn.casimir(single_mode(grid8, 1, 0, "cos"), grid8, lambda z: z**2)
        assert val == pytest.approx(0.5, abs=1e-13)

    def test_odd_power_vanishes(self, grid8):
        val = fn.casimir(single_mode(grid8, 1, 0, "cos"), grid8, lambda z: z**3)
        assert abs(val) < 1e-14

    def test_quartic(self, grid8):
        val = fn.casimir(single_mode(grid8, 1, 0, "cos"), grid8, lambda z: z**4)
        assert val == pytest.approx(0.375, abs=1e-13)


class TestCasimirFamily:
    def test_plateau_values(self):
        fam = fn.casimir_family(3)
        assert fam[1](0.5) == pytest.approx(0.125)
        assert fam[0](0.5) == pytest.approx(0.25)

    def test_compact_support(self):
        for f in fn.casimir_family(3):
            assert f(3.0) == 0.0
            assert f(-3.0) == 0.0
            for order in range(1, 5):
                assert f.deriv(np.array([2.5, -2.5, 4.0]), order).tolist() == [0, 0, 0]

    def test_f1_sign(self):
        f1 = fn.casimir_family(1)[0]
        assert f1(0.0) == 0.0
        z = np.linspace(-1.5, 1.5, 41)
        z = z[np.abs(z) > 1e-9]
        assert np.all(f1(z) > 0)

    def test_derivatives_match_finite_differences(self):
        # 4th derivative from the closed form vs central differences of the
        # value; the transition region has large higher derivatives, so the
        # tolerance is scale aware
        fam = fn.casimir_family(3)
        z = np.linspace(-1.9, 1.9, 77)
        h = 1e-3
        stencil = np.array([1.0, -4.0, 6.0, -4.0, 1.0])
        for f in fam:
            fd4 = sum(c * f(z + (k - 2) * h) for k, c in enumerate(stencil)) / h**4
            exact = f.deriv(z, 4)
            scale = np.maximum(1.0, np.abs(exact))
            # remainder is h^2 f^(6)/6; the sixth derivative spikes past 1e6
            # at the transition onset, so the comparison is scale aware
            assert np.max(np.abs(fd4 - exact) / scale) < 0.05

    def test_first_derivative_smooth_across_edges(self):
        f = fn.casimir_family(1)[0]
        z = np.linspace(0.99, 1.01, 101)
        vals = f.deriv(z, 1)
        assert np.all(np.isfinite(vals))
        assert np.max(np.abs(np.diff(vals))) < 0.05

    def test_index_validation(self):
        with pytest.raises(ValueError):
            fn.casimir_family(0)
        with pytest.raises(ValueError):
            fn.CasimirFunction(2).deriv(0.0, 5)


class TestDissipationFunctional:
    def test_zero(self, grid8):
        assert fn.dissipation_i(sp.zero_field(grid8), grid8) == 0.0

    def test_cos_x_closed_form(self, grid8):
        theta = single_mode(grid8, 1, 0, "cos")
        quad, cubic = fn.dissipation_parts(theta, grid8)
        assert quad == pytest.approx(2 * PI**2, rel=1e-13)
        assert cubic == pytest.approx(1.5 * PI**2, rel=1e-13)
        assert fn.dissipation_i(theta, grid8) == pytest.approx(3.5 * PI**2, rel=1e-13)
        assert fn.dissipation_i(theta, grid8, cubic_sign=-1.0) == pytest.approx(0.5 * PI**2, rel=1e-12)

    def test_homogeneity_degrees(self, grid8):
        # quadratic part scales as eps^2, cubic part as eps^4
        base = single_mode(grid8, 1, 0, "cos")
        eps = np.array([1.0, 0.5, 0.25])
        quads, cubics = [], []
        for e in eps:
            q, c = fn.dissipation_parts(e * base, grid8)
            quads.append(q)
            cubics.append(c)
        slope_q = np.polyfit(np.log(eps), np.log(quads), 1)[0]
        slope_c = np.polyfit(np.log(eps), np.log(cubics), 1)[0]
        assert slope_q == pytest.approx(2.0, abs=1e-10)
        assert slope_c == pytest.approx(4.0, abs=1e-10)

    def test_resolution_invariance(self):
        coarse = GridSpec(8)
        fine = GridSpec(16)
        for theta in random_fields(coarse, 3, seed=41):
            i_c = fn.dissipation_i(theta, coarse)
            K, Nf, Nc = fine.n_modes, fine.cutoff, coarse.cutoff
            upcast = np.zeros((K, K), dtype=complex)
            sl = slice(Nf - Nc, Nf + Nc + 1)
            upcast[sl, sl] = theta
            i_f = fn.dissipation_i(upcast, fine)
            assert abs(i_f - i_c) <= 1e-10 * abs(i_c)


class TestObservableSet:
    def test_unknown_name_rejected(self, grid8):
        with pytest.raises(fn.ConfigurationError):
            fn.ObservableSet(["nope"], grid8)

    def test_noise_qv_needs_spec(self, grid8):
        with pytest.raises(fn.ConfigurationError):
            fn.ObservableSet(["noise_qv"], grid8)

    def test_matches_standalone_evaluators(self, grid16):
        spec = NoiseSpec(enumerate_basis(2.0), np.ones(8))
        obs = fn.ObservableSet(
            ["M", "E_mhalf", "H2_diss", "W14_diss", "I_diss", "I_diss_minus", "casimir_2", "Hs_2"],
            grid16,
            spec,
        )
        (theta,) = random_fields(grid16, 1, seed=43)
        vals = obs.evaluate(theta)
        assert vals["M"] == pytest.approx(fn.mass_m(theta))
        assert vals["E_mhalf"] == pytest.approx(fn.energy_minus_half(theta, grid16))
        assert vals["H2_diss"] == pytest.approx(fn.h2_dissipation(theta, grid16))
        assert vals["W14_diss"] == pytest.approx(fn.w14_dissipation(theta, grid16))
        assert vals["I_diss"] == pytest.approx(fn.dissipation_i(theta, grid16))
        assert vals["I_diss_minus"] == pytest.approx(fn.dissipation_i(theta, grid16, -1.0))
        assert vals["Hs_2"] == pytest.approx(sp.sobolev_sq(theta, grid16, 2.0))
        f2 = fn.casimir_family(2)[1]
        assert vals["casimir_2"] == pytest.approx(fn.casimir(theta, grid16, f2))


class TestBalanceResiduals:
    def _linear_record(self, horizon=2.0, q_obs=True):
        spec = NoiseSpec(enumerate_basis(2.0), np.ones(8))
        cfg = SimConfig(
            alpha=0.4, dt=2e-3, horizon=horizon, cutoff=4, noise=spec,
            enable_advection=False, enable_p_laplacian=False,
            seed=61, ensemble_size=48,
        )
        names = ["M", "E_mhalf", "H2_diss", "W14_diss", "I_diss"]
        if q_obs:
            names.append("noise_qv")
        obs = fn.ObservableSet(names, cfg.grid, spec)
        return run_ensemble(cfg, obs, stride=1, chunk_size=16), spec, cfg

    def test_alp_on_linear_subsystem(self):
        record, spec, cfg = self._linear_record()
        rep = fn.ito_residual("alp", record, spec, cfg.alpha, include_w14=False)
        assert abs(rep.residual) <= 3 * rep.monte_carlo_se + 0.05 * abs(rep.rhs)

    def test_hmj_on_linear_subsystem(self):
        # for the pure bi-Laplacian flow the cubic part of I is inactive in
        # the balance only through its smallness; the identity still holds
        # within Monte Carlo error because E[I] is dominated by H^{3/2}
        record, spec, cfg = self._linear_record()
        rep = fn.ito_residual("hmj", record, spec, cfg.alpha)
        assert rep.identity == "hmj"
        assert abs(rep.residual) <= 4 * rep.monte_carlo_se + 0.05 * abs(rep.rhs)

    def test_cet_q2_on_linear_subsystem(self):
        record, spec, cfg = self._linear_record()
        rep = fn.ito_residual("cet", record, spec, cfg.alpha, q=2, include_w14=False)
        assert rep.identity == "cet_q2"
        assert abs(rep.residual) <= 3 * rep.monte_carlo_se + 0.05 * abs(rep.rhs)

    def test_alpha_zero_degenerates_to_conservation(self, grid16):
        theta0 = random_fields(grid16, 1, seed=9, band=4, rms=1.0)[0]
        cfg = SimConfig(alpha=0.0, dt=1e-3, horizon=0.2, cutoff=16, seed=3, ensemble_size=2)
        obs = fn.ObservableSet(["M", "H2_diss", "W14_diss"], grid16)
        record = run_ensemble(cfg, obs, stride=10, initial=theta0)
        rep = fn.ito_residual("alp", record, None, 0.0)
        assert abs(rep.residual) <= 1e-6 * abs(rep.rhs)

    def test_missing_observable_is_an_error(self):
        record, spec, cfg = self._linear_record(horizon=0.05, q_obs=False)
        record.series.pop("H2_diss")
        with pytest.raises(fn.ConfigurationError):
            fn.ito_residual("alp", record, spec, cfg.alpha)

    def test_unknown_identity(self):
        record, spec, cfg = self._linear_record(horizon=0.05)
        with pytest.raises(fn.ConfigurationError):
            fn.ito_residual("nope", record, spec, cfg.alpha)

    def test_report_structure(self):
        record, spec, cfg = self._linear_record(horizon=0.05)
        rep = fn.ito_residual("alp", record, spec, cfg.alpha, include_w14=False)
        assert rep.residual == pytest.approx(rep.lhs - rep.rhs)
        assert rep.window == (0.0, pytest.approx(0.05))
        assert rep.monte_carlo_se > 0
