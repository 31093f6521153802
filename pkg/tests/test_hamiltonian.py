import numpy as np
import pytest
from scipy.integrate import quad

from sqglab import hamiltonian as hm
from sqglab.integrator import DivergenceError


class TestSystems:
    @pytest.mark.parametrize("name", ["quadratic", "quartic", "plateau"])
    def test_gradient_consistency(self, name):
        sys = hm.make_system(name, 1)
        assert hm.check_gradient(sys) < 1e-6

    def test_gradient_consistency_n2(self):
        assert hm.check_gradient(hm.make_system("quartic", 2)) < 1e-6

    def test_unknown_name(self):
        with pytest.raises(ValueError):
            hm.make_system("cubic")


class TestStepper:
    def test_harmonic_rotation_one_step(self):
        # undamped quadratic flow is a rigid rotation; one explicit step
        # keeps the energy drift at most O(dt^2)
        sys = hm.quadratic_system()
        dt = 1e-2
        cfg = hm.SandboxConfig(alpha=0.0, dt=dt, horizon=dt)
        state = hm.SandboxState(0.0, np.array([1.0]), np.array([0.0]))
        new = hm.fd_step(state, sys, cfg)
        angle = np.arctan2(new.y[0], new.x[0])
        assert abs(abs(angle) - dt) < dt**2
        h0 = sys.h(state.x, state.y)
        h1 = sys.h(new.x, new.y)
        assert abs(h1 - h0) < dt**2 * h0

    def test_energy_conservation_heun(self):
        sys = hm.quartic_system()
        cfg = hm.SandboxConfig(alpha=0.0, dt=1e-3, horizon=20.0, ensemble_size=1)
        times, series = hm.run_sandbox(
            sys, cfg, {"H": lambda x, y: sys.h(x, y)},
            initial=(np.array([1.2]), np.array([0.3])), stride=200,
        )
        h = series["H"][0]
        assert np.max(np.abs(h - h[0])) / h[0] < 1e-4  # O(dt^2) * T

    def test_leapfrog_conserves_better_long_run(self):
        sys = hm.quadratic_system()
        drift = {}
        for scheme in ("euler", "leapfrog"):
            cfg = hm.SandboxConfig(alpha=0.0, dt=1e-2, horizon=50.0, drift_scheme=scheme)
            times, series = hm.run_sandbox(
                sys, cfg, {"H": lambda x, y: sys.h(x, y)},
                initial=(np.array([1.0]), np.array([0.0])), stride=100,
            )
            h = series["H"][0]
            drift[scheme] = np.max(np.abs(h - h[0])) / h[0]
        assert drift["leapfrog"] < 1e-4
        assert drift["leapfrog"] < drift["euler"] / 100

    def test_leapfrog_requires_alpha_zero(self):
        with pytest.raises(ValueError):
            hm.SandboxConfig(alpha=0.1, dt=0.1, horizon=1.0, drift_scheme="leapfrog")

    def test_fixed_seed_bit_identical(self):
        sys = hm.quadratic_system()
        cfg = hm.SandboxConfig(alpha=0.2, dt=0.01, horizon=1.0, seed=5, ensemble_size=3)
        t1, s1 = hm.run_sandbox(sys, cfg, {"xx": lambda x, y: x[:, 0] ** 2})
        t2, s2 = hm.run_sandbox(sys, cfg, {"xx": lambda x, y: x[:, 0] ** 2})
        assert np.array_equal(s1["xx"], s2["xx"])

    def test_nonfinite_state_raises(self):
        sys = hm.quadratic_system()
        cfg = hm.SandboxConfig(alpha=0.0, dt=0.01, horizon=1.0)
        state = hm.SandboxState(0.0, np.array([np.nan]), np.array([0.0]))
        with pytest.raises(DivergenceError):
            hm.fd_step(state, sys, cfg)


class TestGibbsOracle:
    def test_standard_gaussian_moment(self):
        sys = hm.quadratic_system()
        assert hm.gibbs_oracle(sys, lambda x, y: x[:, 0] ** 2) == pytest.approx(1.0, abs=1e-10)

    def test_normalization(self):
        sys = hm.quadratic_system()
        val = hm.gibbs_oracle(sys, lambda x, y: np.ones(x.shape[0]))
        assert val == pytest.approx(1.0, abs=1e-13)

    def test_quartic_against_1d_quadrature(self):
        # product structure: E[x^2] reduces to a one dimensional integral
        num = quad(lambda t: t * t * np.exp(-(t**4) / 4 - t * t / 2), -np.inf, np.inf)[0]
        den = quad(lambda t: np.exp(-(t**4) / 4 - t * t / 2), -np.inf, np.inf)[0]
        sys = hm.quartic_system()
        val = hm.gibbs_oracle(sys, lambda x, y: x[:, 0] ** 2)
        assert val == pytest.approx(num / den, rel=1e-10)

    def test_dimension_cap(self):
        with pytest.raises(hm.QuadratureError):
            hm.gibbs_oracle(hm.quadratic_system(4), lambda x, y: x[:, 0])

    def test_non_confining_rejected(self):
        flat = hm.HamiltonianSystem(
            n=1, h=lambda x, y: np.zeros(x.shape[:-1]), grad_h=lambda x, y: (0 * x, 0 * y)
        )
        with pytest.raises(hm.QuadratureError):
            hm.gibbs_oracle(flat, lambda x, y: x[:, 0])


class TestStationaryCompare:
    def test_quadratic_second_moments(self):
        sys = hm.quadratic_system()
        cfg = hm.SandboxConfig(alpha=0.2, dt=0.01, horizon=800.0, seed=3, ensemble_size=16)
        rows = hm.stationary_compare(
            sys,
            cfg,
            {"xx": lambda x, y: x[:, 0] ** 2, "yy": lambda x, y: y[:, 0] ** 2},
        )
        for row in rows:
            assert row.oracle == pytest.approx(1.0, abs=1e-8)
            assert row.deviation_in_se <= 3.0

    def test_alpha_independence(self):
        sys = hm.quadratic_system()
        cfg = hm.SandboxConfig(alpha=0.2, dt=0.01, horizon=600.0, seed=9, ensemble_size=16)
        rows = hm.stationary_compare(
            sys, cfg, {"xx": lambda x, y: x[:, 0] ** 2}, alphas=(0.2, 0.1)
        )
        assert {r.alpha for r in rows} == {0.2, 0.1}
        a, b = rows[0], rows[1]
        assert abs(a.estimate - b.estimate) <= 3 * np.hypot(a.se, b.se)

    def test_plateau_keeps_mass_in_ball(self):
        # equilibria fill the unit ball, yet the invariant law is not
        # confined to them: the sampled ball mass matches the density mass
        sys = hm.plateau_system()
        inside = lambda x, y: (np.sum(x * x + y * y, axis=-1) <= 1.0).astype(float)
        oracle = hm.gibbs_oracle(sys, inside)
        assert oracle > 0.1
        cfg = hm.SandboxConfig(alpha=0.2, dt=0.01, horizon=1500.0, seed=17, ensemble_size=8)
        rows = hm.stationary_compare(sys, cfg, {"ball": inside})
        assert rows[0].estimate > 0.1
        assert rows[0].deviation_in_se <= 3.0

    def test_burn_in_guard(self):
        sys = hm.quadratic_system()
        cfg = hm.SandboxConfig(alpha=0.01, dt=0.01, horizon=5.0)
        with pytest.raises(hm.EstimationError):
            hm.stationary_compare(sys, cfg, {"xx": lambda x, y: x[:, 0] ** 2})
