import numpy as np
import pytest

from sqglab import GridSpec, SimConfig, StepperState, run_ensemble, run_trajectory, step
from sqglab import spectral as sp
from sqglab.forcing import NoiseSpec, RngStream, enumerate_basis, random_field, spectral_sum
from sqglab.functionals import ObservableSet
from sqglab.integrator import DivergenceError

from conftest import single_mode


def mass(theta):
    return 0.5 * sp.l2_sq(theta)


class TestStep:
    def test_steady_shell(self):
        grid = GridSpec(8)
        theta0 = single_mode(grid, 1, 0, "cos") + single_mode(grid, 0, 1, "sin")
        cfg = SimConfig(alpha=0.0, dt=1e-2, horizon=1.0, cutoff=8)
        rec = run_trajectory(cfg, {"M": mass}, stride=100, initial=theta0)
        dev = np.sqrt(sp.l2_sq(rec.final_state.theta_hat - theta0) / sp.l2_sq(theta0))
        assert dev < 1e-13

    def test_exact_bilaplacian_decay(self):
        grid = GridSpec(4)
        theta0 = single_mode(grid, 2, 0, "cos")
        cfg = SimConfig(
            alpha=0.3, dt=1e-3, horizon=0.5, cutoff=4,
            enable_advection=False, enable_p_laplacian=False,
        )
        rec = run_trajectory(cfg, {}, stride=10**9, initial=theta0)
        got = rec.final_state.theta_hat[4, 6].real
        expected = 0.5 * np.exp(-0.3 * 16 * 0.5)
        assert abs(got - expected) <= 1e-10 * expected

    def test_zero_mean_never_created(self):
        grid = GridSpec(4)
        spec = NoiseSpec(enumerate_basis(2.0), np.ones(8))
        cfg = SimConfig(alpha=0.4, dt=5e-3, horizon=1.0, cutoff=4, noise=spec, seed=8)
        state = StepperState(0.0, sp.zero_field(grid), RngStream(8, 0))
        for _ in range(cfg.n_steps):
            state = step(state, cfg)
            assert state.theta_hat[4, 4] == 0.0
        sp.validate_spectrum(state.theta_hat, grid)

    def test_nonfinite_raises(self):
        grid = GridSpec(4)
        cfg = SimConfig(alpha=0.0, dt=1e-2, horizon=1.0, cutoff=4)
        bad = sp.zero_field(grid)
        bad[4, 5] = np.nan
        with pytest.raises(DivergenceError):
            step(StepperState(0.0, bad, None), cfg)


class TestTrajectory:
    def test_zero_horizon_records_initial_only(self):
        cfg = SimConfig(alpha=0.0, dt=1e-2, horizon=0.0, cutoff=4)
        theta0 = single_mode(GridSpec(4), 1, 0, "cos")
        rec = run_trajectory(cfg, {"M": mass}, initial=theta0)
        assert rec.times.tolist() == [0.0]
        assert rec.observables["M"].shape == (1,)

    def test_bit_identical_replay(self):
        spec = NoiseSpec(enumerate_basis(2.0), np.ones(8))
        cfg = SimConfig(alpha=0.2, dt=1e-2, horizon=0.5, cutoff=4, noise=spec, seed=12)
        rec1 = run_trajectory(cfg, {"M": mass}, stride=5)
        rec2 = run_trajectory(cfg, {"M": mass}, stride=5)
        assert np.array_equal(rec1.observables["M"], rec2.observables["M"])
        assert np.array_equal(rec1.final_state.theta_hat, rec2.final_state.theta_hat)

    def test_divergence_carries_partial_record(self):
        grid = GridSpec(8)
        theta0 = random_field(grid, RngStream(1, 0), band=4, rms=20.0)
        cfg = SimConfig(alpha=0.0, dt=0.4, horizon=40.0, cutoff=8)  # wildly unstable
        with pytest.raises(DivergenceError) as err:
            run_trajectory(cfg, {"M": mass}, stride=1, initial=theta0)
        partial = err.value.snapshot
        assert partial.diverged
        assert partial.divergence_time is not None
        assert np.all(np.isfinite(partial.final_state.theta_hat.view(np.float64)))

    def test_conservation_fourth_order(self):
        grid = GridSpec(32)
        theta0 = random_field(grid, RngStream(44, 0), band=4, rms=2.0)
        obs = ObservableSet(["M", "E_mhalf"], grid)
        drifts = {}
        for dt in (2e-3, 1e-3):
            cfg = SimConfig(alpha=0.0, dt=dt, horizon=0.5, cutoff=32)
            rec = run_trajectory(cfg, obs, stride=50, initial=theta0)
            for name in ("M", "E_mhalf"):
                series = rec.observables[name]
                drifts[(name, dt)] = np.max(np.abs(series - series[0])) / abs(series[0])
        for name in ("M", "E_mhalf"):
            full, half = drifts[(name, 2e-3)], drifts[(name, 1e-3)]
            assert full < 1e-6
            assert 8 <= full / half <= 32


class TestEnsemble:
    def setup_method(self):
        self.spec = NoiseSpec(enumerate_basis(2.0), np.ones(8))

    def test_debug_identical_streams_zero_variance(self):
        cfg = SimConfig(alpha=0.3, dt=1e-2, horizon=0.3, cutoff=4, noise=self.spec,
                        seed=5, ensemble_size=4)
        rec = run_ensemble(cfg, {"M": mass}, debug_identical_streams=True)
        assert np.max(rec.se("M")) == 0.0

    def test_member_arithmetic_independent_of_chunking(self):
        cfg = SimConfig(alpha=0.3, dt=1e-2, horizon=0.3, cutoff=4, noise=self.spec,
                        seed=5, ensemble_size=6)
        r1 = run_ensemble(cfg, {"M": mass}, chunk_size=1)
        r2 = run_ensemble(cfg, {"M": mass}, chunk_size=4)
        r3 = run_ensemble(cfg, {"M": mass}, chunk_size=4, threads=3)
        assert np.array_equal(r1.series["M"], r2.series["M"])
        assert np.array_equal(r1.series["M"], r3.series["M"])

    def test_linear_transient_matches_ou_sum(self):
        # E integral theta^2 = sum_j a_j^2 (1 - exp(-2 alpha lam_j^2 t)) / (2 lam_j^2)
        cfg = SimConfig(
            alpha=0.4, dt=2e-3, horizon=2.0, cutoff=4, noise=self.spec,
            enable_advection=False, enable_p_laplacian=False,
            seed=1, ensemble_size=128,
        )
        rec = run_ensemble(cfg, {"l2": sp.l2_sq}, stride=500, chunk_size=32)
        lam = self.spec.basis.lam
        a = self.spec.amplitudes
        # two fixed comparison times, 3 se each
        for t in (1.0, 2.0):
            i = int(np.argmin(np.abs(rec.times - t)))
            target = np.sum(a**2 / (2 * lam**2) * (1 - np.exp(-2 * cfg.alpha * lam**2 * rec.times[i])))
            mean = rec.mean("l2")[i]
            se = rec.se("l2")[i]
            assert abs(mean - target) <= 3 * se

    def test_member_failure_isolated(self):
        grid = GridSpec(4)
        cfg = SimConfig(alpha=0.0, dt=0.5, horizon=5.0, cutoff=4, seed=1, ensemble_size=3)
        initials = np.stack(
            [
                single_mode(grid, 1, 0, "cos"),          # steady, survives
                random_field(grid, RngStream(2, 0), band=4, rms=50.0),  # blows up
                single_mode(grid, 0, 1, "sin"),          # steady, survives
            ]
        )
        rec = run_ensemble(cfg, {"M": mass}, initial=initials, chunk_size=3)
        assert rec.failed.tolist() == [False, True, False]
        assert np.all(np.isfinite(rec.mean("M")))

    def test_stability_monitor_reported(self):
        cfg = SimConfig(alpha=0.3, dt=1e-2, horizon=0.1, cutoff=4, noise=self.spec, seed=5)
        rec = run_trajectory(cfg, {"M": mass})
        assert rec.monitors["dt_alpha_N4"] == pytest.approx(1e-2 * 0.3 * 4**4)
        assert rec.monitors["max_cfl"] >= 0.0
