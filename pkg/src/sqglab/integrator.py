"""Time stepping for the Galerkin-truncated dynamics.

Stochastic runs (alpha > 0) use an IMEX step: the bi-Laplacian is applied
through its exact exponential integrating factor exp(-alpha |k|^4 dt),
the advection and cubic-gradient terms are advanced with an explicit
two-stage (Heun) rule composed with that factor, and the noise enters as
an additive Euler-Maruyama increment sqrt(alpha) * d(eta). Deterministic
runs (alpha = 0) use a classical four-stage Runge-Kutta step on the pure
transport term, which conserves the quadratic invariants of the truncated
system up to O(dt^4).
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import spectral
from .forcing import NoiseSpec, RngStream, sample_increment_batch
from .spectral import GridSpec


class DivergenceError(RuntimeError):
    """Numerical blow-up; carries the offending time and last finite state."""

    def __init__(self, time: float, message: str, snapshot=None):
        super().__init__(f"solution diverged at t = {time:.6g}: {message}")
        self.time = time
        self.snapshot = snapshot


@dataclass(frozen=True)
class SimConfig:
    alpha: float
    dt: float
    horizon: float
    cutoff: int
    noise: NoiseSpec | None = None
    enable_advection: bool = True
    enable_p_laplacian: bool = True
    deterministic_scheme: str = "rk4"
    stochastic_scheme: str = "imex_em"
    seed: int = 0
    ensemble_size: int = 1
    padding_factor: int = 2
    blowup_factor: float = 1e6

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        if self.deterministic_scheme != "rk4":
            raise ValueError(f"unknown deterministic scheme {self.deterministic_scheme!r}")
        if self.stochastic_scheme != "imex_em":
            raise ValueError(f"unknown stochastic scheme {self.stochastic_scheme!r}")

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.cutoff, self.padding_factor)

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def stability_monitor(self) -> dict:
        """Static step-size diagnostics (the bi-Laplacian itself is exact)."""
        return {
            "dt_alpha_N4": self.dt * self.alpha * self.cutoff**4,
            "dt": self.dt,
            "cutoff": self.cutoff,
        }


@dataclass
class StepperState:
    t: float
    theta_hat: np.ndarray
    rng: RngStream | None = None


def _drift(theta_hat: np.ndarray, cfg: SimConfig, grid: GridSpec):
    want_plap = cfg.enable_p_laplacian and cfg.alpha > 0
    adv, plap = spectral.nonlinear_terms(
        theta_hat, grid, cfg.enable_advection, want_plap
    )
    if adv is None and plap is None:
        return None
    out = None
    if adv is not None:
        out = -adv
    if plap is not None:
        out = cfg.alpha * plap if out is None else out + cfg.alpha * plap
    return out


def _integrating_factor(cfg: SimConfig, grid: GridSpec) -> np.ndarray:
    lam = spectral.laplacian_eigenvalues(grid)
    return np.exp(-cfg.alpha * cfg.dt * lam * lam)


def _blowup_floor(cfg: SimConfig, initial_l2) -> np.ndarray:
    """Reference scale for the blow-up guard.

    The guard compares against the initial L2 norm; for runs started at or
    near zero the stationary level sum a_j^2 / (2 lambda_j^2) of the forced
    linear dynamics replaces it.
    """
    floor = np.maximum(np.asarray(initial_l2, dtype=float), 1e-12)
    if cfg.noise is not None:
        from .forcing import spectral_sum

        floor = np.maximum(floor, 0.5 * spectral_sum(cfg.noise, -2.0))
    return floor


def _step_imex(theta_hat, cfg, grid, efac, rngs):
    dt = cfg.dt
    k1 = _drift(theta_hat, cfg, grid)
    if k1 is None:
        new = efac * theta_hat
    else:
        pred = efac * (theta_hat + dt * k1)
        k2 = _drift(pred, cfg, grid)
        new = efac * (theta_hat + 0.5 * dt * k1) + 0.5 * dt * k2
    if cfg.noise is not None and rngs:
        inc = sample_increment_batch(cfg.noise, dt, rngs, grid)
        if theta_hat.ndim == 2:
            inc = inc[0]
        new = new + np.sqrt(cfg.alpha) * inc
    return new


def _step_rk4(theta_hat, cfg, grid):
    dt = cfg.dt
    k1 = _drift(theta_hat, cfg, grid)
    if k1 is None:
        return theta_hat.copy()
    k2 = _drift(theta_hat + 0.5 * dt * k1, cfg, grid)
    k3 = _drift(theta_hat + 0.5 * dt * k2, cfg, grid)
    k4 = _drift(theta_hat + dt * k3, cfg, grid)
    return theta_hat + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step(state: StepperState, cfg: SimConfig) -> StepperState:
    """Advance one step; the input field is never mutated.

    The state's RngStream advances in place (it is the only mutation), so
    a state must stay confined to one thread at a time.
    """
    grid = cfg.grid
    theta = state.theta_hat
    if not np.all(np.isfinite(theta.view(np.float64))):
        raise DivergenceError(state.t, "non-finite coefficients", snapshot=state)
    if cfg.alpha == 0.0:
        new = _step_rk4(theta, cfg, grid)
    else:
        rngs = [state.rng] if (state.rng is not None and cfg.noise is not None) else []
        new = _step_imex(theta, cfg, grid, _integrating_factor(cfg, grid), rngs)
    return StepperState(state.t + cfg.dt, new, state.rng)


# ---------------------------------------------------------------------------
# trajectory and ensemble drivers

Observers = Mapping[str, Callable[[np.ndarray], np.ndarray]]


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    observables: dict[str, np.ndarray]
    monitors: dict[str, float] = field(default_factory=dict)
    final_state: StepperState | None = None
    diverged: bool = False
    divergence_time: float | None = None


def _observe(observers: Observers, theta_hat: np.ndarray) -> dict[str, np.ndarray]:
    from .functionals import ObservableSet

    if isinstance(observers, ObservableSet):
        return observers.evaluate(theta_hat)
    return {name: fn(theta_hat) for name, fn in observers.items()}


def run_trajectory(
    cfg: SimConfig,
    observers: Observers | None = None,
    stride: int = 1,
    initial: np.ndarray | None = None,
    state: StepperState | None = None,
    monitor_stride: int | None = None,
) -> TrajectoryRecord:
    """Integrate one path, recording observables every `stride` steps.

    Starts from `initial` (zero field by default) or resumes from an
    existing StepperState. The running maximum of the squared L2 norm is
    monitored as a blow-up guard against the configured factor.
    """
    grid = cfg.grid
    if state is None:
        theta = spectral.zero_field(grid) if initial is None else np.array(initial, dtype=np.complex128)
        state = StepperState(0.0, theta, RngStream(cfg.seed, 0))
    observers = observers or {}
    n = int(round((cfg.horizon - state.t) / cfg.dt))  # horizon is the total time
    times = []
    names = list(observers.names) if hasattr(observers, "names") else list(observers.keys())
    series: dict[str, list] = {name: [] for name in names}
    monitors = {"max_l2": 0.0, "max_cfl": 0.0, "max_plap_coeff": 0.0}
    monitors.update(cfg.stability_monitor())
    mstride = monitor_stride if monitor_stride is not None else max(1, n // 16)

    def record(st: StepperState):
        times.append(st.t)
        vals = _observe(observers, st.theta_hat)
        for name in series:
            series[name].append(float(vals[name]))

    def check(st: StepperState, k: int, floor: float | None) -> float:
        val = float(spectral.l2_sq(st.theta_hat))
        if not np.isfinite(val):
            raise DivergenceError(st.t, "non-finite L2 norm")
        monitors["max_l2"] = max(monitors["max_l2"], val)
        if floor is None:
            floor = float(_blowup_floor(cfg, val))
        elif val > cfg.blowup_factor * floor:
            raise DivergenceError(
                st.t, f"L2 norm grew past {cfg.blowup_factor:g} x initial"
            )
        if k % mstride == 0:
            _update_flow_monitors(st.theta_hat, grid, cfg, monitors)
        return floor

    last_good = state
    try:
        floor = check(state, 0, None)
        record(state)
        for k in range(1, n + 1):
            state = step(state, cfg)
            floor = check(state, k, floor)
            last_good = state
            if k % stride == 0 or k == n:
                record(state)
    except DivergenceError as err:
        partial = TrajectoryRecord(
            times=np.asarray(times),
            observables={k_: np.asarray(v) for k_, v in series.items()},
            monitors=monitors,
            final_state=last_good,
            diverged=True,
            divergence_time=err.time,
        )
        raise DivergenceError(err.time, str(err), snapshot=partial) from err

    return TrajectoryRecord(
        times=np.asarray(times),
        observables={k_: np.asarray(v) for k_, v in series.items()},
        monitors=monitors,
        final_state=state,
        diverged=False,
        divergence_time=None,
    )


def _update_flow_monitors(theta_hat, grid, cfg, monitors):
    if theta_hat.ndim != 2:
        theta_hat = theta_hat[0]
    u1h, u2h = spectral.riesz_velocity(theta_hat, grid)
    umax = float(
        np.max(np.abs(spectral.to_physical(u1h, grid)))
        + np.max(np.abs(spectral.to_physical(u2h, grid)))
    )
    monitors["max_cfl"] = max(monitors["max_cfl"], cfg.dt * cfg.cutoff * umax)
    if cfg.enable_p_laplacian and cfg.alpha > 0:
        txh, tyh = spectral.gradient(theta_hat, grid)
        gmax = float(
            np.max(
                spectral.to_physical(txh, grid) ** 2
                + spectral.to_physical(tyh, grid) ** 2
            )
        )
        monitors["max_plap_coeff"] = max(
            monitors["max_plap_coeff"],
            cfg.alpha * cfg.dt * gmax * cfg.cutoff**2,
        )


@dataclass
class EnsembleRecord:
    """Per-member observable series on a shared time grid."""

    times: np.ndarray
    series: dict[str, np.ndarray]  # each (n_members, n_times)
    failed: np.ndarray  # bool per member
    member_streams: list[int]
    final_theta: np.ndarray | None = None  # (n_members, K, K) when requested

    @property
    def n_members(self) -> int:
        return self.failed.shape[0]

    def _ok(self) -> np.ndarray:
        return ~self.failed

    def mean(self, name: str) -> np.ndarray:
        return np.mean(self.series[name][self._ok()], axis=0)

    def se(self, name: str) -> np.ndarray:
        data = self.series[name][self._ok()]
        n = data.shape[0]
        if n < 2:
            return np.full(data.shape[1], np.nan)
        return np.std(data, axis=0, ddof=1) / np.sqrt(n)


def _run_member_chunk(
    cfg: SimConfig,
    observers: Observers,
    stride: int,
    initials: np.ndarray,
    streams: list[RngStream],
):
    grid = cfg.grid
    theta = initials.copy()
    B = theta.shape[0]
    n = cfg.n_steps
    efac = _integrating_factor(cfg, grid)
    alive = np.ones(B, dtype=bool)
    out_times = []
    out: dict[str, list] = {}
    names = list(observers.keys()) if not hasattr(observers, "names") else list(observers.names)

    def record(t):
        out_times.append(t)
        vals = _observe(observers, theta)
        for name in names:
            row = np.where(alive, np.asarray(vals[name], dtype=float), np.nan)
            out.setdefault(name, []).append(row)

    def guard(t, floor):
        l2 = spectral.l2_sq(theta)
        bad = ~np.isfinite(l2) | (l2 > cfg.blowup_factor * floor)
        newly = bad & alive
        if np.any(newly):
            alive[newly] = False
            theta[newly] = 0.0  # keep the batch finite; member is reported failed

    floor = _blowup_floor(cfg, spectral.l2_sq(theta))
    record(0.0)
    t = 0.0
    for k in range(1, n + 1):
        if cfg.alpha == 0.0:
            theta = _step_rk4(theta, cfg, grid)
        else:
            theta = _step_imex(theta, cfg, grid, efac, streams)
        t = k * cfg.dt
        guard(t, floor)
        if k % stride == 0 or k == n:
            record(t)
    return (
        np.asarray(out_times),
        {name: np.stack(rows, axis=1) for name, rows in out.items()},
        ~alive,
        theta,
    )


def run_ensemble(
    cfg: SimConfig,
    observers: Observers,
    stride: int = 1,
    initial: np.ndarray | None = None,
    threads: int = 1,
    chunk_size: int = 4,
    debug_identical_streams: bool = False,
    keep_final: bool = False,
) -> EnsembleRecord:
    """Independent trajectories on independent RNG streams.

    Members are stepped in small batches (vectorized transforms); chunks
    can run on worker threads. Per-member arithmetic is independent of the
    chunking and thread count, and results are merged in member order, so
    output is reproducible for a fixed (seed, ensemble_size). A diverged
    member is flagged and excluded from statistics without aborting the
    rest.
    """
    E = cfg.ensemble_size
    grid = cfg.grid
    K = grid.n_modes
    if initial is None:
        initials = np.zeros((E, K, K), dtype=np.complex128)
    elif initial.ndim == 2:
        initials = np.broadcast_to(initial, (E, K, K)).copy()
    else:
        if initial.shape[0] != E:
            raise ValueError("per-member initial conditions must match ensemble_size")
        initials = np.array(initial, dtype=np.complex128)
    stream_ids = [0] * E if debug_identical_streams else list(range(E))
    streams = [RngStream(cfg.seed, sid) for sid in stream_ids]

    chunks = [
        (list(range(i, min(i + chunk_size, E))))
        for i in range(0, E, chunk_size)
    ]

    def work(idx_list):
        return _run_member_chunk(
            cfg,
            observers,
            stride,
            initials[idx_list],
            [streams[i] for i in idx_list],
        )

    if threads > 1 and len(chunks) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(c) for c in chunks]

    times = results[0][0]
    names = list(results[0][1].keys())
    series = {
        name: np.concatenate([r[1][name] for r in results], axis=0) for name in names
    }
    failed = np.concatenate([r[2] for r in results])
    final = np.concatenate([r[3] for r in results], axis=0) if keep_final else None
    return EnsembleRecord(
        times=times,
        series=series,
        failed=failed,
        member_streams=stream_ids,
        final_theta=final,
    )
