"""Finite-dimensional fluctuation-dissipation sandbox.

The canonical system xdot = -dH/dy, ydot = dH/dx, damped by -alpha grad H
and driven by sqrt(2 alpha) white noise in every coordinate, has the
alpha-independent invariant density exp(-H)/Z. That gives an exactly
solvable end-to-end target for the whole pipeline: stepper, burn-in,
time averaging, batch errors, and residuals against quadrature of the
Gibbs density.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .forcing import RngStream
from .integrator import DivergenceError
from .measure_lab import EstimationError, batch_means_se


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class HamiltonianSystem:
    """Energy H(x, y) on R^n x R^n with its gradient."""

    n: int
    h: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad_h: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]
    name: str = ""

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")


def quadratic_system(n: int = 1) -> HamiltonianSystem:
    return HamiltonianSystem(
        n=n,
        h=lambda x, y: 0.5 * np.sum(x * x + y * y, axis=-1),
        grad_h=lambda x, y: (x, y),
        name="quadratic",
    )


def quartic_system(n: int = 1) -> HamiltonianSystem:
    return HamiltonianSystem(
        n=n,
        h=lambda x, y: np.sum(0.25 * (x**4 + y**4) + 0.5 * (x * x + y * y), axis=-1),
        grad_h=lambda x, y: (x**3 + x, y**3 + y),
        name="quartic",
    )


def plateau_system(n: int = 1) -> HamiltonianSystem:
    """H constant (zero) on the unit ball, growing as (r^2-1)^3 outside.

    Every point of the ball is an equilibrium of the undamped dynamics,
    yet the invariant density exp(-H)/Z is positive everywhere, so the
    sampled stationary law is not confined to isolated equilibria.
    """

    def h(x, y):
        s = np.sum(x * x + y * y, axis=-1) - 1.0
        return np.where(s > 0, s**3, 0.0)

    def grad_h(x, y):
        s = np.sum(x * x + y * y, axis=-1, keepdims=True) - 1.0
        coef = np.where(s > 0, 3.0 * s**2, 0.0)
        return 2.0 * coef * x, 2.0 * coef * y

    return HamiltonianSystem(n=n, h=h, grad_h=grad_h, name="plateau")


_NAMED = {
    "quadratic": quadratic_system,
    "quartic": quartic_system,
    "plateau": plateau_system,
}


def make_system(name: str, n: int = 1) -> HamiltonianSystem:
    try:
        return _NAMED[name](n)
    except KeyError:
        raise ValueError(f"unknown sandbox system {name!r}; choose from {sorted(_NAMED)}") from None


def check_gradient(sys: HamiltonianSystem, seed: int = 0, n_points: int = 50, h: float = 1e-5) -> float:
    """Max relative mismatch between grad_h and central differences of h."""
    rng = np.random.default_rng(seed)
    pts_x = rng.uniform(-2, 2, size=(n_points, sys.n))
    pts_y = rng.uniform(-2, 2, size=(n_points, sys.n))
    gx, gy = sys.grad_h(pts_x, pts_y)
    worst = 0.0
    for i in range(sys.n):
        dx = np.zeros_like(pts_x)
        dx[:, i] = h
        fd_x = (sys.h(pts_x + dx, pts_y) - sys.h(pts_x - dx, pts_y)) / (2 * h)
        fd_y = (sys.h(pts_x, pts_y + dx) - sys.h(pts_x, pts_y - dx)) / (2 * h)
        scale = np.maximum(1.0, np.abs(fd_x))
        worst = max(worst, float(np.max(np.abs(fd_x - gx[:, i]) / scale)))
        scale = np.maximum(1.0, np.abs(fd_y))
        worst = max(worst, float(np.max(np.abs(fd_y - gy[:, i]) / scale)))
    return worst


@dataclass(frozen=True)
class SandboxConfig:
    alpha: float
    dt: float
    horizon: float
    seed: int = 0
    ensemble_size: int = 1
    drift_scheme: str = "heun"  # "heun" | "euler" | "leapfrog" (alpha = 0 only)

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.drift_scheme not in ("heun", "euler", "leapfrog"):
            raise ValueError(f"unknown drift scheme {self.drift_scheme!r}")
        if self.drift_scheme == "leapfrog" and self.alpha != 0:
            raise ValueError("the leapfrog variant is for undamped (alpha = 0) runs")


@dataclass
class SandboxState:
    t: float
    x: np.ndarray  # (..., n)
    y: np.ndarray
    rng: RngStream | None = None


def _fd_drift(sys: HamiltonianSystem, alpha: float, x, y):
    hx, hy = sys.grad_h(x, y)
    return -hy - alpha * hx, hx - alpha * hy


def fd_step(state: SandboxState, sys: HamiltonianSystem, cfg: SandboxConfig) -> SandboxState:
    """One step of the damped-driven dynamics.

    The drift is advanced with an explicit sub-stepper (Heun by default;
    plain Euler and, for alpha = 0 with separable H, leapfrog are
    selectable) and the noise is added as an Euler-Maruyama increment of
    intensity sqrt(2 alpha dt) per coordinate.
    """
    x, y, dt = state.x, state.y, cfg.dt
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DivergenceError(state.t, "non-finite sandbox state", snapshot=state)
    if cfg.drift_scheme == "euler":
        fx, fy = _fd_drift(sys, cfg.alpha, x, y)
        xn, yn = x + dt * fx, y + dt * fy
    elif cfg.drift_scheme == "leapfrog":
        # Stormer-Verlet in the canonical pair (q, p) = (y, x); symplectic
        # when H is separable as A(x) + B(y)
        x_half = x - 0.5 * dt * sys.grad_h(x, y)[1]
        yn = y + dt * sys.grad_h(x_half, y)[0]
        xn = x_half - 0.5 * dt * sys.grad_h(x_half, yn)[1]
    else:
        fx, fy = _fd_drift(sys, cfg.alpha, x, y)
        px, py = x + dt * fx, y + dt * fy
        gx, gy = _fd_drift(sys, cfg.alpha, px, py)
        xn = x + 0.5 * dt * (fx + gx)
        yn = y + 0.5 * dt * (fy + gy)
    if cfg.alpha > 0 and state.rng is not None:
        noise = state.rng.normals(x.shape + (2,)) * np.sqrt(2.0 * cfg.alpha * dt)
        xn = xn + noise[..., 0]
        yn = yn + noise[..., 1]
    return SandboxState(state.t + dt, xn, yn, state.rng)


def run_sandbox(
    sys: HamiltonianSystem,
    cfg: SandboxConfig,
    observables: Mapping[str, Callable[[np.ndarray, np.ndarray], np.ndarray]],
    stride: int = 1,
    initial: tuple[np.ndarray, np.ndarray] | None = None,
):
    """Vectorized ensemble trajectory; returns (times, series dict (E, T))."""
    E = cfg.ensemble_size
    if initial is None:
        x = np.zeros((E, sys.n))
        y = np.zeros((E, sys.n))
    else:
        x = np.broadcast_to(initial[0], (E, sys.n)).astype(float).copy()
        y = np.broadcast_to(initial[1], (E, sys.n)).astype(float).copy()
    state = SandboxState(0.0, x, y, RngStream(cfg.seed, 0))
    n = int(round(cfg.horizon / cfg.dt))
    times = [0.0]
    series = {name: [np.asarray(fn(x, y), dtype=float)] for name, fn in observables.items()}
    for k in range(1, n + 1):
        state = fd_step(state, sys, cfg)
        if k % stride == 0 or k == n:
            times.append(state.t)
            for name, fn in observables.items():
                series[name].append(np.asarray(fn(state.x, state.y), dtype=float))
    return np.asarray(times), {
        name: np.stack(vals, axis=1) for name, vals in series.items()
    }


# ---------------------------------------------------------------------------
# Gibbs quadrature oracle

def _auto_box(sys: HamiltonianSystem, start: float = 4.0, tol: float = 1e-10) -> float:
    """Grow [-L, L]^{2n} until the boundary density is negligible."""
    d = 2 * sys.n
    rng = np.random.default_rng(12345)
    face = rng.integers(0, d, size=4096)
    sign = rng.choice([-1.0, 1.0], size=4096)
    L = start
    for _ in range(40):
        pts = rng.uniform(-L, L, size=(4096, d))
        pts[np.arange(4096), face] = sign * L
        hvals = sys.h(pts[:, : sys.n], pts[:, sys.n :])
        if float(np.max(np.exp(-hvals))) < tol:
            return L
        L *= 1.4
    raise QuadratureError("exp(-H) does not decay on any tested box; H may not confine")


def gibbs_oracle(
    sys: HamiltonianSystem,
    observable: Callable[[np.ndarray, np.ndarray], np.ndarray],
    box: float | None = None,
    points_per_dim: int | None = None,
) -> float:
    """Tensor Gauss-Legendre quadrature of the observable against exp(-H)/Z.

    Restricted to n <= 3 (the tensor grid is exponential in dimension).
    """
    if sys.n > 3:
        raise QuadratureError("tensor quadrature is limited to n <= 3")
    L = box if box is not None else _auto_box(sys)
    d = 2 * sys.n
    if points_per_dim is None:
        points_per_dim = {2: 160, 4: 48, 6: 20}[d]
    nodes, weights = np.polynomial.legendre.leggauss(points_per_dim)
    nodes = nodes * L
    weights = weights * L
    grids = np.meshgrid(*([nodes] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    w = np.ones(1)
    for _ in range(d):
        w = (w[:, None] * weights[None, :]).ravel()
    x, y = pts[:, : sys.n], pts[:, sys.n :]
    density = np.exp(-sys.h(x, y))
    z = float(np.sum(w * density))
    if not np.isfinite(z) or z <= 0:
        raise QuadratureError("partition function quadrature failed")
    val = float(np.sum(w * density * np.asarray(observable(x, y), dtype=float)))
    # crude tail audit: the box must hold essentially all the mass
    edge_density = float(np.max(density[np.any(np.abs(pts) > 0.98 * L, axis=-1)]))
    if edge_density * (2 * L) ** d > 1e-8 * z:
        raise QuadratureError(
            f"quadrature box [-{L:g}, {L:g}] leaves non-negligible boundary mass"
        )
    return val / z


@dataclass
class SandboxCompareRow:
    alpha: float
    observable: str
    estimate: float
    se: float
    oracle: float

    @property
    def deviation_in_se(self) -> float:
        return abs(self.estimate - self.oracle) / self.se if self.se > 0 else np.inf


def stationary_compare(
    sys: HamiltonianSystem,
    cfg: SandboxConfig,
    observables: Mapping[str, Callable],
    alphas: tuple[float, ...] | None = None,
    burn_in: float | None = None,
) -> list[SandboxCompareRow]:
    """Empirical stationary averages against the Gibbs oracle.

    With several alphas the rows double as an alpha-independence check:
    the invariant density does not depend on the damping strength.
    """
    from dataclasses import replace

    oracle = {name: gibbs_oracle(sys, fn) for name, fn in observables.items()}
    rows = []
    for a in alphas or (cfg.alpha,):
        acfg = replace(cfg, alpha=a)
        burn = burn_in if burn_in is not None else 10.0 / max(a, 1e-12)
        if acfg.horizon <= burn:
            raise EstimationError("horizon shorter than burn-in")
        times, series = run_sandbox(sys, acfg, observables)
        keep = times >= burn
        for name in observables:
            segs = [series[name][m][keep] for m in range(acfg.ensemble_size)]
            est = float(np.mean(np.concatenate(segs)))
            se = batch_means_se(segs)
            rows.append(
                SandboxCompareRow(
                    alpha=a,
                    observable=name,
                    estimate=est,
                    se=se,
                    oracle=oracle[name],
                )
            )
    return rows
