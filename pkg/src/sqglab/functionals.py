"""Conserved quantities, dissipation functionals, and balance residuals.

The deterministic transport conserves M(theta) = 1/2 integral theta^2,
E_{-1/2}(theta) = 1/2 integral |(-Lap)^(-1/4) theta|^2, and every spatial
average of f(theta) for smooth f (the velocity is divergence free). The
stochastic flow trades those conservation laws for exact balance
identities between moment growth, dissipation, and the noise amplitude
sums A_s; this module evaluates both sides of those identities from
simulation output.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import spectral
from .forcing import NoiseSpec, quadratic_variation, spectral_sum
from .integrator import EnsembleRecord
from .spectral import FOUR_PI_SQ, GridSpec


class ConfigurationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# pointwise functionals of the field

def mass_m(theta_hat: np.ndarray):
    """M(theta) = 1/2 integral theta^2 dx."""
    return 0.5 * spectral.l2_sq(theta_hat)


def energy_minus_half(theta_hat: np.ndarray, grid: GridSpec):
    """E_{-1/2}(theta) = 1/2 integral |(-Lap)^(-1/4) theta|^2 dx."""
    return 0.5 * spectral.sobolev_sq(theta_hat, grid, -0.5)


def h2_dissipation(theta_hat: np.ndarray, grid: GridSpec):
    """integral |Lap theta|^2 dx, the quadratic dissipation density."""
    return spectral.sobolev_sq(theta_hat, grid, 2.0)


def w14_dissipation(theta_hat: np.ndarray, grid: GridSpec):
    """integral |grad theta|^4 dx, the quartic dissipation density."""
    return spectral.grad_l4_4(theta_hat, grid)


def dissipation_parts(theta_hat: np.ndarray, grid: GridSpec):
    """Quadratic and cubic pieces of the H^{-1/2} dissipation functional.

    quad = integral |(-Lap)^(3/4) theta|^2, and
    cubic = integral |grad theta|^2 grad theta . grad (-Lap)^(-1/2) theta,
    both by padded-grid quadrature for the cubic piece (a quartic spectral
    convolution would cost far more for the same answer).
    """
    quad = spectral.sobolev_sq(theta_hat, grid, 1.5)
    tx_hat, ty_hat = spectral.gradient(theta_hat, grid)
    tx = spectral.to_physical(tx_hat, grid)
    ty = spectral.to_physical(ty_hat, grid)
    smooth = spectral.fractional_laplacian(theta_hat, grid, -0.5)
    rx_hat, ry_hat = spectral.gradient(smooth, grid)
    rx = spectral.to_physical(rx_hat, grid)
    ry = spectral.to_physical(ry_hat, grid)
    cubic = spectral.integrate_physical((tx * tx + ty * ty) * (tx * rx + ty * ry))
    return quad, cubic


def dissipation_i(theta_hat: np.ndarray, grid: GridSpec, cubic_sign: float = 1.0):
    """Dissipation functional paired with the H^{-1/2} balance.

    The drift pairing of (-Lap)^(-1/2) theta with the two dissipative terms
    produces quad + cubic, so the PLUS sign is the default; cubic_sign=-1
    evaluates the opposite convention for side-by-side reporting.
    """
    quad, cubic = dissipation_parts(theta_hat, grid)
    return quad + cubic_sign * cubic


def casimir(theta_hat: np.ndarray, grid: GridSpec, f) -> np.ndarray | float:
    """Spatial average of f(theta): quadrature of f on the padded grid / 4pi^2."""
    samples = spectral.to_physical(theta_hat, grid)
    return spectral.integrate_physical(f(samples)) / FOUR_PI_SQ


# ---------------------------------------------------------------------------
# smooth compactly supported conserved-functional family

@lru_cache(maxsize=None)
def _casimir_lambdas(k: int):
    import sympy as sp

    z = sp.Symbol("z", real=True)

    def smooth_step(t):
        # e^{-1/t} partition: 1 at t=1, 0 at t=0, C-infinity in between
        lo = sp.exp(-1 / t)
        hi = sp.exp(-1 / (1 - t))
        return lo / (lo + hi)

    bump = sp.Piecewise(
        (1, (z >= -1) & (z <= 1)),
        (smooth_step(2 - z), (z > 1) & (z < 2)),
        (smooth_step(2 + z), (z > -2) & (z < -1)),
        (0, True),
    )
    expr = z ** (k + 1) * bump
    return tuple(
        sp.lambdify(z, sp.diff(expr, z, m), modules="numpy") for m in range(5)
    )


class CasimirFunction:
    """f_k(z) = z^(k+1) on [-1, 1], smoothly cut off to zero outside [-2, 2].

    Bounded together with four derivatives; f_1 is nonnegative and strictly
    positive on a punctured neighborhood of zero.
    """

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("family index starts at 1")
        self.k = k
        self._lambdas = _casimir_lambdas(k)

    def __call__(self, z):
        return self.deriv(z, 0)

    def deriv(self, z, order: int = 1):
        if not 0 <= order <= 4:
            raise ValueError("derivatives available up to order 4")
        z = np.asarray(z, dtype=float)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            out = self._lambdas[order](z)
        return np.asarray(out, dtype=float)

    def __repr__(self):
        return f"CasimirFunction(k={self.k})"


def casimir_family(n: int) -> list[CasimirFunction]:
    """The first n members f_1 .. f_n of the cut-off power family."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return [CasimirFunction(k) for k in range(1, n + 1)]


# ---------------------------------------------------------------------------
# observable registry

CORE_OBSERVABLES = (
    "M",
    "E_mhalf",
    "H2_diss",
    "W14_diss",
    "I_diss",
    "I_diss_minus",
    "noise_qv",
)


class ObservableSet:
    """Named evaluators theta -> real, sharing transforms per evaluation.

    Stable string identifiers (used in configs and CSV headers):
    "M", "E_mhalf", "H2_diss", "W14_diss", "I_diss", "I_diss_minus",
    "casimir_<k>", "Hs_<s>", "noise_qv". All evaluators are pure; batched
    input (leading axes) yields batched values.
    """

    def __init__(self, names, grid: GridSpec, noise: NoiseSpec | None = None):
        self.names = list(names)
        self.grid = grid
        self.noise = noise
        self._casimirs: dict[int, CasimirFunction] = {}
        self._sobolev: dict[str, float] = {}
        for name in self.names:
            self._validate(name)

    def _validate(self, name: str):
        if name in CORE_OBSERVABLES:
            if name == "noise_qv" and self.noise is None:
                raise ConfigurationError("observable 'noise_qv' needs a noise specification")
            return
        if name.startswith("casimir_"):
            try:
                k = int(name.split("_", 1)[1])
            except ValueError:
                raise ConfigurationError(f"bad conserved-functional index in {name!r}") from None
            self._casimirs[k] = CasimirFunction(k)
            return
        if name.startswith("Hs_"):
            try:
                self._sobolev[name] = float(name.split("_", 1)[1])
            except ValueError:
                raise ConfigurationError(f"bad Sobolev order in {name!r}") from None
            return
        raise ConfigurationError(f"unknown observable {name!r}")

    def evaluate(self, theta_hat: np.ndarray) -> dict[str, np.ndarray]:
        grid = self.grid
        out: dict[str, np.ndarray] = {}
        phys = None
        grads = None

        def physical():
            nonlocal phys
            if phys is None:
                phys = spectral.to_physical(theta_hat, grid)
            return phys

        def gradients():
            nonlocal grads
            if grads is None:
                tx_hat, ty_hat = spectral.gradient(theta_hat, grid)
                grads = (
                    spectral.to_physical(tx_hat, grid),
                    spectral.to_physical(ty_hat, grid),
                )
            return grads

        i_parts = None

        def dissipation():
            nonlocal i_parts
            if i_parts is None:
                tx, ty = gradients()
                smooth = spectral.fractional_laplacian(theta_hat, grid, -0.5)
                rx_hat, ry_hat = spectral.gradient(smooth, grid)
                rx = spectral.to_physical(rx_hat, grid)
                ry = spectral.to_physical(ry_hat, grid)
                quad = spectral.sobolev_sq(theta_hat, grid, 1.5)
                cubic = spectral.integrate_physical(
                    (tx * tx + ty * ty) * (tx * rx + ty * ry)
                )
                i_parts = (quad, cubic)
            return i_parts

        for name in self.names:
            if name == "M":
                out[name] = 0.5 * spectral.l2_sq(theta_hat)
            elif name == "E_mhalf":
                out[name] = 0.5 * spectral.sobolev_sq(theta_hat, grid, -0.5)
            elif name == "H2_diss":
                out[name] = spectral.sobolev_sq(theta_hat, grid, 2.0)
            elif name == "W14_diss":
                tx, ty = gradients()
                gsq = tx * tx + ty * ty
                out[name] = spectral.integrate_physical(gsq * gsq)
            elif name == "I_diss":
                quad, cubic = dissipation()
                out[name] = quad + cubic
            elif name == "I_diss_minus":
                quad, cubic = dissipation()
                out[name] = quad - cubic
            elif name == "noise_qv":
                out[name] = quadratic_variation(theta_hat, self.noise, grid)
            elif name.startswith("casimir_"):
                k = int(name.split("_", 1)[1])
                f = self._casimirs[k]
                out[name] = spectral.integrate_physical(f(physical())) / FOUR_PI_SQ
            elif name.startswith("Hs_"):
                out[name] = spectral.sobolev_sq(theta_hat, grid, self._sobolev[name])
        return out


# ---------------------------------------------------------------------------
# balance residuals

@dataclass(frozen=True)
class BalanceReport:
    identity: str
    window: tuple[float, float]
    lhs: float
    rhs: float
    residual: float
    monte_carlo_se: float

    def __post_init__(self):
        # residual is lhs - rhs by definition; keep the invariant visible
        assert abs(self.residual - (self.lhs - self.rhs)) <= 1e-12 * max(
            1.0, abs(self.lhs), abs(self.rhs)
        )


def _require(record: EnsembleRecord, names) -> None:
    missing = [n for n in names if n not in record.series]
    if missing:
        raise ConfigurationError(
            f"balance residual needs observables {missing} recorded at the shared stride"
        )


def _member_time_integral(series: np.ndarray, times: np.ndarray, t_index: int) -> np.ndarray:
    return np.trapezoid(series[:, : t_index + 1], times[: t_index + 1], axis=1)


def ito_residual(
    identity: str,
    record: EnsembleRecord,
    spec: NoiseSpec | None,
    alpha: float,
    q: int = 1,
    t_index: int = -1,
    include_w14: bool = True,
) -> BalanceReport:
    """Monte-Carlo drift-balance residual of one moment identity.

    "alp":   E|theta(t)|^2 + 2a int E(|Lap theta|^2 + |grad theta|_4^4)
             = E|theta_0|^2 + a A_0 t
    "hmj":   the same balance for the H^{-1/2} norm, with dissipation
             2a int E[I(theta)] and drift a A_{-1/2} t
    "cet":   the M^q power balance; its quadratic-variation term carries
             the coefficient a q (q-1) / 2 (verified against the scalar
             Ornstein-Uhlenbeck closed form)

    Per-member residuals are averaged, so the reported standard error is
    the plain ensemble SE of a scalar. ``include_w14=False`` drops the
    quartic dissipation from the balance, matching dynamics run without
    the cubic-gradient term.
    """
    times = record.times
    if t_index < 0:
        t_index = len(times) + t_index
    t0, t1 = float(times[0]), float(times[t_index])
    ok = ~record.failed
    diss_names = ("H2_diss", "W14_diss") if include_w14 else ("H2_diss",)

    def total_dissipation():
        out = record.series["H2_diss"][ok].copy()
        if include_w14:
            out += record.series["W14_diss"][ok]
        return out

    if identity == "alp":
        _require(record, ("M",) + diss_names)
        a0 = spectral_sum(spec, 0.0) if spec is not None else 0.0
        m = record.series["M"][ok]
        diss = total_dissipation()
        lhs_m = 2.0 * m[:, t_index] + 2.0 * alpha * _member_time_integral(diss, times, t_index)
        rhs_m = 2.0 * m[:, 0] + alpha * a0 * (t1 - t0)
    elif identity == "hmj":
        _require(record, ("E_mhalf", "I_diss"))
        amh = spectral_sum(spec, -0.5) if spec is not None else 0.0
        e = record.series["E_mhalf"][ok]
        diss = record.series["I_diss"][ok]
        lhs_m = 2.0 * e[:, t_index] + 2.0 * alpha * _member_time_integral(diss, times, t_index)
        rhs_m = 2.0 * e[:, 0] + alpha * amh * (t1 - t0)
    elif identity == "cet":
        if q < 1:
            raise ConfigurationError("cet requires q >= 1")
        _require(record, ("M",) + diss_names + (("noise_qv",) if q > 1 else ()))
        a0 = spectral_sum(spec, 0.0) if spec is not None else 0.0
        m = record.series["M"][ok]
        diss = total_dissipation()
        mq1 = m ** (q - 1)
        lhs_m = m[:, t_index] ** q + alpha * q * _member_time_integral(mq1 * diss, times, t_index)
        rhs_m = m[:, 0] ** q + 0.5 * alpha * q * a0 * _member_time_integral(mq1, times, t_index)
        if q > 1:
            qv = record.series["noise_qv"][ok]
            rhs_m = rhs_m + 0.5 * alpha * q * (q - 1) * _member_time_integral(
                m ** (q - 2) * qv, times, t_index
            )
    else:
        raise ConfigurationError(f"unknown balance identity {identity!r}")

    resid_m = lhs_m - rhs_m
    n = resid_m.shape[0]
    se = float(np.std(resid_m, ddof=1) / np.sqrt(n)) if n >= 2 else float("nan")
    lhs = float(np.mean(lhs_m))
    rhs = float(np.mean(rhs_m))
    return BalanceReport(
        identity=identity if q == 1 or identity != "cet" else f"cet_q{q}",
        window=(t0, t1),
        lhs=lhs,
        rhs=rhs,
        residual=lhs - rhs,
        monte_carlo_se=se,
    )
