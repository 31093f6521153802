"""Time-averaged stationary statistics and their exact-identity residuals.

Long-run averages of observables approximate integrals against the
stationary measure of the damped-driven flow. Standard errors use batch
means (20 batches by default) because consecutive samples are strongly
correlated; plain i.i.d. errors would be optimistic. Ledgers built from
separate trajectories merge associatively, so ensembles can be pooled
after per-member burn-in.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from . import spectral
from .forcing import NoiseSpec, project_physical, spectral_sum
from .functionals import BalanceReport, CasimirFunction, ConfigurationError, ObservableSet
from .integrator import (
    DivergenceError,
    EnsembleRecord,
    SimConfig,
    TrajectoryRecord,
    run_ensemble,
)
from .spectral import GridSpec


class EstimationError(RuntimeError):
    pass


DEFAULT_BATCHES = 20


def default_burn_in(alpha: float, lambda_min: float) -> float:
    """Ten diffusive times 1/(alpha lambda_min^2) of the slowest forced mode."""
    if alpha <= 0:
        raise ValueError("burn-in heuristic needs alpha > 0")
    return 10.0 / (alpha * lambda_min**2)


@dataclass
class MomentLedger:
    """Post-burn-in observable samples, kept per source trajectory.

    Sample arrays are retained (not just running sums) so batch-means
    errors, composite products of observables, and histograms all come
    from the same data. Merging concatenates segments in call order.
    """

    segments: list[dict[str, np.ndarray]]
    sample_dt: float
    burn_in: float

    @property
    def names(self) -> list[str]:
        return list(self.segments[0].keys()) if self.segments else []

    def samples(self, name: str) -> np.ndarray:
        try:
            return np.concatenate([seg[name] for seg in self.segments])
        except KeyError:
            raise ConfigurationError(f"ledger does not carry observable {name!r}") from None

    def count(self, name: str) -> int:
        return self.samples(name).shape[0]

    def mean(self, name: str) -> float:
        return float(np.mean(self.samples(name)))

    def second_moment(self, name: str) -> float:
        return float(np.mean(self.samples(name) ** 2))

    def batch_se(self, name: str, n_batches: int = DEFAULT_BATCHES) -> float:
        return batch_means_se(
            [seg[name] for seg in self.segments], n_batches=n_batches
        )

    def merge(self, other: "MomentLedger") -> "MomentLedger":
        if not np.isclose(self.sample_dt, other.sample_dt):
            raise ConfigurationError("cannot merge ledgers with different sample strides")
        return MomentLedger(
            segments=self.segments + other.segments,
            sample_dt=self.sample_dt,
            burn_in=self.burn_in,
        )

    def summary(self) -> dict[str, dict[str, float]]:
        return {
            name: {
                "mean": self.mean(name),
                "se": self.batch_se(name),
                "count": self.count(name),
            }
            for name in self.names
        }


def batch_means_se(segments: Sequence[np.ndarray], n_batches: int = DEFAULT_BATCHES) -> float:
    """Pooled batch-means standard error of the grand mean.

    Each segment contributes n_batches equal batches (trailing remainder
    dropped); the SE is the spread of all batch means over the total batch
    count.
    """
    means = []
    for seg in segments:
        n = seg.shape[0]
        if n < 2:
            continue
        nb = min(n_batches, n // 2) or 1
        blen = n // nb
        trimmed = seg[: nb * blen].reshape(nb, blen)
        means.extend(np.mean(trimmed, axis=1))
    means = np.asarray(means)
    if means.shape[0] < 2:
        raise EstimationError("need at least two batches for a standard error")
    return float(np.std(means, ddof=1) / np.sqrt(means.shape[0]))


def time_average(record: TrajectoryRecord, burn_in: float) -> MomentLedger:
    """Ledger of the post-burn-in samples of one trajectory."""
    keep = record.times >= burn_in
    if int(np.sum(keep)) < 2:
        raise EstimationError(
            f"trajectory of length {record.times[-1]:.3g} leaves fewer than two "
            f"samples after burn-in {burn_in:.3g}"
        )
    seg = {name: vals[keep] for name, vals in record.observables.items()}
    dt = float(record.times[1] - record.times[0]) if len(record.times) > 1 else 0.0
    return MomentLedger(segments=[seg], sample_dt=dt, burn_in=burn_in)


def ledger_from_ensemble(record: EnsembleRecord, burn_in: float) -> MomentLedger:
    """Pool an ensemble: one ledger segment per surviving member.

    Pooling across members is justified by stationarity after per-member
    burn-in; the segment structure records it.
    """
    keep = record.times >= burn_in
    if int(np.sum(keep)) < 2:
        raise EstimationError("ensemble run leaves fewer than two samples after burn-in")
    segments = []
    for m in range(record.n_members):
        if record.failed[m]:
            continue
        segments.append(
            {name: record.series[name][m][keep] for name in record.series}
        )
    if not segments:
        raise EstimationError("all ensemble members diverged")
    dt = float(record.times[1] - record.times[0])
    return MomentLedger(segments=segments, sample_dt=dt, burn_in=burn_in)


# ---------------------------------------------------------------------------
# stationary identities

def stationary_residuals(
    ledger: MomentLedger,
    spec: NoiseSpec,
    qs: Iterable[int] = (2, 3),
    include_variants: bool = True,
    include_w14: bool = True,
) -> list[BalanceReport]:
    """Residuals of the stationary moment identities.

    <|Lap theta|^2 + |grad theta|_4^4> = A_0 / 2
    <I(theta)>                         = A_{-1/2} / 2
    and for q >= 2 the M-weighted identity
    <M^{q-1} (|Lap theta|^2 + |grad theta|_4^4)>
        = (A_0/2) <M^{q-1}> + ((q-1)/2) <M^{q-2} sum_j a_j^2 (theta,e_j)^2>.

    The printed-coefficient variant of the q-identity (q-1 in place of
    (q-1)/2) and the opposite-sign variant of I are reported alongside,
    never silently merged. ``include_w14=False`` matches dynamics run
    without the cubic-gradient dissipation (then <|Lap theta|^2> alone
    balances A_0/2).
    """
    a0 = spectral_sum(spec, 0.0)
    amh = spectral_sum(spec, -0.5)
    window = (ledger.burn_in, ledger.burn_in + ledger.count(ledger.names[0]) * ledger.sample_dt)
    reports = []

    def diss_of(seg):
        return seg["H2_diss"] + seg["W14_diss"] if include_w14 else seg["H2_diss"]

    def report(identity, lhs_segments, rhs_value):
        lhs = float(np.mean(np.concatenate(lhs_segments)))
        se = batch_means_se(lhs_segments)
        reports.append(
            BalanceReport(
                identity=identity,
                window=window,
                lhs=lhs,
                rhs=rhs_value,
                residual=lhs - rhs_value,
                monte_carlo_se=se,
            )
        )

    diss_segs = [diss_of(seg) for seg in ledger.segments]
    report("stationary_h2_w14", diss_segs, a0 / 2.0)

    if "I_diss" in ledger.names:
        report("stationary_I", [seg["I_diss"] for seg in ledger.segments], amh / 2.0)
    if include_variants and "I_diss_minus" in ledger.names:
        report(
            "stationary_I_printed_sign",
            [seg["I_diss_minus"] for seg in ledger.segments],
            amh / 2.0,
        )

    for q in qs:
        if q < 2:
            continue
        needed = {"M", "H2_diss", "noise_qv"} | ({"W14_diss"} if include_w14 else set())
        if not needed.issubset(set(ledger.names)):
            raise ConfigurationError(
                f"power-{q} identity needs observables {sorted(needed)}"
            )
        lhs_segs = []
        rhs_segs = []
        for seg in ledger.segments:
            m = seg["M"]
            diss = diss_of(seg)
            lhs_segs.append(m ** (q - 1) * diss)
            rhs_segs.append(
                0.5 * a0 * m ** (q - 1)
                + 0.5 * (q - 1) * m ** (q - 2) * seg["noise_qv"]
            )
        resid_segs = [l - r for l, r in zip(lhs_segs, rhs_segs)]
        lhs = float(np.mean(np.concatenate(lhs_segs)))
        rhs = float(np.mean(np.concatenate(rhs_segs)))
        se = batch_means_se(resid_segs)
        reports.append(
            BalanceReport(
                identity=f"stationary_powerq_q{q}",
                window=window,
                lhs=lhs,
                rhs=rhs,
                residual=lhs - rhs,
                monte_carlo_se=se,
            )
        )
        if include_variants:
            rhs_paper = [
                0.5 * a0 * seg["M"] ** (q - 1)
                + (q - 1) * seg["M"] ** (q - 2) * seg["noise_qv"]
                for seg in ledger.segments
            ]
            resid_paper = [l - r for l, r in zip(lhs_segs, rhs_paper)]
            rhs_val = float(np.mean(np.concatenate(rhs_paper)))
            reports.append(
                BalanceReport(
                    identity=f"stationary_powerq_q{q}_printed_coeff",
                    window=window,
                    lhs=lhs,
                    rhs=rhs_val,
                    residual=lhs - rhs_val,
                    monte_carlo_se=batch_means_se(resid_paper),
                )
            )
    return reports


# ---------------------------------------------------------------------------
# histogram / atom diagnostics

@dataclass(frozen=True)
class HistogramSpec:
    observable: str = ""
    bins: int | str = "fd"  # Freedman-Diaconis by default
    min_samples: int = 1000
    plateau_fraction: float = 0.8


@dataclass
class HistogramResult:
    edges: np.ndarray
    masses: np.ndarray
    max_masses: tuple[float, float, float]
    atom: bool
    degenerate: bool

    @property
    def observable_range(self) -> tuple[float, float]:
        return float(self.edges[0]), float(self.edges[-1])


def histogram_atom_check(samples: np.ndarray, spec: HistogramSpec) -> HistogramResult:
    """Normalized histogram plus a plateau test for point masses.

    A law with a density spreads under bin refinement (max bin mass is
    roughly halved per halving of the bin width), while an atom keeps its
    mass. The verdict is positive when the max bin mass after two
    halvings stays above plateau_fraction of the original.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.shape[0] < spec.min_samples:
        raise EstimationError(
            f"atom check needs at least {spec.min_samples} samples, got {samples.shape[0]}"
        )
    lo, hi = float(np.min(samples)), float(np.max(samples))
    if hi == lo:
        edges = np.array([lo - 0.5, lo + 0.5])
        return HistogramResult(
            edges=edges,
            masses=np.array([1.0]),
            max_masses=(1.0, 1.0, 1.0),
            atom=True,
            degenerate=True,
        )
    base_edges = np.histogram_bin_edges(samples, bins=spec.bins)
    n_base = len(base_edges) - 1
    maxima = []
    masses = edges = None
    for refine in (1, 2, 4):
        e = np.linspace(lo, hi, n_base * refine + 1)
        counts, _ = np.histogram(samples, bins=e)
        m = counts / samples.shape[0]
        if refine == 1:
            masses, edges = m, e
        maxima.append(float(np.max(m)))
    atom = maxima[2] >= spec.plateau_fraction * maxima[0]
    return HistogramResult(
        edges=edges,
        masses=masses,
        max_masses=tuple(maxima),
        atom=atom,
        degenerate=False,
    )


# ---------------------------------------------------------------------------
# conserved-functional Gram diagnostic

def casimir_gram(
    theta_hat: np.ndarray,
    grid: GridSpec,
    fs: Sequence[CasimirFunction],
    spec: NoiseSpec,
):
    """Noise-weighted Gram matrix of the functional gradients f_i'(theta).

    G_ij = sum_m a_m^2 (f_i'(theta), e_m)(f_j'(theta), e_m), assembled from
    projections of f_i'(theta) onto the forced modes. Positive
    semidefinite by construction; the determinant quantifies
    nondegeneracy of the conserved-functional map at theta.
    """
    samples = spectral.to_physical(theta_hat, grid)
    proj = np.stack(
        [project_physical(f.deriv(samples, 1), spec.basis) for f in fs]
    )
    weighted = proj * spec.amplitudes**2
    gram = weighted @ proj.T
    gram = 0.5 * (gram + gram.T)
    return gram, float(np.linalg.det(gram))


# ---------------------------------------------------------------------------
# vanishing-dissipation sweep

@dataclass
class SweepRow:
    alpha: float
    horizon: float
    summary: dict[str, dict[str, float]]
    residuals: list[BalanceReport]
    weighted_moments: dict[str, dict[str, float]]
    error: str | None = None
    ledger: MomentLedger | None = None


@dataclass
class SweepResult:
    rows: list[SweepRow]

    def column(self, q: int):
        return [
            (row.alpha, row.weighted_moments[f"q{q}"]["mean"], row.weighted_moments[f"q{q}"]["se"])
            for row in self.rows
            if row.error is None
        ]


def weighted_moment_table(ledger: MomentLedger, qs=(1, 2, 3)) -> dict[str, dict[str, float]]:
    """<M^{q-1} (|Lap theta|^2 + |grad theta|^4_4)> with batch errors."""
    table = {}
    for q in qs:
        segs = [
            seg["M"] ** (q - 1) * (seg["H2_diss"] + seg["W14_diss"])
            for seg in ledger.segments
        ]
        table[f"q{q}"] = {
            "mean": float(np.mean(np.concatenate(segs))),
            "se": batch_means_se(segs),
        }
    return table


def inviscid_sweep(
    base_cfg: SimConfig,
    alphas: Sequence[float],
    observable_names: Sequence[str],
    stride: int = 1,
    burn_in_factor: float = 10.0,
    threads: int = 1,
    qs=(1, 2, 3),
    progress=None,
) -> SweepResult:
    """Stationary estimation at each alpha of a strictly decreasing list.

    Run length scales like 1/alpha (the base configuration's horizon is
    pinned to the first alpha) so each row spans a comparable number of
    diffusive mixing times. A failing row is annotated, not fatal.
    """
    alphas = list(alphas)
    if any(a <= 0 for a in alphas):
        raise ValueError("sweep alphas must be positive")
    if any(b >= a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("sweep alphas must be strictly decreasing")
    if base_cfg.noise is None:
        raise ConfigurationError("a sweep needs forced dynamics")
    forced = base_cfg.noise.basis.lam[base_cfg.noise.amplitudes != 0]
    lambda_min = float(np.min(forced))
    rows = []
    for a in alphas:
        horizon = base_cfg.horizon * alphas[0] / a
        cfg = replace(base_cfg, alpha=a, horizon=horizon)
        burn = burn_in_factor / (a * lambda_min**2)
        if progress:
            progress(f"sweep alpha={a:g}: horizon={horizon:g}, burn-in={burn:g}")
        obs = ObservableSet(observable_names, cfg.grid, cfg.noise)
        try:
            record = run_ensemble(cfg, obs, stride=stride, threads=threads)
            ledger = ledger_from_ensemble(record, burn)
            rows.append(
                SweepRow(
                    alpha=a,
                    horizon=horizon,
                    summary=ledger.summary(),
                    residuals=stationary_residuals(ledger, cfg.noise),
                    weighted_moments=weighted_moment_table(ledger, qs),
                    ledger=ledger,
                )
            )
        except (DivergenceError, EstimationError) as err:
            rows.append(
                SweepRow(
                    alpha=a,
                    horizon=horizon,
                    summary={},
                    residuals=[],
                    weighted_moments={},
                    error=str(err),
                )
            )
    return SweepResult(rows=rows)
