"""Acceptance criteria: every check the package must pass, with pinned
configurations and tolerances.

The criteria are exercised both by ``pytest tests/test_acceptance.py`` and
by ``sqglab verify``. Heavy artifacts (the stationary sweep, the balance
ensembles) are computed once per process and shared between criteria.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import spectral
from .forcing import (
    NoiseSpec,
    RngStream,
    enumerate_basis,
    noise_from_shells,
    project_coefficients,
    random_field,
    spectral_sum,
)
from .functionals import ObservableSet, casimir_family, ito_residual
from .hamiltonian import (
    SandboxConfig,
    gibbs_oracle,
    make_system,
    run_sandbox,
)
from .integrator import SimConfig, run_ensemble, run_trajectory
from .measure_lab import (
    HistogramSpec,
    batch_means_se,
    casimir_gram,
    histogram_atom_check,
    inviscid_sweep,
)
from .spectral import GridSpec


@dataclass
class CriterionResult:
    cid: int
    name: str
    passed: bool
    messages: list[str]

    def line(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        return f"[{state}] criterion {self.cid}: {self.name}"


def _msg(messages, text):
    messages.append(text)
    return text


def _single_mode(grid: GridSpec, kx: int, ky: int, parity: str) -> np.ndarray:
    """cos(k.x) or sin(k.x) with unit amplitude."""
    N = grid.cutoff
    c = spectral.zero_field(grid)
    if parity == "cos":
        c[N + ky, N + kx] = 0.5
        c[N - ky, N - kx] = 0.5
    else:
        c[N + ky, N + kx] = -0.5j
        c[N - ky, N - kx] = 0.5j
    return c


def _shell_noise() -> NoiseSpec:
    # forced shells lambda in {2, 4, 5} with a = 1/lambda: A_0 and A_{-1/2}
    # known in closed form, smallest forced eigenvalue 2 (fast mixing)
    return noise_from_shells([(2.0, 0.5), (4.0, 0.25), (5.0, 0.2)])


# ---------------------------------------------------------------------------
# 1. steady single-shell initial data stay fixed under the transport flow

def criterion_1() -> CriterionResult:
    messages = []
    grid = GridSpec(64)
    theta0 = _single_mode(grid, 1, 0, "cos") + _single_mode(grid, 0, 1, "sin")
    cfg = SimConfig(alpha=0.0, dt=1e-3, horizon=10.0, cutoff=64)
    rec = run_trajectory(cfg, observers={}, stride=cfg.n_steps, initial=theta0)
    dev = np.sqrt(
        spectral.l2_sq(rec.final_state.theta_hat - theta0) / spectral.l2_sq(theta0)
    )
    _msg(messages, f"relative L2 deviation after T=10: {dev:.3e} (tol 1e-10)")
    return CriterionResult(1, "deterministic steady shells", bool(dev <= 1e-10), messages)


# ---------------------------------------------------------------------------
# 2. deterministic conservation of M, E_{-1/2}, and three conserved functionals

def _conservation_run(dt: float):
    grid = GridSpec(128)
    theta0 = random_field(grid, RngStream(2024, 0), band=8, rms=0.35)
    cfg = SimConfig(alpha=0.0, dt=dt, horizon=1.0, cutoff=128, seed=2024)
    obs = ObservableSet(["M", "E_mhalf", "casimir_1", "casimir_2", "casimir_3"], grid)
    n = cfg.n_steps
    return run_trajectory(cfg, obs, stride=max(1, n // 10), initial=theta0), theta0, grid


_CONS_NAMES = ("M", "E_mhalf", "casimir_1", "casimir_2", "casimir_3")


def _drift_scales(theta0, grid):
    # |f_k| mean gives a stable denominator even when the signed average
    # of an odd power is accidentally small
    phys = spectral.to_physical(theta0, grid)
    scales = {
        "M": 0.5 * float(spectral.l2_sq(theta0)),
        "E_mhalf": 0.5 * float(spectral.sobolev_sq(theta0, grid, -0.5)),
    }
    for k, f in zip((1, 2, 3), casimir_family(3)):
        scales[f"casimir_{k}"] = float(
            spectral.integrate_physical(np.abs(f(phys))) / spectral.FOUR_PI_SQ
        )
    return scales


def criterion_2() -> CriterionResult:
    messages = []
    rec_fine, theta0, grid = _conservation_run(1e-3)
    rec_coarse, _, _ = _conservation_run(2e-3)
    scales = _drift_scales(theta0, grid)
    ok = True
    for name in _CONS_NAMES:
        d_fine = float(np.max(np.abs(rec_fine.observables[name] - rec_fine.observables[name][0])))
        d_coarse = float(np.max(np.abs(rec_coarse.observables[name] - rec_coarse.observables[name][0])))
        rel = d_fine / scales[name]
        ratio = d_coarse / d_fine if d_fine > 0 else np.inf
        _msg(messages, f"{name}: drift {rel:.3e} (tol 1e-5), dt-halving ratio {ratio:.1f}")
        if rel > 1e-5:
            ok = False
        # The quadratic invariants are conserved exactly by the truncated
        # system, so their drift isolates the time discretization and must
        # shrink 4th order under dt halving (2e-3 -> the pinned 1e-3). The
        # cut-off power functionals carry a small dt-independent truncation
        # residue, orders below tolerance, which would mask the ratio;
        # their ratios are reported, not gated.
        if name in ("M", "E_mhalf") and not (8.0 <= ratio <= 32.0):
            ok = False
    return CriterionResult(2, "deterministic conservation, 4th order in dt", ok, messages)


# ---------------------------------------------------------------------------
# 3. linear subsystem: exact decay and Ornstein-Uhlenbeck statistics

def criterion_3() -> CriterionResult:
    messages = []
    ok = True

    # (a) pure bi-Laplacian decay is exact through the integrating factor
    grid = GridSpec(8)
    theta0 = _single_mode(grid, 2, 0, "cos")
    cfg = SimConfig(
        alpha=0.25, dt=1e-3, horizon=1.0, cutoff=8,
        enable_advection=False, enable_p_laplacian=False,
    )
    rec = run_trajectory(cfg, observers={}, stride=cfg.n_steps, initial=theta0)
    expected = np.exp(-16.0 * 0.25 * 1.0)
    got = rec.final_state.theta_hat[8, 10].real / 0.5
    rel = abs(got - expected) / expected
    _msg(messages, f"decay factor rel err {rel:.3e} (tol 1e-10)")
    ok &= rel <= 1e-10

    # (b) forced linear system: per-mode stationary variance a^2/(2 lambda^2)
    basis = enumerate_basis(2.0)
    spec = NoiseSpec(basis, np.ones(len(basis)))
    grid = GridSpec(4)
    cfg = SimConfig(
        alpha=0.5, dt=1e-3, horizon=400.0, cutoff=4, noise=spec,
        enable_advection=False, enable_p_laplacian=False, seed=33,
    )
    burn, stride = 20.0, 10
    from .integrator import StepperState

    state = StepperState(0.0, spectral.zero_field(grid), RngStream(cfg.seed, 0))
    projs = []
    h2 = []
    from .integrator import step as _step

    for k in range(cfg.n_steps):
        state = _step(state, cfg)
        if state.t > burn and k % stride == 0:
            projs.append(project_coefficients(state.theta_hat, basis, grid))
            h2.append(float(spectral.sobolev_sq(state.theta_hat, grid, 2.0)))
    projs = np.asarray(projs)
    h2 = np.asarray(h2)

    worst = 0.0
    for j in range(len(basis)):
        sq = projs[:, j] ** 2
        est = float(np.mean(sq))
        se = batch_means_se([sq])
        target = 1.0 / (2.0 * basis.lam[j] ** 2)
        dev_se = abs(est - target) / se
        worst = max(worst, dev_se)
        if dev_se > 3.0:
            ok = False
    _msg(messages, f"per-mode variance: worst deviation {worst:.2f} se (tol 3)")

    a0 = spectral_sum(spec, 0.0)
    est = float(np.mean(h2))
    se = batch_means_se([h2])
    dev = abs(est - a0 / 2.0) / se
    _msg(messages, f"<|Lap theta|^2> = {est:.4f} vs A0/2 = {a0/2:.4f} ({dev:.2f} se, tol 3)")
    ok &= dev <= 3.0
    return CriterionResult(3, "linear subsystem exactness", bool(ok), messages)


# ---------------------------------------------------------------------------
# 4. Monte-Carlo balance of the L2 moment identity, O(dt) residual

@lru_cache(maxsize=None)
def _balance_run(dt: float):
    spec = _shell_noise()
    cfg = SimConfig(
        alpha=0.1, dt=dt, horizon=1.0, cutoff=64, noise=spec,
        seed=99, ensemble_size=256,
    )
    obs = ObservableSet(["M", "H2_diss", "W14_diss"], cfg.grid, spec)
    record = run_ensemble(cfg, obs, stride=1, chunk_size=4)
    return ito_residual("alp", record, spec, cfg.alpha)


def criterion_4() -> CriterionResult:
    messages = []
    r_full = _balance_run(0.01)
    r_half = _balance_run(0.005)
    c_est = abs(r_full.residual - r_half.residual) / 0.005
    tol = 3.0 * r_full.monte_carlo_se + c_est * 0.01
    _msg(
        messages,
        f"residual(dt=0.01) = {r_full.residual:.3e} +- {r_full.monte_carlo_se:.3e}, "
        f"C*dt = {c_est*0.01:.3e}, tol {tol:.3e}",
    )
    _msg(messages, f"residual(dt=0.005) = {r_half.residual:.3e} +- {r_half.monte_carlo_se:.3e}")
    ok = abs(r_full.residual) <= tol
    trend = abs(r_half.residual) <= abs(r_full.residual) or abs(
        r_half.residual
    ) <= 3.0 * r_half.monte_carlo_se
    if not trend:
        _msg(messages, "residual did not shrink under dt halving")
    return CriterionResult(4, "Monte-Carlo L2 balance identity", bool(ok and trend), messages)


# ---------------------------------------------------------------------------
# 5-8. stationary sweep shared by four criteria

SWEEP_ALPHAS = (0.2, 0.1, 0.05)


@lru_cache(maxsize=None)
def _stationary_sweep():
    spec = _shell_noise()
    # horizon at the first alpha; the sweep scales it like 1/alpha
    base = SimConfig(
        alpha=SWEEP_ALPHAS[0], dt=5e-3, horizon=37.5, cutoff=64,
        noise=spec, seed=7, ensemble_size=2,
    )
    names = ["M", "E_mhalf", "H2_diss", "W14_diss", "I_diss", "I_diss_minus", "noise_qv"]
    return inviscid_sweep(base, SWEEP_ALPHAS, names, stride=2), spec


def criterion_5() -> CriterionResult:
    messages = []
    sweep, spec = _stationary_sweep()
    row = sweep.rows[-1]  # alpha = 0.05
    a0 = spectral_sum(spec, 0.0)
    rep = next(r for r in row.residuals if r.identity == "stationary_h2_w14")
    tol = max(0.05 * a0 / 2.0, 3.0 * rep.monte_carlo_se)
    _msg(
        messages,
        f"alpha=0.05: <H2+W14> = {rep.lhs:.4f} vs A0/2 = {rep.rhs:.4f}, "
        f"|residual| = {abs(rep.residual):.4f}, tol {tol:.4f}",
    )
    return CriterionResult(
        5, "stationary dissipation identity <H2+W14> = A0/2", bool(abs(rep.residual) <= tol), messages
    )


def criterion_6() -> CriterionResult:
    messages = []
    sweep, spec = _stationary_sweep()
    row = sweep.rows[-1]
    amh = spectral_sum(spec, -0.5)
    rep = next(r for r in row.residuals if r.identity == "stationary_I")
    tol = max(0.10 * amh / 2.0, 3.0 * rep.monte_carlo_se)
    _msg(
        messages,
        f"alpha=0.05: <I> = {rep.lhs:.4f} vs A_-1/2 / 2 = {rep.rhs:.4f}, "
        f"|residual| = {abs(rep.residual):.4f}, tol {tol:.4f}",
    )
    printed = next(r for r in row.residuals if r.identity == "stationary_I_printed_sign")
    _msg(
        messages,
        f"printed-sign variant: <I_minus> = {printed.lhs:.4f}, residual {printed.residual:+.4f} "
        "(reported, not asserted)",
    )
    return CriterionResult(
        6, "stationary identity <I> = A_-1/2 / 2 (derived sign)", bool(abs(rep.residual) <= tol), messages
    )


def criterion_7() -> CriterionResult:
    messages = []
    sweep, spec = _stationary_sweep()
    a0 = spectral_sum(spec, 0.0)
    ok = True
    col = sweep.column(2)
    for alpha, mean, se in col:
        _msg(messages, f"alpha={alpha:g}: <M (H2+W14)> = {mean:.4f} +- {se:.4f}")
    # no monotone increase beyond combined 3 se as alpha decreases
    for (a1, v1, s1), (a2, v2, s2) in zip(col, col[1:]):
        if v2 - v1 > 3.0 * np.hypot(s1, s2):
            ok = False
            _msg(messages, f"growth from alpha={a1:g} to alpha={a2:g} beyond 3 se")
    first, last = col[0], col[-1]
    if last[1] - first[1] > 3.0 * np.hypot(first[2], last[2]):
        ok = False
        _msg(messages, "q=2 moment grows end to end beyond 3 se")
    # the alpha-independent identity must hold on every row
    for row in sweep.rows:
        rep = next(r for r in row.residuals if r.identity == "stationary_h2_w14")
        tol = max(0.05 * a0 / 2.0, 3.0 * rep.monte_carlo_se)
        within = abs(rep.residual) <= tol
        _msg(
            messages,
            f"alpha={row.alpha:g}: |<H2+W14> - A0/2| = {abs(rep.residual):.4f}, tol {tol:.4f}",
        )
        ok &= within
    return CriterionResult(7, "uniform bound across the vanishing-dissipation sweep", bool(ok), messages)


def criterion_8() -> CriterionResult:
    messages = []
    sweep, _ = _stationary_sweep()
    ledger = sweep.rows[-1].ledger
    ok = True
    for name in ("M", "E_mhalf"):
        res = histogram_atom_check(ledger.samples(name), HistogramSpec(observable=name))
        _msg(
            messages,
            f"{name}: max bin mass {res.max_masses[0]:.3f} -> {res.max_masses[1]:.3f} "
            f"-> {res.max_masses[2]:.3f}, atom={res.atom}",
        )
        ok &= not res.atom
    control = histogram_atom_check(
        np.full(5000, 1.234), HistogramSpec(observable="constant control")
    )
    _msg(messages, f"constant control: atom={control.atom}")
    ok &= control.atom
    return CriterionResult(8, "absolute-continuity diagnostic for M and E_-1/2", bool(ok), messages)


# ---------------------------------------------------------------------------
# 9. sandbox end-to-end against Gibbs quadrature

def criterion_9() -> CriterionResult:
    messages = []
    ok = True
    sys_q = make_system("quadratic", 1)
    for alpha, horizon, dt in ((0.1, 1500.0, 0.01), (0.01, 5000.0, 0.02)):
        cfg = SandboxConfig(alpha=alpha, dt=dt, horizon=horizon, seed=101, ensemble_size=64)
        burn = 10.0 / alpha
        times, series = run_sandbox(
            sys_q,
            cfg,
            {
                "xx": lambda x, y: x[:, 0] ** 2,
                "yy": lambda x, y: y[:, 0] ** 2,
                "xy": lambda x, y: x[:, 0] * y[:, 0],
            },
            stride=5,
        )
        keep = times >= burn
        for name, target in (("xx", 1.0), ("yy", 1.0), ("xy", 0.0)):
            segs = [series[name][m][keep] for m in range(cfg.ensemble_size)]
            est = float(np.mean(np.concatenate(segs)))
            se = batch_means_se(segs)
            dev = abs(est - target) / se
            _msg(messages, f"alpha={alpha:g} {name}: {est:+.4f} (target {target:+.1f}, {dev:.2f} se)")
            ok &= dev <= 3.0

    sys4 = make_system("quartic", 1)
    cfg = SandboxConfig(alpha=0.1, dt=0.01, horizon=2500.0, seed=13, ensemble_size=32)
    observables = {
        "xx": lambda x, y: x[:, 0] ** 2,
        "yy": lambda x, y: y[:, 0] ** 2,
        "x4": lambda x, y: x[:, 0] ** 4,
    }
    times, series = run_sandbox(sys4, cfg, observables, stride=5)
    keep = times >= 100.0
    for name, fn in observables.items():
        oracle = gibbs_oracle(sys4, fn)
        segs = [series[name][m][keep] for m in range(cfg.ensemble_size)]
        est = float(np.mean(np.concatenate(segs)))
        se = batch_means_se(segs)
        dev = abs(est - oracle) / se
        _msg(messages, f"quartic {name}: {est:.4f} vs oracle {oracle:.4f} ({dev:.2f} se)")
        ok &= dev <= 3.0
    return CriterionResult(9, "sandbox matches the Gibbs density", bool(ok), messages)


# ---------------------------------------------------------------------------
# 10. structural invariants on random fields

def criterion_10() -> CriterionResult:
    messages = []
    grid = GridSpec(16)
    rng = RngStream(555, 0)
    spec = _shell_noise()
    fam = casimir_family(3)
    worst = {
        "hermitian": 0.0,
        "divergence": 0.0,
        "skew": 0.0,
        "mhalf_skew": 0.0,
        "plap_pairing": 0.0,
        "gram_eig": 0.0,
        "riesz_l4": 0.0,
    }
    ok = True
    for i in range(100):
        band = (2, 4, 8, 16)[i % 4]
        theta = random_field(grid, rng, band=band, rms=0.5 + 0.1 * (i % 5))
        l2 = float(spectral.l2_sq(theta))
        scale = max(1.0, float(np.max(np.abs(theta))))

        u1, u2 = spectral.riesz_velocity(theta, grid)
        div = float(np.max(np.abs(spectral.spectral_divergence(u1, u2, grid))))
        worst["divergence"] = max(worst["divergence"], div / (grid.cutoff**2 * scale))

        adv = spectral.advection_term(theta, grid)
        plap = spectral.p_laplacian_term(theta, grid)
        for fld in (adv, plap, u1, u2):
            sym = float(np.max(np.abs(fld - np.conj(fld[::-1, ::-1]))))
            worst["hermitian"] = max(worst["hermitian"], sym / max(1.0, float(np.max(np.abs(fld)))))

        worst["skew"] = max(worst["skew"], abs(float(spectral.inner_l2(theta, adv))) / l2)
        smooth = spectral.fractional_laplacian(theta, grid, -0.5)
        worst["mhalf_skew"] = max(
            worst["mhalf_skew"], abs(float(spectral.inner_l2(smooth, adv))) / l2
        )

        w14 = float(spectral.grad_l4_4(theta, grid))
        pairing = float(spectral.inner_l2(plap, theta))
        worst["plap_pairing"] = max(worst["plap_pairing"], abs(pairing + w14) / w14)

        u1p = spectral.to_physical(u1, grid)
        u2p = spectral.to_physical(u2, grid)
        tp = spectral.to_physical(theta, grid)
        u4 = float(spectral.integrate_physical((u1p**2 + u2p**2) ** 2))
        t4 = float(spectral.integrate_physical(tp**4))
        worst["riesz_l4"] = max(worst["riesz_l4"], u4 / t4)

        if i % 10 == 0:
            gram, _ = casimir_gram(theta, grid, fam, spec)
            eig = np.linalg.eigvalsh(gram)
            floor = -float(np.min(eig)) / max(float(np.max(eig)), 1e-30)
            worst["gram_eig"] = max(worst["gram_eig"], floor)

    checks = [
        ("hermitian", worst["hermitian"], 1e-13),
        ("divergence", worst["divergence"], 1e-12),
        ("skew", worst["skew"], 1e-12),
        ("mhalf_skew", worst["mhalf_skew"], 1e-12),
        ("plap_pairing", worst["plap_pairing"], 1e-10),
        ("gram_eig", worst["gram_eig"], 1e-12),
    ]
    for name, value, tol in checks:
        _msg(messages, f"{name}: worst {value:.3e} (tol {tol:g})")
        ok &= value <= tol
    _msg(messages, f"empirical Riesz L4 bound: max |u|_4^4 / |theta|_4^4 = {worst['riesz_l4']:.3f}")
    return CriterionResult(10, "structural invariants on 100 random fields", bool(ok), messages)


# ---------------------------------------------------------------------------
# 11. byte-identical reproducibility through the command line

def criterion_11() -> CriterionResult:
    import tempfile
    from pathlib import Path

    from .cli import main as cli_main

    messages = []
    config = """
mode: ensemble
out: "{out}"
threads: {threads}
sim:
  alpha: 0.2
  dt: 0.01
  horizon: 0.5
  cutoff: 8
  seed: 21
  ensemble_size: 4
noise:
  rule: shells
  shells: [[1.0, 1.0], [2.0, 0.5]]
observables:
  names: [M, H2_diss, W14_diss]
  stride: 5
ensemble:
  identities: [alp]
"""
    outputs = {}
    with tempfile.TemporaryDirectory() as tmp:
        for label, threads in (("a", 1), ("b", 1), ("threads8", 8)):
            out = Path(tmp) / label
            cfg_path = Path(tmp) / f"{label}.yaml"
            cfg_path.write_text(config.format(out=out, threads=threads))
            code = cli_main(["ensemble", "--config", str(cfg_path)])
            if code != 0:
                return CriterionResult(11, "reproducibility", False, [f"run {label} exited {code}"])
            outputs[label] = {
                p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))
            }
    same_seed = outputs["a"] == outputs["b"]
    same_threads = outputs["a"] == outputs["threads8"]
    _msg(messages, f"identical reruns byte-identical: {same_seed}")
    _msg(messages, f"threads=1 vs threads=8 byte-identical: {same_threads}")
    return CriterionResult(11, "byte-identical reproducibility", bool(same_seed and same_threads), messages)


CRITERIA = [
    (1, "deterministic steady shells", criterion_1),
    (2, "deterministic conservation", criterion_2),
    (3, "linear subsystem exactness", criterion_3),
    (4, "Monte-Carlo L2 balance", criterion_4),
    (5, "stationary dissipation identity", criterion_5),
    (6, "stationary H^-1/2 identity", criterion_6),
    (7, "sweep uniform bound", criterion_7),
    (8, "atom diagnostics", criterion_8),
    (9, "sandbox vs Gibbs", criterion_9),
    (10, "structural invariants", criterion_10),
    (11, "reproducibility", criterion_11),
]


def run_criteria(ids=None, progress=None) -> list[CriterionResult]:
    results = []
    for cid, name, fn in CRITERIA:
        if ids is not None and cid not in ids:
            continue
        t0 = time.perf_counter()
        result = fn()
        wall = time.perf_counter() - t0
        if progress:
            progress(f"{result.line()}  [{wall:.1f}s]")
            for m in result.messages:
                progress(f"    {m}")
        results.append(result)
    return results
