"""Command line orchestration: run modes, persistence, CSV/JSON emission.

Every run writes a JSON manifest (configuration echo, wall time, seeds,
build id) next to its CSV artifacts, including on failure. Floats are
written with 17 significant digits so identical runs produce identical
bytes; ensemble reductions merge in member order, so the output does not
depend on the thread count.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .checkpointing import CheckpointError, read_checkpoint, write_checkpoint
from .config import INIT_STREAM, ConfigError, RunConfig, load_config
from .forcing import RngStream, random_field
from .functionals import ObservableSet, ito_residual
from .hamiltonian import make_system, stationary_compare
from .integrator import (
    DivergenceError,
    StepperState,
    run_ensemble,
    run_trajectory,
    step,
)
from .measure_lab import (
    HistogramSpec,
    casimir_gram,
    default_burn_in,
    histogram_atom_check,
    inviscid_sweep,
    ledger_from_ensemble,
    stationary_residuals,
    weighted_moment_table,
)
from .functionals import casimir_family
from . import spectral

THREADS_ENV = "SQGLAB_THREADS"

SANDBOX_OBSERVABLES = {
    "xx": lambda x, y: x[..., 0] ** 2,
    "yy": lambda x, y: y[..., 0] ** 2,
    "xy": lambda x, y: x[..., 0] * y[..., 0],
    "x4": lambda x, y: x[..., 0] ** 4,
    "y4": lambda x, y: y[..., 0] ** 4,
    "ball_mass": lambda x, y: (np.sum(x * x + y * y, axis=-1) <= 1.0).astype(float),
}


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _build_id() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"sqglab-{__version__}"


def write_manifest(out_dir: Path, cfg: RunConfig, status: str, wall: float, extra: dict | None = None):
    manifest = {
        "config": cfg.echo(),
        "status": status,
        "wall_time_s": wall,
        "build_id": _build_id(),
        "package_version": __version__,
        "numpy_version": np.__version__,
    }
    if extra:
        manifest.update(extra)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def _initial_field(cfg: RunConfig):
    sim = cfg.sim
    if cfg.initial.kind == "zero":
        return None
    stream = RngStream(sim.seed, INIT_STREAM)
    return random_field(sim.grid, stream, band=cfg.initial.band, rms=cfg.initial.rms)


def _burn_in(cfg: RunConfig) -> float:
    if cfg.burn_in is not None:
        return cfg.burn_in
    sim = cfg.sim
    if sim.noise is None or sim.alpha <= 0:
        return 0.0
    forced = sim.noise.basis.lam[sim.noise.amplitudes != 0]
    return default_burn_in(sim.alpha, float(np.min(forced)))


def _observable_set(cfg: RunConfig) -> ObservableSet:
    return ObservableSet(cfg.observables, cfg.sim.grid, cfg.sim.noise)


# ---------------------------------------------------------------------------
# mode runners

def _run_simulate(cfg: RunConfig, out: Path, resume: str | None) -> dict:
    sim = cfg.sim
    state = None
    if resume:
        state, ck_alpha, ck_grid = read_checkpoint(resume)
        if ck_grid.cutoff != sim.cutoff:
            raise CheckpointError(
                f"checkpoint cutoff {ck_grid.cutoff} != configured {sim.cutoff}"
            )
        if not np.isclose(ck_alpha, sim.alpha):
            raise CheckpointError(f"checkpoint alpha {ck_alpha} != configured {sim.alpha}")
    obs = _observable_set(cfg)

    interval = cfg.checkpoint_interval
    ckpt_every = int(round(interval / sim.dt)) if interval > 0 else 0

    if ckpt_every:
        record = _run_with_checkpoints(cfg, obs, state, out, ckpt_every)
    else:
        record = run_trajectory(
            cfg.sim, obs, stride=cfg.stride, initial=_initial_field(cfg), state=state
        )
    write_checkpoint(out / "final_state.ckpt", record.final_state, sim.alpha, sim.grid)
    write_csv(
        out / "observables.csv",
        ["time"] + list(cfg.observables),
        (
            [record.times[i]] + [record.observables[n][i] for n in cfg.observables]
            for i in range(len(record.times))
        ),
    )
    return {"monitors": record.monitors, "final_time": float(record.times[-1])}


def _run_with_checkpoints(cfg: RunConfig, obs, state, out: Path, ckpt_every: int):
    # stepwise driver so intermediate states can be written mid-run
    sim = cfg.sim
    if state is None:
        init = _initial_field(cfg)
        theta = spectral.zero_field(sim.grid) if init is None else init
        state = StepperState(0.0, theta, RngStream(sim.seed, 0))
    n_total = int(round((sim.horizon - state.t) / sim.dt))
    times, rows = [], {name: [] for name in cfg.observables}

    def record(st):
        vals = obs.evaluate(st.theta_hat)
        times.append(st.t)
        for name in cfg.observables:
            rows[name].append(float(vals[name]))

    record(state)
    for k in range(1, n_total + 1):
        state = step(state, sim)
        if k % cfg.stride == 0 or k == n_total:
            record(state)
        if k % ckpt_every == 0:
            write_checkpoint(out / f"state_t{state.t:.6f}.ckpt", state, sim.alpha, sim.grid)
    from .integrator import TrajectoryRecord

    return TrajectoryRecord(
        times=np.asarray(times),
        observables={k_: np.asarray(v) for k_, v in rows.items()},
        monitors=sim.stability_monitor(),
        final_state=state,
    )


def _run_ensemble_mode(cfg: RunConfig, out: Path, threads: int) -> dict:
    sim = cfg.sim
    record = run_ensemble(
        sim, _observable_set(cfg), stride=cfg.stride, initial=_initial_field(cfg), threads=threads
    )
    names = list(cfg.observables)
    header = ["time"]
    for n in names:
        header += [f"{n}_mean", f"{n}_se"]
    rows = []
    for i in range(len(record.times)):
        row = [record.times[i]]
        for n in names:
            row += [record.mean(n)[i], record.se(n)[i]]
        rows.append(row)
    write_csv(out / "ensemble_mean.csv", header, rows)

    reports = []
    for ident in cfg.identities:
        if ident == "cet":
            for q in [1] + list(cfg.qs):
                reports.append(ito_residual("cet", record, sim.noise, sim.alpha, q=q))
        else:
            reports.append(ito_residual(ident, record, sim.noise, sim.alpha))
    write_csv(
        out / "balance_residuals.csv",
        ["identity", "t0", "t1", "lhs", "rhs", "residual", "monte_carlo_se"],
        (
            [r.identity, r.window[0], r.window[1], r.lhs, r.rhs, r.residual, r.monte_carlo_se]
            for r in reports
        ),
    )
    return {"n_failed_members": int(np.sum(record.failed))}


def _run_stationary(cfg: RunConfig, out: Path, threads: int) -> dict:
    sim = cfg.sim
    burn = _burn_in(cfg)
    record = run_ensemble(
        sim,
        _observable_set(cfg),
        stride=cfg.stride,
        initial=_initial_field(cfg),
        threads=threads,
        keep_final=True,
    )
    ledger = ledger_from_ensemble(record, burn)
    summary = ledger.summary()
    write_csv(
        out / "stationary_summary.csv",
        ["observable", "mean", "se", "count"],
        ([n, s["mean"], s["se"], s["count"]] for n, s in summary.items()),
    )
    if sim.noise is not None:
        reports = stationary_residuals(ledger, sim.noise, qs=cfg.qs)
        write_csv(
            out / "stationary_residuals.csv",
            ["identity", "t0", "t1", "lhs", "rhs", "residual", "monte_carlo_se"],
            (
                [r.identity, r.window[0], r.window[1], r.lhs, r.rhs, r.residual, r.monte_carlo_se]
                for r in reports
            ),
        )
        moments = weighted_moment_table(ledger)
        write_csv(
            out / "weighted_moments.csv",
            ["q", "mean", "se"],
            ([q[1:], row["mean"], row["se"]] for q, row in moments.items()),
        )
    atom_rows = []
    for name in cfg.histogram_observables:
        result = histogram_atom_check(ledger.samples(name), HistogramSpec(observable=name))
        write_csv(
            out / f"histogram_{name}.csv",
            ["bin_left", "bin_right", "mass"],
            (
                [result.edges[i], result.edges[i + 1], result.masses[i]]
                for i in range(len(result.masses))
            ),
        )
        atom_rows.append(
            [name, int(result.atom), result.max_masses[0], result.max_masses[1], result.max_masses[2]]
        )
    write_csv(
        out / "atom_checks.csv",
        ["observable", "atom_detected", "max_mass", "max_mass_half", "max_mass_quarter"],
        atom_rows,
    )
    if sim.noise is not None:
        # nondegeneracy diagnostic at the final state of the first member
        final = record.final_theta[0]
        gram, det = casimir_gram(final, sim.grid, casimir_family(3), sim.noise)
        eig = np.linalg.eigvalsh(gram)
        write_csv(
            out / "gram.csv",
            ["i", "j", "value"],
            ([i, j, gram[i, j]] for i in range(gram.shape[0]) for j in range(gram.shape[1])),
        )
        extra = {"gram_det": det, "gram_eigenvalues": [float(e) for e in eig]}
    else:
        extra = {}
    extra["burn_in"] = burn
    extra["n_failed_members"] = int(np.sum(record.failed))
    return extra


def _run_sweep(cfg: RunConfig, out: Path, threads: int) -> dict:
    sim = cfg.sim
    result = inviscid_sweep(
        sim,
        cfg.sweep_alphas,
        cfg.observables,
        stride=cfg.stride,
        threads=threads,
        progress=lambda msg: print(f"# {msg}", file=sys.stderr),
    )
    rows = []
    for row in result.rows:
        if row.error is not None:
            rows.append([row.alpha, row.horizon, "", "", "", "", row.error])
            continue
        for name, s in row.summary.items():
            rows.append([row.alpha, row.horizon, name, s["mean"], s["se"], s["count"], ""])
    write_csv(
        out / "sweep_summary.csv",
        ["alpha", "horizon", "observable", "mean", "se", "count", "error"],
        rows,
    )
    res_rows = []
    mom_rows = []
    for row in result.rows:
        for r in row.residuals:
            res_rows.append([row.alpha, r.identity, r.lhs, r.rhs, r.residual, r.monte_carlo_se])
        for qname, s in row.weighted_moments.items():
            mom_rows.append([row.alpha, qname[1:], s["mean"], s["se"]])
    write_csv(
        out / "sweep_residuals.csv",
        ["alpha", "identity", "lhs", "rhs", "residual", "monte_carlo_se"],
        res_rows,
    )
    write_csv(out / "sweep_moments.csv", ["alpha", "q", "mean", "se"], mom_rows)
    failures = [row.alpha for row in result.rows if row.error is not None]
    return {"failed_alphas": failures}


def _run_sandbox(cfg: RunConfig, out: Path) -> dict:
    system = make_system(cfg.sandbox_system, cfg.sandbox_n)
    observables = {n: SANDBOX_OBSERVABLES[n] for n in cfg.sandbox_observables}
    rows = stationary_compare(
        system, cfg.sandbox, observables, alphas=tuple(cfg.sandbox_alphas) if cfg.sandbox_alphas else None
    )
    write_csv(
        out / "sandbox_compare.csv",
        ["alpha", "observable", "estimate", "se", "oracle", "deviation_in_se"],
        (
            [r.alpha, r.observable, r.estimate, r.se, r.oracle, r.deviation_in_se]
            for r in rows
        ),
    )
    worst = max((r.deviation_in_se for r in rows), default=0.0)
    return {"worst_deviation_in_se": worst}


def _run_verify(cfg: RunConfig, out: Path) -> tuple[dict, int]:
    from .acceptance import run_criteria

    results = run_criteria(cfg.verify_criteria, progress=lambda m: print(m, flush=True))
    write_csv(
        out / "acceptance.csv",
        ["criterion", "name", "passed", "detail"],
        ([r.cid, r.name, int(r.passed), "; ".join(r.messages)] for r in results),
    )
    n_fail = sum(1 for r in results if not r.passed)
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] criterion {r.cid}: {r.name}")
    return {"criteria_failed": n_fail}, (0 if n_fail == 0 else 1)


def execute(cfg: RunConfig, threads: int | None = None, resume: str | None = None) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    threads = threads if threads is not None else cfg.threads
    t0 = time.perf_counter()
    status = "ok"
    extra: dict = {}
    code = 0
    try:
        if cfg.mode == "simulate":
            extra = _run_simulate(cfg, out, resume)
        elif cfg.mode == "ensemble":
            extra = _run_ensemble_mode(cfg, out, threads)
        elif cfg.mode == "stationary":
            extra = _run_stationary(cfg, out, threads)
        elif cfg.mode == "sweep":
            extra = _run_sweep(cfg, out, threads)
        elif cfg.mode == "sandbox":
            extra = _run_sandbox(cfg, out)
        elif cfg.mode == "verify":
            extra, code = _run_verify(cfg, out)
        else:  # pragma: no cover - parse_config guards this
            raise ConfigError("mode", f"unhandled mode {cfg.mode}")
    except DivergenceError as err:
        status = f"failed: {err}"
        code = 2
        if err.snapshot is not None and getattr(err.snapshot, "final_state", None) is not None:
            snap = err.snapshot.final_state
            write_checkpoint(out / "last_finite.ckpt", snap, cfg.sim.alpha, cfg.sim.grid)
            extra["last_checkpoint"] = str(out / "last_finite.ckpt")
    except (ConfigError, CheckpointError) as err:
        status = f"failed: {err}"
        code = 2
    finally:
        write_manifest(out, cfg, status, time.perf_counter() - t0, extra)
    if status != "ok":
        print(status, file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sqglab",
        description="damped-driven surface transport laboratory on the 2-torus",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "ensemble", "stationary", "sweep", "sandbox", "verify"):
        p = sub.add_parser(name)
        if name == "verify":
            p.add_argument("--config", default=None, help="optional config (criteria subset)")
            p.add_argument("--criteria", default=None, help="comma-separated criterion ids")
        else:
            p.add_argument("--config", required=True)
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None, help="override sim seed")
        p.add_argument(
            "--threads",
            type=int,
            default=None,
            help=f"worker threads (default from ${THREADS_ENV} or config)",
        )
        p.add_argument("--resume", default=None, help="checkpoint to resume from")
    args = parser.parse_args(argv)

    if args.command == "verify" and args.config is None:
        cfg = RunConfig(mode="verify", out="runs/verify")
    else:
        try:
            cfg = load_config(args.config)
        except (ConfigError, OSError) as err:
            print(f"config error: {err}", file=sys.stderr)
            return 2
        if cfg.mode != args.command:
            print(
                f"config mode {cfg.mode!r} does not match subcommand {args.command!r}",
                file=sys.stderr,
            )
            return 2
    if args.command == "verify" and args.criteria:
        cfg.verify_criteria = [int(c) for c in args.criteria.split(",")]
    if args.out:
        cfg.out = args.out
    if args.seed is not None and cfg.sim is not None:
        cfg.sim = replace(cfg.sim, seed=args.seed)
    threads = args.threads
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else None
    return execute(cfg, threads=threads, resume=args.resume)


if __name__ == "__main__":
    sys.exit(main())
