"""Run configuration: YAML documents with nested sections, validated hard.

Every run is described by a single document; defaults are materialized at
parse time so the manifest can echo the exact configuration that executed.
Parse errors name the offending key path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
import yaml

from .forcing import make_noise, noise_from_shells
from .functionals import ConfigurationError, ObservableSet
from .integrator import SimConfig
from .hamiltonian import SandboxConfig
from .spectral import GridSpec


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


MODES = ("simulate", "ensemble", "stationary", "sweep", "sandbox", "verify")

DEFAULT_OBSERVABLES = ["M", "E_mhalf", "H2_diss", "W14_diss"]
STATIONARY_OBSERVABLES = [
    "M",
    "E_mhalf",
    "H2_diss",
    "W14_diss",
    "I_diss",
    "I_diss_minus",
    "noise_qv",
]

# reserved stream id for initial-condition draws (ensemble members use 0..E-1)
INIT_STREAM = 1 << 48


@dataclass
class InitialSpec:
    kind: str = "zero"  # "zero" | "random_band"
    band: int = 4
    rms: float = 1.0


@dataclass
class RunConfig:
    mode: str
    out: str = "runs/out"
    sim: SimConfig | None = None
    noise_echo: dict = field(default_factory=dict)
    initial: InitialSpec = field(default_factory=InitialSpec)
    observables: list[str] = field(default_factory=lambda: list(DEFAULT_OBSERVABLES))
    stride: int = 1
    burn_in: float | None = None
    histogram_observables: list[str] = field(default_factory=lambda: ["M", "E_mhalf"])
    qs: list[int] = field(default_factory=lambda: [2, 3])
    identities: list[str] = field(default_factory=lambda: ["alp"])
    sweep_alphas: list[float] | None = None
    sandbox: SandboxConfig | None = None
    sandbox_system: str = "quadratic"
    sandbox_n: int = 1
    sandbox_alphas: list[float] | None = None
    sandbox_observables: list[str] = field(default_factory=lambda: ["xx", "yy", "xy"])
    checkpoint_interval: float = 0.0
    threads: int = 1
    verify_criteria: list[int] | None = None

    def echo(self) -> dict:
        """Fully materialized configuration for the run manifest."""
        d: dict[str, Any] = {"mode": self.mode, "out": self.out, "threads": self.threads}
        if self.sim is not None:
            d["sim"] = {
                "alpha": self.sim.alpha,
                "dt": self.sim.dt,
                "horizon": self.sim.horizon,
                "cutoff": self.sim.cutoff,
                "seed": self.sim.seed,
                "ensemble_size": self.sim.ensemble_size,
                "padding_factor": self.sim.padding_factor,
                "enable_advection": self.sim.enable_advection,
                "enable_p_laplacian": self.sim.enable_p_laplacian,
                "deterministic_scheme": self.sim.deterministic_scheme,
                "stochastic_scheme": self.sim.stochastic_scheme,
            }
            d["noise"] = dict(self.noise_echo) if self.noise_echo else None
            d["initial"] = {
                "kind": self.initial.kind,
                "band": self.initial.band,
                "rms": self.initial.rms,
            }
            d["observables"] = {"names": list(self.observables), "stride": self.stride}
            d["stationary"] = {
                "burn_in": self.burn_in,
                "histogram": list(self.histogram_observables),
                "qs": list(self.qs),
            }
            d["output"] = {"checkpoint_interval": self.checkpoint_interval}
        if self.sweep_alphas is not None:
            d["sweep"] = {"alphas": list(self.sweep_alphas)}
        if self.sandbox is not None:
            d["sandbox"] = {
                "system": self.sandbox_system,
                "n": self.sandbox_n,
                "alpha": self.sandbox.alpha,
                "alphas": self.sandbox_alphas,
                "dt": self.sandbox.dt,
                "horizon": self.sandbox.horizon,
                "seed": self.sandbox.seed,
                "ensemble_size": self.sandbox.ensemble_size,
                "observables": list(self.sandbox_observables),
            }
        if self.mode == "verify":
            d["verify"] = {"criteria": self.verify_criteria}
        return d


def _need(section: dict, key: str, path: str):
    if key not in section:
        raise ConfigError(f"{path}.{key}", "required key is missing")
    return section[key]


def _as_float(value, path: str, positive=False, nonnegative=False) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected a number, got {value!r}") from None
    if positive and v <= 0:
        raise ConfigError(path, f"must be positive, got {v}")
    if nonnegative and v < 0:
        raise ConfigError(path, f"must be nonnegative, got {v}")
    return v


def _as_int(value, path: str, minimum=None) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    v = int(value)
    if minimum is not None and v < minimum:
        raise ConfigError(path, f"must be >= {minimum}, got {v}")
    return v


def _build_noise(section: dict | None, cutoff: int):
    if section is None:
        return None, {}
    if not isinstance(section, dict):
        raise ConfigError("noise", "expected a mapping")
    rule = section.get("rule", "inverse_lambda")
    echo = {"rule": rule}
    if rule == "shells":
        shells = _need(section, "shells", "noise")
        try:
            pairs = [(float(l), float(a)) for l, a in shells]
        except (TypeError, ValueError):
            raise ConfigError("noise.shells", "expected a list of [lambda, amplitude] pairs") from None
        echo["shells"] = pairs
        spec = noise_from_shells(pairs)
    elif rule == "per_mode":
        from .forcing import NoiseSpec, enumerate_basis

        lam_max = _as_float(_need(section, "lambda_max", "noise"), "noise.lambda_max", positive=True)
        amps = _need(section, "amplitudes", "noise")
        basis = enumerate_basis(lam_max)
        try:
            a = np.asarray([float(v) for v in amps], dtype=float)
        except (TypeError, ValueError):
            raise ConfigError("noise.amplitudes", "expected a list of numbers") from None
        if a.shape != (len(basis),):
            raise ConfigError(
                "noise.amplitudes",
                f"lambda_max {lam_max:g} enumerates {len(basis)} basis functions, got {a.shape[0]} amplitudes",
            )
        echo.update({"lambda_max": lam_max, "amplitudes": [float(v) for v in a]})
        spec = NoiseSpec(basis, a)
    elif rule in ("inverse_lambda", "constant"):
        lam_max = _as_float(section.get("lambda_max", (cutoff / 2) ** 2), "noise.lambda_max", positive=True)
        lam_min = _as_float(section.get("lambda_min", 1.0), "noise.lambda_min", positive=True)
        scale = _as_float(section.get("scale", 1.0), "noise.scale", nonnegative=True)
        echo.update({"lambda_max": lam_max, "lambda_min": lam_min, "scale": scale})
        spec = make_noise(lam_max, rule, scale=scale, lambda_min=lam_min)
    else:
        raise ConfigError("noise.rule", f"unknown rule {rule!r}")
    forced = spec.basis.lam[spec.amplitudes != 0]
    if forced.size == 0:
        raise ConfigError("noise", "amplitude rule forces no modes")
    if np.max(np.abs(spec.basis.kx)) > cutoff or np.max(np.abs(spec.basis.ky)) > cutoff:
        raise ConfigError("noise.lambda_max", "forcing band extends beyond the cutoff")
    echo["a0"] = float(np.sum(spec.amplitudes**2))
    return spec, echo


def parse_config(text: str) -> RunConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError("<document>", f"not parseable YAML: {err}") from None
    if not isinstance(doc, dict):
        raise ConfigError("<document>", "top level must be a mapping")

    mode = _need(doc, "mode", "<document>")
    if mode not in MODES:
        raise ConfigError("mode", f"unknown mode {mode!r}; choose from {MODES}")

    cfg = RunConfig(mode=mode, out=str(doc.get("out", "runs/out")))
    cfg.threads = _as_int(doc.get("threads", 1), "threads", minimum=1)

    if mode == "sandbox":
        _parse_sandbox(doc, cfg)
        return cfg
    if mode == "verify":
        crit = doc.get("verify", {}).get("criteria") if isinstance(doc.get("verify"), dict) else None
        if crit is not None:
            cfg.verify_criteria = [_as_int(c, "verify.criteria[]", minimum=1) for c in crit]
        return cfg

    sim = doc.get("sim")
    if not isinstance(sim, dict):
        raise ConfigError("sim", "required section is missing")
    alpha = _as_float(_need(sim, "alpha", "sim"), "sim.alpha", nonnegative=True)
    dt = _as_float(_need(sim, "dt", "sim"), "sim.dt", positive=True)
    horizon = _as_float(_need(sim, "horizon", "sim"), "sim.horizon", nonnegative=True)
    cutoff = _as_int(_need(sim, "cutoff", "sim"), "sim.cutoff", minimum=1)
    seed = _as_int(sim.get("seed", 0), "sim.seed")
    ensemble = _as_int(sim.get("ensemble_size", 1), "sim.ensemble_size", minimum=1)
    padding = _as_int(sim.get("padding_factor", 2), "sim.padding_factor", minimum=2)

    noise, noise_echo = _build_noise(doc.get("noise"), cutoff)
    cfg.noise_echo = noise_echo
    try:
        cfg.sim = SimConfig(
            alpha=alpha,
            dt=dt,
            horizon=horizon,
            cutoff=cutoff,
            noise=noise,
            enable_advection=bool(sim.get("enable_advection", True)),
            enable_p_laplacian=bool(sim.get("enable_p_laplacian", True)),
            seed=seed,
            ensemble_size=ensemble,
            padding_factor=padding,
        )
    except ValueError as err:
        raise ConfigError("sim", str(err)) from None

    init = doc.get("initial", {}) or {}
    kind = init.get("kind", "zero")
    if kind not in ("zero", "random_band"):
        raise ConfigError("initial.kind", f"unknown initial condition {kind!r}")
    cfg.initial = InitialSpec(
        kind=kind,
        band=_as_int(init.get("band", min(cutoff, 4)), "initial.band", minimum=1),
        rms=_as_float(init.get("rms", 1.0), "initial.rms", nonnegative=True),
    )
    if cfg.initial.band > cutoff:
        raise ConfigError("initial.band", "band exceeds the cutoff")

    obs = doc.get("observables", {}) or {}
    names = obs.get("names")
    if names is None:
        names = list(STATIONARY_OBSERVABLES) if mode in ("stationary", "sweep") else list(DEFAULT_OBSERVABLES)
        if noise is None:
            names = [n for n in names if n != "noise_qv"]
    cfg.observables = [str(n) for n in names]
    cfg.stride = _as_int(obs.get("stride", 1), "observables.stride", minimum=1)
    try:
        ObservableSet(cfg.observables, GridSpec(cutoff, padding), noise)
    except ConfigurationError as err:
        raise ConfigError("observables.names", str(err)) from None

    stat = doc.get("stationary", {}) or {}
    if "burn_in" in stat and stat["burn_in"] is not None:
        cfg.burn_in = _as_float(stat["burn_in"], "stationary.burn_in", nonnegative=True)
    cfg.histogram_observables = [str(n) for n in stat.get("histogram", ["M", "E_mhalf"])]
    if mode in ("stationary", "sweep"):
        for name in cfg.histogram_observables:
            if name not in cfg.observables:
                raise ConfigError("stationary.histogram", f"{name!r} is not a recorded observable")
    cfg.qs = [_as_int(q, "stationary.qs[]", minimum=2) for q in stat.get("qs", [2, 3])]

    ens = doc.get("ensemble", {}) or {}
    cfg.identities = [str(i) for i in ens.get("identities", ["alp"])]
    for ident in cfg.identities:
        if ident not in ("alp", "hmj", "cet"):
            raise ConfigError("ensemble.identities", f"unknown identity {ident!r}")

    if mode == "sweep":
        sweep = doc.get("sweep")
        if not isinstance(sweep, dict):
            raise ConfigError("sweep", "required section is missing")
        alphas = _need(sweep, "alphas", "sweep")
        cfg.sweep_alphas = [_as_float(a, "sweep.alphas[]", positive=True) for a in alphas]
        if any(b >= a for a, b in zip(cfg.sweep_alphas, cfg.sweep_alphas[1:])):
            raise ConfigError("sweep.alphas", "must be strictly decreasing")
        if noise is None:
            raise ConfigError("noise", "a sweep needs forced dynamics")

    out = doc.get("output", {}) or {}
    cfg.checkpoint_interval = _as_float(
        out.get("checkpoint_interval", 0.0), "output.checkpoint_interval", nonnegative=True
    )
    return cfg


def _parse_sandbox(doc: dict, cfg: RunConfig):
    sb = doc.get("sandbox")
    if not isinstance(sb, dict):
        raise ConfigError("sandbox", "required section is missing")
    cfg.sandbox_system = str(sb.get("system", "quadratic"))
    if cfg.sandbox_system not in ("quadratic", "quartic", "plateau"):
        raise ConfigError("sandbox.system", f"unknown system {cfg.sandbox_system!r}")
    cfg.sandbox_n = _as_int(sb.get("n", 1), "sandbox.n", minimum=1)
    try:
        cfg.sandbox = SandboxConfig(
            alpha=_as_float(_need(sb, "alpha", "sandbox"), "sandbox.alpha", nonnegative=True),
            dt=_as_float(_need(sb, "dt", "sandbox"), "sandbox.dt", positive=True),
            horizon=_as_float(_need(sb, "horizon", "sandbox"), "sandbox.horizon", positive=True),
            seed=_as_int(sb.get("seed", 0), "sandbox.seed"),
            ensemble_size=_as_int(sb.get("ensemble_size", 16), "sandbox.ensemble_size", minimum=1),
        )
    except ValueError as err:
        raise ConfigError("sandbox", str(err)) from None
    if "alphas" in sb and sb["alphas"] is not None:
        cfg.sandbox_alphas = [
            _as_float(a, "sandbox.alphas[]", positive=True) for a in sb["alphas"]
        ]
    names = sb.get("observables", ["xx", "yy", "xy"])
    from .cli import SANDBOX_OBSERVABLES

    for n in names:
        if n not in SANDBOX_OBSERVABLES:
            raise ConfigError(
                "sandbox.observables", f"unknown observable {n!r}; choose from {sorted(SANDBOX_OBSERVABLES)}"
            )
    cfg.sandbox_observables = [str(n) for n in names]


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
