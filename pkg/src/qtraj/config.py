"""Experiment configuration: dataclasses, a flat ``section.key = value`` format, presets.

A config file looks like::

    experiment.kind = gaussian
    system.J = 200
    initial.z0 = 53.74, 62.93
    numerics.dt = 0.0001
    run.seed = 7

Floats are written with ``repr`` so that dump/parse round-trips exactly.
Tuples are comma separated.  Unknown keys and bad values raise
:class:`ConfigError`.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field

import numpy as np

from .classical import ClassicalParams, energy_minimum
from .model import SystemParams, build_params, k_from_zg

KINDS = ("classical", "sse", "gaussian", "poincare", "lyapunov", "closure-compare")
SCHEMES = ("euler-maruyama", "strong-1.5")


class ConfigError(ValueError):
    """Schema violation in a configuration."""


@dataclass
class SystemSection:
    m: float = 1.0
    omega: float = 1.0
    b: float = 0.0
    c: float = 0.0
    J: float = 0.5
    k: float = 0.0
    hbar: float = 1.0
    dz: float = 1.0


@dataclass
class InitialSection:
    # physical units; several entries give several trajectories
    z0: tuple = (0.0,)
    p0: tuple = (0.0,)
    theta: float = float(np.pi)
    phi: float = 0.0


@dataclass
class ShellSection:
    energy: float = 0.58
    # "absolute": energy of the scaled Hamiltonian; "minimum": measured above its global minimum
    reference: str = "absolute"


@dataclass
class NumericsSection:
    dt: float = 1e-4
    tau_max: float = 50.0
    dtau: float = 1e-3
    n_grid: int = 256
    grid_span_zg: float = 40.0
    regrid_every: int = 10
    record_every: int = 10
    scheme: str = "strong-1.5"


@dataclass
class LyapunovSection:
    propagator: str = "classical"  # classical, gaussian or both
    count: int = 500
    quantum_count: int = 100
    eps: float = 1e-4
    T: float = 1.0
    N: int = 2000
    quantum_N: int = 500
    quantum_dt: float = 1e-4


@dataclass
class SectionSection:
    tau_max: float = 400.0
    axes: tuple = ("z", "p")
    # periodic-orbit guesses as flat triples z, p, period
    orbit_guesses: tuple = ()
    offsets: tuple = (0.005, 0.01, 0.02)
    quantum_tau: float = 100.0


@dataclass
class CompareSection:
    j_cap: float = 30.0
    allow_large_j: bool = False
    gauss_dt: float = 0.0  # closure step; 0 means numerics.dt


@dataclass
class RunSection:
    seed: int = 0
    out: str = ""
    workers: int = 1
    label: str = ""


@dataclass
class ExperimentConfig:
    kind: str = "classical"
    system: SystemSection = field(default_factory=SystemSection)
    initial: InitialSection = field(default_factory=InitialSection)
    shell: ShellSection = field(default_factory=ShellSection)
    numerics: NumericsSection = field(default_factory=NumericsSection)
    lyapunov: LyapunovSection = field(default_factory=LyapunovSection)
    section: SectionSection = field(default_factory=SectionSection)
    compare: CompareSection = field(default_factory=CompareSection)
    run: RunSection = field(default_factory=RunSection)
    preset: str = ""

    # -- derived views -------------------------------------------------------
    def params(self) -> SystemParams:
        s = self.system
        return SystemParams(s.m, s.omega, s.b, s.c, s.J, s.k, s.hbar, s.dz)

    def classical_params(self) -> ClassicalParams:
        return ClassicalParams.from_system(self.params())

    def absolute_energy(self) -> float:
        E = self.shell.energy
        if self.shell.reference == "minimum":
            E += energy_minimum(self.classical_params())
        return E

    def initial_conditions(self) -> list[tuple[float, float]]:
        z0, p0 = self.initial.z0, self.initial.p0
        if len(p0) == 1:
            p0 = p0 * len(z0)
        return list(zip(z0, p0))

    def validate(self) -> "ExperimentConfig":
        if self.kind not in KINDS:
            raise ConfigError(f"experiment.kind must be one of {KINDS}, got {self.kind!r}")
        try:
            self.params()
        except ValueError as exc:
            raise ConfigError(f"system: {exc}") from exc
        n = self.numerics
        if n.dt <= 0 or n.dtau <= 0 or n.tau_max <= 0:
            raise ConfigError("numerics: dt, dtau and tau_max must be positive")
        if n.scheme not in SCHEMES:
            raise ConfigError(f"numerics.scheme must be one of {SCHEMES}")
        if n.n_grid < 8 or n.n_grid & (n.n_grid - 1):
            raise ConfigError("numerics.n_grid must be a power of two >= 8")
        if n.record_every < 1:
            raise ConfigError("numerics.record_every must be >= 1")
        if len(self.initial.p0) not in (1, len(self.initial.z0)):
            raise ConfigError("initial.p0 must have one entry or as many as initial.z0")
        if self.shell.reference not in ("absolute", "minimum"):
            raise ConfigError("shell.reference must be 'absolute' or 'minimum'")
        ly = self.lyapunov
        if ly.propagator not in ("classical", "gaussian", "both"):
            raise ConfigError("lyapunov.propagator must be classical, gaussian or both")
        if ly.eps <= 0 or ly.T <= 0 or ly.N < 1 or ly.count < 1:
            raise ConfigError("lyapunov: eps, T, N and count must be positive")
        if len(self.section.axes) != 2 or not set(self.section.axes) <= {"tau", "z", "p", "nx", "ny", "nz"}:
            raise ConfigError("section.axes must name two of tau, z, p, nx, ny, nz")
        if len(self.section.orbit_guesses) % 3:
            raise ConfigError("section.orbit_guesses must be triples z, p, period")
        if not (0 <= self.run.seed < 2**64):
            raise ConfigError("run.seed must be an unsigned 64-bit integer")
        if self.compare.gauss_dt < 0:
            raise ConfigError("compare.gauss_dt must be >= 0")
        if self.run.workers < 1:
            raise ConfigError("run.workers must be >= 1")
        return self


# -- text format -----------------------------------------------------------------

_SECTIONS = [f.name for f in dataclasses.fields(ExperimentConfig) if f.default_factory is not dataclasses.MISSING]
_TOP = {"experiment.kind": "kind", "experiment.preset": "preset"}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def _coerce(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw, 0)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if not raw:
                return ()
            items = [x.strip() for x in raw.split(",")]
            if default and isinstance(default[0], str):
                return tuple(items)
            return tuple(float(x) for x in items)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None


def dumps(cfg: ExperimentConfig) -> str:
    lines = [f"experiment.kind = {cfg.kind}"]
    if cfg.preset:
        lines.append(f"experiment.preset = {cfg.preset}")
    for name in _SECTIONS:
        sec = getattr(cfg, name)
        for f in dataclasses.fields(sec):
            lines.append(f"{name}.{f.name} = {_fmt(getattr(sec, f.name))}")
    return "\n".join(lines) + "\n"


def apply_overrides(cfg: ExperimentConfig, pairs: dict[str, str]) -> ExperimentConfig:
    for key, raw in pairs.items():
        if key in _TOP:
            setattr(cfg, _TOP[key], raw.strip())
            continue
        sec_name, _, attr = key.partition(".")
        if sec_name not in _SECTIONS:
            raise ConfigError(f"unknown section in key {key!r}")
        sec = getattr(cfg, sec_name)
        if attr not in {f.name for f in dataclasses.fields(sec)}:
            raise ConfigError(f"unknown key {key!r}")
        setattr(sec, attr, _coerce(raw, getattr(sec, attr), key))
    return cfg


def parse_pairs(text: str) -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, _, val = line.partition("=")
        pairs[key.strip()] = val
    return pairs


def loads(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base if base is not None else ExperimentConfig()
    return apply_overrides(cfg, parse_pairs(text))


# -- presets -----------------------------------------------------------------------

def _system(params: SystemParams) -> SystemSection:
    return SystemSection(**{k: float(v) for k, v in params.to_dict().items() if k in typing.get_type_hints(SystemSection)})


def _fig1() -> ExperimentConfig:
    zg = 1 / np.sqrt(2)
    # I0 = 250 hbar (dz ~ 22 zg); c J = 200 E_g gives c_tilde = 0.4
    p = build_params(1.0, 1.0, np.sqrt(250.0) / zg, 0.5, 0.4, k_from_zg(1 / 20, zg), 1.0)
    cfg = ExperimentConfig(kind="sse", system=_system(p), preset="fig1")
    cfg.initial = InitialSection(z0=(float(38 * zg),), p0=(0.0,), theta=float(np.pi / 2), phi=0.0)
    # spin precession at a = 500 needs a fine classical step
    cfg.numerics = NumericsSection(dt=2e-4, tau_max=10.0, dtau=1e-5, n_grid=2048, grid_span_zg=110.0,
                                   regrid_every=10, record_every=250)
    return cfg


def _fig2() -> ExperimentConfig:
    zg = 1 / np.sqrt(2)
    # dz ~ 45 zg chosen so that I0/J = 5 exactly
    p = build_params(1.0, 1.0, np.sqrt(5 * 200.0) / zg, 200.0, 0.4, k_from_zg(1 / 8, zg), 1.0)
    cfg = ExperimentConfig(kind="gaussian", system=_system(p), preset="fig2")
    cfg.initial = InitialSection(z0=(float(76 * zg), float(89 * zg)), p0=(0.0,), theta=float(np.pi), phi=0.0)
    cfg.numerics = NumericsSection(dt=1e-4, tau_max=100.0, record_every=10)
    return cfg


def _fig3() -> ExperimentConfig:
    zg = 1 / np.sqrt(2)
    J = 2000.0
    p = build_params(1.0, 1.0, np.sqrt(2.5 * J) / zg, J, 0.4, k_from_zg(1 / 8, zg), 1.0)
    cfg = ExperimentConfig(kind="poincare", system=_system(p), preset="fig3")
    cfg.shell = ShellSection(energy=0.08, reference="minimum")
    cfg.section = SectionSection(
        tau_max=400.0,
        orbit_guesses=(-0.87, 0.0, 1.0, 0.80, 0.0, 1.0, -1.27, 0.0, 3.0),
        offsets=(0.005, 0.01, 0.02),
        quantum_tau=100.0,
    )
    cfg.numerics = NumericsSection(dt=1e-4, dtau=1e-3, record_every=10)
    return cfg


def _fig4() -> ExperimentConfig:
    cfg = _fig2()
    cfg.preset = "fig4"
    return cfg


def _fig5() -> ExperimentConfig:
    cfg = _fig2()
    cfg.kind = "lyapunov"
    cfg.preset = "fig5"
    cfg.shell = ShellSection(energy=0.58, reference="absolute")
    # at dt = 1e-4 a few chaotic fiducials push the singular spin eigenvalue (scaled) to -9e-11
    cfg.lyapunov = LyapunovSection(propagator="both", count=500, quantum_count=100,
                                   eps=1e-4, T=1.0, N=2000, quantum_N=500, quantum_dt=5e-5)
    return cfg


def _closure() -> ExperimentConfig:
    """J = 20 stand-in for the full-SSE against closure check, same scaled dynamics as fig2."""
    zg = 1 / np.sqrt(2)
    J = 20.0
    p = build_params(1.0, 1.0, np.sqrt(5 * J) / zg, J, 0.4, k_from_zg(1 / 8, zg), 1.0)
    cfg = ExperimentConfig(kind="closure-compare", system=_system(p), preset="closure")
    # regular launch point of fig2 in scaled units: z0 = 76 zg out of dz = sqrt(2000) zg
    cfg.initial = InitialSection(z0=(float(76 / np.sqrt(2000.0) * p.dz),), p0=(0.0,), theta=float(np.pi), phi=0.0)
    # five trap periods; the closure side runs at dt/2 on the same Wiener path
    cfg.numerics = NumericsSection(dt=2e-4, tau_max=float(10 * np.pi), n_grid=256, grid_span_zg=40.0,
                                   regrid_every=10, record_every=500)
    cfg.compare = CompareSection(gauss_dt=1e-4)
    return cfg


PRESETS = {"fig1": _fig1, "fig2": _fig2, "fig3": _fig3, "fig4": _fig4, "fig5": _fig5, "closure": _closure}


def preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
