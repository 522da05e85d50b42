"""Experiment configuration: INI-style sections of key = value pairs.

Errors point at the offending line of the file.  Cross-field checks
(mode counts, time step resolution, the noise amplitude constraint) run
at load time.
"""

from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .control import FrequencyCut, SqueezeSetup
from .dynamics import CutoffProfile, DampingProfile, SolverConfig
from .noise import NoiseSpec, check_amplitude_constraint, default_amplitudes
from .spectral import Domain


class ConfigError(ValueError):
    """Invalid configuration, optionally anchored at a file line."""

    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source is not None and line is not None:
            where = f"{source}:{line}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


@dataclass(frozen=True)
class DomainBlock:
    dim: int = 1
    lengths: tuple = (np.pi,)
    M: int = 32
    grid_factor: int = 4


@dataclass(frozen=True)
class ProfileBlock:
    level: float = 1.0
    depth: float = 0.5
    width: float = 0.1
    side: str = "right"
    kind: str = "strip"


@dataclass(frozen=True)
class SolverBlock:
    dt: float = 0.01


@dataclass(frozen=True)
class NoiseBlock:
    T: float = 10.0
    B0: float = 1.0
    N: int = 4
    density: str = "epanechnikov"
    b_rule: str = "geometric"
    fill: float = 0.9
    b: tuple = ()


@dataclass(frozen=True)
class ControlBlock:
    m: int = 4
    N: int = 4
    eps: float = 0.25
    s: float = 0.2
    d: float = 0.0


@dataclass(frozen=True)
class CouplingBlock:
    delta: float = 0.0
    r: float = 0.5
    mode: str = "constant"
    m: int = 2
    N: int = 2
    draws: int = 2000


@dataclass(frozen=True)
class RunBlock:
    seed: int = 0
    n_steps: int = 200
    ensemble: int = 64
    out: str = "out"
    init_mode: int = 1
    amplitude: float = 1.0


SECTIONS = {
    "domain": DomainBlock,
    "damping": ProfileBlock,
    "cutoff": ProfileBlock,
    "solver": SolverBlock,
    "noise": NoiseBlock,
    "control": ControlBlock,
    "coupling": CouplingBlock,
    "run": RunBlock,
}

# alternative spellings accepted in files
ALIASES = {("damping", "a0"): "level", ("cutoff", "chi0"): "level", ("domain", "length"): "lengths"}


@dataclass(frozen=True)
class ExperimentConfig:
    domain: DomainBlock = field(default_factory=DomainBlock)
    damping: ProfileBlock = field(default_factory=ProfileBlock)
    cutoff: ProfileBlock = field(default_factory=ProfileBlock)
    solver: SolverBlock = field(default_factory=SolverBlock)
    noise: NoiseBlock = field(default_factory=NoiseBlock)
    control: ControlBlock = field(default_factory=ControlBlock)
    coupling: CouplingBlock = field(default_factory=CouplingBlock)
    run: RunBlock = field(default_factory=RunBlock)

    # -- derived objects --------------------------------------------------
    def make_domain(self) -> Domain:
        d = self.domain
        return Domain(d.dim, d.lengths, d.M, d.grid_factor)

    def make_damping(self) -> DampingProfile:
        p = self.damping
        return DampingProfile(p.level, p.depth, p.width, p.side, p.kind)

    def make_cutoff(self) -> CutoffProfile:
        p = self.cutoff
        return CutoffProfile(p.level, p.depth, p.width, p.side, p.kind)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(self.solver.dt)

    def amplitudes(self, domain: Domain | None = None) -> np.ndarray:
        nb = self.noise
        domain = domain or self.make_domain()
        if nb.b_rule == "explicit":
            return np.array(nb.b, dtype=float)
        return default_amplitudes(domain, nb.T, nb.B0, nb.N, fill=nb.fill)

    def make_noise(self, domain: Domain | None = None) -> NoiseSpec:
        domain = domain or self.make_domain()
        nb = self.noise
        return NoiseSpec(domain, nb.T, self.amplitudes(domain), self.make_cutoff(), nb.N, nb.density)

    def squeeze_setup(self, coupling: bool = False) -> SqueezeSetup:
        c = self.coupling if coupling else self.control
        return SqueezeSetup(self.make_domain(), self.make_damping(), self.make_cutoff(), self.noise.T,
                            self.solver.dt, FrequencyCut(c.m, c.N))

    def override(self, section: str, key: str, value: str) -> "ExperimentConfig":
        block = getattr(self, section)
        key = _field_name(block, key)
        return replace(self, **{section: replace(block, **{key: _coerce(block, key, value)})})

    # -- serialization ----------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for name in SECTIONS:
            block = getattr(self, name)
            lines.append(f"[{name}]")
            for f in fields(block):
                lines.append(f"{f.name} = {_format(getattr(block, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def checksum(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(" ".join(repr(float(x)) for x in row) for row in value)
        return ", ".join(repr(float(x)) for x in value)
    return str(value)


def _field_name(block, key: str) -> str:
    """Case-insensitive field lookup (file keys arrive lower-cased)."""
    for f in fields(block):
        if f.name.lower() == key.lower():
            return f.name
    raise KeyError(key)


def _coerce(block, key: str, raw: str):
    default = getattr(type(block)(), key)
    raw = raw.strip()
    if key == "b":
        if not raw:
            return ()
        rows = [r for r in raw.split(";") if r.strip()]
        return tuple(tuple(float(x) for x in re.split(r"[\s,]+", r.strip())) for r in rows)
    if isinstance(default, bool):
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"expected a boolean, got {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(float(x) for x in re.split(r"[\s,]+", raw) if x)
    return raw


def _line_index(text: str) -> dict:
    """(section, key) -> 1-based line number, plus (section, None) for headers."""
    index = {}
    section = None
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#") or s.startswith(";"):
            continue
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            index.setdefault((section, None), i)
            continue
        if "=" in s and section is not None:
            key = s.split("=", 1)[0].strip().lower()
            index[(section, key)] = i
    return index


def parse_config(text: str, source: str | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=("#",))
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], getattr(exc, "lineno", None), source) from None
    lines = _line_index(text)
    cfg = ExperimentConfig()
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]", lines.get((section, None)), source)
        for key, raw in parser.items(section):
            name = ALIASES.get((section, key), key)
            try:
                cfg = cfg.override(section, name, raw)
            except KeyError:
                raise ConfigError(f"unknown key {key!r} in [{section}]", lines.get((section, key)), source) from None
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {exc}", lines.get((section, key)), source) from None
    validate(cfg, lines, source)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(path.read_text(encoding="utf-8"), str(path))


def validate(cfg: ExperimentConfig, lines: dict | None = None, source: str | None = None) -> ExperimentConfig:
    """Cross-field checks; each failure names the violated condition."""
    lines = lines or {}
    at = lambda sec, key: lines.get((sec, key), lines.get((sec, None)))
    try:
        domain = cfg.make_domain()
    except ValueError as exc:
        raise ConfigError(str(exc), at("domain", "m"), source) from None
    for name in ("damping", "cutoff"):
        try:
            getattr(cfg, "make_" + name)()
        except ValueError as exc:
            raise ConfigError(f"[{name}] {exc}", at(name, "kind"), source) from None
    n = domain.n_modes
    if cfg.noise.N > n:
        raise ConfigError(f"noise block N={cfg.noise.N} exceeds the mode count {n} (need N <= M)", at("noise", "n"), source)
    if cfg.control.N > n or cfg.control.m > n:
        raise ConfigError(f"control block exceeds the mode count {n} (need m, N <= M)", at("control", "n"), source)
    if cfg.coupling.N > cfg.noise.N or cfg.coupling.m > n:
        raise ConfigError("coupling control block must fit in the noise block (need coupling N <= noise N)",
                          at("coupling", "n"), source)
    limit = 0.5 / np.sqrt(domain.eigenvalues[-1])
    if not 0 < cfg.solver.dt <= limit * (1 + 1e-12):
        raise ConfigError(f"time step violates the resolution bound dt <= 0.5/sqrt(lambda_max) = {limit:.6g}",
                          at("solver", "dt"), source)
    if cfg.noise.T <= 0:
        raise ConfigError("noise horizon T must be positive", at("noise", "t"), source)
    if not 0 < cfg.coupling.r < 1:
        raise ConfigError("coupling rate r must lie in (0, 1)", at("coupling", "r"), source)
    if cfg.coupling.mode not in ("constant", "pathwise"):
        raise ConfigError("coupling mode must be constant or pathwise", at("coupling", "mode"), source)
    if not 0 < cfg.control.eps < 1:
        raise ConfigError("control eps must lie in (0, 1)", at("control", "eps"), source)
    if cfg.noise.b_rule not in ("geometric", "explicit"):
        raise ConfigError("noise b_rule must be geometric or explicit", at("noise", "b_rule"), source)
    try:
        spec = cfg.make_noise(domain)
    except ValueError as exc:
        raise ConfigError(f"noise amplitudes: {exc}", at("noise", "b"), source) from None
    lhs, ok = check_amplitude_constraint(spec, cfg.noise.B0)
    if not ok:
        raise ConfigError(
            f"noise amplitude constraint violated: sum b_jk lambda_j^(2/7) ||alpha_k||_inf = {lhs:.6g} "
            f"> B0 sqrt(T) = {cfg.noise.B0 * np.sqrt(cfg.noise.T):.6g}",
            at("noise", "b") if cfg.noise.b_rule == "explicit" else at("noise", "b0"), source)
    if not spec.nondegenerate():
        raise ConfigError("amplitudes b_jk must be nonzero on the active N x N block",
                          at("noise", "b"), source)
    return cfg


def apply_overrides(cfg: ExperimentConfig, overrides) -> ExperimentConfig:
    """Apply ``section.key=value`` strings, then revalidate."""
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        key = key.strip().lower()
        if section not in SECTIONS:
            raise ConfigError(f"override names unknown section {section!r}")
        key = ALIASES.get((section, key), key)
        try:
            cfg = cfg.override(section, key, value)
        except KeyError:
            raise ConfigError(f"override names unknown key {section}.{key}") from None
        except ValueError as exc:
            raise ConfigError(f"bad override value for {section}.{key}: {exc}") from None
    return validate(cfg)
