"""INI run configuration: strict parsing, line-anchored validation, explicit defaults."""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .errors import ConfigError, DiracBohmError
from .evolve import BOUNDARIES, METHODS, EvolutionConfig
from .fields import (
    DEFAULT_NODE_THRESHOLD,
    PhysicalParams,
    Potential,
    SpatialGrid,
    WaveField,
    coherent_state,
    gaussian_packet,
    two_packet_superposition,
)
from .propagator import WINDOWS

TASKS = {
    "evolve": "evolve the initial state; snapshot CSVs and norm/energy drift report",
    "trajectories": "Bohm trajectories seeded from |psi_0|^2; CSV, SVG, non-crossing and equivariance verdicts",
    "propagate": "compose short-time kernels and apply them; comparison with the exact free evolution",
    "ensemble": "Nelson path ensemble; binned current velocity vs the mean momentum of psi",
    "picture-check": "conjugation identities of exp(iS/hbar) and classical endpoint relations",
    "verify": "quantum Hamilton-Jacobi and continuity residuals with a refinement study",
}


def _floats(text: str) -> tuple[float, ...]:
    items = [t for t in re.split(r"[,\s]+", text.strip()) if t]
    return tuple(float(t) for t in items)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(*options):
    def conv(text):
        t = text.strip()
        if t not in options:
            raise ValueError(f"must be one of {', '.join(options)}; got {t!r}")
        return t
    return conv


def _positive(conv):
    def check(text):
        v = conv(text)
        if not v > 0:
            raise ValueError(f"must be positive; got {v}")
        return v
    return check


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise ValueError(f"must be >= 0; got {v}")
    return v


_pos_float = _positive(float)
_pos_int = _positive(int)

# section -> key -> (converter, default)
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "run": {
        "task": (_choice(*TASKS), "verify"),
        "output_dir": (str, "out"),
        "seed": (_nonneg_int, 0),
        "threads": (_pos_int, 1),
    },
    "grid": {
        "q_min": (float, -20.0),
        "q_max": (float, 20.0),
        "n_points": (int, 1024),
    },
    "physics": {
        "hbar": (_pos_float, 1.0),
        "mass": (_pos_float, 1.0),
    },
    "state": {
        "kind": (_choice("gaussian", "two-packet", "coherent"), "gaussian"),
        "center": (float, 0.0),
        "width": (_pos_float, 1.0),
        "p0": (float, 0.0),
        "sep": (_pos_float, 10.0),
        "p0a": (float, 0.0),
        "p0b": (float, 0.0),
        "omega": (_pos_float, 1.0),
        "displacement": (float, 0.0),
        "node_threshold": (_pos_float, DEFAULT_NODE_THRESHOLD),
    },
    "potential": {
        "kind": (_choice("free", "harmonic", "barrier", "custom"), "free"),
        "omega": (_pos_float, 1.0),
        "center": (float, 0.0),
        "height": (float, 0.0),
        "width": (_pos_float, 1.0),
        "table_q": (_floats, ()),
        "table_v": (_floats, ()),
    },
    "evolution": {
        "dt": (_pos_float, 1e-3),
        "n_steps": (_nonneg_int, 1000),
        "method": (_choice(*METHODS), "split"),
        "boundary": (_choice(*BOUNDARIES), "periodic"),
        "save_every": (_pos_int, 1),
        "write_every": (_nonneg_int, 0),
    },
    "trajectories": {
        "n_traj": (_nonneg_int, 100),
        "substeps": (_pos_int, 4),
        "equivariance_tol": (_pos_float, 0.05),
        "bin_width": (_pos_float, 0.2),
        "svg": (_bool, True),
    },
    "propagate": {
        "epsilon": (_pos_float, 0.01),
        "n_slices": (_pos_int, 100),
        "window": (_choice(*WINDOWS), "taper"),
        "save_every": (_pos_int, 10),
        "tolerance": (_pos_float, 1e-3),
    },
    "ensemble": {
        "n_paths": (_pos_int, 100000),
        "bins": (_pos_int, 4),
        "min_count": (_pos_int, 200),
        "times": (_floats, ()),
        "n_sigma": (_pos_float, 3.0),
        "write_paths": (_nonneg_int, 100),
        "thin": (_pos_int, 10),
        "reintegrate_seed": (float, 0.0),
    },
    "picture": {
        "phase": (_choice("state", "linear", "classical"), "state"),
        "momentum": (float, 0.0),
        "q": (float, 1.0),
        "p": (float, 0.0),
        "t": (_pos_float, 1.0),
        "tolerance": (_pos_float, 1e-10),
        "classical_tolerance": (_pos_float, 1e-6),
    },
    "verify": {
        "source": (_choice("evolved", "analytic"), "evolved"),
        "times": (_floats, (1.0,)),
        "refine": (_bool, True),
        "tolerance": (_pos_float, 1e-4),
        "ratio_low": (_pos_float, 3.5),
        "ratio_high": (_pos_float, 4.5),
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``values[section][key]`` holds every key, defaults included."""

    values: dict
    source_lines: dict
    path: str | None = None

    def section(self, name: str) -> dict:
        return dict(self.values[name])

    @property
    def task(self) -> str:
        return self.values["run"]["task"]

    def grid(self) -> SpatialGrid:
        g = self.values["grid"]
        return SpatialGrid(g["q_min"], g["q_max"], g["n_points"])

    def params(self) -> PhysicalParams:
        p = self.values["physics"]
        return PhysicalParams(p["hbar"], p["mass"])

    def potential(self) -> Potential:
        p = self.values["potential"]
        kind = p["kind"]
        if kind == "free":
            return Potential.free()
        if kind == "harmonic":
            return Potential.harmonic(p["omega"], self.params().mass, p["center"])
        if kind == "barrier":
            return Potential.barrier(p["height"], p["width"], p["center"])
        return Potential.custom(p["table_q"], p["table_v"])

    def initial_state(self, grid: SpatialGrid | None = None) -> WaveField:
        s = self.values["state"]
        grid = grid or self.grid()
        params = self.params()
        if s["kind"] == "gaussian":
            return gaussian_packet(grid, params, s["center"], s["width"], s["p0"])
        if s["kind"] == "two-packet":
            return two_packet_superposition(grid, params, s["sep"], s["width"], s["p0a"], s["p0b"])
        return coherent_state(grid, params, s["omega"], s["displacement"])

    def evolution(self) -> EvolutionConfig:
        e = self.values["evolution"]
        return EvolutionConfig(e["dt"], e["n_steps"], e["method"], e["boundary"], e["save_every"])

    def echo(self) -> dict:
        return {sec: dict(keys) for sec, keys in self.values.items()}


_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]\s*$")
_KEY_RE = re.compile(r"^([^=:\s][^=:]*?)\s*[=:]")


def _scan_lines(text: str) -> dict:
    """Map ``(section, key)`` to its line number, failing on duplicates with both lines."""
    where: dict[tuple[str, str], int] = {}
    sections: dict[str, int] = {}
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        m = _SECTION_RE.match(line)
        if m:
            current = m.group(1).strip()
            if current in sections:
                raise ConfigError(f"duplicate section [{current}]", lines=(sections[current], lineno),
                                  code="DuplicateSection")
            sections[current] = lineno
            continue
        if line[0].isspace():
            continue  # continuation line
        m = _KEY_RE.match(line)
        if m and current is not None:
            key = m.group(1).strip().lower()
            if (current, key) in where:
                raise ConfigError(f"duplicate key {key!r} in [{current}]",
                                  lines=(where[(current, key)], lineno), code="DuplicateKey")
            where[(current, key)] = lineno
    return {"keys": where, "sections": sections}


def parse_config(text: str, path: str | None = None) -> RunConfig:
    """Parse and validate an INI document.

    Unknown sections or keys, type errors and domain errors are reported
    with the line they come from. All defaults are filled in.
    """
    lines = _scan_lines(text)
    parser = configparser.ConfigParser(interpolation=None, strict=True, empty_lines_in_values=False)
    try:
        parser.read_string(text, source=path or "<config>")
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any section", lines=(exc.lineno,), code="ParseError") from None
    except configparser.ParsingError as exc:
        raise ConfigError(f"cannot parse: {exc.message.splitlines()[-1].strip()}",
                          lines=tuple(n for n, _ in exc.errors) or None, code="ParseError") from None
    except configparser.Error as exc:
        raise ConfigError(str(exc), code="ParseError") from None

    values: dict[str, dict[str, Any]] = {}
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", lines=(lines["sections"][sec],), code="UnknownSection")
    for sec, schema in SCHEMA.items():
        values[sec] = {key: default for key, (_, default) in schema.items()}
        if not parser.has_section(sec):
            continue
        for key, raw in parser.items(sec):
            line = lines["keys"].get((sec, key))
            if key not in schema:
                raise ConfigError(f"unknown key {key!r} in [{sec}]", lines=(line,) if line else None,
                                  code="UnknownKey")
            conv = schema[key][0]
            try:
                values[sec][key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {key}: {exc}", lines=(line,) if line else None,
                                  code="InvalidValue") from None

    cfg = RunConfig(values, {f"{s}.{k}": n for (s, k), n in lines["keys"].items()}, path)
    _validate(cfg)
    return cfg


def _anchor(cfg: RunConfig, *keys: str):
    found = tuple(cfg.source_lines[k] for k in keys if k in cfg.source_lines)
    return found or None


def _validate(cfg: RunConfig):
    checks = [
        (("grid.q_min", "grid.q_max", "grid.n_points"), cfg.grid),
        (("physics.hbar", "physics.mass"), cfg.params),
        (tuple(f"potential.{k}" for k in SCHEMA["potential"]), cfg.potential),
        (tuple(f"evolution.{k}" for k in SCHEMA["evolution"]), cfg.evolution),
    ]
    for keys, build in checks:
        try:
            build()
        except DiracBohmError as exc:
            if exc.code == "NotPowerOfTwo":
                keys = ("grid.n_points",)
            raise ConfigError(str(exc), lines=_anchor(cfg, *keys), code=exc.code) from None
        except ValueError as exc:
            raise ConfigError(str(exc), lines=_anchor(cfg, *keys), code="InvalidValue") from None
    try:
        cfg.initial_state()
    except DiracBohmError as exc:
        raise ConfigError(str(exc), lines=_anchor(cfg, *(f"state.{k}" for k in SCHEMA["state"])),
                          code=exc.code) from None
    pot = cfg.values["potential"]
    if pot["kind"] == "custom":
        tq = np.asarray(pot["table_q"])
        if tq.size < 4 or not np.all(np.diff(tq) > 0):
            raise ConfigError("table_q needs at least 4 strictly increasing entries",
                              lines=_anchor(cfg, "potential.table_q"), code="InvalidValue")
    vc, st, pot = cfg.values["verify"], cfg.values["state"], cfg.values["potential"]
    if cfg.task == "verify" and vc["source"] == "analytic" and not (
            st["kind"] == "coherent" and pot["kind"] == "harmonic" and pot["omega"] == st["omega"]
            and pot["center"] == 0):
        raise ConfigError("analytic verification needs a coherent state in the matching harmonic potential",
                          lines=_anchor(cfg, "verify.source"), code="InvalidValue")
    times = cfg.values["ensemble"]["times"]
    t_end = cfg.values["evolution"]["dt"] * cfg.values["evolution"]["n_steps"]
    if any(t < 0 or t > t_end for t in times):
        raise ConfigError(f"ensemble times must lie in [0, {t_end:g}]",
                          lines=_anchor(cfg, "ensemble.times"), code="InvalidValue")


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))
