"""Run configuration, pulse tables and convergence logs.

Config files are flat ``section.key = value`` lines; ``#`` starts a comment.
Pulse tables and logs are comma-separated text with a header row. Controls
are written in Hz and held in rad/s everywhere else.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, PulseTableParseError
from .experiments import KINDS, ExperimentSpec
from .grape import GrapeConfig
from .krotov import InnerSolverConfig, IterationLog, KrotovConfig
from .propagation import ControlSequence, PenaltySpec
from .smoothing import TruncationSpec

__all__ = [
    "OPTIMIZERS",
    "RunConfig",
    "load_config",
    "parse_config",
    "dump_config",
    "save_config",
    "channel_names",
    "export_pulse_table",
    "read_pulse_table",
    "write_convergence_log",
    "read_convergence_log",
    "format_float",
]

OPTIMIZERS = ("krotov", "krotov_smooth", "grape", "grape_smooth")
LOG_COLUMNS = ("iteration", "J", "phi", "penalty", "alpha", "wall_time_s")


def format_float(x: float) -> str:
    """17 significant digits, enough to recover any double exactly."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class RunConfig:
    """Everything one run needs; the values are plain data so they serialize."""

    kind: str
    J_hz: float | None = None
    omega_q_hz: float | None = None
    omega_q_range_hz: tuple | None = None
    T_s: float | None = None
    N: int = 200
    kappa: float | None = None
    optimizer: str = "krotov_smooth"
    tol: float = 1e-8
    max_iterations: int = 500
    inner_method: str = "quasi-newton"
    inner_max_iterations: int = 50
    inner_gradient_tolerance: float = 1e-8
    step_rule: str = "backtracking"
    step_size_hz: float = 10.0
    gradient_tolerance: float = 1e-10
    penalty_lambda: tuple = (1e-4,)
    cutoff_hz: float | None = None
    taper_hz: float = 0.0
    alpha_floor: float = 2.0 ** -20
    max_amplitude_hz: float = 100.0
    knots: int | None = 5
    seed: int = 0
    out: str = "out"
    snapshots: tuple = ()
    export_phase_amp: bool = False
    dwell_s: float = 1e-3
    points: int = 1024
    broadening_hz: float = 2.0
    phase_deg: float = 0.0
    profile_grid_hz: tuple = tuple(float(x) for x in range(20, 101, 5))
    compare_optimizers: tuple = ("krotov", "krotov_smooth")
    compare_seeds: int = 20
    success_threshold: float = 0.9
    workers: int = 1

    def experiment(self) -> ExperimentSpec:
        return ExperimentSpec(self.kind, J=self.J_hz, omega_q_hz=self.omega_q_hz,
                              omega_q_range_hz=self.omega_q_range_hz, T=self.T_s, N=self.N,
                              kappa=self.kappa)

    def penalty(self) -> PenaltySpec:
        return PenaltySpec(self.penalty_lambda)

    def krotov_config(self) -> KrotovConfig:
        inner = InnerSolverConfig(self.inner_method, self.inner_max_iterations, self.inner_gradient_tolerance)
        return KrotovConfig(self.penalty(), self.tol, self.max_iterations, inner, tuple(self.snapshots))

    def grape_config(self) -> GrapeConfig:
        return GrapeConfig(self.penalty(), self.max_iterations, self.step_rule,
                           2 * np.pi * self.step_size_hz, self.gradient_tolerance)

    def truncation(self) -> TruncationSpec:
        return TruncationSpec(self.cutoff_hz, self.alpha_floor, 0.5, self.taper_hz)


def _float(v):
    return float(v)


def _opt_float(v):
    return None if v.lower() == "none" else float(v)


def _int(v):
    f = float(v)
    if not f.is_integer():
        raise ValueError(f"{v!r} is not an integer")
    return int(f)


def _opt_int(v):
    return None if v.lower() == "none" else _int(v)


def _floats(v):
    return tuple(float(x) for x in v.split(",") if x.strip())


def _opt_floats(v):
    return None if v.lower() == "none" else _floats(v)


def _ints(v):
    return tuple(_int(x) for x in v.split(",") if x.strip())


def _words(v):
    return tuple(x.strip() for x in v.split(",") if x.strip())


def _bool(v):
    low = v.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"{v!r} is not a boolean")


# dotted key -> (RunConfig field, parser)
SCHEMA = {
    "experiment.kind": ("kind", str),
    "experiment.J_hz": ("J_hz", _opt_float),
    "experiment.omega_q_hz": ("omega_q_hz", _opt_float),
    "experiment.omega_q_range_hz": ("omega_q_range_hz", _opt_floats),
    "experiment.T_s": ("T_s", _opt_float),
    "experiment.N": ("N", _int),
    "experiment.kappa": ("kappa", _opt_float),
    "optimizer.name": ("optimizer", str),
    "optimizer.tol": ("tol", _float),
    "optimizer.max_iterations": ("max_iterations", _int),
    "optimizer.inner_method": ("inner_method", str),
    "optimizer.inner_max_iterations": ("inner_max_iterations", _int),
    "optimizer.inner_gradient_tolerance": ("inner_gradient_tolerance", _float),
    "optimizer.step_rule": ("step_rule", str),
    "optimizer.step_size_hz": ("step_size_hz", _float),
    "optimizer.gradient_tolerance": ("gradient_tolerance", _float),
    "penalty.lambda": ("penalty_lambda", _floats),
    "smoothing.cutoff_hz": ("cutoff_hz", _opt_float),
    "smoothing.taper_hz": ("taper_hz", _float),
    "smoothing.alpha_floor": ("alpha_floor", _float),
    "initial.max_amplitude_hz": ("max_amplitude_hz", _float),
    "initial.knots": ("knots", _opt_int),
    "run.seed": ("seed", _int),
    "run.out": ("out", str),
    "run.snapshots": ("snapshots", _ints),
    "run.export_phase_amp": ("export_phase_amp", _bool),
    "spectrum.dwell_s": ("dwell_s", _float),
    "spectrum.points": ("points", _int),
    "spectrum.broadening_hz": ("broadening_hz", _float),
    "spectrum.phase_deg": ("phase_deg", _float),
    "profile.grid_hz": ("profile_grid_hz", _floats),
    "compare.optimizers": ("compare_optimizers", _words),
    "compare.seeds": ("compare_seeds", _int),
    "compare.success_threshold": ("success_threshold", _float),
    "compare.workers": ("workers", _int),
}
_KEY_OF = {name: key for key, (name, _) in SCHEMA.items()}
REQUIRED = ("experiment.kind",)


def _validate(cfg: RunConfig) -> RunConfig:
    def need(ok, name, message):
        if not ok:
            raise ConfigError(_KEY_OF[name], message)

    need(cfg.kind in KINDS, "kind", f"expected one of {', '.join(KINDS)}")
    need(cfg.optimizer in OPTIMIZERS, "optimizer", f"expected one of {', '.join(OPTIMIZERS)}")
    need(cfg.N >= 1, "N", "must be >= 1")
    for name in ("J_hz", "omega_q_hz", "T_s", "cutoff_hz"):
        value = getattr(cfg, name)
        need(value is None or (math.isfinite(value) and value > 0), name, "must be positive")
    need(cfg.kappa is None or cfg.kappa >= 0, "kappa", "must be non-negative")
    need(cfg.tol > 0, "tol", "must be positive")
    need(cfg.max_iterations >= 1, "max_iterations", "must be >= 1")
    need(cfg.inner_method in ("quasi-newton", "conjugate-gradient"), "inner_method",
         "expected quasi-newton or conjugate-gradient")
    need(cfg.inner_max_iterations >= 1, "inner_max_iterations", "must be >= 1")
    need(cfg.inner_gradient_tolerance > 0, "inner_gradient_tolerance", "must be positive")
    need(cfg.step_rule in ("fixed", "backtracking"), "step_rule", "expected fixed or backtracking")
    need(cfg.step_size_hz > 0, "step_size_hz", "must be positive")
    need(cfg.gradient_tolerance > 0, "gradient_tolerance", "must be positive")
    need(len(cfg.penalty_lambda) >= 1 and all(x >= 0 and math.isfinite(x) for x in cfg.penalty_lambda),
         "penalty_lambda", "must be one or more non-negative numbers")
    need(cfg.taper_hz >= 0, "taper_hz", "must be non-negative")
    need(0 < cfg.alpha_floor < 1, "alpha_floor", "must lie in (0, 1)")
    need(cfg.max_amplitude_hz > 0, "max_amplitude_hz", "must be positive")
    need(cfg.knots is None or cfg.knots >= 2, "knots", "must be >= 2")
    need(cfg.seed >= 0, "seed", "must be a non-negative integer")
    need(all(s >= 0 for s in cfg.snapshots), "snapshots", "iterations must be non-negative")
    need(cfg.dwell_s > 0, "dwell_s", "must be positive")
    need(cfg.points >= 2 and not cfg.points & (cfg.points - 1), "points", "must be a power of two")
    need(cfg.broadening_hz >= 0, "broadening_hz", "must be non-negative")
    need(len(cfg.profile_grid_hz) >= 1 and min(cfg.profile_grid_hz) >= 0, "profile_grid_hz",
         "must be a non-empty list of non-negative couplings")
    need(len(cfg.compare_optimizers) >= 1 and all(o in OPTIMIZERS for o in cfg.compare_optimizers),
         "compare_optimizers", f"entries must be in {', '.join(OPTIMIZERS)}")
    need(cfg.compare_seeds >= 1, "compare_seeds", "must be >= 1")
    need(0 < cfg.success_threshold <= 1, "success_threshold", "must lie in (0, 1]")
    need(cfg.workers >= 1, "workers", "must be >= 1")
    two_spin = cfg.kind == "two_spin_cos3"
    need(two_spin or cfg.J_hz is None, "J_hz", f"does not apply to {cfg.kind}")
    need(not two_spin or cfg.omega_q_hz is None, "omega_q_hz", "does not apply to two_spin_cos3")
    need(cfg.kind == "na23_broadband" or cfg.omega_q_range_hz is None, "omega_q_range_hz",
         "only applies to na23_broadband")
    try:
        cfg.experiment()
    except ValueError as exc:
        raise ConfigError("experiment", str(exc)) from None
    return cfg


def parse_config(text: str, **overrides) -> RunConfig:
    """Parse config text; ``overrides`` (RunConfig field names) win over the file."""
    values = {}
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key")
        if key in seen:
            raise ConfigError(key, f"duplicate key (lines {seen[key]} and {lineno})")
        seen[key] = lineno
        name, parse = SCHEMA[key]
        try:
            values[name] = parse(value)
        except ValueError as exc:
            raise ConfigError(key, f"bad value {value!r}: {exc}") from None
    for key in REQUIRED:
        if SCHEMA[key][0] not in values:
            raise ConfigError(key, "missing required key")
    values.update({k: v for k, v in overrides.items() if v is not None})
    return _validate(RunConfig(**values))


def load_config(path, **overrides) -> RunConfig:
    """Read and validate a config file. ``OSError`` propagates unchanged."""
    return parse_config(Path(path).read_text(encoding="utf-8"), **overrides)


def _render(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    return str(value)


def dump_config(cfg: RunConfig) -> str:
    lines = [f"{key} = {_render(getattr(cfg, name))}" for key, (name, _) in SCHEMA.items()]
    return "\n".join(lines) + "\n"


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(dump_config(cfg), encoding="utf-8", newline="\n")


def channel_names(labels) -> list:
    """Group ``('Ix', 'Iy', 'Sx', 'Sy')`` into ``['I', 'S']``."""
    labels = list(labels)
    if len(labels) % 2:
        raise ValueError(f"labels {labels} do not form x/y pairs")
    names = []
    for lx, ly in zip(labels[::2], labels[1::2]):
        if not (lx.endswith("x") and ly.endswith("y") and lx[:-1] == ly[:-1] and lx[:-1]):
            raise ValueError(f"labels {lx!r}, {ly!r} are not an x/y pair")
        names.append(lx[:-1])
    return names


def export_pulse_table(seq: ControlSequence, path, phase_amp: bool = False) -> None:
    """Write ``seq`` as CSV in Hz (or amplitude in Hz and phase in rad)."""
    if seq.n_steps < 1:
        raise ValueError("cannot export an empty sequence")
    names = channel_names(seq.labels)
    header = ["index", "t_start_s", "dt_s"]
    for n in names:
        header += [f"{n}_amp_hz", f"{n}_phase_rad"] if phase_amp else [f"{n}_x_hz", f"{n}_y_hz"]
    hz = seq.amps / (2 * np.pi)
    rows = [",".join(header)]
    for j in range(seq.n_steps):
        cells = [str(j), format_float(j * seq.dt), format_float(seq.dt)]
        for c in range(len(names)):
            x, y = hz[j, 2 * c], hz[j, 2 * c + 1]
            if phase_amp:
                cells += [format_float(math.hypot(x, y)), format_float(math.atan2(y, x))]
            else:
                cells += [format_float(x), format_float(y)]
        rows.append(",".join(cells))
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8", newline="\n")


def read_pulse_table(path) -> ControlSequence:
    """Inverse of :func:`export_pulse_table`; either column layout is accepted."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise PulseTableParseError(1, "empty file")
    header = [h.strip() for h in lines[0].split(",")]
    if header[:3] != ["index", "t_start_s", "dt_s"] or len(header) < 5 or (len(header) - 3) % 2:
        raise PulseTableParseError(1, f"unexpected header {lines[0]!r}")
    pairs = list(zip(header[3::2], header[4::2]))
    names, modes = [], set()
    for a, b in pairs:
        if a.endswith("_x_hz") and b == a[:-5] + "_y_hz":
            names.append(a[:-5])
            modes.add("xy")
        elif a.endswith("_amp_hz") and b == a[:-7] + "_phase_rad":
            names.append(a[:-7])
            modes.add("polar")
        else:
            raise PulseTableParseError(1, f"columns {a!r}, {b!r} are not a channel pair")
    if len(modes) != 1:
        raise PulseTableParseError(1, "mixed column layouts")
    polar = modes == {"polar"}
    data, dt = [], None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(header):
            raise PulseTableParseError(lineno, f"expected {len(header)} fields, found {len(cells)}")
        try:
            index = int(cells[0])
            values = [float(c) for c in cells[1:]]
        except ValueError as exc:
            raise PulseTableParseError(lineno, str(exc)) from None
        if not all(math.isfinite(v) for v in values):
            raise PulseTableParseError(lineno, "non-finite value")
        if index != len(data):
            raise PulseTableParseError(lineno, f"index {index} out of sequence")
        if dt is None:
            dt = values[1]
            if not dt > 0:
                raise PulseTableParseError(lineno, "dt_s must be positive")
        elif values[1] != dt:
            raise PulseTableParseError(lineno, "dt_s changes between rows")
        data.append(values[2:])
    if not data:
        raise PulseTableParseError(len(lines) + 1, "no pulse rows")
    arr = np.asarray(data)
    if polar:
        amp, phase = arr[:, 0::2], arr[:, 1::2]
        arr = np.empty_like(arr)
        arr[:, 0::2] = amp * np.cos(phase)
        arr[:, 1::2] = amp * np.sin(phase)
    labels = tuple(lab for n in names for lab in (n + "x", n + "y"))
    return ControlSequence(2 * np.pi * arr, dt, labels)


def write_convergence_log(log: IterationLog, path) -> None:
    rows = [",".join(LOG_COLUMNS)]
    for r in log:
        rows.append(",".join([str(r.iteration)] + [format_float(v) for v in
                                                     (r.J, r.phi, r.penalty, r.alpha, r.wall_time)]))
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8", newline="\n")


def read_convergence_log(path) -> dict:
    """Columns of a convergence log as float arrays keyed by header name."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != LOG_COLUMNS:
            raise PulseTableParseError(1, f"unexpected header {reader.fieldnames}")
        rows = list(reader)
    return {c: np.array([float(r[c]) for r in rows]) for c in LOG_COLUMNS}
