"""Run configuration, parameter sweeps, RE area optimisation and phonon on/off comparisons.

Configuration files are flat ``key = value`` text with dotted keys::

    preset = super-paper
    drive.pulse2.area_pi = 20
    losses.kappa = 0.15
    phonons.temperature = 4.2

Values accept a ``pi`` suffix (``30pi``, ``15.95 pi``, ``pi``).  Every key is
checked; unknown keys and invalid values raise ``ConfigError`` naming the key.
"""
from __future__ import annotations

import csv
import logging
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .drive import PRESETS, CavitySpec, DriveConfig, PulseSpec
from .dynamics import LossRates, SolverConfig, Trajectory, propagate
from .observables import MetricsRecord, integrate_metrics
from .phonons.bath import PhononSpec
from .phonons.process_tensor import CompressionConfig
from .phonons.propagate import propagate_with_phonons
from .phonons import cache

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


# ---- run configuration ----------------------------------------------------------------

@dataclass(frozen=True)
class OutputPaths:
    trajectory: str | None = None
    metrics: str | None = None
    sweep: str | None = None


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce one simulation.

    The pipeline contains no randomness; ``deterministic`` is recorded for
    provenance and may not be switched off.
    """

    drive: DriveConfig = field(default_factory=lambda: PRESETS["super-paper"]())
    cavity: CavitySpec = CavitySpec()
    losses: LossRates = LossRates()
    solver: SolverConfig = SolverConfig()
    phonons: PhononSpec = PhononSpec()
    compression: CompressionConfig = CompressionConfig()
    dt_pt: float = 0.0125
    n_c: int = 1280
    output: OutputPaths = OutputPaths()
    preset: str | None = "super-paper"
    deterministic: bool = True

    @property
    def t_ref(self) -> float:
        """Latest pulse centre."""
        return max(p.delay for p in self.drive.pulses)

    def with_phonons(self, enabled: bool) -> "RunConfig":
        return replace(self, phonons=replace(self.phonons, enabled=enabled))


_PI_RE = re.compile(r"^\s*([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)?\s*\*?\s*pi\s*$")


def parse_number(text: str) -> float:
    """Float with an optional ``pi`` factor: ``30pi``, ``-0.5 pi``, ``pi``."""
    s = str(text).strip()
    m = _PI_RE.match(s.lower())
    if m:
        return (float(m.group(1)) if m.group(1) else 1.0) * math.pi
    return float(s)


def _parse_bool(text: str) -> bool:
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_optional_float(text: str) -> float | None:
    return None if str(text).strip().lower() in ("none", "auto", "") else parse_number(text)


def _parse_int(text: str) -> int:
    v = parse_number(text)
    if not float(v).is_integer():
        raise ValueError(f"not an integer: {text!r}")
    return int(v)


def _field_parsers(cls, extra: dict | None = None) -> dict:
    """Value parsers per dataclass field, chosen from the (string) annotations."""
    out = {}
    for f in fields(cls):
        t = str(f.type)
        if "bool" in t:
            out[f.name] = _parse_bool
        elif t == "int":
            out[f.name] = _parse_int
        elif "None" in t:
            out[f.name] = _parse_optional_float
        else:
            out[f.name] = parse_number
    out.update(extra or {})
    return out


_PULSE_KEYS = {"area_pi": parse_number, "area": parse_number, "sigma": parse_number,
               "detuning": parse_number, "delay": parse_number, "phase": parse_number}
_SECTIONS = {
    "cavity": _field_parsers(CavitySpec),
    "losses": _field_parsers(LossRates),
    "solver": _field_parsers(SolverConfig),
    "phonons": _field_parsers(PhononSpec, {"dt_pt": parse_number, "n_c": _parse_int}),
    "compression": _field_parsers(CompressionConfig),
    "output": {f.name: str for f in fields(OutputPaths)},
}
_PULSE_RE = re.compile(r"^drive\.pulse(\d+)\.(\w+)$")


def _raw_value(key: str, text: str):
    """Parse one value according to its key, raising ConfigError on failure."""
    if key == "preset":
        if text.strip() not in PRESETS:
            raise ConfigError(f"preset: unknown preset {text.strip()!r} (choose from {', '.join(PRESETS)})")
        return text.strip()
    if key == "deterministic":
        parser = _parse_bool
    else:
        m = _PULSE_RE.match(key)
        if m:
            if int(m.group(1)) < 1:
                raise ConfigError(f"{key}: pulses are numbered from 1")
            parser = _PULSE_KEYS.get(m.group(2))
        else:
            section, _, name = key.partition(".")
            parser = _SECTIONS.get(section, {}).get(name)
    if parser is None:
        raise ConfigError(f"unknown configuration key {key!r}")
    try:
        return parser(text)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{key}: invalid value {text!r} ({e})") from None


def parse_config_text(text: str) -> dict[str, object]:
    """Parse ``key = value`` lines into an ordered mapping of validated raw strings."""
    out: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = (s.strip() for s in line.partition("="))
        if not key:
            raise ConfigError(f"line {lineno}: missing key")
        if key in out:
            raise ConfigError(f"{key}: duplicate key (line {lineno})")
        _raw_value(key, value)
        out[key] = value
    return out


def _typed(key: str, value):
    # floats survive the repr round trip exactly
    return _raw_value(key, value if isinstance(value, str) else repr(value))


def apply_overrides(base: RunConfig, overrides: dict[str, object]) -> RunConfig:
    """Return ``base`` with dotted-key overrides applied and validated.

    A ``preset`` key replaces the drive before any ``drive.*`` key is applied.
    """
    ov = {k: _typed(k, v) for k, v in overrides.items()}
    cfg = base
    if "preset" in ov:
        cfg = replace(cfg, drive=PRESETS[ov["preset"]](), preset=ov["preset"])
    if "deterministic" in ov and not ov["deterministic"]:
        raise ConfigError("deterministic: the pipeline has no stochastic mode")

    # pulses
    pulse_keys: dict[int, dict[str, object]] = {}
    for k, v in ov.items():
        m = _PULSE_RE.match(k)
        if m:
            pulse_keys.setdefault(int(m.group(1)), {})[m.group(2)] = (k, v)
    if pulse_keys:
        pulses = list(cfg.drive.pulses)
        for idx in sorted(pulse_keys):
            items = pulse_keys[idx]
            if "area" in items and "area_pi" in items:
                raise ConfigError(f"{items['area'][0]}: give either area or area_pi, not both")
            changes = {}
            for name, (key, v) in items.items():
                if name == "area_pi":
                    changes["area"] = v * math.pi
                else:
                    changes[name] = v
            if idx > len(pulses) + 1:
                raise ConfigError(f"drive.pulse{idx}: pulses must be numbered consecutively")
            try:
                if idx == len(pulses) + 1:
                    missing = [n for n in ("area", "sigma") if n not in changes]
                    if missing:
                        raise ConfigError(f"drive.pulse{idx}.{missing[0]}: required for a new pulse")
                    pulses.append(PulseSpec(**changes))
                else:
                    pulses[idx - 1] = replace(pulses[idx - 1], **changes)
            except ValueError as e:
                if isinstance(e, ConfigError):
                    raise
                bad = _guess_key(str(e), [k for k, _ in items.values()])
                raise ConfigError(f"{bad}: {e}") from None
        cfg = replace(cfg, drive=DriveConfig(tuple(pulses)))

    # flat sections
    groups: dict[str, dict[str, tuple[str, object]]] = {}
    for k, v in ov.items():
        section, _, name = k.partition(".")
        if section in _SECTIONS:
            groups.setdefault(section, {})[name] = (k, v)
    for section, items in groups.items():
        vals = {n: v for n, (_, v) in items.items()}
        keys = [k for k, _ in items.values()]
        try:
            if section == "phonons":
                if "dt_pt" in vals:
                    if not vals["dt_pt"] > 0:
                        raise ValueError("dt_pt must be positive")
                    cfg = replace(cfg, dt_pt=vals.pop("dt_pt"))
                if "n_c" in vals:
                    if vals["n_c"] < 1:
                        raise ValueError("n_c must be at least 1")
                    cfg = replace(cfg, n_c=vals.pop("n_c"))
                cfg = replace(cfg, phonons=replace(cfg.phonons, **vals))
            elif section == "output":
                cfg = replace(cfg, output=replace(cfg.output, **vals))
            else:
                cfg = replace(cfg, **{section: replace(getattr(cfg, section), **vals)})
        except ValueError as e:
            raise ConfigError(f"{_guess_key(str(e), keys)}: {e}") from None
    return cfg


def _guess_key(message: str, keys: list[str]) -> str:
    """Key whose final component appears in a validation message, else all keys."""
    for k in keys:
        if re.search(rf"\b{re.escape(k.rsplit('.', 1)[-1])}\b", message):
            return k
    return ", ".join(keys)


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path) as fh:
        text = fh.read()
    return apply_overrides(RunConfig() if base is None else base, parse_config_text(text))


def config_to_text(cfg: RunConfig) -> str:
    """Serialise a configuration; ``load`` of the result reproduces ``cfg``."""
    lines = []
    for i, p in enumerate(cfg.drive.pulses, 1):
        for name in ("area", "sigma", "detuning", "delay", "phase"):
            lines.append(f"drive.pulse{i}.{name} = {getattr(p, name)!r}")
    for section in ("cavity", "losses", "solver", "phonons", "compression", "output"):
        obj = getattr(cfg, section)
        for f in fields(obj):
            v = getattr(obj, f.name)
            if v is None and section != "output":
                v = "none"
            elif v is None:
                continue
            lines.append(f"{section}.{f.name} = {v!r}" if not isinstance(v, str) else f"{section}.{f.name} = {v}")
    lines.append(f"phonons.dt_pt = {cfg.dt_pt!r}")
    lines.append(f"phonons.n_c = {cfg.n_c!r}")
    return "\n".join(lines) + "\n"


# ---- single runs ----------------------------------------------------------------------

def simulate(cfg: RunConfig) -> Trajectory:
    """Propagate one configuration; phonons are included when ``cfg.phonons.enabled``."""
    if cfg.phonons.enabled and not cfg.phonons.is_zero:
        return propagate_with_phonons(cfg.drive, cfg.cavity, cfg.losses, cfg.solver, cfg.phonons,
                                      cfg.compression, dt_pt=cfg.dt_pt, n_c=cfg.n_c)
    return propagate(cfg.drive, cfg.cavity, cfg.losses, cfg.solver)


def prepare(cfg: RunConfig) -> None:
    """Build (or load) the process tensor of ``cfg`` so that forked workers inherit it."""
    if cfg.phonons.enabled and not cfg.phonons.is_zero:
        cache.get_process_tensor(cfg.phonons, cfg.dt_pt, cfg.n_c, cfg.compression)


# ---- sweeps ---------------------------------------------------------------------------

PARAM_ALIASES = {
    "theta1": "drive.pulse1.area",
    "theta2": "drive.pulse2.area",
    "theta_re": "drive.pulse1.area",
}

SWEEP_COLUMNS = ("param_value", "rho01_int", "rho11_int", "rhoGX_int", "rhoXX_int", "n_int",
                 "snapshot_rhoXX_10ps", "snapshot_absGX_10ps")
SNAPSHOT_OFFSET = 10.0  # ps after the latest pulse centre


def resolve_param(name: str) -> str:
    key = PARAM_ALIASES.get(name, name)
    _raw_value(key, "0")
    return key


@dataclass(frozen=True)
class SweepSpec:
    """One-parameter scan.  Pulse areas are given in rad (``theta2`` = second pulse)."""

    param: str
    grid: tuple[float, ...]
    base: RunConfig = RunConfig()
    phonons: bool = True
    snapshot: bool = True

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(float(x) for x in self.grid))
        if not self.grid:
            raise ValueError("sweep grid is empty")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("sweep grid must be strictly increasing")
        try:
            resolve_param(self.param)
        except ConfigError as e:
            raise ValueError(f"cannot sweep {self.param!r}: {e}") from None

    @property
    def key(self) -> str:
        return resolve_param(self.param)

    def config_at(self, value: float) -> RunConfig:
        return apply_overrides(self.base, {self.key: float(value)}).with_phonons(self.phonons)


@dataclass(frozen=True)
class SweepRow:
    value: float
    metrics: MetricsRecord | None
    snapshot_rho_xx: float = math.nan
    snapshot_abs_gx: float = math.nan
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.metrics is not None

    def as_tuple(self) -> tuple[float, ...]:
        m = self.metrics
        vals = ((m.rho01_int, m.rho11_int, m.rhoGX_int, m.rhoXX_int, m.n_int) if m is not None
                else (math.nan,) * 5)
        return (self.value, *vals, self.snapshot_rho_xx, self.snapshot_abs_gx)


@dataclass
class SweepResult:
    spec: SweepSpec | None
    rows: list[SweepRow]

    def column(self, name: str) -> np.ndarray:
        i = SWEEP_COLUMNS.index(name)
        return np.array([r.as_tuple()[i] for r in self.rows])

    @property
    def values(self) -> np.ndarray:
        return self.column("param_value")

    @property
    def failed(self) -> list[SweepRow]:
        return [r for r in self.rows if not r.ok]

    def table(self) -> np.ndarray:
        return np.array([r.as_tuple() for r in self.rows], dtype=float)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SWEEP_COLUMNS)
            for r in self.rows:
                w.writerow([repr(float(x)) for x in r.as_tuple()])

    @classmethod
    def read_csv(cls, path) -> "SweepResult":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if tuple(rows[0]) != SWEEP_COLUMNS:
            raise ValueError(f"unexpected sweep header {rows[0]}")
        out = []
        for r in rows[1:]:
            v = [float(x) for x in r]
            metrics = None
            if not any(math.isnan(x) for x in v[1:6]):
                metrics = MetricsRecord(*v[1:6], ratio_22_11=math.nan)
            out.append(SweepRow(v[0], metrics, v[6], v[7], None if metrics else "missing"))
        return cls(None, out)


def run_point(cfg: RunConfig, snapshot: bool = True) -> SweepRow:
    """Simulate one configuration and reduce it to a sweep row."""
    traj = simulate(cfg)
    metrics = integrate_metrics(traj, warn=False)
    sx = sg = math.nan
    if snapshot:
        t = cfg.t_ref + SNAPSHOT_OFFSET
        if not traj.times[0] <= t <= traj.times[-1]:
            raise ValueError(f"snapshot time {t} ps outside the simulated window")
        i = int(np.argmin(np.abs(traj.times - t)))
        sx, sg = float(traj.rho_xx[i]), float(abs(traj.rho_gx[i]))
    return SweepRow(math.nan, metrics, sx, sg)


def _sweep_worker(args) -> tuple[int, SweepRow]:
    index, value, cfg, snapshot = args
    try:
        row = run_point(cfg, snapshot)
        return index, replace(row, value=value)
    except Exception as e:  # any failure becomes a row-level error
        log.warning("sweep point %d (%g) failed: %s", index, value, e)
        return index, SweepRow(value, None, error=f"{type(e).__name__}: {e}")


def default_workers() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


def sweep(spec: SweepSpec, workers: int | None = None) -> SweepResult:
    """Run every grid point; rows follow grid order regardless of completion order."""
    jobs = [(i, v, spec.config_at(v), spec.snapshot) for i, v in enumerate(spec.grid)]
    prepare(jobs[0][2])
    workers = default_workers() if workers is None else max(1, int(workers))
    rows: list[SweepRow | None] = [None] * len(jobs)
    if workers == 1 or len(jobs) == 1:
        for job in jobs:
            i, row = _sweep_worker(job)
            rows[i] = row
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            for i, row in pool.map(_sweep_worker, jobs):
                rows[i] = row
    return SweepResult(spec, rows)


def theta_grid(start: float, stop: float, points: int) -> tuple[float, ...]:
    if points < 1:
        raise ValueError("points must be at least 1")
    return tuple(np.linspace(start, stop, points)) if points > 1 else (float(start),)


# ---- RE optimisation ------------------------------------------------------------------

@dataclass(frozen=True)
class REOptimum:
    theta: float
    metrics: MetricsRecord
    grid_result: SweepResult
    evaluations: tuple[tuple[float, float], ...]  # (theta, objective) in evaluation order

    @property
    def objective(self) -> float:
        return self.metrics.objective_re


GOLDEN = (math.sqrt(5) - 1) / 2


def optimize_re_area(base: RunConfig, grid, param: str = "theta_re", resolution: float = 0.01 * math.pi,
                     phonons: bool = True, workers: int | None = None) -> REOptimum:
    """Minimise rho01_int - rho11_int over a pulse area.

    The grid argmin is refined by golden-section search on the bracket formed by
    its neighbours until the bracket is narrower than ``resolution``; the best
    evaluated point is returned, so its objective never exceeds any grid value.
    """
    grid = tuple(grid)
    if not grid:
        raise ValueError("optimisation grid is empty")
    spec = SweepSpec(param, grid, base, phonons=phonons, snapshot=False)
    res = sweep(spec, workers)
    best: dict[float, MetricsRecord] = {}
    evals = []
    for r in res.rows:
        if r.ok:
            best[r.value] = r.metrics
        evals.append((r.value, r.metrics.objective_re if r.ok else math.inf))
    if not best:
        raise ValueError("every grid point failed: " + "; ".join(str(r.error) for r in res.rows))

    def objective(theta: float) -> float:
        if theta not in best:
            row = _sweep_worker((0, theta, spec.config_at(theta), False))[1]
            if not row.ok:
                evals.append((theta, math.inf))
                return math.inf
            best[theta] = row.metrics
        val = best[theta].objective_re
        evals.append((theta, val))
        return val

    i = min(range(len(grid)), key=lambda j: evals[j][1])
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    a, b = lo + (1 - GOLDEN) * (hi - lo), lo + GOLDEN * (hi - lo)
    if hi - lo > resolution:
        fa, fb = objective(a), objective(b)
        while hi - lo > resolution:
            if fa <= fb:
                hi, b, fb = b, a, fa
                a = lo + (1 - GOLDEN) * (hi - lo)
                fa = objective(a)
            else:
                lo, a, fa = a, b, fb
                b = lo + GOLDEN * (hi - lo)
                fb = objective(b)
    theta = min(best, key=lambda t: best[t].objective_re)
    return REOptimum(theta, best[theta], res, tuple(evals))


# ---- phonon comparison ----------------------------------------------------------------

@dataclass
class PhononComparison:
    with_phonons: SweepResult
    without_phonons: SweepResult

    def reduction(self, column: str = "snapshot_rhoXX_10ps") -> np.ndarray:
        """Phonon / phonon-free ratio of a column per grid point."""
        return self.with_phonons.column(column) / self.without_phonons.column(column)

    def relative_spread(self, column: str = "snapshot_rhoXX_10ps", mask: np.ndarray | None = None) -> float:
        """(max - min) / mean of the reduction factor over the selected points."""
        r = self.reduction(column)
        if mask is not None:
            r = r[mask]
        r = r[np.isfinite(r)]
        return float((r.max() - r.min()) / r.mean()) if r.size else math.nan


def phonon_comparison(spec: SweepSpec, workers: int | None = None) -> PhononComparison:
    """The same sweep with and without phonons, snapshots enabled."""
    on = sweep(replace(spec, phonons=True, snapshot=True), workers)
    off = sweep(replace(spec, phonons=False, snapshot=True), workers)
    return PhononComparison(on, off)
