"""Figures of merit: integrated photon-number coherence, HOM intensities, kernel model."""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import asdict, dataclass, fields

import numpy as np

from .core import to_angular
from .dynamics import Trajectory


class TailWarning(UserWarning):
    """The trajectory ends before the emission has decayed."""


class BoundViolation(ValueError):
    pass


TAIL_FRACTION = 1e-4


@dataclass(frozen=True)
class MetricsRecord:
    """Time-integrated figures of merit, all in ps except the dimensionless ratio."""

    rho01_int: float
    rho11_int: float
    rhoGX_int: float
    rhoXX_int: float
    n_int: float
    ratio_22_11: float

    def __post_init__(self):
        for f in ("rho01_int", "rho11_int", "rhoGX_int", "rhoXX_int", "n_int"):
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be non-negative")

    @property
    def objective_re(self) -> float:
        """rho01_int - rho11_int, minimised when tuning resonant excitation."""
        return self.rho01_int - self.rho11_int


METRICS_COLUMNS = tuple(f.name for f in fields(MetricsRecord))


def metrics_to_csv_row(m: MetricsRecord) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    w.writerow([repr(float(getattr(m, c))) for c in METRICS_COLUMNS])
    return buf.getvalue()


def metrics_from_csv_row(text: str) -> MetricsRecord:
    rows = list(csv.reader(io.StringIO(text)))
    if tuple(rows[0]) != METRICS_COLUMNS:
        raise ValueError(f"unexpected metrics header {rows[0]}")
    return MetricsRecord(**{c: float(v) for c, v in zip(METRICS_COLUMNS, rows[1])})


def integrate_series(t: np.ndarray, y: np.ndarray) -> float:
    return float(np.trapezoid(y, t))


def tail_fraction(series: np.ndarray) -> float:
    """|y(t_end)| relative to the peak of |y|; zero for an identically zero series."""
    a = np.abs(series)
    peak = a.max() if a.size else 0.0
    return float(a[-1] / peak) if peak > 0 else 0.0


def integrate_metrics(traj: Trajectory, warn: bool = True) -> MetricsRecord:
    t = traj.times
    rho01 = traj.rho_01
    if warn:
        frac = tail_fraction(rho01)
        if frac > TAIL_FRACTION:
            # exponential tail with the local decay rate estimates the missing weight
            a = np.abs(rho01)
            missing = a[-1] * max(t[-1] - t[0], 0.0)
            if len(a) > 2 and a[-2] > a[-1] > 0:
                rate = np.log(a[-2] / a[-1]) / (t[-1] - t[-2])
                missing = a[-1] / rate
            total = integrate_series(t, a)
            est = missing / (total + missing) if total + missing > 0 else 0.0
            warnings.warn(
                f"trajectory ends at |rho_01| = {frac:.2e} of its peak; "
                f"estimated missing fraction of the coherence integral {est:.2e}",
                TailWarning, stacklevel=2)
    return MetricsRecord(
        rho01_int=integrate_series(t, np.abs(rho01)),
        rho11_int=integrate_series(t, traj.fock_population(1)),
        rhoGX_int=integrate_series(t, np.abs(traj.rho_gx)),
        rhoXX_int=integrate_series(t, traj.rho_xx),
        n_int=integrate_series(t, traj.n_photon),
        ratio_22_11=truncation_check(traj, strict=False).ratio,
    )


@dataclass(frozen=True)
class HOMPrediction:
    n_c: float
    n_d: float
    phase_difference: float


def hom_intensities(rho11: float, abs_rho01: float, dphi: float) -> HOMPrediction:
    """Output-port intensities N_{c,d} = rho11 (1 +- (|rho01|^2 / rho11) cos dphi).

    ``rho11`` may be an instantaneous population or a time-integrated value, as
    long as ``abs_rho01`` uses the same convention.
    """
    if rho11 < 0 or abs_rho01 < 0:
        raise BoundViolation("populations and coherence moduli must be non-negative")
    c2 = abs_rho01**2
    if c2 > rho11 * (1 + 1e-12) + 1e-15:
        raise BoundViolation(f"|rho01|^2 = {c2:.6g} exceeds rho11 = {rho11:.6g}")
    if rho11 == 0:
        return HOMPrediction(0.0, 0.0, dphi)
    visibility = c2 / rho11 * np.cos(dphi)
    return HOMPrediction(rho11 * (1 + visibility), rho11 * (1 - visibility), dphi)


def kernel_model_rho01(times: np.ndarray, rho_gx: np.ndarray, g: float, kappa: float,
                       omega_cx: float = 0.0, rho01_start: complex = 0.0) -> np.ndarray:
    """Cavity coherence driven by a given QD coherence through the exponential kernel.

    d/dt rho01 = (-i omega_cx - kappa/2) rho01 - i g rho_GX, with ``g`` and
    ``omega_cx`` given as energies in meV and ``kappa`` in 1/ps.  The series is
    advanced exactly for a linearly interpolated source.

    The kernel relates <a> to <sigma>, i.e. <1|rho|0> to <X|rho|G>.  For the
    ``Trajectory`` convention rho_01 = <0|rho|1>, rho_GX = <G|rho|X> pass
    ``conj(traj.rho_gx)`` and compare against ``conj(traj.rho_01)``.
    """
    t = np.asarray(times, dtype=float)
    src = np.asarray(rho_gx, dtype=complex)
    if t.shape != src.shape or t.ndim != 1:
        raise ValueError("times and rho_gx must be 1-d arrays of equal length")
    if len(t) < 2:
        return np.full(len(t), rho01_start, dtype=complex)
    dt = np.diff(t)
    if np.max(np.abs(dt - dt[0])) > 1e-9 * max(1.0, abs(dt[0])):
        raise ValueError("kernel model requires a uniformly sampled series")
    h = dt[0]
    g = to_angular(g)
    z = -1j * to_angular(omega_cx) - 0.5 * kappa
    e = np.exp(z * h)
    # weights of f(t_n) and f(t_{n+1}) in int_0^h e^{z (h - s)} f(t_n + s) ds for linear f
    if abs(z * h) < 1e-6:
        w0 = h * (0.5 + z * h / 3)
        w1 = h * (0.5 + z * h / 6)
    else:
        w1 = (e - 1 - z * h) / (z * z * h)
        w0 = (e - 1) / z - w1
    out = np.empty(len(t), dtype=complex)
    out[0] = rho01_start
    for n in range(len(t) - 1):
        out[n + 1] = e * out[n] - 1j * g * (w0 * src[n] + w1 * src[n + 1])
    return out


@dataclass(frozen=True)
class TruncationReport:
    ratio: float
    max_rho11: float
    max_rho22: float
    degenerate: bool


def truncation_check(traj: Trajectory, strict: bool = True) -> TruncationReport:
    """max_t rho_22 / max_t rho_11; a trajectory with no photons reports 0 and ``degenerate``."""
    if traj.dims.n_max < 2:
        if strict:
            raise ValueError("truncation check needs n_max >= 2")
        return TruncationReport(0.0, float(traj.fock_population(1).max()), 0.0, True)
    m1 = float(traj.fock_population(1).max())
    m2 = float(traj.fock_population(2).max())
    if m1 <= 0:
        return TruncationReport(0.0, m1, m2, True)
    return TruncationReport(max(m2, 0.0) / m1, m1, m2, False)


def half_max_time(times: np.ndarray, series: np.ndarray) -> float:
    """First time at which ``series`` reaches half of its maximum (linear interpolation)."""
    y = np.asarray(series, dtype=float)
    half = 0.5 * y.max()
    i = int(np.argmax(y >= half))
    if i == 0:
        return float(times[0])
    t0, t1, y0, y1 = times[i - 1], times[i], y[i - 1], y[i]
    return float(t0 + (half - y0) * (t1 - t0) / (y1 - y0))


def metrics_dict(m: MetricsRecord) -> dict:
    return asdict(m)
