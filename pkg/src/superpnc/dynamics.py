"""Phonon-free Lindblad propagation of the driven QD-cavity system."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .core import (
    CONST,
    SystemDims,
    build_a,
    build_sigma,
    commutator_super,
    lindblad_super,
    validate_density,
)
from .drive import CavitySpec, DriveConfig, drive_amplitude, jc_hamiltonian

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Propagation failed: step-size underflow or an invalid density matrix."""


@dataclass(frozen=True)
class LossRates:
    gamma: float = 1.0e-3  # radiative decay, 1/ps
    kappa: float = 0.1 / CONST.hbar  # cavity loss, 1/ps

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")
        if not self.kappa >= 0:
            raise ValueError(f"kappa must be non-negative, got {self.kappa}")


@dataclass(frozen=True)
class SolverConfig:
    """Time window and step control.

    ``t_start``/``t_end`` default to ``[-5 sigma, 5 sigma + tail]`` around the pulses.
    ``max_step_pulse`` caps the adaptive step inside the pulse support,
    ``max_step_free`` outside of it.
    """

    t_start: float | None = None
    t_end: float | None = None
    tail: float = 300.0
    output_stride: float = 0.05
    rtol: float = 1e-10
    atol: float = 1e-12
    max_step_pulse: float = 0.01
    max_step_free: float = 0.1
    check_every: int = 10
    trace_tol: float = 1e-7
    herm_tol: float = 1e-9
    neg_tol: float = 1e-6

    def __post_init__(self):
        if not self.output_stride > 0:
            raise ValueError("output_stride must be positive")
        if not 0 < self.max_step_pulse <= 0.02:
            raise ValueError("max_step_pulse must lie in (0, 0.02] ps")
        if not self.max_step_free > 0:
            raise ValueError("max_step_free must be positive")
        if self.tail < 0:
            raise ValueError("tail must be non-negative")

    def window(self, cfg: DriveConfig) -> tuple[float, float]:
        lo, hi = cfg.support(5.0)
        t0 = lo if self.t_start is None else self.t_start
        t1 = hi + self.tail if self.t_end is None else self.t_end
        if not t1 > t0:
            raise ValueError(f"empty time window [{t0}, {t1}]")
        return t0, t1

    def output_times(self, cfg: DriveConfig) -> np.ndarray:
        t0, t1 = self.window(cfg)
        n = int(round((t1 - t0) / self.output_stride))
        return t0 + self.output_stride * np.arange(n + 1)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (nt, dim, dim) full QD-cavity density matrices
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    @property
    def dims(self) -> SystemDims:
        return SystemDims(self.states.shape[1] // 2 - 1)

    @property
    def rho_qd(self) -> np.ndarray:
        n = self.dims.n_fock
        return np.einsum("tsnrn->tsr", self.states.reshape(-1, 2, n, 2, n))

    @property
    def rho_cav(self) -> np.ndarray:
        n = self.dims.n_fock
        return np.einsum("tsnsm->tnm", self.states.reshape(-1, 2, n, 2, n))

    @property
    def rho_xx(self) -> np.ndarray:
        return self.rho_qd[:, 1, 1].real

    @property
    def rho_gx(self) -> np.ndarray:
        return self.rho_qd[:, 0, 1]

    @property
    def rho_01(self) -> np.ndarray:
        return self.rho_cav[:, 0, 1]

    def fock_population(self, n: int) -> np.ndarray:
        if n > self.dims.n_max:
            return np.zeros_like(self.times)
        return self.rho_cav[:, n, n].real

    @property
    def n_photon(self) -> np.ndarray:
        pops = np.einsum("tnn->tn", self.rho_cav).real
        return pops @ np.arange(self.dims.n_fock)

    def at(self, t: float) -> np.ndarray:
        """State at the output time closest to ``t``."""
        return self.states[int(np.argmin(np.abs(self.times - t)))]


CSV_COLUMNS = ("t", "rho_GG", "rho_XX", "re_rho_GX", "im_rho_GX", "rho_00", "rho_11", "rho_22",
               "re_rho_01", "im_rho_01", "n_photon")


def trajectory_rows(traj: Trajectory) -> np.ndarray:
    qd, cav = traj.rho_qd, traj.rho_cav
    return np.column_stack([
        traj.times, qd[:, 0, 0].real, qd[:, 1, 1].real, qd[:, 0, 1].real, qd[:, 0, 1].imag,
        traj.fock_population(0), traj.fock_population(1), traj.fock_population(2),
        cav[:, 0, 1].real, cav[:, 0, 1].imag, traj.n_photon,
    ])


def write_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for row in trajectory_rows(traj):
            w.writerow([repr(float(x)) for x in row])


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError(f"unexpected trajectory header {rows[0]}")
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return {c: data[:, i] for i, c in enumerate(CSV_COLUMNS)}


def dissipator(op: np.ndarray, rate: float, rho: np.ndarray) -> np.ndarray:
    """rate * (O rho O^+ - {rho, O^+ O}/2)."""
    if op.shape != rho.shape or op.shape[0] != op.shape[1]:
        raise ValueError(f"dimension mismatch: operator {op.shape}, state {rho.shape}")
    od = op.conj().T
    ada = od @ op
    return rate * (op @ rho @ od - 0.5 * (rho @ ada + ada @ rho))


class Liouvillian:
    """L(t) = L_static + h(t) L_plus + conj(h(t)) L_minus on row-major vectorised states.

    L_static holds the Jaynes-Cummings part, an optional static exciton energy
    ``exciton_shift`` (meV) and both dissipators; h(t) is the drive coefficient of
    sigma^dagger (see ``drive_amplitude``).
    """

    def __init__(self, cfg: DriveConfig, cav: CavitySpec, losses: LossRates, exciton_shift: float = 0.0):
        self.cfg, self.cav, self.losses = cfg, cav, losses
        dims = cav.dims
        s, a = build_sigma(dims), build_a(dims)
        self.dim = dims.dim
        h0 = jc_hamiltonian(cav) + exciton_shift * (s.conj().T @ s)
        self.static = (-1j / CONST.hbar) * commutator_super(h0)
        self.static = self.static + lindblad_super(s, losses.gamma) + lindblad_super(a, losses.kappa)
        self.plus = (-1j / CONST.hbar) * commutator_super(s.conj().T)
        self.minus = (-1j / CONST.hbar) * commutator_super(s)

    def h(self, t):
        return drive_amplitude(self.cfg, t)

    def __call__(self, t: float) -> np.ndarray:
        h = self.h(t)
        return self.static + h * self.plus + np.conj(h) * self.minus

    def apply(self, t: float, y: np.ndarray) -> np.ndarray:
        h = self.h(t)
        return self.static @ y + h * (self.plus @ y) + np.conj(h) * (self.minus @ y)


def rhs(t: float, rho: np.ndarray, cfg: DriveConfig, cav: CavitySpec, losses: LossRates) -> np.ndarray:
    """d rho / dt of the Liouville-von Neumann equation with both loss channels."""
    from .drive import total_hamiltonian

    dims = cav.dims
    h = total_hamiltonian(cfg, cav, t)
    out = (-1j / CONST.hbar) * (h @ rho - rho @ h)
    out += dissipator(build_sigma(dims), losses.gamma, rho)
    out += dissipator(build_a(dims), losses.kappa, rho)
    return out


def ground_state(dims: SystemDims) -> np.ndarray:
    return dims.projector("G", 0)


def check_states(times, states, solver: SolverConfig, offset: int = 0) -> None:
    for k, (t, rho) in enumerate(zip(times, states)):
        full = solver.check_every > 0 and (k + offset) % solver.check_every == 0
        tr = abs(np.trace(rho) - 1.0)
        herm = np.max(np.abs(rho - rho.conj().T))
        bad = tr > solver.trace_tol or herm > solver.herm_tol
        min_ev = 0.0
        if full or bad:
            min_ev = validate_density(rho, check_positivity=True).min_eigenvalue
        if bad or min_ev < -solver.neg_tol:
            raise NumericalError(
                f"invalid state at t={t:.4f} ps: trace defect {tr:.2e}, "
                f"hermiticity defect {herm:.2e}, min eigenvalue {min_ev:.2e}")


def _segments(cfg: DriveConfig, solver: SolverConfig, t0: float, t1: float):
    lo, hi = cfg.support(5.0)
    edges = sorted({t0, t1, *[x for x in (lo, hi) if t0 < x < t1]})
    for a, b in zip(edges[:-1], edges[1:]):
        inside = a < hi and b > lo
        yield a, b, solver.max_step_pulse if inside else solver.max_step_free


def propagate(cfg: DriveConfig, cav: CavitySpec, losses: LossRates = LossRates(),
              solver: SolverConfig = SolverConfig(), rho0: np.ndarray | None = None,
              validate: bool = True) -> Trajectory:
    """Integrate the master equation with an adaptive Dormand-Prince 5(4) scheme.

    Output states are taken from the integrator's dense output on the uniform
    ``solver.output_times`` grid.
    """
    dims = cav.dims
    liou = Liouvillian(cfg, cav, losses)
    times = solver.output_times(cfg)
    y = (ground_state(dims) if rho0 is None else np.asarray(rho0, dtype=complex)).ravel().copy()
    out = np.empty((len(times), dims.dim * dims.dim), dtype=complex)
    out[0] = y
    filled = 1
    for a, b, max_step in _segments(cfg, solver, times[0], times[-1]):
        sel = times[filled:]
        sel = sel[sel <= b + 1e-9]
        t_eval = np.append(sel, b) if not len(sel) or b - sel[-1] > 1e-9 else sel
        res = solve_ivp(liou.apply, (a, b), y, method="RK45", t_eval=t_eval, rtol=solver.rtol,
                        atol=solver.atol, max_step=max_step, first_step=min(max_step, 1e-3))
        if res.status != 0:
            t_fail = res.t[-1] if len(res.t) else a
            raise NumericalError(f"integration failed near t={t_fail:.4f} ps: {res.message}")
        out[filled:filled + len(sel)] = res.y[:, :len(sel)].T
        filled += len(sel)
        y = res.y[:, -1]
    states = out.reshape(-1, dims.dim, dims.dim)
    if validate:
        check_states(times, states, solver)
    return Trajectory(times, states, meta={"phonons": False})
