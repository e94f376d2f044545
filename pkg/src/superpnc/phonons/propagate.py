"""Phonon-coupled propagation: system Liouvillian split around process-tensor steps.

The augmented state ``S[alpha, x]`` carries the process-tensor bond index alpha
next to the row-major Liouville index x of the QD-cavity density matrix.  One
grid step of length ``dt`` is

    S <- U(t + dt/2, t + dt) . F[nu(x)] . U(t, t + dt/2) S

where F acts diagonally in x through the coupling pair index nu(x).  Reduced
states are read out by contracting the bond with the process tensor's right
boundary vector (an unconstrained future leaves past influences unchanged).
"""
from __future__ import annotations

import logging

import numpy as np
from scipy.linalg import expm

from ..core import liouville_coupling_index, to_energy
from ..dynamics import (
    Liouvillian,
    LossRates,
    NumericalError,
    SolverConfig,
    Trajectory,
    check_states,
    ground_state,
    propagate,
)
from ..drive import CavitySpec, DriveConfig
from .bath import PhononSpec, polaron_shift
from .process_tensor import CompressionConfig, ProcessTensor, NU
from . import cache

log = logging.getLogger(__name__)

# fourth-order commutator-free Magnus coefficients (two exponentials per step)
_C1, _C2 = 0.5 - np.sqrt(3) / 6, 0.5 + np.sqrt(3) / 6
_A1, _A2 = 0.25 + np.sqrt(3) / 6, 0.25 - np.sqrt(3) / 6
# envelopes beyond this many widths (< 1.3e-14 of peak) are treated as switched off
FREE_NSIG = 8.0


def interval_propagator(liou: Liouvillian, a: float, b: float, max_sub: float) -> np.ndarray:
    """Superoperator propagating a row-major vectorised state from time a to b."""
    n = max(1, int(np.ceil((b - a) / max_sub - 1e-12)))
    h = (b - a) / n
    U = np.eye(liou.static.shape[0], dtype=complex)
    for j in range(n):
        t = a + j * h
        L1, L2 = liou(t + _C1 * h), liou(t + _C2 * h)
        U = expm(h * (_A2 * L1 + _A1 * L2)) @ expm(h * (_A1 * L1 + _A2 * L2)) @ U
    return U


class _PropagatorCache:
    """Interval propagators; drive-free intervals share one cached exponential."""

    def __init__(self, liou: Liouvillian, cfg: DriveConfig, solver: SolverConfig):
        self.liou = liou
        self.lo, self.hi = cfg.support(FREE_NSIG)
        self.max_sub = solver.max_step_pulse
        self._free: dict[float, np.ndarray] = {}

    def __call__(self, a: float, b: float) -> np.ndarray:
        if b <= self.lo or a >= self.hi:
            key = round(b - a, 12)
            if key not in self._free:
                self._free[key] = expm((b - a) * self.liou.static)
            return self._free[key]
        return interval_propagator(self.liou, a, b, self.max_sub)


def _apply_influence(state: np.ndarray, tensor: np.ndarray, groups: list[np.ndarray]) -> np.ndarray:
    # state[alpha, x]; tensor[alpha, nu, beta]
    out = np.empty((tensor.shape[2], state.shape[1]), dtype=complex)
    for nu, idx in enumerate(groups):
        out[:, idx] = tensor[:, nu, :].T @ state[:, idx]
    return out


def propagate_with_phonons(cfg: DriveConfig, cav: CavitySpec, losses: LossRates = LossRates(),
                           solver: SolverConfig = SolverConfig(), spec: PhononSpec = PhononSpec(),
                           comp: CompressionConfig = CompressionConfig(), rho0: np.ndarray | None = None,
                           dt_pt: float = 0.0125, n_c: int = 1280, pt: ProcessTensor | None = None,
                           validate: bool = True) -> Trajectory:
    """Propagate with the LA-phonon bath included through a uniform process tensor.

    The output grid is the process-tensor grid, so ``solver.output_stride`` must be
    an integer multiple of ``dt_pt``.  A disabled or vanishing bath runs the
    phonon-free solver.  A prebuilt ``pt`` skips construction and cache lookup.
    """
    if pt is None and (not spec.enabled or spec.is_zero):
        return propagate(cfg, cav, losses, solver, rho0=rho0, validate=validate)
    if pt is None:
        pt = cache.get_process_tensor(spec, dt_pt, n_c, comp)
    dt = pt.dt
    ratio = solver.output_stride / dt
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ValueError(f"output stride {solver.output_stride} is not a multiple of the grid step {dt}")
    every = int(round(ratio))

    dims = cav.dims
    d2 = dims.dim**2
    shift = -to_energy(polaron_shift(spec)) if spec.compensate_polaron_shift else 0.0
    liou = Liouvillian(cfg, cav, losses, exciton_shift=shift)
    props = _PropagatorCache(liou, cfg, solver)
    t0, t1 = solver.window(cfg)
    n_steps = int(round((t1 - t0) / dt))
    nu_of = liouville_coupling_index(dims)
    groups = [np.nonzero(nu_of == nu)[0] for nu in range(NU)]

    rho = ground_state(dims) if rho0 is None else np.asarray(rho0, dtype=complex)
    state = np.outer(pt.left, rho.ravel())
    right = pt.right
    n_out = n_steps // every + 1
    times = t0 + dt * every * np.arange(n_out)
    out = np.empty((n_out, d2), dtype=complex)
    out[0] = rho.ravel()
    for n in range(n_steps):
        t = t0 + n * dt
        state = state @ props(t, t + 0.5 * dt).T
        state = _apply_influence(state, pt.tensor, groups)
        state = state @ props(t + 0.5 * dt, t + dt).T
        if (n + 1) % every == 0:
            out[(n + 1) // every] = right @ state
        if not np.all(np.isfinite(state)):
            raise NumericalError(f"non-finite augmented state at t={t + dt:.4f} ps")
    states = out.reshape(-1, dims.dim, dims.dim)
    if validate:
        check_states(times, states, solver)
    meta = {"phonons": True, "bond_dim": pt.bond_dim, "dt_pt": dt, "n_c": pt.coeffs.n_c,
            "threshold": pt.comp.threshold, "temperature": spec.temperature, "exciton_shift": shift}
    return Trajectory(times, states, meta=meta)
