"""Gaussian laser pulses and the system Hamiltonian in the exciton rotating frame."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import CONST, SystemDims, build_a, build_sigma, to_angular

SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class PulseSpec:
    """One Gaussian pulse.

    ``area`` is the pulse area in rad, ``sigma`` the Gaussian width in ps,
    ``detuning`` the laser-exciton detuning in meV (negative: red-detuned),
    ``delay`` the envelope centre in ps and ``phase`` a carrier phase in rad.
    """

    area: float
    sigma: float
    detuning: float = 0.0
    delay: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"pulse sigma must be positive, got {self.sigma}")
        if not self.area >= 0:
            raise ValueError(f"pulse area must be non-negative, got {self.area}")

    @property
    def omega(self) -> float:
        """Detuning as angular frequency (rad/ps)."""
        return to_angular(self.detuning)


@dataclass(frozen=True)
class DriveConfig:
    pulses: tuple[PulseSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "pulses", tuple(self.pulses))
        if not self.pulses:
            raise ValueError("a drive needs at least one pulse")

    def with_pulse(self, i: int, **changes) -> "DriveConfig":
        pulses = list(self.pulses)
        pulses[i] = replace(pulses[i], **changes)
        return DriveConfig(tuple(pulses))

    def support(self, nsig: float = 5.0) -> tuple[float, float]:
        """Time interval outside of which every envelope is below exp(-nsig^2/2) of its peak."""
        lo = min(p.delay - nsig * p.sigma for p in self.pulses)
        hi = max(p.delay + nsig * p.sigma for p in self.pulses)
        return lo, hi

    @property
    def max_sigma(self) -> float:
        return max(p.sigma for p in self.pulses)

    @property
    def max_abs_detuning(self) -> float:
        return max(abs(p.detuning) for p in self.pulses)


@dataclass(frozen=True)
class CavitySpec:
    g: float = 0.05  # meV
    detuning: float = 0.0  # hbar omega_CX, meV
    n_max: int = 2

    def __post_init__(self):
        if not self.g >= 0:
            raise ValueError(f"cavity coupling g must be non-negative, got {self.g}")
        SystemDims(self.n_max)

    @property
    def dims(self) -> SystemDims:
        return SystemDims(self.n_max)


def super_paper(sigma: float = 2.0) -> DriveConfig:
    return DriveConfig((
        PulseSpec(area=15.95 * np.pi, sigma=sigma, detuning=-2.06),
        PulseSpec(area=15.78 * np.pi, sigma=sigma, detuning=-5.08),
    ))


def re_paper(area: float = np.pi, sigma: float = 2.0) -> DriveConfig:
    return DriveConfig((PulseSpec(area=area, sigma=sigma, detuning=0.0),))


PRESETS = {"super-paper": super_paper, "re-paper": re_paper}


def envelope(p: PulseSpec, t):
    """Instantaneous Rabi frequency Omega(t) in 1/ps."""
    t = np.asarray(t, dtype=float)
    return p.area / (SQRT_2PI * p.sigma) * np.exp(-((t - p.delay) ** 2) / (2.0 * p.sigma**2))


def drive_amplitude(cfg: DriveConfig, t) -> complex:
    """Coefficient h(t) (meV) of sigma^dagger in the drive Hamiltonian; the sigma
    coefficient is conj(h)."""
    h = 0.0j
    for p in cfg.pulses:
        h = h - 0.5 * CONST.hbar * envelope(p, t) * np.exp(-1j * (p.omega * t + p.phase))
    return h


def drive_hamiltonian(cfg: DriveConfig, t: float, dims: SystemDims = SystemDims()) -> np.ndarray:
    s = build_sigma(dims)
    h = drive_amplitude(cfg, t)
    return h * s.conj().T + np.conj(h) * s


def jc_hamiltonian(cav: CavitySpec) -> np.ndarray:
    dims = cav.dims
    s, a = build_sigma(dims), build_a(dims)
    ad, sd = a.conj().T, s.conj().T
    return cav.detuning * ad @ a + cav.g * (a @ sd + ad @ s)


def total_hamiltonian(cfg: DriveConfig, cav: CavitySpec, t: float) -> np.ndarray:
    return drive_hamiltonian(cfg, t, cav.dims) + jc_hamiltonian(cav)
