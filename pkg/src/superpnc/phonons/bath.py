"""LA-phonon bath: spectral density, correlation function and discretised memory kernel.

Frequencies are angular (rad/ps); J(omega) is returned in 1/ps so that
``int J(w)/w^2 dw`` is dimensionless.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from ..core import CONST


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class PhononSpec:
    """Deformation-potential coupling to bulk LA phonons (GaAs defaults).

    Lengths in nm, deformation potentials in eV, mass density in kg/m^3 and
    sound velocity in m/s.  ``scale`` multiplies J(omega) as a whole.

    With ``compensate_polaron_shift`` the bare exciton energy is raised by the
    static polaron shift, so that all detunings (lasers and cavity) refer to the
    phonon-dressed transition.
    """

    temperature: float = 4.2
    a_e: float = 3.0
    a_h: float | None = None
    D_e: float = 7.0
    D_h: float = -3.5
    rho_d: float = 5370.0
    c_s: float = 5110.0
    scale: float = 1.0
    enabled: bool = True
    compensate_polaron_shift: bool = True

    def __post_init__(self):
        if not self.temperature >= 0:
            raise ValueError(f"temperature must be non-negative, got {self.temperature}")
        if not self.a_e > 0:
            raise ValueError(f"a_e must be positive, got {self.a_e}")
        if self.a_h is not None and not self.a_h > 0:
            raise ValueError(f"a_h must be positive, got {self.a_h}")
        if not (self.rho_d > 0 and self.c_s > 0):
            raise ValueError("mass density and sound velocity must be positive")
        if not self.scale >= 0:
            raise ValueError("scale must be non-negative")

    @property
    def hole_radius(self) -> float:
        return self.a_e / 1.15 if self.a_h is None else self.a_h

    @property
    def is_zero(self) -> bool:
        return self.scale == 0 or (self.D_e == 0 and self.D_h == 0)

    @property
    def omega_max(self) -> float:
        """Frequency beyond which both form factors are below exp(-30)."""
        a = min(self.a_e, self.hole_radius) * 1e3 / self.c_s  # ps
        return np.sqrt(120.0) / a


def _prefactor(spec: PhononSpec) -> float:
    # SI prefactor 1/(4 pi^2 rho hbar c^5) with omega in rad/ps, J in 1/ps and D in eV
    hbar_si = CONST.hbar * 1e-3 * CONST.e_charge * 1e-12
    pref = (1e12) ** 3 * CONST.e_charge**2 / (4 * np.pi**2 * spec.rho_d * hbar_si * spec.c_s**5)
    return spec.scale * pref * 1e-12


def spectral_density(spec: PhononSpec, omega):
    omega = np.asarray(omega, dtype=float)
    if np.any(omega < 0):
        raise ValueError("spectral density is defined for omega >= 0")
    te = spec.a_e * 1e3 / spec.c_s  # a/c in ps
    th = spec.hole_radius * 1e3 / spec.c_s
    form = spec.D_e * np.exp(-(omega * te) ** 2 / 4) - spec.D_h * np.exp(-(omega * th) ** 2 / 4)
    return _prefactor(spec) * omega**3 * form**2


def coth_factor(spec: PhononSpec, omega):
    """coth(hbar omega / 2 kB T), equal to 1 at T = 0."""
    omega = np.asarray(omega, dtype=float)
    if spec.temperature == 0:
        return np.ones_like(omega)
    x = CONST.hbar * omega / (2 * CONST.kB * spec.temperature)
    with np.errstate(divide="ignore"):
        return np.where(x > 1e-8, 1 / np.tanh(np.maximum(x, 1e-300)), 1 / np.maximum(x, 1e-300))


def _quad(f, spec: PhononSpec, scale: float = 0.0, epsrel: float = 1e-10, **kw) -> float:
    # oscillatory tails make a purely relative target unreachable; the absolute floor
    # is relative to the magnitude ``scale`` of the non-oscillating integral
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(f, 0.0, spec.omega_max, epsrel=epsrel, epsabs=epsrel * scale,
                                    limit=2000, **kw)
        except integrate.IntegrationWarning as e:
            raise QuadratureError(str(e)) from e
    return val


def bath_correlation(spec: PhononSpec, t: float) -> complex:
    """C(t) = int dw J(w) [coth(hbar w / 2kT) cos(wt) - i sin(wt)]  (1/ps^2)."""
    if spec.is_zero:
        return 0j

    def jc(w):
        return spectral_density(spec, w) * coth_factor(spec, w) if w > 0 else 0.0

    def j(w):
        return spectral_density(spec, w)

    c0 = _quad(jc, spec)
    if t == 0:
        return complex(c0, 0.0)
    re = _quad(jc, spec, c0, weight="cos", wvar=t)
    im = -_quad(j, spec, c0, weight="sin", wvar=t)
    return complex(re, im)


def ibm_decoherence(spec: PhononSpec, t: float) -> complex:
    """Independent-boson exponent Gamma(t) = int dw J/w^2 [coth (1 - cos wt) + i (sin wt - wt)].

    For an undriven dot the coherence <X|rho|G> evolves as exp(-Gamma(t)) in the
    exciton frame, so |rho_GX(t)| = |rho_GX(0)| exp(-Re Gamma(t)).
    """
    if t < 0:
        raise ValueError("ibm_decoherence needs t >= 0")
    if spec.is_zero or t == 0:
        return 0j

    def re_f(w):
        if w == 0:
            return 0.0
        return spectral_density(spec, w) / w**2 * coth_factor(spec, w) * 2 * np.sin(w * t / 2) ** 2

    def im_f(w):
        if w == 0:
            return 0.0
        return spectral_density(spec, w) / w**2 * (np.sin(w * t) - w * t)

    scale = _quad(lambda w: spectral_density(spec, w) / w**2 * coth_factor(spec, w) if w > 0 else 0.0, spec)
    return complex(_quad(re_f, spec, scale), _quad(im_f, spec, scale * max(1.0, t)))


def polaron_shift(spec: PhononSpec) -> float:
    """Static exciton shift -int J(w)/w dw in rad/ps (negative)."""
    if spec.is_zero:
        return 0.0
    return -_quad(lambda w: spectral_density(spec, w) / w if w > 0 else 0.0, spec)


@dataclass(frozen=True)
class InfluenceCoeffs:
    """Memory coefficients eta_k = int int C(t - s) over grid cells separated by k steps.

    eta_0 is the same-cell integral over s < t.  Coefficients beyond ``n_c`` are zero.
    """

    dt: float
    n_c: int
    eta: np.ndarray

    def reconstructed_gamma(self, n: int) -> complex:
        """Decoherence exponent after n steps of a constant path, sum_k (n - k) eta_k."""
        k = np.arange(min(n, self.n_c + 1))
        return complex(np.sum((n - k) * self.eta[k]))


def _gauss_legendre_grid(wmax: float, panels: int, order: int = 16):
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, wmax, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def eta_coefficients(spec: PhononSpec, dt: float, n_c: int, panels: int | None = None) -> InfluenceCoeffs:
    """Discretised bath-correlation double integrals for a piecewise-constant path.

    The second time-difference of Gamma is taken analytically inside the frequency
    integral, which avoids cancellation for large k:
    ``eta_k = int dw J/w^2 4 sin^2(w dt / 2) [coth cos(k w dt) - i sin(k w dt)]``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if n_c < 0 or int(n_c) != n_c:
        raise ValueError("n_c must be a non-negative integer")
    n_c = int(n_c)
    eta = np.zeros(n_c + 1, dtype=complex)
    if spec.is_zero:
        return InfluenceCoeffs(dt, n_c, eta)
    wmax = spec.omega_max
    if panels is None:
        # resolve the fastest oscillation cos(n_c w dt) with a few panels per period
        panels = int(max(200, 4 * n_c * dt * wmax / (2 * np.pi)))
    w, wt = _gauss_legendre_grid(wmax, panels)
    base = wt * spectral_density(spec, w) / w**2
    coth = coth_factor(spec, w)
    eta[0] = np.sum(base * (coth * 2 * np.sin(w * dt / 2) ** 2 + 1j * (np.sin(w * dt) - w * dt)))
    s2 = 4 * np.sin(w * dt / 2) ** 2
    for k in range(1, n_c + 1):
        eta[k] = np.sum(base * s2 * (coth * np.cos(k * w * dt) - 1j * np.sin(k * w * dt)))
    return InfluenceCoeffs(dt, n_c, eta)
