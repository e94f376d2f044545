"""Units, Hilbert space and reduced density matrices of the QD-cavity system.

Basis ordering is QD-major: ``|G0>, |G1>, ..., |G n_max>, |X0>, ..., |X n_max>``,
so the state ``|S n>`` sits at index ``S * (n_max + 1) + n`` with ``G = 0`` and
``X = 1``.  Energies are in meV, times in ps, rates in 1/ps.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PhysConstants:
    hbar: float = 0.6582119569  # meV ps
    kB: float = 0.08617333  # meV / K
    e_charge: float = 1.602176634e-19  # J / eV


CONST = PhysConstants()


def to_angular(energy_mev: float) -> float:
    """Energy in meV -> angular frequency in rad/ps."""
    return energy_mev / CONST.hbar


def to_energy(omega: float) -> float:
    return omega * CONST.hbar


@dataclass(frozen=True)
class SystemDims:
    n_max: int = 2

    def __post_init__(self):
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError(f"n_max must be an integer >= 1, got {self.n_max!r}")

    @property
    def n_fock(self) -> int:
        return self.n_max + 1

    @property
    def dim(self) -> int:
        return 2 * (self.n_max + 1)

    def index(self, qd: str | int, n: int) -> int:
        s = {"G": 0, "X": 1}.get(qd, qd)
        if s not in (0, 1) or not 0 <= n <= self.n_max:
            raise IndexError(f"no basis state |{qd}{n}> for n_max={self.n_max}")
        return s * self.n_fock + n

    def ket(self, qd: str | int, n: int) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.index(qd, n)] = 1.0
        return v

    def projector(self, qd: str | int, n: int) -> np.ndarray:
        v = self.ket(qd, n)
        return np.outer(v, v.conj())

    def exciton_mask(self) -> np.ndarray:
        """Eigenvalues of sigma^dagger sigma on the full basis (0 for G, 1 for X)."""
        return np.repeat([0, 1], self.n_fock)


def dims_of(rho: np.ndarray) -> SystemDims:
    d = rho.shape[0]
    if rho.ndim != 2 or rho.shape[1] != d or d % 2 or d < 4:
        raise ValueError(f"matrix of shape {rho.shape} is not a QD-cavity operator")
    return SystemDims(d // 2 - 1)


def build_sigma(dims: SystemDims) -> np.ndarray:
    """QD lowering operator |G><X| tensored with the cavity identity."""
    s = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
    return np.kron(s, np.eye(dims.n_fock))


def build_a(dims: SystemDims) -> np.ndarray:
    """Cavity annihilation operator on the truncated Fock space, QD identity."""
    a = np.diag(np.sqrt(np.arange(1, dims.n_fock)), k=1).astype(complex)
    return np.kron(np.eye(2), a)


def number_operators(dims: SystemDims) -> tuple[np.ndarray, np.ndarray]:
    """Return (sigma^dagger sigma, a^dagger a)."""
    s, a = build_sigma(dims), build_a(dims)
    return s.conj().T @ s, a.conj().T @ a


def partial_trace_cavity(rho: np.ndarray) -> np.ndarray:
    """Reduced cavity matrix rho_nm = sum_S <Sn|rho|Sm>."""
    dims = dims_of(rho)
    r = np.asarray(rho).reshape(2, dims.n_fock, 2, dims.n_fock)
    return np.einsum("snsm->nm", r)


def partial_trace_qd(rho: np.ndarray) -> np.ndarray:
    """Reduced QD matrix rho_SS' = sum_n <Sn|rho|S'n>, ordered (G, X)."""
    dims = dims_of(rho)
    r = np.asarray(rho).reshape(2, dims.n_fock, 2, dims.n_fock)
    return np.einsum("snrn->sr", r)


@dataclass(frozen=True)
class DensityDiagnostics:
    hermiticity_defect: float
    trace_defect: float
    min_eigenvalue: float
    tol: float

    @property
    def hermitian_ok(self) -> bool:
        return self.hermiticity_defect <= self.tol

    @property
    def trace_ok(self) -> bool:
        return self.trace_defect <= self.tol

    @property
    def positive_ok(self) -> bool:
        return self.min_eigenvalue >= -self.tol

    @property
    def ok(self) -> bool:
        return self.hermitian_ok and self.trace_ok and self.positive_ok

    def violations(self) -> list[str]:
        out = []
        if not self.hermitian_ok:
            out.append(f"hermiticity defect {self.hermiticity_defect:.3e}")
        if not self.trace_ok:
            out.append(f"trace defect {self.trace_defect:.3e}")
        if not self.positive_ok:
            out.append(f"negative eigenvalue {self.min_eigenvalue:.3e}")
        return out


def validate_density(rho: np.ndarray, tol: float = 1e-8, check_positivity: bool = True) -> DensityDiagnostics:
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {rho.shape}")
    herm = float(np.max(np.abs(rho - rho.conj().T))) if rho.size else 0.0
    tr = float(abs(np.trace(rho) - 1.0))
    if check_positivity:
        min_ev = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min())
    else:
        min_ev = 0.0
    return DensityDiagnostics(herm, tr, min_ev, tol)


def purity_bound_defect(rho2: np.ndarray, i: int = 0, j: int = 1) -> float:
    """|rho_ij|^2 - rho_ii rho_jj; non-positive for any PSD matrix."""
    return float(abs(rho2[i, j]) ** 2 - (rho2[i, i] * rho2[j, j]).real)


# Liouville space. Density matrices are vectorised row-major, vec(rho)[i*d + j] = rho[i, j],
# so vec(A rho B) = kron(A, B.T) vec(rho).


def commutator_super(h: np.ndarray) -> np.ndarray:
    """Superoperator of rho -> h rho - rho h."""
    eye = np.eye(h.shape[0])
    return np.kron(h, eye) - np.kron(eye, h.T)


def lindblad_super(op: np.ndarray, rate: float) -> np.ndarray:
    eye = np.eye(op.shape[0])
    ada = op.conj().T @ op
    return rate * (np.kron(op, op.conj()) - 0.5 * np.kron(ada, eye) - 0.5 * np.kron(eye, ada.T))


def liouville_coupling_index(dims: SystemDims) -> np.ndarray:
    """For each Liouville element |i><j| the pair index 2*lambda_i + lambda_j of the
    exciton-number eigenvalues on the ket and bra side."""
    lam = dims.exciton_mask()
    return (2 * lam[:, None] + lam[None, :]).ravel()
