"""Time-translation invariant process tensor for the pure-dephasing phonon bath.

The discretised influence functional of a Gaussian bath coupled through
``sigma^dagger sigma`` is a product of two-time factors
``I_k(nu_n, nu_{n-k})`` where ``nu = 2 lambda_ket + lambda_bra`` enumerates the
four pairs of coupling-operator eigenvalues (0 for G, 1 for X).  Its uniform
matrix-product form ``F[a, nu, b]`` is built by contracting the factors layer
by layer in the memory distance k, from the longest memory down to k = 0.
Each layer is a bond-4 MPO ("delay line") applied to an infinite uniform MPS,
followed by truncation in the symmetric canonical gauge of the infinite chain.

The pair ``nu = 0`` (both sides in G) leaves every factor equal to one, so it
doubles as the boundary index: the left boundary vector is the fixed point of an
infinite past spent in the ground state, the right boundary the fixed point of
an unconstrained future.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigs

from .bath import InfluenceCoeffs, PhononSpec, eta_coefficients

log = logging.getLogger(__name__)

NU = 4
LAM_KET = np.array([0, 0, 1, 1])
LAM_BRA = np.array([0, 1, 0, 1])
DIFF = (LAM_KET - LAM_BRA).astype(float)
SUM = (LAM_KET + LAM_BRA).astype(float)


class BondDimensionError(RuntimeError):
    pass


@dataclass(frozen=True)
class CompressionConfig:
    threshold: float = 1e-11
    max_bond: int = 256

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.max_bond < 1:
            raise ValueError("max_bond must be >= 1")


def influence_factor(eta_k: complex, diagonal: bool = False) -> np.ndarray:
    """Matrix I[later, earlier] = exp(-D_l (Re eta D_e + i Im eta S_e)).

    With ``diagonal`` the same-cell factor I_0(nu) is returned as a vector.
    """
    if diagonal:
        return np.exp(-DIFF * (eta_k.real * DIFF + 1j * eta_k.imag * SUM))
    return np.exp(-np.outer(DIFF, eta_k.real * DIFF + 1j * eta_k.imag * SUM))


def brute_force_influence(coeffs: InfluenceCoeffs, path) -> complex:
    """Influence functional of a finite path by direct summation of the exponent."""
    path = np.asarray(path)
    eta = coeffs.eta
    phase = 0j
    for n, nu in enumerate(path):
        for k in range(0, min(n, coeffs.n_c) + 1):
            e = eta[k]
            nu_e = path[n - k]
            phase += -DIFF[nu] * (e.real * DIFF[nu_e] + 1j * e.imag * SUM[nu_e])
    return complex(np.exp(phase))


# ---- uniform MPS utilities ----------------------------------------------------------

# Unitary on a nu-valued bond slot with conj(W) = P W, P the 1 <-> 2 exchange.  Every
# layer tensor is invariant under complex conjugation combined with nu = 1 <-> 2 on
# its physical and delayed indices; in the rotated bond basis the symmetry no longer
# permutes the bond, so the canonical gauge and all truncated tensors are real.
_S = 1 / np.sqrt(2)
FIXED_POINT_TOL = 1e-10
# layers up to this bond size use dense fixed points
DENSE_CHI = 24
# QR power steps refining the fixed-point factors
POLISH_ITER = 2
W_NU = np.array([[1, 0, 0, 0], [0, _S, 1j * _S, 0], [0, _S, -1j * _S, 0], [0, 0, 0, 1]], dtype=complex)


class DelayLayer:
    """Uniform MPS tensor of one memory layer, kept in factored form.

    With ``B[a, p, c, b]`` the tensor of the layers above (c carries the pair index
    delayed by one step) the layer tensor is

        A[(a, c), (p, q), (b, d)] = B[a, p, c, b] I(p, q) delta(d, q)

    for a two-time factor matrix ``I``, or, for the closing same-time layer,

        A[(a, c), p, (b, d)] = B[a, p, c, b] I0(p) delta(d, p).
    """

    def __init__(self, B: np.ndarray, factor: np.ndarray, bond_weights: np.ndarray | None = None):
        self.B = B
        # canonical weights of B's bond, used to seed the fixed-point solver
        self.bond_weights = bond_weights
        self.final = factor.ndim == 1
        self.factor = factor
        self.D = B.shape[0]
        self.chi = self.D * NU
        self.weight = np.diag(np.abs(factor) ** 2) if self.final else np.abs(factor) ** 2
        # Bp[p] maps the right bond b to the left pair (a, c)
        self.Bp = B.transpose(1, 0, 2, 3).reshape(NU, self.chi, self.D)

    def dense(self) -> np.ndarray:
        eye = np.eye(NU)
        if self.final:
            A = np.einsum("apcb,p,pd->acpbd", self.B, self.factor, eye)
            return A.reshape(self.chi, NU, self.chi)
        A = np.einsum("apcb,pq,qd->acpqbd", self.B, self.factor, eye)
        return A.reshape(self.chi, NU * NU, self.chi)

    def right_map(self, x: np.ndarray) -> np.ndarray:
        """X -> sum_s A_s X A_s^+."""
        D, chi = self.D, self.chi
        X = x.reshape(D, NU, D, NU)
        Xd = np.einsum("bqcq->qbc", X)
        Z = np.einsum("pq,qbc->pbc", self.weight, Xd)
        T = self.Bp @ Z  # (p, i, c)
        out = T.transpose(1, 0, 2).reshape(chi, NU * D) @ self.Bp.conj().transpose(0, 2, 1).reshape(NU * D, chi)
        return out.ravel()

    def left_map(self, x: np.ndarray) -> np.ndarray:
        """X -> sum_s A_s^+ X A_s."""
        D = self.D
        X = x.reshape(self.chi, self.chi)
        W = self.Bp.conj().transpose(0, 2, 1) @ (X @ self.Bp)  # (p, b, c)
        Wq = np.einsum("pq,pbc->qbc", self.weight, W)
        out = np.zeros((D, NU, D, NU), dtype=complex)
        for q in range(NU):
            out[:, q, :, q] = Wq[q]
        return out.ravel()

    def right_factor_map(self, X: np.ndarray) -> np.ndarray:
        """Factor of right_map(X X^+) obtained by QR decompositions, without squaring."""
        D = self.D
        X3 = X.reshape(D, NU, -1)
        blocks = []
        for p in range(NU):
            # sum_q w[p, q] X_q X_q^+ = T T^+
            Yp = np.concatenate([np.sqrt(self.weight[p, q]) * X3[:, q, :] for q in range(NU)], axis=1)
            T = np.linalg.qr(Yp.conj().T, mode="r").conj().T
            blocks.append(self.Bp[p] @ T)
        G = np.concatenate(blocks, axis=1)
        return np.linalg.qr(G.conj().T, mode="r").conj().T

    def left_factor_map(self, Z: np.ndarray) -> np.ndarray:
        """Factor of left_map(Z^+ Z) obtained by QR decompositions, without squaring."""
        D = self.D
        M = [Z @ self.Bp[p] for p in range(NU)]
        out = np.zeros((NU, D, D, NU), dtype=complex)
        for q in range(NU):
            H = np.concatenate([np.sqrt(self.weight[p, q]) * M[p] for p in range(NU)], axis=0)
            T = np.linalg.qr(H, mode="r")
            out[q, :T.shape[0], :, q] = T
        return out.reshape(NU * D, self.chi)

    def sandwich(self, left: np.ndarray, right: np.ndarray) -> np.ndarray:
        """left @ A @ right on the bond indices, without forming A."""
        D = self.D
        T1 = np.einsum("xac,apcb->xpb", left.reshape(-1, D, NU), self.B, optimize=True)
        R3 = right.reshape(D, NU, -1)
        if self.final:
            return self.factor[None, :, None] * np.einsum("xpb,bpy->xpy", T1, R3, optimize=True)
        out = self.factor[None, :, :, None] * np.einsum("xpb,bqy->xpqy", T1, R3, optimize=True)
        return out.reshape(out.shape[0], NU * NU, out.shape[3])


def _dominant_fixed_point(mv, chi: int, dense: np.ndarray | None = None,
                          guess: np.ndarray | None = None,
                          tol: float = FIXED_POINT_TOL) -> tuple[complex, np.ndarray]:
    """Dominant eigenpair of a CP transfer map as a Hermitian matrix with positive trace."""
    if dense is not None:
        w, v = np.linalg.eig(dense)
        i = int(np.argmax(np.abs(w)))
        lam, vec = w[i], v[:, i]
    else:
        op = LinearOperator((chi * chi, chi * chi), matvec=mv, dtype=complex)
        v0 = (np.eye(chi) if guess is None else guess).astype(complex).ravel()
        w, v = eigs(op, k=1, which="LM", v0=v0, tol=tol, maxiter=20000)
        lam, vec = w[0], v[:, 0]
    X = vec.reshape(chi, chi)
    X = X * np.exp(-1j * np.angle(np.trace(X)))
    return lam, 0.5 * (X + X.conj().T)


def _hermitian_factor(M: np.ndarray) -> np.ndarray:
    """Matrix F with F F^+ equal to the PSD part of Hermitian M."""
    w, v = np.linalg.eigh(M)
    return v * np.sqrt(np.clip(w, 0.0, None))[None, :]


def _polish_factors(right_map, left_map, X: np.ndarray, Z: np.ndarray,
                    n_iter: int = POLISH_ITER) -> tuple[np.ndarray, np.ndarray]:
    """Refine factors of the right (X X^+) and left (Z^+ Z) fixed points.

    Power steps applied to the factors through QR decompositions resolve small
    canonical weights to machine precision, which square roots of the fixed
    points cannot.
    """
    for _ in range(n_iter):
        X = right_map(X)
        X = X / np.linalg.norm(X)
        Z = left_map(Z)
        Z = Z / np.linalg.norm(Z)
    return X, Z


def _dense_factor_maps(A: np.ndarray):
    chi = A.shape[0]

    def right(X):
        G = np.einsum("asb,bk->ask", A, X).reshape(chi, -1)
        return np.linalg.qr(G.conj().T, mode="r").conj().T

    def left(Z):
        H = np.einsum("ra,asb->srb", Z, A).reshape(-1, chi)
        return np.linalg.qr(H, mode="r")

    return right, left


def truncate_layer(layer: DelayLayer, comp: CompressionConfig) -> tuple[np.ndarray, np.ndarray]:
    """Truncate a layer tensor in the symmetric canonical gauge of the infinite chain.

    Returns the truncated tensor, real-gauge and rescaled to unit transfer spectral
    radius, and the normalised canonical singular values kept.
    """
    chi, D = layer.chi, layer.D
    if chi <= DENSE_CHI:
        A = layer.dense()
        E = np.einsum("asb,csd->acbd", A, A.conj()).reshape(chi * chi, chi * chi)
        lam_r, R = _dominant_fixed_point(None, chi, E)
        _, L = _dominant_fixed_point(None, chi, E.T)
        L = L.conj()
        maps = _dense_factor_maps(A)
    else:
        guess = None
        if layer.bond_weights is not None and len(layer.bond_weights) == D:
            guess = np.kron(np.diag(layer.bond_weights), np.eye(NU))
        # fixed points must resolve the smallest kept canonical weights
        tol = max(min(FIXED_POINT_TOL, 1e-2 * comp.threshold), 1e-14)
        lam_r, R = _dominant_fixed_point(layer.right_map, chi, guess=guess, tol=tol)
        _, L = _dominant_fixed_point(layer.left_map, chi, guess=guess, tol=tol)
        maps = layer.right_factor_map, layer.left_factor_map
    Xc, Zc = _polish_factors(*maps, _hermitian_factor(R), _hermitian_factor(L).conj().T)
    V = np.kron(np.eye(D), W_NU)
    Xc, Zc = V.conj().T @ Xc, Zc @ V
    # R and L are real in the rotated basis, so real and imaginary parts stack into real factors
    X = np.hstack([Xc.real, Xc.imag])  # R = X X^T
    Y = np.vstack([Zc.real, Zc.imag])  # L = Y^T Y
    P, S, Qt = np.linalg.svd(Y @ X)
    if S[0] <= 0:
        raise BondDimensionError("degenerate uniform MPS (vanishing canonical weights)")
    keep = int(np.sum(S > comp.threshold * S[0]))
    if keep > comp.max_bond:
        raise BondDimensionError(
            f"bond dimension {keep} required at threshold {comp.threshold:g} exceeds max_bond={comp.max_bond}")
    P, S, Q = P[:, :keep], S[:keep], Qt[:keep].T
    isq = 1.0 / np.sqrt(S)
    left = (isq[:, None] * P.T) @ Y
    right = X @ (Q * isq[None, :])
    # undo the bond rotation: left V^+ and V right
    left = np.einsum("xae,ce->xac", left.reshape(keep, D, NU), W_NU.conj()).reshape(keep, chi)
    right = np.einsum("de,bey->bdy", W_NU, right.reshape(D, NU, keep)).reshape(chi, keep)
    out = layer.sandwich(left, right) / np.sqrt(abs(lam_r))
    return out, S / S[0]


# ---- process tensor ----------------------------------------------------------------


@dataclass
class ProcessTensor:
    """Uniform process tensor with boundary vectors.

    ``tensor[a, nu, b]`` is the influence of one time step; the influence
    functional of a path of n steps is ``left @ F(nu_1) ... F(nu_n) @ right``.
    """

    tensor: np.ndarray
    left: np.ndarray
    right: np.ndarray
    coeffs: InfluenceCoeffs
    comp: CompressionConfig
    n_steps: int = 0
    layer_bonds: list = field(default_factory=list)

    @property
    def bond_dim(self) -> int:
        return self.tensor.shape[0]

    @property
    def dt(self) -> float:
        return self.coeffs.dt

    @property
    def bond_dims(self) -> list[int]:
        return [self.bond_dim] * max(self.n_steps - 1, 0)

    def step_tensors(self, n_steps: int | None = None) -> list[np.ndarray]:
        """Explicit list of per-step tensors with the boundary vectors absorbed."""
        n = self.n_steps if n_steps is None else n_steps
        if n < 1:
            return []
        ts = [self.tensor] * n
        ts = list(ts)
        ts[0] = np.einsum("a,asb->sb", self.left, ts[0])[None]
        ts[-1] = np.einsum("asb,b->as", ts[-1], self.right)[..., None]
        return ts

    def contract(self, path) -> complex:
        """Influence functional value for a sequence of pair indices."""
        v = self.left.astype(complex)
        for nu in path:
            v = v @ self.tensor[:, nu, :]
        return complex(v @ self.right)


def _identity_pt(coeffs: InfluenceCoeffs, comp: CompressionConfig, n_steps: int) -> ProcessTensor:
    return ProcessTensor(np.ones((1, NU, 1), dtype=complex), np.ones(1, dtype=complex),
                         np.ones(1, dtype=complex), coeffs, comp, n_steps, [1])


def _boundaries(F: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalise F and attach boundary vectors.

    ``right`` is the dominant eigenvector of F[nu=0]; F is scaled so that its
    eigenvalue is one.  An exact influence functional leaves ``right`` invariant
    under F[nu=3] as well (a future spent on the diagonal does not act back),
    which is what makes the reduced dynamics trace preserving.  Truncation breaks
    this at the threshold level, so F[nu=3] receives the minimum-norm rank-one
    correction that restores it.  The conjugation symmetry between the two
    coherence slices, exact in the real gauge, is re-imposed against round-off.
    """
    T = F[:, 0, :].real
    w, vr = np.linalg.eig(T)
    i = int(np.argmax(np.abs(w)))
    mu = w[i].real
    wl, vl = np.linalg.eig(T.T)
    j = int(np.argmin(np.abs(wl - mu)))
    right, left = vr[:, i].real, vl[:, j].real
    left = left / (left @ right)
    F = F / mu
    F1 = 0.5 * (F[:, 1, :] + F[:, 2, :].conj())
    F[:, 1, :], F[:, 2, :] = F1, F1.conj()
    F3 = F[:, 3, :].real
    defect = right - F3 @ right
    F[:, 3, :] = F3 + np.outer(defect, right) / (right @ right)
    F[:, 0, :] = T / mu
    log.debug("boundary: mu=%.3e causality defect %.3e", mu - 1, np.abs(defect).max())
    return F, left, right


def build_from_coeffs(coeffs: InfluenceCoeffs, comp: CompressionConfig = CompressionConfig(),
                      n_steps: int = 0) -> ProcessTensor:
    """Contract the memory layers from the longest retained delay down to k = 0."""
    eta = coeffs.eta
    if not np.any(eta):
        return _identity_pt(coeffs, comp, n_steps)
    nz = np.nonzero(np.abs(eta) > 1e-15 * np.abs(eta).max())[0]
    top = int(nz.max())
    bonds = []
    if top == 0:
        F = influence_factor(eta[0], diagonal=True)[None, :, None].astype(complex)
    else:
        # B[a, p, q, b]: p = nu_n, q = nu_{n-k}
        B = influence_factor(eta[top])[None, :, :, None].astype(complex)
        S = None
        for k in range(top - 1, 0, -1):
            A, S = truncate_layer(DelayLayer(B, influence_factor(eta[k]), S), comp)
            B = A.reshape(A.shape[0], NU, NU, A.shape[2])
            bonds.append(B.shape[0])
            log.debug("layer k=%d bond %d", k, B.shape[0])
        F, _ = truncate_layer(DelayLayer(B, influence_factor(eta[0], diagonal=True), S), comp)
    bonds.append(F.shape[0])
    F, left, right = _boundaries(F)
    return ProcessTensor(F, left, right, coeffs, comp, n_steps, bonds)


def build_process_tensor(spec: PhononSpec, dt_pt: float = 0.0125, n_c: int = 1280,
                         comp: CompressionConfig = CompressionConfig(), n_steps: int = 0) -> ProcessTensor:
    coeffs = eta_coefficients(spec, dt_pt, n_c)
    return build_from_coeffs(coeffs, comp, n_steps)
