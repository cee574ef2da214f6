"""Quantum Fisher information for mixed states, pure states and channels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sdp import SdpProblem, Status, arrow, h_mixing_coeffs
from .tensor import Operator

# eigenvalue pairs with lambda_i + lambda_j below this are treated as kernel
SLD_KERNEL_TOL = 1e-12


@dataclass
class StatePair:
    """A density matrix together with its derivative at the working point."""

    rho: Operator
    drho: Operator

    def validate(self, tol=1e-9):
        if not self.rho.is_psd(tol):
            raise ValueError("rho is not a positive semidefinite density matrix")
        if abs(self.rho.trace() - 1.0) > tol:
            raise ValueError("rho is not normalized")
        if not self.drho.is_hermitian(tol):
            raise ValueError("drho is not hermitian")
        if abs(self.drho.trace()) > tol:
            raise ValueError("drho is not traceless")


def _as_matrices(s):
    if isinstance(s, StatePair):
        drho = s.drho.reorder(s.rho.row_layout, s.rho.col_layout)
        return s.rho.matrix, drho.matrix
    rho, drho = s
    rho = rho.matrix if isinstance(rho, Operator) else np.asarray(rho, complex)
    drho = drho.matrix if isinstance(drho, Operator) else np.asarray(drho, complex)
    return rho, drho


def sld(rho, drho, kernel_tol=SLD_KERNEL_TOL):
    """Symmetric logarithmic derivative, regularized on the kernel of rho."""
    rho = rho.matrix if isinstance(rho, Operator) else np.asarray(rho, complex)
    drho = drho.matrix if isinstance(drho, Operator) else np.asarray(drho, complex)
    if np.abs(rho - rho.conj().T).max() > 1e-8 or np.abs(drho - drho.conj().T).max() > 1e-8:
        raise ValueError("sld needs hermitian rho and drho")
    w, v = np.linalg.eigh((rho + rho.conj().T) / 2)
    d = v.conj().T @ drho @ v
    denom = w[:, None] + w[None, :]
    mask = denom > kernel_tol
    L = np.zeros_like(d)
    L[mask] = 2 * d[mask] / denom[mask]
    return v @ L @ v.conj().T


def qfi_mixed(s, kernel_tol=SLD_KERNEL_TOL) -> float:
    """QFI of a mixed state: Tr(rho L^2), kernel-kernel blocks dropped."""
    rho, drho = _as_matrices(s)
    if np.abs(rho - rho.conj().T).max() > 1e-8 or np.abs(drho - drho.conj().T).max() > 1e-8:
        raise ValueError("qfi_mixed needs hermitian inputs")
    w, v = np.linalg.eigh((rho + rho.conj().T) / 2)
    d = v.conj().T @ drho @ v
    denom = w[:, None] + w[None, :]
    mask = denom > kernel_tol
    return float(np.sum(2 * np.abs(d[mask]) ** 2 / denom[mask]))


def qfi_pure(psi, dpsi) -> float:
    """QFI of a pure-state family: 4(<dpsi|dpsi> - |<psi|dpsi>|^2)."""
    psi = np.asarray(psi, complex).ravel()
    dpsi = np.asarray(dpsi, complex).ravel()
    n = np.vdot(psi, psi).real
    if abs(n - 1.0) > 1e-9:
        raise ValueError("psi must be normalized")
    ov = np.vdot(psi, dpsi)
    return float(4 * (np.vdot(dpsi, dpsi).real - abs(ov) ** 2))


def _check_tp(kraus, tol=1e-9):
    s = sum(k.conj().T @ k for k in kraus)
    if np.abs(s - np.eye(s.shape[0])).max() > tol:
        raise ValueError("Kraus set is not trace preserving")


def channel_qfi(kset, tol=1e-8) -> float:
    """Ancilla-assisted single-use channel QFI, 4 min_h ||alpha(h)||.

    alpha(h) = sum_k Kdot~_k(h)^dag Kdot~_k(h); the minimization over the
    hermitian mixing matrix h is an operator-norm epigraph SDP.
    """
    kraus = [k.matrix if isinstance(k, Operator) else np.asarray(k, complex) for k in kset.kraus]
    dkraus = [k.matrix if isinstance(k, Operator) else np.asarray(k, complex) for k in kset.dkraus]
    _check_tp(kraus)
    r = len(kraus)
    dout, din = kraus[0].shape
    prob = SdpProblem()
    h = prob.add_hermitian("h", r)
    s = prob.add_scalar("s")
    corner = s.expr().kron_identity(din)
    # columns of C = Xdot(h)^dagger indexed by (k, a); column (k,a) in C^din
    const_cols = np.zeros((din, r * dout), complex)
    for k in range(r):
        const_cols[:, k * dout : (k + 1) * dout] = dkraus[k].conj().T
    var_cols = []
    for idx, k, k2, coef in h_mixing_coeffs(h):
        cols = np.arange(k * dout, (k + 1) * dout)
        var_cols.append((idx, cols, np.conj(coef) * kraus[k2].conj().T))
    prob.add_psd(arrow(corner, r * dout, const_cols, var_cols))
    prob.add_objective_term(s.offset, 4.0)
    sol = prob.solve(tol)
    if sol.status is not Status.Optimal:
        raise RuntimeError(f"channel_qfi solve failed: {sol.status}")
    return sol.value
