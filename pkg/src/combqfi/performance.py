"""Performance operator, beta operator, and the comb-value evaluators.

For a block comb with vectorized Kraus columns |K_k> the slices
|c_{k,j}> = <j|K_k> and |cdot_{k,j}(h)> = <j|Kdot~_k(h)> over a basis |j>
of the final output space generate everything the bound SDPs need:

    omega(h) = sum_{k,j} |cdot_{k,j}(h)><cdot_{k,j}(h)|
    beta(h)  = sum_{k,j} |cdot_{k,j}(h)><c_{k,j}|
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channels import BlockComb
from .combs import CombStructure, dual_comb_conditions
from .sdp import MatExpr, Status, h_mixing_coeffs
from .tensor import Layout, Operator, virtual


@dataclass
class PerfData:
    """Slice data of a block comb: everything is affine or quadratic in h."""

    block: BlockComb
    keep_layout: Layout     # spaces on which omega/beta live
    out_dim: int
    c: np.ndarray           # (r, D_keep, d) slices of |K_k>
    cdot0: np.ndarray       # (r, D_keep, d) slices of |Kdot_k| before mixing

    @property
    def r(self):
        return self.c.shape[0]

    @property
    def dim(self):
        return self.c.shape[1]

    def cdot(self, h):
        """Mixed derivative slices at a numeric hermitian h."""
        h = np.asarray(h, dtype=complex)
        return self.cdot0 - 1j * np.einsum("kl,lij->kij", h, self.c)

    def omega(self, h):
        cd = self.cdot(h)
        return np.einsum("kij,klj->il", cd, cd.conj())

    def beta(self, h):
        cd = self.cdot(h)
        return np.einsum("kij,klj->il", cd, self.c.conj())

    def beta_expr(self, hvar, indices=None) -> MatExpr:
        """beta(h) as an affine matrix expression in the parameters of hvar.

        `indices` maps the local hvar indices to global Kraus indices (used
        when h is restricted to a sector block).
        """
        idx = np.arange(self.r) if indices is None else np.asarray(indices)
        e = MatExpr(self.dim)
        base = np.einsum("kij,klj->il", self.cdot0[idx], self.c[idx].conj())
        e.const += base
        for p, k, k2, coef in h_mixing_coeffs(hvar):
            # term coef * |c_{k2,j}> <c_{k,j}|
            m = coef * np.einsum("ij,lj->il", self.c[idx[k2]], self.c[idx[k]].conj())
            rr, cc = np.nonzero(m)
            if len(rr):
                e.add_entries(np.full(len(rr), p), rr, cc, m[rr, cc])
        return e


def build_perf(block: BlockComb) -> PerfData:
    """Slice the block's Kraus vectors over its final output space."""
    out = block.out_labels()
    keep = block.layout.without(out)
    dims = block.layout.dims
    keep_axes = block.layout.axes(keep.labels)
    out_axes = block.layout.axes(out)
    d = int(np.prod([block.layout.dims[a] for a in out_axes]))

    def slices(vecs):
        t = vecs.reshape(dims + (block.r,))
        t = t.transpose([len(dims)] + keep_axes + out_axes)
        return t.reshape(block.r, keep.dim, d)

    return PerfData(block, keep, d, slices(block.kvecs), slices(block.dkvecs))


def _vexpand(mat):
    """[[0, B/2], [B^dag/2, 0]] on the virtual-qubit extension."""
    D = mat.shape[0]
    out = np.zeros((2 * D, 2 * D), complex)
    out[:D, D:] = mat / 2
    out[D:, :D] = mat.conj().T / 2
    return out


def lambda_A(perf: PerfData, h, structure: CombStructure, tol=1e-7, solver="ipm"):
    """4 max over control combs of Tr(omega(h) C~_00), via the dual chain."""
    om = Operator(perf.omega(h), perf.keep_layout, perf.keep_layout)
    prob, _ = dual_comb_conditions(structure, om)
    sol = prob.solve(tol, solver=solver)
    if sol.status is not Status.Optimal:
        raise RuntimeError(f"lambda_A solve failed: {sol.status}")
    return 4.0 * sol.value


def lambda_B(perf: PerfData, h, structure: CombStructure, tol=1e-7, solver="ipm"):
    """2 max over two-block combs of Re Tr(beta(h) C~_10).

    The positivity coupling between the blocks of the two-block comb is
    encoded by dualizing over the virtual-qubit-extended structure.
    """
    beta = perf.beta(h)
    v = virtual(0)
    ext = structure.prepend_input(v)
    lay = Layout([v] + list(perf.keep_layout.labels))
    a = Operator(_vexpand(beta), lay, lay)
    prob, _ = dual_comb_conditions(ext, a)
    sol = prob.solve(tol, solver=solver)
    if sol.status is not Status.Optimal:
        raise RuntimeError(f"lambda_B solve failed: {sol.status}")
    return 2.0 * sol.value


def c00_structure(block: BlockComb) -> CombStructure:
    """Control-comb structure Comb[(0, H1 (x) R0), (H2, H3), ...] matching
    the block's open spaces in canonical order."""
    keep = block.layout.without(block.out_labels())
    labels = list(keep.labels)
    probes = [l for l in labels if l.kind == "H"]
    first_group = [l for l in labels if l.kind != "H"] + [probes[0]]
    # preserve canonical order inside the first group
    first_group = [l for l in labels if l in set(first_group)]
    teeth = [(Layout([]), Layout(first_group))]
    rest = probes[1:]
    for i in range(0, len(rest), 2):
        teeth.append((Layout([rest[i]]), Layout([rest[i + 1]])))
    return CombStructure(teeth)
