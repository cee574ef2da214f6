"""Linear-constraint machinery for quantum combs.

Membership conditions, the Lemma-style dual chains used to turn comb
maximizations into minimizations, the traceless comb space and its
orthogonal projection, and the affine characterization of beta_1 = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .sdp import MatExpr, SdpProblem
from .tensor import Layout, Operator, SpaceLabel, identity, kron, partial_trace


@dataclass
class CombStructure:
    """Ordered (input, output) label groups defining comb membership."""

    teeth: list  # list of (Layout, Layout)

    @property
    def n_teeth(self):
        return len(self.teeth)

    def flat_layout(self) -> Layout:
        labels = []
        for tin, tout in self.teeth:
            labels.extend(tin.labels)
            labels.extend(tout.labels)
        return Layout(labels)

    def prepend_input(self, label: SpaceLabel) -> "CombStructure":
        tin, tout = self.teeth[0]
        return CombStructure([(Layout([label] + list(tin.labels)), tout)] + list(self.teeth[1:]))

    def space_dims(self):
        """Dims of K_1, K_2, ..., K_2N in order."""
        out = []
        for tin, tout in self.teeth:
            out.append(tin.dim)
            out.append(tout.dim)
        return out


# ---------------------------------------------------------------------------
# membership conditions (primal side)
# ---------------------------------------------------------------------------

def comb_condition_residual(op: Operator, structure: CombStructure) -> float:
    """Largest violation of the recursive trace conditions for `op`."""
    flat = structure.flat_layout()
    cur = op.reorder(flat, flat)
    resid = 0.0
    teeth = structure.teeth
    for k in range(len(teeth) - 1, 0, -1):
        tin, tout = teeth[k]
        reduced = partial_trace(cur, list(tout.labels))
        lower = partial_trace(reduced, list(tin.labels)) * (1.0 / tin.dim)
        ref = kron(lower, identity(tin)).reorder(reduced.row_layout, reduced.col_layout)
        resid = max(resid, np.abs(reduced.matrix - ref.matrix).max())
        cur = lower
    tin, tout = teeth[0]
    last = partial_trace(cur, list(tout.labels))
    eye = np.eye(max(tin.dim, 1))
    resid = max(resid, np.abs(last.matrix - eye).max())
    return resid


class CombConditions:
    """Affine form of the comb membership conditions, solver consumable."""

    def __init__(self, structure: CombStructure):
        self.structure = structure

    def residual(self, op) -> float:
        return comb_condition_residual(op, self.structure)

    def add_to_problem(self, prob: SdpProblem, cvar, prefix="E"):
        """Add auxiliary E^(k) variables and the trace chain tying them to
        the PSD variable `cvar` (hermitian var on the flat layout, prefix
        ordering).  Returns the list of auxiliary variables."""
        dims = self.structure.space_dims()
        n = self.structure.n_teeth
        evars = []
        upper = cvar.expr()
        # accumulated dim of K_1..K_{2k-1}
        for k in range(n, 0, -1):
            d_out = dims[2 * k - 1]
            d_in = dims[2 * k - 2]
            traced = upper.trace_last(d_out)
            if k == 1:
                eye = MatExpr(d_in, const=np.eye(max(d_in, 1)))
                prob.add_equality(traced - eye, hermitian=True)
                break
            low_dim = traced.dim_r // d_in
            evar = prob.add_hermitian(f"{prefix}{k - 1}", low_dim)
            evars.append(evar)
            prob.add_equality(traced - evar.expr().kron_identity(d_in), hermitian=True)
            upper = evar.expr()
        return evars


def comb_conditions(structure: CombStructure) -> CombConditions:
    return CombConditions(structure)


def comb_max_primal(a: Operator, structure: CombStructure, tol=1e-8):
    """max Tr(a C) over combs of the given structure, solved directly."""
    flat = structure.flat_layout()
    am = a.reorder(flat, flat).matrix
    prob = SdpProblem()
    c = prob.add_hermitian("C", flat.dim)
    prob.add_psd(c.expr())
    comb_conditions(structure).add_to_problem(prob, c)
    # minimize -Tr(aC): coefficient of each parameter of C in Tr(aC)
    expr = c.expr()
    vi, ri, ci, vz = expr.entries()
    # Tr(a C) = sum_{rc} a[c, r] C[r, c]
    coefs = np.real(vz * am[ci, ri])
    for idx in range(len(vi)):
        if coefs[idx] != 0:
            prob.add_objective_term(vi[idx], -coefs[idx])
    sol = prob.solve(tol)
    sol = SdpSolutionView(sol, flip=True)
    return sol


class SdpSolutionView:
    """Negates the objective of a maximization solved as minimization."""

    def __init__(self, sol, flip=False):
        self.sol = sol
        self.status = sol.status
        self.value = -sol.value if flip else sol.value
        self.variables = sol.variables
        self.residuals = sol.residuals


# ---------------------------------------------------------------------------
# dual chains (Lemma-style dualization)
# ---------------------------------------------------------------------------

def dual_chain_vars(prob: SdpProblem, structure: CombStructure, prefix="Q", q1_var=None):
    """Create the dual chain Q^(1..N) for the comb structure and add the
    partial-trace chain equalities.

    Q^(k) lives on K_1 x ... x K_{2k-1} (prefix of the flat layout).  Returns
    (qvars, corner) where corner = Q^(N) (x) 1_{K_2N} as a MatExpr ready for
    a PSD constraint against the dualized objective operator.
    """
    dims = structure.space_dims()
    n = structure.n_teeth
    qvars = []
    d1 = dims[0]
    if q1_var is None:
        q1_var = prob.add_scalar(f"{prefix}1") if d1 <= 1 else prob.add_hermitian(f"{prefix}1", d1)
    qvars.append(q1_var)
    prev_dim = max(d1, 1)
    prev_expr = q1_var.expr()
    for k in range(2, n + 1):
        dim_k = prev_dim * dims[2 * k - 3] * dims[2 * k - 2]
        qk = prob.add_hermitian(f"{prefix}{k}", dim_k)
        # Tr_{K_{2k-1}} Q^(k) = Q^(k-1) (x) 1_{K_{2k-2}}
        prob.add_equality(
            qk.expr().trace_last(dims[2 * k - 2]) - prev_expr.kron_identity(dims[2 * k - 3]),
            hermitian=True,
        )
        qvars.append(qk)
        prev_dim = dim_k
        prev_expr = qk.expr()
    corner = prev_expr.kron_identity(dims[2 * n - 1])
    return qvars, corner


def dual_comb_conditions(structure: CombStructure, a: Operator, objective_weight=1.0):
    """SDP computing max_C Tr(aC) over combs via its dual:

    min Tr(Q^(1)) s.t. Q^(N) (x) 1 >= a and the dual trace chain.
    """
    flat = structure.flat_layout()
    am = a.reorder(flat, flat).matrix if isinstance(a, Operator) else np.asarray(a)
    prob = SdpProblem()
    qvars, corner = dual_chain_vars(prob, structure)
    prob.add_psd(corner - MatExpr(corner.dim_r, const=am))
    prob.set_objective_trace(qvars[0], objective_weight)
    return prob, qvars


# ---------------------------------------------------------------------------
# the traceless comb space X_m and its orthogonal projection
# ---------------------------------------------------------------------------

def _ptrace_last_mat(D, d):
    """Sparse matrix acting on column-stacked vec: X (Dd x Dd) -> Tr_last X."""
    out = None
    for e in range(d):
        row = sp.csr_matrix((np.array([1.0]), (np.array([0]), np.array([e]))), shape=(1, d))
        m = sp.kron(sp.identity(D), row)
        term = sp.kron(m, m)
        out = term if out is None else out + term
    return out


def _kron_id_last_mat(D, d):
    """Sparse matrix on vec: X (D x D) -> X (x) 1_d."""
    out = None
    for e in range(d):
        col = sp.csr_matrix((np.array([1.0]), (np.array([e]), np.array([0]))), shape=(d, 1))
        m = sp.kron(sp.identity(D), col)
        term = sp.kron(m, m)
        out = term if out is None else out + term
    return out


class XmSpace:
    """Traceless operators satisfying the comb chain of a control structure.

    The structure is the C~_00 one: first input empty, K_2 = H_1 (x) R_0 and
    so on.  Constraint rows are built sparsely; the orthogonal projection
    uses the row space of the constraint map.
    """

    def __init__(self, structure: CombStructure, rank_tol=1e-10):
        self.structure = structure
        self.layout = structure.flat_layout()
        D = self.layout.dim
        dims = structure.space_dims()
        rows = []
        # condition at level k (k = n..2): Tr_last(X^(k)) - (Tr_last2 X^(k) / d_in) (x) 1 = 0
        cur_map = sp.identity(D * D, format="csr")
        cur_dim = D
        n = structure.n_teeth
        for k in range(n, 1, -1):
            d_out = dims[2 * k - 1]
            d_in = dims[2 * k - 2]
            t1 = _ptrace_last_mat(cur_dim // d_out, d_out) @ cur_map
            lower_dim = cur_dim // d_out // d_in
            t2 = _ptrace_last_mat(lower_dim, d_in) @ t1
            cond = t1 - _kron_id_last_mat(lower_dim, d_in) @ t2 * (1.0 / d_in)
            rows.append(cond)
            cur_map = t2 * (1.0 / d_in)
            cur_dim = lower_dim
        # trace condition on X^(1) (equivalently on X itself)
        tr_final = _ptrace_last_mat(1, cur_dim) @ cur_map
        rows.append(tr_final)
        L = sp.vstack(rows).toarray()
        # orthonormal basis of the row space: X_m is its orthogonal complement
        u, s, vh = np.linalg.svd(L, full_matrices=False)
        rank = int((s > max(s[0], 1.0) * rank_tol).sum()) if len(s) else 0
        self._vrow = vh[:rank].conj().T  # (D^2, rank)
        self.codim = rank
        self.dim = D * D - rank

    def project(self, x: Operator):
        """Decompose x = x1 + x2 with x1 in X_m and x2 orthogonal to it."""
        xm = x.reorder(self.layout, self.layout).matrix
        v = xm.ravel(order="F")
        x2v = self._vrow @ (self._vrow.conj().T @ v)
        x1v = v - x2v
        D = self.layout.dim
        x1 = Operator(x1v.reshape(D, D, order="F"), self.layout, self.layout)
        x2 = Operator(x2v.reshape(D, D, order="F"), self.layout, self.layout)
        return x1, x2

    def member_residual(self, x: Operator) -> float:
        _, x2 = self.project(x)
        return float(np.linalg.norm(x2.matrix))


def project_Xm(x: Operator, xm: XmSpace):
    return xm.project(x)


# ---------------------------------------------------------------------------
# affine characterization of beta_1 = 0 (the Y chain)
# ---------------------------------------------------------------------------

class Beta1ZeroConditions:
    """Template for the constraint beta^(m)(h) in X_m-perp.

    Emits, jointly affine in (h, Y): beta(h) = Y^(m-1) (x) 1_{K_2m} with the
    dual trace chain down to a free complex scalar Y^(0).
    """

    def __init__(self, structure: CombStructure):
        self.structure = structure

    def add_to_problem(self, prob: SdpProblem, beta_expr: MatExpr, prefix="Y"):
        dims = self.structure.space_dims()
        m = self.structure.n_teeth
        yvars = []
        # beta = Y^(m-1) (x) 1_{K_2m}
        d_last = dims[2 * m - 1]
        low = beta_expr.dim_r // d_last
        if m == 1:
            y0 = prob.add_complex(f"{prefix}0", (1, 1))
            yvars.append(y0)
            prob.add_equality(beta_expr - y0.expr().kron_identity(d_last), hermitian=False)
            return yvars
        yk = prob.add_complex(f"{prefix}{m - 1}", (low, low))
        yvars.append(yk)
        prob.add_equality(beta_expr - yk.expr().kron_identity(d_last), hermitian=False)
        expr = yk.expr()
        # Tr_{K_{2j+1}} Y^(j) = Y^(j-1) (x) 1_{K_2j} down to the scalar Y^(0)
        for j in range(m - 1, 0, -1):
            tr = expr.trace_last(dims[2 * j])
            d_in = dims[2 * j - 1]
            low2 = tr.dim_r // d_in
            if j == 1:
                y0 = prob.add_complex(f"{prefix}0", (1, 1))
                yvars.append(y0)
                prob.add_equality(tr - y0.expr().kron_identity(d_in), hermitian=False)
            else:
                yj = prob.add_complex(f"{prefix}{j - 1}", (low2, low2))
                yvars.append(yj)
                prob.add_equality(tr - yj.expr().kron_identity(d_in), hermitian=False)
                expr = yj.expr()
        return yvars


def beta1_zero_conditions(structure: CombStructure) -> Beta1ZeroConditions:
    return Beta1ZeroConditions(structure)
