"""Standard-form SDPs with hermitian matrix blocks and a pluggable solver.

A problem is affine in a real parameter vector x: hermitian matrix variables
and free complex matrices are parameterized entrywise by real scalars.  PSD
constraints and equality constraints are affine matrix expressions in x.

The reference backend is a dense primal-dual interior-point method: cvxopt's
conelp drives the iteration while the KKT systems are formed and factored
here with numpy (complex blocks are real-embedded first).  An scs backend is
kept for independent cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg
import scipy.sparse as sp

DEFAULT_TOL = 1e-7


class Status(Enum):
    Optimal = "optimal"
    Infeasible = "infeasible"
    Unbounded = "unbounded"
    NumericalFailure = "numerical_failure"


# ---------------------------------------------------------------------------
# affine matrix expressions
# ---------------------------------------------------------------------------

class MatExpr:
    """Affine matrix-valued expression E(x) = const + sum_i x_i E_i.

    Variable coefficients are stored as COO chunks (var, row, col, value).
    """

    __slots__ = ("dim_r", "dim_c", "const", "_vi", "_ri", "_ci", "_vz")

    def __init__(self, dim_r, dim_c=None, const=None):
        self.dim_r = int(dim_r)
        self.dim_c = int(dim_r if dim_c is None else dim_c)
        self.const = np.zeros((self.dim_r, self.dim_c), complex)
        if const is not None:
            self.const += np.asarray(const, dtype=complex)
        self._vi, self._ri, self._ci, self._vz = [], [], [], []

    @property
    def square(self):
        return self.dim_r == self.dim_c

    def add_entries(self, var_idx, rows, cols, vals):
        var_idx = np.atleast_1d(np.asarray(var_idx, dtype=np.int64))
        rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
        cols = np.atleast_1d(np.asarray(cols, dtype=np.int64))
        vals = np.atleast_1d(np.asarray(vals, dtype=complex))
        n = max(len(var_idx), len(rows), len(cols), len(vals))
        if len(var_idx) == 1:
            var_idx = np.full(n, var_idx[0])
        self._vi.append(var_idx)
        self._ri.append(rows)
        self._ci.append(cols)
        self._vz.append(vals)

    def entries(self):
        if not self._vi:
            z = np.zeros(0)
            return z.astype(np.int64), z.astype(np.int64), z.astype(np.int64), z.astype(complex)
        return (
            np.concatenate(self._vi),
            np.concatenate(self._ri),
            np.concatenate(self._ci),
            np.concatenate(self._vz),
        )

    def copy(self):
        out = MatExpr(self.dim_r, self.dim_c, self.const)
        out._vi = list(self._vi)
        out._ri = list(self._ri)
        out._ci = list(self._ci)
        out._vz = list(self._vz)
        return out

    def __add__(self, other):
        if not (self.dim_r == other.dim_r and self.dim_c == other.dim_c):
            raise ValueError("shape mismatch")
        out = self.copy()
        out.const = out.const + other.const
        out._vi += other._vi
        out._ri += other._ri
        out._ci += other._ci
        out._vz += other._vz
        return out

    def __sub__(self, other):
        return self + (other * (-1.0))

    def __mul__(self, scalar):
        out = MatExpr(self.dim_r, self.dim_c, self.const * scalar)
        out._vi = list(self._vi)
        out._ri = list(self._ri)
        out._ci = list(self._ci)
        out._vz = [v * scalar for v in self._vz]
        return out

    __rmul__ = __mul__

    def kron_identity(self, d):
        """E -> E (x) 1_d (identity appended on a new trailing factor)."""
        out = MatExpr(self.dim_r * d, self.dim_c * d, np.kron(self.const, np.eye(d)))
        for vi, ri, ci, vz in zip(self._vi, self._ri, self._ci, self._vz):
            for e in range(d):
                out._vi.append(vi)
                out._ri.append(ri * d + e)
                out._ci.append(ci * d + e)
                out._vz.append(vz)
        return out

    def trace_last(self, d):
        """Partial trace over a trailing tensor factor of dimension d."""
        if self.dim_r % d or self.dim_c % d:
            raise ValueError("dimension not divisible by traced factor")
        pr, pc = self.dim_r // d, self.dim_c // d
        cst = self.const.reshape(pr, d, pc, d)
        out = MatExpr(pr, pc, np.einsum("aebe->ab", cst))
        for vi, ri, ci, vz in zip(self._vi, self._ri, self._ci, self._vz):
            keep = (ri % d) == (ci % d)
            if keep.any():
                out._vi.append(vi[keep])
                out._ri.append(ri[keep] // d)
                out._ci.append(ci[keep] // d)
                out._vz.append(vz[keep])
        return out

    def dagger(self):
        out = MatExpr(self.dim_c, self.dim_r, self.const.conj().T)
        for vi, ri, ci, vz in zip(self._vi, self._ri, self._ci, self._vz):
            out._vi.append(vi)
            out._ri.append(ci)
            out._ci.append(ri)
            out._vz.append(vz.conj())
        return out

    def value(self, x):
        """Evaluate at a parameter vector."""
        vi, ri, ci, vz = self.entries()
        m = self.const.copy()
        if len(vi):
            np.add.at(m, (ri, ci), vz * x[vi])
        return m

    def max_var(self):
        vi, _, _, _ = self.entries()
        return int(vi.max()) + 1 if len(vi) else 0


# ---------------------------------------------------------------------------
# variables
# ---------------------------------------------------------------------------

@dataclass
class HermitianVar:
    """Hermitian matrix variable: real diagonal + complex upper triangle."""

    name: str
    dim: int
    offset: int

    @property
    def n_params(self):
        return self.dim * self.dim

    def _param(self, r, c):
        # diagonal first, then (re, im) pairs of the upper triangle row-major
        d = self.dim
        if r == c:
            return self.offset + r
        if r > c:
            r, c = c, r
        k = (d * (d - 1) // 2) - ((d - r) * (d - r - 1) // 2) + (c - r - 1)
        return self.offset + d + 2 * k

    def expr(self):
        e = MatExpr(self.dim)
        d = self.dim
        for r in range(d):
            e.add_entries(self._param(r, r), [r], [r], [1.0])
            for c in range(r + 1, d):
                p = self._param(r, c)
                e.add_entries([p, p], [r, c], [c, r], [1.0, 1.0])
                e.add_entries([p + 1, p + 1], [r, c], [c, r], [1j, -1j])
        return e

    def value(self, x):
        m = np.zeros((self.dim, self.dim), complex)
        for r in range(self.dim):
            m[r, r] = x[self._param(r, r)]
            for c in range(r + 1, self.dim):
                p = self._param(r, c)
                m[r, c] = x[p] + 1j * x[p + 1]
                m[c, r] = x[p] - 1j * x[p + 1]
        return m


@dataclass
class ComplexVar:
    """Free complex matrix variable (no hermiticity), entrywise re/im params."""

    name: str
    shape: tuple
    offset: int

    @property
    def n_params(self):
        return 2 * self.shape[0] * self.shape[1]

    def expr(self):
        nr, nc = self.shape
        e = MatExpr(nr, nc)
        idx = np.arange(nr * nc)
        r, c = idx // nc, idx % nc
        e.add_entries(self.offset + 2 * idx, r, c, np.ones(nr * nc))
        e.add_entries(self.offset + 2 * idx + 1, r, c, 1j * np.ones(nr * nc))
        return e

    def value(self, x):
        nr, nc = self.shape
        raw = x[self.offset : self.offset + self.n_params]
        return (raw[0::2] + 1j * raw[1::2]).reshape(nr, nc)


@dataclass
class ScalarVar:
    """Single free real scalar."""

    name: str
    offset: int

    n_params = 1

    def expr(self):
        e = MatExpr(1)
        e.add_entries(self.offset, [0], [0], [1.0])
        return e

    def value(self, x):
        return float(x[self.offset])


# ---------------------------------------------------------------------------
# problem container
# ---------------------------------------------------------------------------

@dataclass
class SdpSolution:
    status: Status
    value: float
    variables: dict
    residuals: dict
    x: np.ndarray | None = None
    info: dict = field(default_factory=dict)


class SdpProblem:
    """min c.x subject to affine equalities and PSD matrix constraints."""

    def __init__(self):
        self.n_params = 0
        self.variables = {}
        self.psd_blocks = []          # list of square MatExpr required >= 0
        self.equalities = []          # list of (MatExpr, hermitian_flag)
        self._obj_idx = []
        self._obj_coef = []
        self.obj_offset = 0.0
        self.real_embedded = False

    # -- variable declaration -------------------------------------------

    def add_hermitian(self, name, dim):
        v = HermitianVar(name, dim, self.n_params)
        self._register(v)
        return v

    def add_complex(self, name, shape):
        v = ComplexVar(name, tuple(shape), self.n_params)
        self._register(v)
        return v

    def add_scalar(self, name):
        v = ScalarVar(name, self.n_params)
        self._register(v)
        return v

    def _register(self, v):
        if v.name in self.variables:
            raise ValueError(f"duplicate variable {v.name}")
        self.variables[v.name] = v
        self.n_params += v.n_params

    # -- constraints and objective ----------------------------------------

    def add_psd(self, expr: MatExpr):
        if not expr.square:
            raise ValueError("PSD block must be square")
        self.psd_blocks.append(expr)

    def add_equality(self, expr: MatExpr, hermitian=False):
        """Constrain E(x) == 0 elementwise."""
        self.equalities.append((expr, hermitian))

    def add_objective_term(self, idx, coef):
        self._obj_idx.append(int(idx))
        self._obj_coef.append(float(coef))

    def set_objective_trace(self, var, weight=1.0):
        """Add weight * Tr(var) to the minimized objective (hermitian/scalar var)."""
        if isinstance(var, ScalarVar):
            self.add_objective_term(var.offset, weight)
            return
        for r in range(var.dim):
            self.add_objective_term(var._param(r, r), weight)

    # -- compilation ------------------------------------------------------

    def _cvec(self):
        c = np.zeros(self.n_params)
        for i, w in zip(self._obj_idx, self._obj_coef):
            c[i] += w
        return c

    def _block_is_real(self, expr):
        if np.abs(expr.const.imag).max(initial=0.0) > 0:
            return False
        _, _, _, vz = expr.entries()
        return not (len(vz) and np.abs(vz.imag).max() > 0)

    def _compile_psd(self):
        """Return (G coo parts, hvec, block sizes) in the real-embedded form."""
        rows_all, cols_all, vals_all = [], [], []
        hparts = []
        sizes = []
        offset = 0
        for expr in self.psd_blocks:
            p = expr.dim_r
            real = self._block_is_real(expr)
            q = p if real else 2 * p
            vi, ri, ci, vz = expr.entries()
            if real:
                rr = [ri]
                cc = [ci]
                vv = [vz.real]
                h0 = expr.const.real
            else:
                rr = [ri, ri, ri + p, ri + p]
                cc = [ci, ci + p, ci, ci + p]
                vv = [vz.real, -vz.imag, vz.imag, vz.real]
                h0 = np.block(
                    [[expr.const.real, -expr.const.imag], [expr.const.imag, expr.const.real]]
                )
            for r2, c2, v2 in zip(rr, cc, vv):
                nz = v2 != 0
                rows_all.append(offset + c2[nz] * q + r2[nz])
                cols_all.append(vi[nz])
                vals_all.append(-v2[nz])
            hparts.append(h0.ravel(order="F"))
            sizes.append(q)
            offset += q * q
        hvec = np.concatenate(hparts) if hparts else np.zeros(0)
        return rows_all, cols_all, vals_all, hvec, sizes

    def _compile_eq(self):
        rows, cols, vals, bvals = [], [], [], []
        nrow = 0
        for expr, herm in self.equalities:
            vi, ri, ci, vz = expr.entries()
            nr, nc = expr.dim_r, expr.dim_c
            if herm:
                if nr != nc:
                    raise ValueError("hermitian equality must be square")
                # one real row per diagonal entry, re+im per strict upper entry
                re_id = np.full((nr, nc), -1, dtype=np.int64)
                im_id = np.full((nr, nc), -1, dtype=np.int64)
                k = nrow
                for r in range(nr):
                    re_id[r, r] = k
                    k += 1
                    for c in range(r + 1, nc):
                        re_id[r, c] = k
                        im_id[r, c] = k + 1
                        k += 2
                upper = ri <= ci
                viu, riu, ciu, vzu = vi[upper], ri[upper], ci[upper], vz[upper]
                rows.append(re_id[riu, ciu])
                cols.append(viu)
                vals.append(vzu.real)
                off = riu < ciu
                rows.append(im_id[riu[off], ciu[off]])
                cols.append(viu[off])
                vals.append(vzu[off].imag)
                b = np.zeros(k - nrow)
                for r in range(nr):
                    b[re_id[r, r] - nrow] = -expr.const[r, r].real
                    for c in range(r + 1, nc):
                        b[re_id[r, c] - nrow] = -expr.const[r, c].real
                        b[im_id[r, c] - nrow] = -expr.const[r, c].imag
                bvals.append(b)
                nrow = k
            else:
                flat = ri * nc + ci
                rows.append(nrow + 2 * flat)
                cols.append(vi)
                vals.append(vz.real)
                rows.append(nrow + 2 * flat + 1)
                cols.append(vi)
                vals.append(vz.imag)
                b = np.zeros(2 * nr * nc)
                b[0::2] = -expr.const.real.ravel()
                b[1::2] = -expr.const.imag.ravel()
                bvals.append(b)
                nrow += 2 * nr * nc
        if nrow == 0:
            return sp.csr_matrix((0, self.n_params)), np.zeros(0)
        rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
        vals = np.concatenate(vals) if vals else np.zeros(0)
        A = sp.coo_matrix((vals, (rows, cols)), shape=(nrow, self.n_params)).tocsr()
        b = np.concatenate(bvals)
        return A, b

    # -- transformations ---------------------------------------------------

    def embed_real(self):
        """Map each matrix block X -> [[Re X, -Im X], [Im X, Re X]].

        The variables and objective are shared, so optima coincide and the
        original complex variable values are recovered from the same x.
        """
        out = SdpProblem()
        out.n_params = self.n_params
        out.variables = dict(self.variables)
        out._obj_idx = list(self._obj_idx)
        out._obj_coef = list(self._obj_coef)
        out.obj_offset = self.obj_offset
        out.equalities = list(self.equalities)
        out.real_embedded = True
        for expr in self.psd_blocks:
            p = expr.dim_r
            vi, ri, ci, vz = expr.entries()
            e = MatExpr(
                2 * p,
                const=np.block(
                    [[expr.const.real, -expr.const.imag], [expr.const.imag, expr.const.real]]
                ),
            )
            if len(vi):
                e.add_entries(vi, ri, ci, vz.real)
                e.add_entries(vi, ri, ci + p, -vz.imag)
                e.add_entries(vi, ri + p, ci, vz.imag)
                e.add_entries(vi, ri + p, ci + p, vz.real)
            out.add_psd(e)
        return out

    # -- residuals ----------------------------------------------------------

    def residuals_at(self, x, gap=None):
        A, b = self._compile_eq()
        eq = float(np.abs(A @ x - b).max()) if A.shape[0] else 0.0
        mineig = 0.0
        for expr in self.psd_blocks:
            m = expr.value(x)
            m = (m + m.conj().T) / 2
            w = np.linalg.eigvalsh(m)
            mineig = min(mineig, float(w.min()))
        res = {"primal_eq": eq, "psd_min_eig": mineig}
        if gap is not None:
            res["duality_gap"] = gap
        return res

    def objective_at(self, x):
        return float(self._cvec() @ x + self.obj_offset)

    def extract(self, x):
        return {name: v.value(x) for name, v in self.variables.items()}

    # -- solver entry ---------------------------------------------------------

    def solve(self, tol=DEFAULT_TOL, solver="ipm", **opts) -> SdpSolution:
        if tol <= 0:
            raise ValueError("tol must be positive")
        if solver == "ipm":
            return _solve_conelp(self, tol, **opts)
        if solver == "scs":
            return _solve_scs(self, tol, **opts)
        raise ValueError(f"unknown solver {solver!r}")

    # -- text dump -------------------------------------------------------------

    def dump(self, path):
        """Write a self-describing text form (dimensions, objective, triplets)."""
        with open(path, "w") as f:
            f.write("combqfi sdp dump v1\n")
            f.write(f"n_params {self.n_params}\n")
            for name, v in self.variables.items():
                kind = type(v).__name__
                shape = getattr(v, "dim", getattr(v, "shape", 1))
                f.write(f"var {name} {kind} {shape} offset {v.offset}\n")
            c = self._cvec()
            for i in np.nonzero(c)[0]:
                f.write(f"obj {i} {c[i]:.17g}\n")
            f.write(f"obj_offset {self.obj_offset:.17g}\n")
            for bi, expr in enumerate(self.psd_blocks):
                f.write(f"psd_block {bi} dim {expr.dim_r}\n")
                for (r, c2), z in np.ndenumerate(expr.const):
                    if z != 0:
                        f.write(f"  const {r} {c2} {z.real:.17g} {z.imag:.17g}\n")
                vi, ri, ci, vz = expr.entries()
                for k in range(len(vi)):
                    f.write(
                        f"  coef {vi[k]} {ri[k]} {ci[k]} {vz[k].real:.17g} {vz[k].imag:.17g}\n"
                    )
            A, b = self._compile_eq()
            Ac = A.tocoo()
            f.write(f"equalities {A.shape[0]}\n")
            for r, c2, v in zip(Ac.row, Ac.col, Ac.data):
                f.write(f"  a {r} {c2} {v:.17g}\n")
            for i, v in enumerate(b):
                if v != 0:
                    f.write(f"  b {i} {v:.17g}\n")


# ---------------------------------------------------------------------------
# builder helpers
# ---------------------------------------------------------------------------

def h_mixing_coeffs(hvar: HermitianVar):
    """Expand the Kraus-mixing rule K~dot_k = Kdot_k - i sum_k' h_{kk'} K_k'
    over the real parameters of a hermitian h.

    Yields (param_idx, k, k2, coef) with coef the complex factor multiplying
    K_{k2} inside K~dot_k for that parameter.
    """
    r = hvar.dim
    for k in range(r):
        for k2 in range(r):
            if k == k2:
                yield hvar._param(k, k), k, k2, -1j
            elif k < k2:
                p = hvar._param(k, k2)
                yield p, k, k2, -1j
                yield p + 1, k, k2, 1.0
            else:
                p = hvar._param(k2, k)
                yield p, k, k2, -1j
                yield p + 1, k, k2, -1.0


def arrow(corner: MatExpr, ncols, const_cols=None, var_cols=()):
    """Schur-complement ("arrow") block for corner >= C(x) C(x)^dagger.

    corner is a D x D affine expression; the columns of C are affine in x:
    const_cols is (D, ncols) and var_cols is an iterable of
    (param_idx, col_indices, block) with block of shape (D, len(col_indices)).
    Returns the (D + ncols) hermitian expression
    [[corner, C], [C^dagger, 1]].
    """
    D = corner.dim_r
    e = MatExpr(D + ncols)
    e.const[:D, :D] = corner.const
    e.const[D:, D:] = np.eye(ncols)
    vi, ri, ci, vz = corner.entries()
    if len(vi):
        e.add_entries(vi, ri, ci, vz)
    if const_cols is not None:
        const_cols = np.asarray(const_cols, dtype=complex)
        e.const[:D, D:] += const_cols
        e.const[D:, :D] += const_cols.conj().T
    for idx, cols, block in var_cols:
        block = np.asarray(block, dtype=complex)
        rr, cc = np.nonzero(block)
        if not len(rr):
            continue
        vv = block[rr, cc]
        gcols = D + np.asarray(cols, dtype=np.int64)[cc]
        e.add_entries(np.full(len(rr), idx), rr, gcols, vv)
        e.add_entries(np.full(len(rr), idx), gcols, rr, vv.conj())
    return e


def norm_bound_block(t_expr: MatExpr, m_expr: MatExpr):
    """Hermitian block [[t 1, M], [M^dagger, t 1]] encoding ||M|| <= t."""
    nr, nc = m_expr.dim_r, m_expr.dim_c
    e = MatExpr(nr + nc)
    top = t_expr.kron_identity(nr)
    bot = t_expr.kron_identity(nc)
    vi, ri, ci, vz = top.entries()
    e.const[:nr, :nr] = top.const
    if len(vi):
        e.add_entries(vi, ri, ci, vz)
    vi, ri, ci, vz = bot.entries()
    e.const[nr:, nr:] = bot.const
    if len(vi):
        e.add_entries(vi, ri + nr, ci + nr, vz)
    vi, ri, ci, vz = m_expr.entries()
    e.const[:nr, nr:] = m_expr.const
    e.const[nr:, :nr] = m_expr.const.conj().T
    if len(vi):
        e.add_entries(vi, ri, ci + nr, vz)
        e.add_entries(vi, ci + nr, ri, vz.conj())
    return e


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def _reduce_rows(A, b, feastol):
    """Replace A x = b by an equivalent full-row-rank system; detect
    affine inconsistency.

    Large systems are first compressed with a seeded random row mixer
    (row space and solution set are preserved for generic mixers of
    height >= rank + 1), then exact rank reduction runs on the small
    dense system.  Returns (A_red, b_red, consistent).
    """
    m, n = A.shape
    if m == 0:
        return sp.csr_matrix((0, n)), b, True
    A = sp.csr_matrix(A)
    ncols_used = len(np.unique(A.tocoo().col))
    if m > max(1500, ncols_used + 64):
        rng = np.random.default_rng(1234)
        r_t = min(m, ncols_used + 32)
        T = rng.standard_normal((r_t, m)) / np.sqrt(m)
        Ac = T @ A
        bc = T @ b
    else:
        Ac = A.toarray()
        bc = b
    scale = np.abs(Ac).max(initial=1.0)
    _, r, piv = scipy.linalg.qr(Ac.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int((diag > max(diag[0] if len(diag) else 0.0, scale) * 1e-12).sum())
    keep = np.sort(piv[:rank])
    A_red, b_red = Ac[keep], bc[keep]
    if rank < m:
        # check that the dropped constraints are implied
        x0, *_ = np.linalg.lstsq(A_red, b_red, rcond=None)
        resid = np.abs(A @ x0 - b).max() if rank else np.abs(b).max(initial=0.0)
        if resid > max(1.0, np.abs(b).max(initial=0.0)) * max(feastol * 10, 1e-8):
            return sp.csr_matrix(A_red), b_red, False
    return sp.csr_matrix(A_red), b_red, True


def _compile(problem: SdpProblem):
    rows_all, cols_all, vals_all, hvec, sizes = problem._compile_psd()
    total = sum(q * q for q in sizes)
    if rows_all:
        rows = np.concatenate(rows_all)
        cols = np.concatenate(cols_all)
        vals = np.concatenate(vals_all)
    else:
        rows = np.zeros(0, dtype=np.int64)
        cols = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0)
    G = sp.coo_matrix((vals, (rows, cols)), shape=(total, problem.n_params)).tocsc()
    A, b = problem._compile_eq()
    c = problem._cvec()
    return G, hvec, sizes, A, b, c


def _used_columns(G, A, c):
    used = np.zeros(G.shape[1], dtype=bool)
    used[np.unique(G.tocoo().col)] = True
    if A.shape[0]:
        used[np.unique(A.tocoo().col)] = True
    free_obj = np.nonzero(~used & (c != 0))[0]
    return used, free_obj


# ---------------------------------------------------------------------------
# conelp backend with numpy KKT solver
# ---------------------------------------------------------------------------

def _make_kkt_solver(Gc, Ac, sizes, n, chunk=512, kktreg=1e-10):
    """Custom cvxopt kktsolver: dense numpy Schur-complement factorization."""
    import cvxopt

    Gcsr = Gc.tocsr()
    m_eq = Ac.shape[0]
    Ad = Ac.toarray() if m_eq else np.zeros((0, n))
    # per block: column slices of G restricted to the block rows
    blocks = []
    off = 0
    for q in sizes:
        sub = sp.csc_matrix(Gcsr[off : off + q * q, :])
        cols = np.nonzero(np.diff(sub.indptr))[0]
        blocks.append((int(q), off, sp.csc_matrix(sub[:, cols]), cols))
        off += q * q

    def factor(W):
        rtis = [np.array(r) for r in W["rti"]]
        H = np.zeros((n, n))
        Sinvs = []
        for (q, boff, sub, cols), rti in zip(blocks, rtis):
            Sinvs.append(rti @ rti.T)
            if len(cols) == 0:
                continue
            nb = len(cols)
            M = np.empty((nb, q * q))
            for s in range(0, nb, chunk):
                e = min(nb, s + chunk)
                # each G column stores a symmetric matrix in column-major order
                dense = np.asarray(sub[:, s:e].todense()).T.reshape(e - s, q, q)
                dense = dense.transpose(0, 2, 1)
                # congruence rti^T X rti, batched
                t = np.einsum("ab,nbc->nac", rti.T, dense, optimize=True)
                t = np.einsum("nac,cd->nad", t, rti, optimize=True)
                M[s:e] = t.reshape(e - s, q * q)
            Hb = M @ M.T
            H[np.ix_(cols, cols)] += Hb
        K = np.zeros((n + m_eq, n + m_eq))
        K[:n, :n] = H
        K[:n, :n].flat[:: n + m_eq + 1] += kktreg
        if m_eq:
            K[n:, :n] = Ad
            K[:n, n:] = Ad.T
            K[n:, n:].flat[:: n + m_eq + 1] -= kktreg
        try:
            lu = scipy.linalg.lu_factor(K)
        except Exception as exc:  # singular KKT
            raise ArithmeticError(str(exc)) from exc
        if not np.all(np.isfinite(lu[0])):
            raise ArithmeticError("singular KKT system")

        def winv2(v):
            """(W^T W)^{-1} v blockwise."""
            out = np.empty_like(v)
            for (q, boff, _, _), Sinv in zip(blocks, Sinvs):
                mat = v[boff : boff + q * q].reshape(q, q, order="F")
                out[boff : boff + q * q] = (Sinv @ mat @ Sinv).ravel(order="F")
            if not np.all(np.isfinite(out)):
                raise ArithmeticError("non-finite scaling")
            return out

        def wact(v, mats):
            """Apply vec(m^T X m) blockwise for given list of m."""
            out = np.empty_like(v)
            with np.errstate(over="raise", invalid="raise"):
                try:
                    for (q, boff, _, _), mm in zip(blocks, mats):
                        mat = v[boff : boff + q * q].reshape(q, q, order="F")
                        out[boff : boff + q * q] = (mm.T @ mat @ mm).ravel(order="F")
                except FloatingPointError as exc:
                    raise ArithmeticError(str(exc)) from exc
            return out

        rs = [np.array(r) for r in W["r"]]

        def sym_lower(v):
            # 's' components are defined by their lower triangles; the upper
            # triangle of the buffer may hold stale data (cvxopt convention)
            out = np.empty_like(v)
            for q, boff, _, _ in blocks:
                m = v[boff : boff + q * q].reshape(q, q, order="F")
                low = np.tril(m)
                out[boff : boff + q * q] = (low + np.tril(m, -1).T).ravel(order="F")
            return out

        def solve(x, y, z):
            bx = np.array(x).ravel()
            by = np.array(y).ravel() if m_eq else np.zeros(0)
            bz = sym_lower(np.array(z).ravel())
            rhs_top = bx + Gcsr.T @ winv2(bz)
            rhs = np.concatenate([rhs_top, by])
            sol = scipy.linalg.lu_solve(lu, rhs)
            # one refinement step
            resid = rhs - _kkt_apply(sol)
            sol = sol + scipy.linalg.lu_solve(lu, resid)
            ux, uy = sol[:n], sol[n:]
            uz = winv2(Gcsr @ ux - bz)
            zout = wact(uz, rs)  # W uz = vec(r^T mat(uz) r)
            x[:] = cvxopt.matrix(ux)
            if m_eq:
                y[:] = cvxopt.matrix(uy)
            z[:] = cvxopt.matrix(zout)

        def _kkt_apply(v):
            vx, vy = v[:n], v[n:]
            top = H @ vx + kktreg * vx
            if m_eq:
                top += Ad.T @ vy
                bot = Ad @ vx - kktreg * vy
                return np.concatenate([top, bot])
            return top

        return solve

    return factor


def _solve_conelp(problem: SdpProblem, tol, maxiters=100, chunk=512, **_):
    import cvxopt
    from cvxopt import solvers

    G, hvec, sizes, A, b, c = _compile(problem)
    used, free_obj = _used_columns(G, A, c)
    if len(free_obj):
        # an unconstrained variable with a nonzero objective coefficient
        return SdpSolution(Status.Unbounded, -np.inf, {}, {}, None)
    if not used.all():
        G = G[:, used]
        A = A[:, used]
        csub = c[used]
    else:
        csub = c
    A, b, consistent = _reduce_rows(A, b, tol)
    if not consistent:
        return SdpSolution(
            Status.Infeasible, np.nan, {}, {"primal_eq": np.inf}, None,
            info={"reason": "inconsistent affine constraints"},
        )
    n = int(used.sum())
    Gco = G.tocoo()
    Gc = cvxopt.spmatrix(
        Gco.data.tolist(), Gco.row.tolist(), Gco.col.tolist(), (G.shape[0], n)
    )
    Aco = sp.coo_matrix(A)
    Acv = cvxopt.spmatrix(
        Aco.data.tolist(), Aco.row.tolist(), Aco.col.tolist(), (A.shape[0], n)
    )
    dims = {"l": 0, "q": [], "s": [int(q) for q in sizes]}
    kkt = _make_kkt_solver(G, sp.csr_matrix(A), sizes, n, chunk=chunk)
    old = dict(solvers.options)
    sol = None
    exc_msg = None
    try:
        # pushing the gap tolerances below cvxopt's defaults can overshoot
        # into a numerically singular region; retry with the stock settings
        # if the tight run breaks down
        attempts = [(max(tol, 1e-8), max(tol, 1e-8))]
        if attempts[0] != (1e-7, 1e-6):
            attempts.append((1e-7, 1e-6))
        for abstol, reltol in attempts:
            solvers.options.clear()
            solvers.options.update(
                {
                    "show_progress": False,
                    "maxiters": maxiters,
                    "abstol": abstol,
                    "reltol": reltol,
                    "feastol": 1e-7,
                }
            )
            try:
                sol = solvers.conelp(
                    cvxopt.matrix(csub),
                    Gc,
                    cvxopt.matrix(hvec),
                    dims,
                    Acv,
                    cvxopt.matrix(b),
                    kktsolver=kkt,
                )
            except (ArithmeticError, ValueError, ZeroDivisionError) as exc:
                exc_msg = str(exc)
                sol = None
                continue
            if sol["status"] != "unknown":
                break
    finally:
        solvers.options.clear()
        solvers.options.update(old)
    if sol is None:
        return SdpSolution(
            Status.NumericalFailure, np.nan, {}, {}, None, info={"error": exc_msg}
        )
    status_map = {
        "optimal": Status.Optimal,
        "primal infeasible": Status.Infeasible,
        "dual infeasible": Status.Unbounded,
        "unknown": Status.NumericalFailure,
    }
    status = status_map.get(sol["status"], Status.NumericalFailure)
    info = {
        "iterations": sol.get("iterations"),
        "solver": "conelp",
        "gap": sol.get("gap"),
        "relative_gap": sol.get("relative gap"),
    }
    if status is not Status.Optimal:
        val = np.nan if status is not Status.Unbounded else -np.inf
        return SdpSolution(status, val, {}, {}, None, info=info)
    xs = np.array(sol["x"]).ravel()
    x = np.zeros(problem.n_params)
    x[used] = xs
    gap = sol.get("gap")
    res = problem.residuals_at(x, gap=gap)
    return SdpSolution(
        Status.Optimal, problem.objective_at(x), problem.extract(x), res, x, info
    )


# ---------------------------------------------------------------------------
# scs backend (independent first-order cross-check)
# ---------------------------------------------------------------------------

def _svec_rows(q):
    """Index/scale maps from full q x q storage to the scs svec layout
    (upper triangle, column major, off-diagonals scaled by sqrt 2)."""
    rows, cols = np.triu_indices(q)
    scale = np.where(rows == cols, 1.0, np.sqrt(2.0))
    return rows, cols, scale


def _solve_scs(problem: SdpProblem, tol, maxiters=200000, **_):
    import scs

    G, hvec, sizes, A, b, c = _compile(problem)
    used, free_obj = _used_columns(G, A, c)
    if len(free_obj):
        return SdpSolution(Status.Unbounded, -np.inf, {}, {}, None)
    G = G[:, used]
    A = A[:, used]
    csub = c[used]
    A, b, consistent = _reduce_rows(A, b, tol)
    if not consistent:
        return SdpSolution(Status.Infeasible, np.nan, {}, {"primal_eq": np.inf}, None)
    # PSD rows: convert full storage to scs svec (lower triangle, sqrt(2) off-diag)
    parts = [sp.csc_matrix(A)]
    bparts = [b]
    off = 0
    Gcsr = G.tocsr()
    for q in sizes:
        rows, cols, scale = _svec_rows(q)
        sel = sp.coo_matrix(
            (scale, (np.arange(len(rows)), cols * q + rows)), shape=(len(rows), q * q)
        ).tocsr()
        parts.append(sel @ Gcsr[off : off + q * q, :])
        bparts.append(sel @ hvec[off : off + q * q])
        off += q * q
    Ascs = sp.vstack(parts).tocsc()
    bscs = np.concatenate(bparts)
    cone = {"z": A.shape[0], "s": [int(q) for q in sizes]}
    solver = scs.SCS(
        {"A": Ascs, "b": bscs, "c": csub},
        cone,
        eps_abs=tol,
        eps_rel=tol,
        max_iters=maxiters,
        verbose=False,
    )
    out = solver.solve()
    st = out["info"]["status"]
    if "solved" not in st.lower():
        status = (
            Status.Infeasible
            if "infeasible" in st.lower()
            else Status.Unbounded
            if "unbounded" in st.lower()
            else Status.NumericalFailure
        )
        return SdpSolution(status, np.nan, {}, {}, None, info={"scs_status": st})
    xs = out["x"]
    x = np.zeros(problem.n_params)
    x[used] = xs
    res = problem.residuals_at(x, gap=out["info"].get("gap"))
    return SdpSolution(
        Status.Optimal,
        problem.objective_at(x),
        problem.extract(x),
        res,
        x,
        info={"solver": "scs", "iterations": out["info"]["iter"]},
    )
