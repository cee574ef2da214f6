"""Dense complex linear algebra over labeled tensor-product spaces.

Operators carry explicit row/column layouts (ordered lists of labeled
subsystems), so partial traces, reorderings and link products are checked
against the labels instead of positional conventions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

# default absolute tolerance on eigenvalues / residuals for hermiticity
# and positivity checks
HERM_TOL = 1e-9


@dataclass(frozen=True)
class SpaceLabel:
    """One subsystem of a tensor-product space.

    kind is a one-letter tag: 'H' probe, 'R' register (environment),
    'A' ancilla, 'V' virtual qubit, 'E' purification, 'I' trivial.
    index distinguishes copies of the same kind; dim is the dimension.
    """

    kind: str
    index: int
    dim: int

    _KINDS = ("H", "R", "A", "V", "E", "I")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown space kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("space dimension must be >= 1")
        if self.kind == "I" and self.dim != 1:
            raise ValueError("trivial space must have dim 1")

    def __repr__(self):
        return f"{self.kind}{self.index}"


def probe(i: int, dim: int = 2) -> SpaceLabel:
    return SpaceLabel("H", i, dim)


def register(i: int, dim: int = 2) -> SpaceLabel:
    return SpaceLabel("R", i, dim)


def ancilla(i: int, dim: int = 2) -> SpaceLabel:
    return SpaceLabel("A", i, dim)


def virtual(i: int = 0, dim: int = 2) -> SpaceLabel:
    return SpaceLabel("V", i, dim)


def purif(i: int = 0, dim: int = 2) -> SpaceLabel:
    return SpaceLabel("E", i, dim)


def trivial(i: int = 0) -> SpaceLabel:
    return SpaceLabel("I", i, 1)


class Layout:
    """Ordered sequence of distinct SpaceLabels; total dim is the product."""

    __slots__ = ("labels", "dims", "dim")

    def __init__(self, labels: Iterable[SpaceLabel] = ()):
        labels = tuple(labels)
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate labels in layout {labels}")
        self.labels = labels
        self.dims = tuple(l.dim for l in labels)
        self.dim = int(np.prod(self.dims)) if labels else 1

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __contains__(self, label):
        return label in self.labels

    def __eq__(self, other):
        return isinstance(other, Layout) and self.labels == other.labels

    def __hash__(self):
        return hash(self.labels)

    def __add__(self, other: "Layout") -> "Layout":
        return Layout(self.labels + other.labels)

    def __repr__(self):
        return "Layout(" + ",".join(map(repr, self.labels)) + ")"

    def axis(self, label: SpaceLabel) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"label {label} not in layout {self}") from None

    def axes(self, labels: Iterable[SpaceLabel]) -> list:
        return [self.axis(l) for l in labels]

    def without(self, labels: Iterable[SpaceLabel]) -> "Layout":
        drop = set(labels)
        missing = drop - set(self.labels)
        if missing:
            raise KeyError(f"labels {missing} not in layout {self}")
        return Layout([l for l in self.labels if l not in drop])

    def restrict(self, labels: Iterable[SpaceLabel]) -> "Layout":
        keep = set(labels)
        return Layout([l for l in self.labels if l in keep])


def _as_layout(x) -> Layout:
    if isinstance(x, Layout):
        return x
    if isinstance(x, SpaceLabel):
        return Layout([x])
    return Layout(x)


class Operator:
    """Dense complex matrix with labeled row and column layouts."""

    __slots__ = ("matrix", "row_layout", "col_layout")

    def __init__(self, matrix, row_layout, col_layout=None):
        self.row_layout = _as_layout(row_layout)
        self.col_layout = self.row_layout if col_layout is None else _as_layout(col_layout)
        matrix = np.asarray(matrix, dtype=complex)
        if matrix.ndim == 1:
            matrix = matrix.reshape(-1, 1)
        if matrix.shape != (self.row_layout.dim, self.col_layout.dim):
            raise ValueError(
                f"matrix shape {matrix.shape} does not match layouts "
                f"({self.row_layout.dim}, {self.col_layout.dim})"
            )
        self.matrix = matrix

    # -- basic queries -------------------------------------------------

    @property
    def is_square(self):
        return self.row_layout.labels == self.col_layout.labels

    def trace(self) -> complex:
        if not self.is_square:
            raise ValueError("trace needs row_layout == col_layout")
        return complex(np.trace(self.matrix))

    def norm(self) -> float:
        """Operator (spectral) norm."""
        return float(np.linalg.norm(self.matrix, 2))

    def fro_norm(self) -> float:
        return float(np.linalg.norm(self.matrix))

    def is_hermitian(self, tol: float = HERM_TOL) -> bool:
        return self.is_square and np.abs(self.matrix - self.matrix.conj().T).max() <= tol

    def is_psd(self, tol: float = HERM_TOL) -> bool:
        if not self.is_hermitian(tol):
            return False
        w = np.linalg.eigvalsh((self.matrix + self.matrix.conj().T) / 2)
        return w.min() >= -tol

    def dagger(self) -> "Operator":
        return Operator(self.matrix.conj().T, self.col_layout, self.row_layout)

    def copy(self) -> "Operator":
        return Operator(self.matrix.copy(), self.row_layout, self.col_layout)

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        other = self._aligned(other)
        return Operator(self.matrix + other.matrix, self.row_layout, self.col_layout)

    def __sub__(self, other):
        other = self._aligned(other)
        return Operator(self.matrix - other.matrix, self.row_layout, self.col_layout)

    def __mul__(self, scalar):
        return Operator(self.matrix * scalar, self.row_layout, self.col_layout)

    __rmul__ = __mul__

    def __matmul__(self, other: "Operator") -> "Operator":
        if set(self.col_layout.labels) != set(other.row_layout.labels):
            raise ValueError(f"cannot compose: {self.col_layout} vs {other.row_layout}")
        other = other.reorder(self.col_layout, other.col_layout)
        return Operator(self.matrix @ other.matrix, self.row_layout, other.col_layout)

    def _aligned(self, other: "Operator") -> "Operator":
        if set(other.row_layout.labels) != set(self.row_layout.labels) or set(
            other.col_layout.labels
        ) != set(self.col_layout.labels):
            raise ValueError("operators live on different label sets")
        return other.reorder(self.row_layout, self.col_layout)

    # -- structural operations -----------------------------------------

    def tensor_view(self) -> np.ndarray:
        return self.matrix.reshape(self.row_layout.dims + self.col_layout.dims)

    def reorder(self, row_layout, col_layout=None) -> "Operator":
        """Permute subsystems to the given label orders."""
        row_layout = _as_layout(row_layout)
        col_layout = row_layout if col_layout is None else _as_layout(col_layout)
        if row_layout == self.row_layout and col_layout == self.col_layout:
            return self
        if set(row_layout.labels) != set(self.row_layout.labels) or set(
            col_layout.labels
        ) != set(self.col_layout.labels):
            raise ValueError("reorder must use the same label sets")
        nr = len(self.row_layout)
        perm_r = self.row_layout.axes(row_layout)
        perm_c = [nr + a for a in self.col_layout.axes(col_layout)]
        t = self.tensor_view().transpose(perm_r + perm_c)
        return Operator(t.reshape(row_layout.dim, col_layout.dim), row_layout, col_layout)


def identity(layout) -> Operator:
    layout = _as_layout(layout)
    return Operator(np.eye(layout.dim), layout, layout)


def kron(a: Operator, b: Operator) -> Operator:
    """Kronecker product; result layouts are the concatenations."""
    return Operator(
        np.kron(a.matrix, b.matrix),
        a.row_layout + b.row_layout,
        a.col_layout + b.col_layout,
    )


def partial_trace(x: Operator, over) -> Operator:
    """Trace out the subsystems named in `over`, preserving the remaining order."""
    if isinstance(over, SpaceLabel):
        over = [over]
    over = list(over)
    if not x.is_square:
        raise ValueError("partial_trace needs a square operator")
    t = x.tensor_view()
    n = len(x.row_layout)
    layout = x.row_layout
    for label in over:
        a = layout.axis(label)
        t = np.trace(t, axis1=a, axis2=len(layout) + a)
        layout = layout.without([label])
    d = layout.dim
    return Operator(t.reshape(d, d), layout, layout)


def vectorize(k: Operator) -> Operator:
    """Vectorized Kraus operator |K> = sum_ij K_ij |j>_in (x) |i>_out.

    The result is a column vector on layout (input labels, output labels).
    """
    nr = len(k.row_layout)
    nc = len(k.col_layout)
    t = k.tensor_view().transpose(list(range(nr, nr + nc)) + list(range(nr)))
    layout = k.col_layout + k.row_layout
    return Operator(t.reshape(layout.dim, 1), layout, Layout())


def devectorize(v: Operator, in_layout, out_layout) -> Operator:
    """Inverse of vectorize for a vector on layout (in, out)."""
    in_layout = _as_layout(in_layout)
    out_layout = _as_layout(out_layout)
    v = v.reorder(in_layout + out_layout, Layout())
    t = v.matrix.reshape(in_layout.dims + out_layout.dims)
    ni = len(in_layout)
    t = t.transpose(list(range(ni, ni + len(out_layout))) + list(range(ni)))
    return Operator(t.reshape(out_layout.dim, in_layout.dim), out_layout, in_layout)


def link_product(a: Operator, b: Operator) -> Operator:
    """Link product of two Choi-type operators over their shared labels.

    Contracts the labels present in both (partial transpose on the shared
    part of `a`, multiply, trace out); the result lives on the symmetric
    difference, `a`'s remaining labels first.
    """
    if not (a.is_square and b.is_square):
        raise ValueError("link_product needs square operators")
    shared = [l for l in a.row_layout if l in b.row_layout]
    for l in shared:
        if l.dim != b.row_layout.labels[b.row_layout.axis(l)].dim:
            raise ValueError(f"dimension mismatch on shared label {l}")
    rest_a = a.row_layout.without(shared)
    rest_b = b.row_layout.without(shared)
    sh = Layout(shared)
    at = a.reorder(rest_a + sh).tensor_view().reshape(
        rest_a.dim, sh.dim, rest_a.dim, sh.dim
    )
    bt = b.reorder(sh + rest_b).tensor_view().reshape(
        sh.dim, rest_b.dim, sh.dim, rest_b.dim
    )
    # result[Ar,Br;Ac,Bc] = sum_{s,s2} a[Ar,s2;Ac,s] b[s2,Br;s,Bc]
    r = np.einsum("atcs,tbsd->abcd", at, bt, optimize=True)
    out = rest_a + rest_b
    return Operator(r.reshape(out.dim, out.dim), out, out)


def apply_channel(kraus: Sequence[Operator], rho: Operator) -> Operator:
    """sum_k K rho K^dagger with layout checks."""
    out = None
    for k in kraus:
        term = k @ rho @ k.dagger()
        out = term if out is None else out + term
    return out


def random_psd(layout, rng, rank=None) -> Operator:
    layout = _as_layout(layout)
    d = layout.dim
    r = d if rank is None else rank
    g = rng.standard_normal((d, r)) + 1j * rng.standard_normal((d, r))
    return Operator(g @ g.conj().T, layout, layout)


def random_state(layout, rng) -> Operator:
    x = random_psd(layout, rng)
    return x * (1.0 / x.trace().real)
