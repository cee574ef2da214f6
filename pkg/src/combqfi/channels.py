"""Theta-dependent channels, comb teeth, and their composition into blocks.

A block comb is stored through vectorized Kraus operators (and their theta
derivatives) on a canonical layout [R_in, H1, H2, ..., H_2m, R_out]; probe
slots stay open while register wires between consecutive teeth are
contracted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .combs import CombStructure, comb_condition_residual
from .tensor import (
    Layout,
    Operator,
    identity,
    kron,
    probe,
    register,
    vectorize,
)

PRUNE_TOL = 1e-14


@dataclass
class KrausSet:
    """Kraus operators (out x in) and their derivatives at the working point."""

    kraus: list
    dkraus: list

    def __post_init__(self):
        if len(self.kraus) != len(self.dkraus):
            raise ValueError("kraus and dkraus must have equal length")

    @property
    def in_layout(self):
        return self.kraus[0].col_layout

    @property
    def out_layout(self):
        return self.kraus[0].row_layout

    def validate(self, tol=1e-9):
        s = sum(k.matrix.conj().T @ k.matrix for k in self.kraus)
        if np.abs(s - np.eye(s.shape[0])).max() > tol:
            raise ValueError("Kraus set is not trace preserving")
        for k, dk in zip(self.kraus, self.dkraus):
            if k.matrix.shape != dk.matrix.shape:
                raise ValueError("dkraus shapes do not match kraus")


@dataclass
class MixingMatrix:
    """Hermitian matrix generating equivalent Kraus representations."""

    h: np.ndarray

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=complex)
        if np.abs(self.h - self.h.conj().T).max() > 1e-12:
            raise ValueError("mixing matrix must be hermitian")


def apply_mixing(k, h):
    """Replace derivatives by Kdot~_j = Kdot_j - i sum_j' h_{jj'} K_j'.

    Works for KrausSet and BlockComb; the Kraus operators themselves (and so
    the represented comb) are unchanged.
    """
    hm = h.h if isinstance(h, MixingMatrix) else np.asarray(h, dtype=complex)
    if isinstance(k, BlockComb):
        if hm.shape != (k.r, k.r):
            raise ValueError("mixing dimension does not match Kraus count")
        dk = k.dkvecs - 1j * (k.kvecs @ hm.T)
        return BlockComb(
            k.kvecs.copy(), dk, k.layout, k.structure, k.m,
            reg_in=k.reg_in, reg_out=k.reg_out,
        )
    if hm.shape != (len(k.kraus), len(k.kraus)):
        raise ValueError("mixing dimension does not match Kraus count")
    new_dk = []
    for j, dkj in enumerate(k.dkraus):
        m = dkj.matrix - 1j * sum(hm[j, j2] * k.kraus[j2].matrix for j2 in range(len(k.kraus)))
        new_dk.append(Operator(m, dkj.row_layout, dkj.col_layout))
    return KrausSet(list(k.kraus), new_dk)


@dataclass
class Tooth:
    """One comb tooth: a channel on probe (x) register with derivatives.

    Kraus operators map (H_in x R_in) -> (H_out x R_out); the layouts use
    placeholder labels that get rewritten during composition.
    """

    kset: KrausSet
    probe_dim: int = 2
    reg_in_dim: int = 2
    reg_out_dim: int = 2

    @classmethod
    def from_matrices(cls, kraus, dkraus, probe_dim=2, reg_in_dim=2, reg_out_dim=2):
        hi, ho = probe(1, probe_dim), probe(2, probe_dim)
        ri, ro = register(0, reg_in_dim), register(1, reg_out_dim)
        ks = [Operator(k, Layout([ho, ro]), Layout([hi, ri])) for k in kraus]
        dks = [Operator(k, Layout([ho, ro]), Layout([hi, ri])) for k in dkraus]
        return cls(KrausSet(ks, dks), probe_dim, reg_in_dim, reg_out_dim)


@dataclass
class RegChannel:
    """Channel acting on the register wire only (theta independent)."""

    kraus: list  # plain (d_out, d_in) arrays

    @property
    def in_dim(self):
        return self.kraus[0].shape[1]

    @property
    def out_dim(self):
        return self.kraus[0].shape[0]


@dataclass
class CutStrategy:
    """How register noise is split at block boundaries.

    lead/tail are register channels applied before the first tooth and after
    the last one; first_tooth optionally replaces tooth 1 (for cuts where the
    first tooth must not carry its internal register premap).
    """

    name: str = "plain"
    lead: RegChannel | None = None
    tail: RegChannel | None = None
    first_tooth: Tooth | None = None


PLAIN_CUT = CutStrategy()


class BlockComb:
    """m comb teeth contracted over their register wires.

    kvecs / dkvecs hold the vectorized Kraus operators as columns on the
    canonical layout; sum_k |K_k><K_k| satisfies the comb conditions of
    `structure`.
    """

    def __init__(self, kvecs, dkvecs, layout, structure, m, reg_in=None, reg_out=None):
        self.kvecs = np.asarray(kvecs, dtype=complex)
        self.dkvecs = np.asarray(dkvecs, dtype=complex)
        self.layout = layout
        self.structure = structure
        self.m = m
        self.reg_in = reg_in        # open input register label or None
        self.reg_out = reg_out      # open output register label or None

    @property
    def r(self):
        return self.kvecs.shape[1]

    @property
    def dim(self):
        return self.kvecs.shape[0]

    def out_labels(self):
        """Labels of the final output (traced in the performance operator)."""
        return list(self.structure.teeth[-1][1].labels)

    def choi(self) -> Operator:
        return Operator(self.kvecs @ self.kvecs.conj().T, self.layout, self.layout)

    def dchoi(self) -> Operator:
        m = self.kvecs @ self.dkvecs.conj().T
        return Operator(m.conj().T + m, self.layout, self.layout)

    # -- closures ------------------------------------------------------------

    def close_first(self, sigma_in) -> "BlockComb":
        """Contract the open input register with a fixed state sigma_in."""
        if self.reg_in is None:
            raise ValueError("input register is already closed")
        lab = self.reg_in
        sig = sigma_in.matrix if isinstance(sigma_in, Operator) else np.asarray(sigma_in, complex)
        w, v = np.linalg.eigh((sig + sig.conj().T) / 2)
        axis = self.layout.axis(lab)
        dims = self.layout.dims
        t = self.kvecs.reshape(dims + (self.r,))
        new_k, new_dk = [], []
        for i in range(len(w)):
            if w[i] < 1e-14:
                continue
            vec = np.sqrt(w[i]) * v[:, i].conj()
            kk = np.tensordot(vec, t, axes=([0], [axis]))
            dd = np.tensordot(vec, self.dkvecs.reshape(dims + (self.r,)), axes=([0], [axis]))
            new_k.append(kk.reshape(-1, self.r))
            new_dk.append(dd.reshape(-1, self.r))
        kv = np.concatenate(new_k, axis=1)
        dkv = np.concatenate(new_dk, axis=1)
        layout = self.layout.without([lab])
        tin, tout = self.structure.teeth[0]
        struct = CombStructure([(tin.without([lab]), tout)] + self.structure.teeth[1:])
        return BlockComb(kv, dkv, layout, struct, self.m, reg_in=None, reg_out=self.reg_out)

    def close_last(self) -> "BlockComb":
        """Trace the open output register into the comb (basis contraction)."""
        if self.reg_out is None:
            raise ValueError("output register is already closed")
        lab = self.reg_out
        axis = self.layout.axis(lab)
        dims = self.layout.dims
        t = self.kvecs.reshape(dims + (self.r,))
        td = self.dkvecs.reshape(dims + (self.r,))
        new_k, new_dk = [], []
        for i in range(lab.dim):
            e = np.zeros(lab.dim)
            e[i] = 1.0
            new_k.append(np.tensordot(e, t, axes=([0], [axis])).reshape(-1, self.r))
            new_dk.append(np.tensordot(e, td, axes=([0], [axis])).reshape(-1, self.r))
        kv = np.concatenate(new_k, axis=1)
        dkv = np.concatenate(new_dk, axis=1)
        layout = self.layout.without([lab])
        teeth = list(self.structure.teeth)
        tin, tout = teeth[-1]
        teeth[-1] = (tin, tout.without([lab]))
        struct = CombStructure(teeth)
        return BlockComb(kv, dkv, layout, struct, self.m, reg_in=self.reg_in, reg_out=None)

    # -- minimal representation ------------------------------------------------

    def classical_sectors(self, label, tol=1e-9):
        """Detect a basis of `label` in which every (K, Kdot) pair lives in a
        single basis direction of that leg.

        Returns (sectors, basis) with basis columns the sector directions
        (completed to a full orthonormal basis), or None when the leg is
        genuinely quantum.
        """
        axis = self.layout.axis(label)
        dims = self.layout.dims
        d = label.dim
        rest = int(self.dim // d)
        reps = []
        sectors = np.full(self.r, -1, dtype=int)
        for k in range(self.r):
            vk = np.moveaxis(self.kvecs[:, k].reshape(dims), axis, 0).reshape(d, rest)
            dk = np.moveaxis(self.dkvecs[:, k].reshape(dims), axis, 0).reshape(d, rest)
            leg = np.concatenate([vk, dk], axis=1)
            u, s, _ = np.linalg.svd(leg, full_matrices=False)
            if len(s) > 1 and s[1] > tol * max(s[0], 1.0):
                return None  # leg not rank one
            uk = u[:, 0]
            assigned = False
            for si, rep in enumerate(reps):
                ov = abs(np.vdot(rep, uk))
                if ov > 1 - 1e-7:
                    sectors[k] = si
                    assigned = True
                    break
                if ov > 1e-7:
                    return None  # directions neither aligned nor orthogonal
            if not assigned:
                reps.append(uk)
                sectors[k] = len(reps) - 1
        basis = np.array(reps).T
        # orthonormal polish and completion to a full basis
        q, _ = np.linalg.qr(
            np.concatenate([basis, np.eye(d, dtype=complex)], axis=1)
        )
        full = np.concatenate([basis, q[:, len(reps) : d]], axis=1) if len(reps) < d else basis
        return sectors, full

    def rotate_leg(self, label, basis) -> "BlockComb":
        """Conjugate one tensor leg into the given orthonormal basis.

        The bound values are invariant: rotations of the traced output are
        absorbed by the partial trace, rotations of open control slots by
        the control comb.
        """
        axis = self.layout.axis(label)
        dims = self.layout.dims
        u = np.asarray(basis, dtype=complex).conj().T

        def rot(vecs):
            t = vecs.reshape(dims + (self.r,))
            t = np.tensordot(u, t, axes=([1], [axis]))
            t = np.moveaxis(t, 0, axis)
            return t.reshape(self.dim, self.r)

        return BlockComb(
            rot(self.kvecs), rot(self.dkvecs), self.layout, self.structure, self.m,
            reg_in=self.reg_in, reg_out=self.reg_out,
        )

    def pruned(self, tol=PRUNE_TOL) -> "BlockComb":
        norms = np.linalg.norm(self.kvecs, axis=0) + np.linalg.norm(self.dkvecs, axis=0)
        keep = norms > tol
        return BlockComb(
            self.kvecs[:, keep], self.dkvecs[:, keep], self.layout, self.structure,
            self.m, reg_in=self.reg_in, reg_out=self.reg_out,
        )

    def reduced(self, tol=1e-12, group=None) -> "BlockComb":
        """Minimal Kraus family with the same comb and derivative comb.

        The stacked columns (K_k, Kdot_k) are compressed by SVD; when `group`
        assigns columns to orthogonal sectors the compression runs per sector
        so classical register structure survives.
        """
        stacked = np.vstack([self.kvecs, self.dkvecs])
        if group is None:
            group = np.zeros(self.r, dtype=int)
        new_k, new_dk = [], []
        for g in sorted(set(group.tolist())):
            idx = np.nonzero(group == g)[0]
            s = stacked[:, idx]
            u, sv, vh = np.linalg.svd(s, full_matrices=False)
            rank = int((sv > max(sv[0], 1.0) * tol).sum()) if len(sv) else 0
            sp = u[:, :rank] * sv[:rank]
            new_k.append(sp[: self.dim])
            new_dk.append(sp[self.dim :])
        kv = np.concatenate(new_k, axis=1)
        dkv = np.concatenate(new_dk, axis=1)
        return BlockComb(
            kv, dkv, self.layout, self.structure, self.m,
            reg_in=self.reg_in, reg_out=self.reg_out,
        )


def choi_of(k) -> Operator:
    """sum_k |K_k><K_k| on the declared layout."""
    if isinstance(k, BlockComb):
        return k.choi()
    vecs = [vectorize(op) for op in k.kraus]
    m = sum(v.matrix @ v.matrix.conj().T for v in vecs)
    lay = vecs[0].row_layout
    return Operator(m, lay, lay)


def compose_stages(stages, reg_in_dim, probe_dim=2, prune_tol=PRUNE_TOL) -> BlockComb:
    """Contract a sequence of teeth and register channels into a BlockComb.

    `stages` is a list of Tooth and RegChannel entries in causal order; every
    Tooth opens a fresh probe input/output pair.  Derivatives follow the
    product rule (register channels are theta independent).
    """
    n_teeth = sum(1 for s in stages if isinstance(s, Tooth))
    reg_ctr = [0]

    def fresh_reg(dim):
        reg_ctr[0] += 1
        return register(100 + reg_ctr[0], dim)

    r_in = register(0, reg_in_dim)
    r_cur = r_in
    # pairs (W, dW): row layout [H_even..., R_cur], col layout [R_in, H_odd...]
    pairs = [(identity(Layout([r_cur])), None)]
    tooth_idx = 0
    for st in stages:
        new_pairs = []
        if isinstance(st, RegChannel):
            r_new = fresh_reg(st.out_dim)
            for W, dW in pairs:
                houts = W.row_layout.without([r_cur])
                for kj in st.kraus:
                    op = kron(identity(houts), Operator(kj, Layout([r_new]), Layout([r_cur])))
                    w2 = op @ W
                    dw2 = None if dW is None else op @ dW
                    new_pairs.append((w2, dw2))
            r_cur = r_new
        elif isinstance(st, Tooth):
            tooth_idx += 1
            h_in = probe(2 * tooth_idx - 1, st.probe_dim)
            h_out = probe(2 * tooth_idx, st.probe_dim)
            r_new = fresh_reg(st.reg_out_dim)
            lay_out = Layout([h_out, r_new])
            lay_in = Layout([h_in, r_cur])
            for W, dW in pairs:
                houts = W.row_layout.without([r_cur])
                We = kron(W, identity(Layout([h_in])))
                dWe = None if dW is None else kron(dW, identity(Layout([h_in])))
                for kj, dkj in zip(st.kset.kraus, st.kset.dkraus):
                    op = kron(identity(houts), Operator(kj.matrix, lay_out, lay_in))
                    dop = kron(identity(houts), Operator(dkj.matrix, lay_out, lay_in))
                    w2 = op @ We
                    dw2 = dop @ We
                    if dWe is not None:
                        dw2 = dw2 + op @ dWe
                    new_pairs.append((w2, dw2))
            r_cur = r_new
        else:
            raise TypeError(f"unknown stage {st!r}")
        # prune zero-amplitude paths early
        pairs = [
            (w, dw)
            for w, dw in new_pairs
            if np.abs(w.matrix).max() > prune_tol
            or (dw is not None and np.abs(dw.matrix).max() > prune_tol)
        ]
    # canonical layout and vectorization
    probes = [probe(i, probe_dim) for i in range(1, 2 * n_teeth + 1)]
    r_out_final = register(2 * n_teeth + 1, r_cur.dim)
    canonical = Layout([register(0, reg_in_dim)] + probes + [r_out_final])
    kcols, dkcols = [], []
    for W, dW in pairs:
        if dW is None:
            dW = Operator(np.zeros_like(W.matrix), W.row_layout, W.col_layout)
        for mat, dest in ((W, kcols), (dW, dkcols)):
            v = vectorize(mat)
            # rename the final register label, then reorder to canonical
            labels = [r_out_final if l == r_cur else l for l in v.row_layout.labels]
            v = Operator(v.matrix, Layout(labels), Layout())
            v = v.reorder(canonical, Layout())
            dest.append(v.matrix.ravel())
    kv = np.array(kcols).T
    dkv = np.array(dkcols).T
    teeth = [
        (Layout([register(0, reg_in_dim), probes[0]]), Layout([probes[1]]))
    ] + [
        (Layout([probes[2 * i]]), Layout([probes[2 * i + 1]]))
        for i in range(1, n_teeth - 1)
    ]
    if n_teeth == 1:
        teeth = [(Layout([register(0, reg_in_dim), probes[0]]), Layout([probes[1], r_out_final]))]
    else:
        teeth.append((Layout([probes[2 * n_teeth - 2]]), Layout([probes[2 * n_teeth - 1], r_out_final])))
    struct = CombStructure(teeth)
    block = BlockComb(
        kv, dkv, canonical, struct, n_teeth,
        reg_in=register(0, reg_in_dim), reg_out=r_out_final,
    )
    return block.pruned(prune_tol)


def compose_block(t: Tooth, m: int, cut: CutStrategy = PLAIN_CUT) -> BlockComb:
    """Block of m teeth with cut-specific boundary register channels."""
    if m < 1:
        raise ValueError("m must be >= 1")
    stages = []
    if cut.lead is not None:
        stages.append(cut.lead)
    stages.append(cut.first_tooth if cut.first_tooth is not None else t)
    stages.extend([t] * (m - 1))
    if cut.tail is not None:
        stages.append(cut.tail)
    return compose_stages(stages, reg_in_dim=t.reg_in_dim, probe_dim=t.probe_dim)


def block_comb_residual(block: BlockComb, tol=1e-8) -> float:
    """Violation of the comb trace conditions for sum_k |K_k><K_k|."""
    return comb_condition_residual(block.choi(), block.structure)
