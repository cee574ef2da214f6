"""Concrete noise models: Markov-correlated dephasing, amplitude damping.

The dephasing chain alternates a probe-register unitary V (the register
basis state |+/-> selects the rotation direction, the signal rotation
follows the noise) with a classical mixing channel T on the register.  Two
block cuts are provided: splitting T into t.t at the boundary (parallel
dephasing) and cutting between V and T (perpendicular dephasing).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .channels import (
    BlockComb,
    CutStrategy,
    KrausSet,
    RegChannel,
    Tooth,
    compose_block,
    compose_stages,
)
from .tensor import Layout, Operator, probe

SX = np.array([[0.0, 1.0], [1.0, 0.0]])
SZ = np.diag([1.0, -1.0])
PLUS = np.array([1.0, 1.0]) / np.sqrt(2)
MINUS = np.array([1.0, -1.0]) / np.sqrt(2)


def _rot(axis, angle):
    """exp(-i angle sigma_axis / 2)."""
    s = {"z": SZ, "x": SX}[axis]
    return np.cos(angle / 2) * np.eye(2) - 1j * np.sin(angle / 2) * s


class Axis(Enum):
    Z_PARALLEL = "parallel"
    X_PERPENDICULAR = "perpendicular"


class Cut(Enum):
    SPLIT_T = "split_t"
    AFTER_SIGNAL = "after_signal"


@dataclass
class DephasingSpec:
    """Correlated dephasing: eta = cos(epsilon), Markov correlation C."""

    epsilon: float
    C: float
    axis: Axis = Axis.Z_PARALLEL
    cut: Cut = Cut.SPLIT_T
    theta: float = 0.0

    def __post_init__(self):
        if not 0 <= self.epsilon <= np.pi / 2:
            raise ValueError("epsilon must lie in [0, pi/2]")
        if abs(self.C) > 1:
            raise ValueError("|C| must be <= 1")
        if isinstance(self.axis, str):
            self.axis = Axis(self.axis)
        if isinstance(self.cut, str):
            self.cut = Cut(self.cut)

    @property
    def eta(self):
        return np.cos(self.epsilon)


class BoundaryMode(Enum):
    FIRST = "first"
    MIDDLE = "middle"
    LAST = "last"


def _noise_kraus(spec: DephasingSpec):
    """K_{+/-} = R_z(theta) R_n(+/- eps) / sqrt(2) and derivatives."""
    ax = "z" if spec.axis is Axis.Z_PARALLEL else "x"
    sig = _rot("z", spec.theta)
    dsig = -0.5j * SZ @ sig
    kp = sig @ _rot(ax, spec.epsilon) / np.sqrt(2)
    km = sig @ _rot(ax, -spec.epsilon) / np.sqrt(2)
    dkp = dsig @ _rot(ax, spec.epsilon) / np.sqrt(2)
    dkm = dsig @ _rot(ax, -spec.epsilon) / np.sqrt(2)
    return (kp, km), (dkp, dkm)


def _v_unitary(spec: DephasingSpec):
    """V = sqrt2 K_+ (x) |+><+| + sqrt2 K_- (x) |-><-| on probe (x) register,
    with its theta derivative; tensors shaped (2, 2, 2, 2) as matrices on
    (H (x) R)."""
    (kp, km), (dkp, dkm) = _noise_kraus(spec)
    v = np.sqrt(2) * (np.kron(kp, np.outer(PLUS, PLUS)) + np.kron(km, np.outer(MINUS, MINUS)))
    dv = np.sqrt(2) * (np.kron(dkp, np.outer(PLUS, PLUS)) + np.kron(dkm, np.outer(MINUS, MINUS)))
    return v, dv


def _t_kraus(C):
    """Kraus operators of the classical map T_sr = sqrt((1+srC)/2)|s><r|."""
    basis = {1: PLUS, -1: MINUS}
    ops = []
    for s in (1, -1):
        for r in (1, -1):
            p = (1 + s * r * C) / 2
            if p > 1e-15:
                ops.append(np.sqrt(p) * np.outer(basis[s], basis[r]))
    return ops


def split_T(C):
    """Half-step register channel t with t(s|r) = (1 + s r sqrt|C|)/2.

    Returns (t, flip_needed); composing t (bit flip on |+/->) t reproduces
    the full map T of the chain.
    """
    if abs(C) > 1:
        raise ValueError("|C| must be <= 1")
    t = RegChannel(_t_kraus(np.sqrt(abs(C))))
    return t, C < 0


def build_dephasing_tooth(spec: DephasingSpec) -> Tooth:
    """One chain tooth: T on the register, then V on probe (x) register."""
    v, dv = _v_unitary(spec)
    kraus = [v @ np.kron(np.eye(2), t) for t in _t_kraus(spec.C)]
    dkraus = [dv @ np.kron(np.eye(2), t) for t in _t_kraus(spec.C)]
    return Tooth.from_matrices(kraus, dkraus)


def _bare_v_tooth(spec: DephasingSpec) -> Tooth:
    v, dv = _v_unitary(spec)
    return Tooth.from_matrices([v], [dv])


def _flip_channel():
    # bit flip on the |+/-> basis (equals sigma_z in the computational basis)
    return RegChannel([SZ.astype(float)])


def build_block_dephasing(spec: DephasingSpec, m: int) -> BlockComb:
    """m-tooth block with the cut-specific boundary channels."""
    if spec.cut is Cut.SPLIT_T:
        t, flip = split_T(spec.C)
        lead_ops = t.kraus
        if flip:
            # flip inserted between the two boundary t maps, assigned to the
            # leading half so consecutive blocks compose to the exact chain
            lead_ops = [k @ SZ for k in t.kraus]
        cut = CutStrategy(
            name="split_t",
            lead=RegChannel(lead_ops),
            tail=t,
            first_tooth=_bare_v_tooth(spec),
        )
        tooth = build_dephasing_tooth(spec)
        return compose_block(tooth, m, cut)
    # after-signal cut: block = (T then V) repeated, register left clean
    tooth = build_dephasing_tooth(spec)
    return compose_block(tooth, m)


def sigma_in_register():
    """Maximally mixed register input, the chain's stationary state."""
    return np.eye(2) / 2


def build_amplitude_damping(p: float) -> KrausSet:
    """Amplitude damping with phase signal: K_k e^{-i theta sz/2} at theta=0."""
    if not 0 <= p <= 1:
        raise ValueError("p must lie in [0, 1]")
    k1 = np.array([[1.0, 0.0], [0.0, np.sqrt(p)]])
    k2 = np.array([[0.0, np.sqrt(1 - p)], [0.0, 0.0]])
    sig = np.eye(2)
    dsig = -0.5j * SZ
    hi, ho = probe(1), probe(2)
    kraus = [Operator(k @ sig, Layout([ho]), Layout([hi])) for k in (k1, k2)]
    dkraus = [Operator(k @ dsig, Layout([ho]), Layout([hi])) for k in (k1, k2)]
    return KrausSet(kraus, dkraus)


def _kraus_set_tooth(kset: KrausSet) -> Tooth:
    """Wrap an uncorrelated channel as a tooth with a trivial register."""
    kraus = [k.matrix for k in kset.kraus]
    dkraus = [k.matrix for k in kset.dkraus]
    d = kraus[0].shape[0]
    return Tooth.from_matrices(kraus, dkraus, probe_dim=d, reg_in_dim=1, reg_out_dim=1)


# ---------------------------------------------------------------------------
# model wrappers used by the bound drivers
# ---------------------------------------------------------------------------

class Model:
    """Interface consumed by the bound computations."""

    name = "model"

    def middle_block(self, m: int) -> BlockComb:
        raise NotImplementedError

    def first_block(self, m: int) -> BlockComb:
        """Block with the input register closed on the model's sigma_in."""
        raise NotImplementedError

    def full_comb(self, n: int) -> BlockComb:
        """Exact n-tooth comb, both registers closed (for exact comb QFI)."""
        raise NotImplementedError


class DephasingModel(Model):
    def __init__(self, spec: DephasingSpec):
        self.spec = spec
        self.name = f"dephasing_{spec.axis.value}_{spec.cut.value}"

    def middle_block(self, m):
        return build_block_dephasing(self.spec, m)

    def first_block(self, m):
        return build_block_dephasing(self.spec, m).close_first(sigma_in_register())

    def full_comb(self, n):
        # exact chain V T V T ... V with sigma_in and a traced final register
        stages = [_bare_v_tooth(self.spec)] + [build_dephasing_tooth(self.spec)] * (n - 1)
        block = compose_stages(stages, reg_in_dim=2)
        return block.close_first(sigma_in_register()).close_last()


class UncorrelatedModel(Model):
    """Any theta-dependent channel used independently N times."""

    def __init__(self, kset: KrausSet, name="uncorrelated"):
        self.kset = kset
        self.name = name

    def middle_block(self, m):
        return compose_block(_kraus_set_tooth(self.kset), m)

    first_block = middle_block

    def full_comb(self, n):
        block = compose_block(_kraus_set_tooth(self.kset), n)
        return block.close_first(np.eye(1)).close_last()


def amplitude_damping_model(p: float) -> UncorrelatedModel:
    return UncorrelatedModel(build_amplitude_damping(p), name=f"amplitude_damping_p{p}")


def noiseless_model() -> UncorrelatedModel:
    return UncorrelatedModel(build_amplitude_damping(1.0), name="noiseless")


def make_model(name: str, **params) -> Model:
    """Model registry for the command line driver."""
    if name == "dephasing":
        spec = DephasingSpec(
            epsilon=float(params.get("epsilon", 0.3)),
            C=float(params.get("C", 0.0)),
            axis=params.get("axis", "parallel"),
            cut=params.get("cut") or _default_cut(params.get("axis", "parallel")),
            theta=float(params.get("theta", 0.0)),
        )
        return DephasingModel(spec)
    if name == "amplitude_damping":
        return amplitude_damping_model(float(params.get("p", 0.5)))
    if name == "noiseless":
        return noiseless_model()
    raise KeyError(f"unknown model {name!r}")


def _default_cut(axis):
    axis = Axis(axis) if isinstance(axis, str) else axis
    return Cut.SPLIT_T if axis is Axis.Z_PARALLEL else Cut.AFTER_SIGNAL
