r"""
Space-time Kronecker operators and SAT blocks.

Space-time vectors are ordered time-major, then element, then spatial node
inside the element. Neighbouring elements duplicate their shared interface
node, so one time level holds ``K * n`` spatial values.

SAT helpers return a matrix ``A`` and an offset ``b`` such that the
penalty term evaluated on a state ``u`` equals ``A @ u + b``. The slab
assembler moves ``A`` to the left-hand side and ``b`` to the right.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from stsbp.errors import ConfigurationError
from stsbp.sbp_core import SbpOperator1D, scale_to_interval
from stsbp.velocity_space import VelocitySpace


def _csc(a) -> sp.csc_matrix:
    m = sp.csc_matrix(a)
    m.sum_duplicates()
    m.sort_indices()
    return m


def element_ops(ref: SbpOperator1D, x_left: float, x_right: float, K: int) -> list[SbpOperator1D]:
    """Scale ``ref`` onto ``K`` equal elements partitioning ``[x_left, x_right]``."""
    if K < 1:
        raise ValueError(f"need at least one element, got K={K}")
    edges = np.linspace(x_left, x_right, K + 1)
    return [scale_to_interval(ref, edges[e], edges[e + 1]) for e in range(K)]


def _check_elements(space_ops: Sequence[SbpOperator1D], K: int) -> None:
    if K < 1 or len(space_ops) != K:
        raise ValueError(f"expected {K} element operators, got {len(space_ops)}")
    n = space_ops[0].n
    if any(op.n != n for op in space_ops):
        raise ValueError("all elements must share the same node count")
    for left, right in zip(space_ops[:-1], space_ops[1:]):
        if abs(left.interval[1] - right.interval[0]) > 1e-14 * max(1.0, abs(left.interval[1])):
            raise ValueError("element intervals are not contiguous")


@dataclass(frozen=True)
class SpaceTimeOps:
    """Kronecker-product operators on one time slab.

    ``Dx`` is the element-wise (uncoupled) spatial derivative
    :math:`I_t \\otimes \\mathrm{blkdiag}(\\bar D_x)`. ``tB``/``tT`` map a
    spatial vector to the bottom/top time level and ``tL``/``tR`` map one
    value per time level to the global left/right boundary node.
    """

    time_op: SbpOperator1D
    space_ops: tuple[SbpOperator1D, ...]
    K: int
    Dt: sp.csc_matrix
    Dx: sp.csc_matrix
    H: sp.csc_matrix
    Ht: sp.csc_matrix
    Hx: sp.csc_matrix
    Htinv: sp.csc_matrix
    Hxinv: sp.csc_matrix
    tB: sp.csc_matrix
    tT: sp.csc_matrix
    tL: sp.csc_matrix
    tR: sp.csc_matrix
    hx_weights: np.ndarray

    @property
    def nt(self) -> int:
        return self.time_op.n

    @property
    def nx(self) -> int:
        return self.space_ops[0].n

    @property
    def n_space(self) -> int:
        return self.K * self.nx

    @property
    def size(self) -> int:
        return self.nt * self.n_space

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.nt, self.K, self.nx

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([op.nodes for op in self.space_ops])

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.time_op.nodes)

    def lift(self, a_space) -> sp.csc_matrix:
        """Extend a spatial matrix to the slab as :math:`I_t \\otimes A`."""
        return _csc(sp.kron(sp.identity(self.nt), a_space))

    def lift_time(self, a_time) -> sp.csc_matrix:
        """Extend a temporal matrix to the slab as :math:`A \\otimes I_x`."""
        return _csc(sp.kron(a_time, sp.identity(self.n_space)))


def build_spacetime_ops(time_op: SbpOperator1D, space_ops: Sequence[SbpOperator1D],
                        K: int) -> SpaceTimeOps:
    """Materialize the Kronecker factors for one slab."""
    space_ops = tuple(space_ops)
    _check_elements(space_ops, K)
    nt = time_op.n
    nsp = K * space_ops[0].n

    It = sp.identity(nt, format="csc")
    Ix = sp.identity(nsp, format="csc")
    Dx_bar = sp.block_diag([op.D for op in space_ops])
    hx = np.concatenate([op.weights for op in space_ops])
    ht = np.asarray(time_op.weights)

    eB = sp.csc_matrix(time_op.tB.reshape(-1, 1))
    eT = sp.csc_matrix(time_op.tT.reshape(-1, 1))
    eL = np.zeros((nsp, 1))
    eR = np.zeros((nsp, 1))
    eL[0, 0] = 1.0
    eR[-1, 0] = 1.0

    return SpaceTimeOps(
        time_op=time_op,
        space_ops=space_ops,
        K=K,
        Dt=_csc(sp.kron(time_op.D, Ix)),
        Dx=_csc(sp.kron(It, Dx_bar)),
        H=_csc(sp.diags(np.kron(ht, hx))),
        Ht=_csc(sp.diags(np.kron(ht, np.ones(nsp)))),
        Hx=_csc(sp.diags(np.kron(np.ones(nt), hx))),
        Htinv=_csc(sp.diags(np.kron(1.0 / ht, np.ones(nsp)))),
        Hxinv=_csc(sp.diags(np.kron(np.ones(nt), 1.0 / hx))),
        tB=_csc(sp.kron(eB, Ix)),
        tT=_csc(sp.kron(eT, Ix)),
        tL=_csc(sp.kron(It, sp.csc_matrix(eL))),
        tR=_csc(sp.kron(It, sp.csc_matrix(eR))),
        hx_weights=hx,
    )


@dataclass(frozen=True)
class SpatialOp:
    """Global spatial derivative with interface (and possibly periodic) SATs absorbed.

    For the periodic variant ``Qx_tilde`` is skew-symmetric. The
    non-periodic variant keeps the outer boundary terms, so
    ``Q + Q^T = diag(-1, 0, ..., 0, 1)`` on the global node vector.
    """

    Qx_tilde: sp.csc_matrix
    Dx_tilde: sp.csc_matrix
    weights: np.ndarray
    periodic: bool

    @property
    def Q(self) -> sp.csc_matrix:
        return self.Qx_tilde

    @property
    def D(self) -> sp.csc_matrix:
        return self.Dx_tilde

    def skew_defect(self) -> float:
        diff = self.Qx_tilde + self.Qx_tilde.T
        return float(abs(diff).max()) if diff.nnz else 0.0


# The periodic operator type named in the interface contracts.
PeriodicSpatialOp = SpatialOp


def build_periodic_op_single(space_op: SbpOperator1D) -> SpatialOp:
    """Single periodic element: :math:`\\tilde Q = S - \\tfrac12(t_L t_R^T - t_R t_L^T)`."""
    tL, tR = space_op.tL, space_op.tR
    Qt = space_op.S - 0.5 * (np.outer(tL, tR) - np.outer(tR, tL))
    w = np.asarray(space_op.weights)
    return SpatialOp(
        Qx_tilde=_csc(Qt),
        Dx_tilde=_csc(Qt / w[:, None]),
        weights=w,
        periodic=True,
    )


def _coupled_Q(space_ops: Sequence[SbpOperator1D], periodic: bool) -> sp.csc_matrix:
    K = len(space_ops)
    n = space_ops[0].n
    rows, cols, vals = [], [], []

    def put(block: np.ndarray, r0: int, c0: int) -> None:
        ii, jj = np.nonzero(block)
        rows.extend(ii + r0)
        cols.extend(jj + c0)
        vals.extend(block[ii, jj])

    for e, op in enumerate(space_ops):
        put(np.asarray(op.S), e * n, e * n)

    # central coupling: last node of e sees the first node of e+1 with +1/2,
    # the first node of e+1 sees the last node of e with -1/2
    pairs = [(e, e + 1) for e in range(K - 1)]
    if periodic:
        pairs.append((K - 1, 0))
    for left, right in pairs:
        last, first = left * n + n - 1, right * n
        rows.extend([last, first])
        cols.extend([first, last])
        vals.extend([0.5, -0.5])

    if not periodic:
        rows.extend([0, K * n - 1])
        cols.extend([0, K * n - 1])
        vals.extend([-0.5, 0.5])

    size = K * n
    return _csc(sp.coo_matrix((vals, (rows, cols)), shape=(size, size)))


def build_periodic_op_multielement(space_ops: Sequence[SbpOperator1D], K: int) -> SpatialOp:
    """Periodic global operator with central interface SATs.

    The first and last elements are coupled by the periodic wrap, so
    ``K = 1`` gives back :func:`build_periodic_op_single`.
    """
    _check_elements(space_ops, K)
    Q = _coupled_Q(space_ops, periodic=True)
    w = np.concatenate([op.weights for op in space_ops])
    return SpatialOp(Qx_tilde=Q, Dx_tilde=_csc(sp.diags(1.0 / w) @ Q), weights=w, periodic=True)


def build_nonperiodic_op_multielement(space_ops: Sequence[SbpOperator1D], K: int) -> SpatialOp:
    """Global operator with interface SATs only; outer boundaries are left to Dirichlet SATs."""
    _check_elements(space_ops, K)
    Q = _coupled_Q(space_ops, periodic=False)
    w = np.concatenate([op.weights for op in space_ops])
    return SpatialOp(Qx_tilde=Q, Dx_tilde=_csc(sp.diags(1.0 / w) @ Q), weights=w, periodic=False)


@dataclass(frozen=True)
class TemporalSat:
    """Penalty ``-Ht^{-1} tB (tB^T u - u0)`` written as ``matrix @ u + offset``."""

    matrix: sp.csc_matrix
    offset: np.ndarray


def temporal_sat(ops: SpaceTimeOps, bottom_data) -> TemporalSat:
    """Weak initial condition on the bottom face of the slab."""
    bottom = np.asarray(bottom_data, dtype=np.float64).ravel()
    if bottom.size != ops.n_space:
        raise ValueError(
            f"bottom data has {bottom.size} entries, expected {ops.n_space} spatial values")
    lift = ops.Htinv @ ops.tB
    return TemporalSat(matrix=_csc(-(lift @ ops.tB.T)), offset=lift @ bottom)


def slab_interface_sat(ops: SpaceTimeOps, top_of_previous) -> TemporalSat:
    """Temporal SAT coupling a slab to the top face of the previous one."""
    if top_of_previous is None:
        raise RuntimeError("no previous slab available for the interface SAT")
    return temporal_sat(ops, top_of_previous)


BoundaryData = Callable[[np.ndarray], np.ndarray]


def _zero_data(v):
    return np.zeros_like(np.asarray(v, dtype=np.float64))


@dataclass(frozen=True)
class DirichletSatConfig:
    """Stable penalty strengths and inflow data ``f_L(v)``, ``f_R(v)``."""

    epsilon: float
    f_L: BoundaryData = _zero_data
    f_R: BoundaryData = _zero_data

    @property
    def tau_rho(self) -> float:
        return 1.0 / (2.0 * self.epsilon)

    @property
    def tau_g(self) -> float:
        return 1.0 / (2.0 * self.epsilon**2)


@dataclass(frozen=True)
class DirichletSats:
    """Boundary penalties for all ``n_v + 1`` equations.

    Field index 0 is ``rho``, index ``k + 1`` is ``g_k``. The penalty in
    equation ``r`` evaluated on a state is
    ``sum_c blocks[r, c] @ u_c + offsets[r]``. Micro equations already
    include the subtraction of the velocity-averaged penalty.
    """

    blocks: dict[tuple[int, int], sp.csc_matrix]
    offsets: dict[int, np.ndarray]
    nv: int

    def apply(self, fields: Sequence[np.ndarray]) -> list[np.ndarray]:
        out = [self.offsets[r].copy() for r in range(self.nv + 1)]
        for (r, c), blk in self.blocks.items():
            out[r] += blk @ fields[c]
        return out


def dirichlet_sats(cfg: DirichletSatConfig, vspace: VelocitySpace, ops: SpaceTimeOps) -> DirichletSats:
    r"""Characteristic Dirichlet penalties at the outer faces.

    Macro equation:

    .. math::

        -\tau_\rho P_L \langle v^+(\rho + \varepsilon g - f_L)\rangle
        + \tau_\rho P_R \langle v^-(\rho + \varepsilon g - f_R)\rangle

    with :math:`P_{L,R} = H_x^{-1} t_{L,R} t_{L,R}^T`. Micro equation ``k``
    receives :math:`s_k - \langle s \rangle` where
    :math:`s_k = -\tau_g v_k^+ P_L(\rho + \varepsilon g_k - f_L(v_k))
    + \tau_g v_k^- P_R(\rho + \varepsilon g_k - f_R(v_k))`.
    """
    if not vspace.is_symmetric():
        raise ConfigurationError("Dirichlet SATs require a symmetric velocity rule")
    eps = cfg.epsilon
    if not eps > 0:
        raise ConfigurationError(f"epsilon must be positive, got {eps}")

    nv = vspace.nv
    v, w = np.asarray(vspace.v), np.asarray(vspace.w)
    vp, vm = vspace.v_plus, vspace.v_minus
    tr, tg = cfg.tau_rho, cfg.tau_g

    PL = _csc(ops.Hxinv @ ops.tL @ ops.tL.T)
    PR = _csc(ops.Hxinv @ ops.tR @ ops.tR.T)
    eL = ops.Hxinv @ ops.tL @ np.ones(ops.nt)
    eR = ops.Hxinv @ ops.tR @ np.ones(ops.nt)

    fL = np.where(vp > 0, np.asarray(cfg.f_L(v), dtype=np.float64) * np.ones(nv), 0.0)
    fR = np.where(vm < 0, np.asarray(cfg.f_R(v), dtype=np.float64) * np.ones(nv), 0.0)

    blocks: dict[tuple[int, int], sp.csc_matrix] = {}
    offsets: dict[int, np.ndarray] = {}

    def add(r: int, c: int, m) -> None:
        m = _csc(m)
        blocks[(r, c)] = _csc(blocks[(r, c)] + m) if (r, c) in blocks else m

    # macro equation
    add(0, 0, -tr * float(w @ vp) * PL + tr * float(w @ vm) * PR)
    for j in range(nv):
        coef = -tr * eps * w[j] * vp[j] * PL + tr * eps * w[j] * vm[j] * PR
        if coef.nnz:
            add(0, j + 1, coef)
    offsets[0] = tr * float(w @ (vp * fL)) * eL - tr * float(w @ (vm * fR)) * eR

    # per-velocity penalties s_k = a_k (rho + eps g_k) + c_k
    a = [-tg * vp[k] * PL + tg * vm[k] * PR for k in range(nv)]
    c = [tg * vp[k] * fL[k] * eL - tg * vm[k] * fR[k] * eR for k in range(nv)]
    a_mean = sum(w[k] * a[k] for k in range(nv))
    c_mean = sum(w[k] * c[k] for k in range(nv))

    for k in range(nv):
        r = k + 1
        add(r, 0, a[k] - a_mean)
        for j in range(nv):
            m = -w[j] * eps * a[j]
            if j == k:
                m = m + eps * a[k]
            if m.nnz:
                add(r, j + 1, m)
        offsets[r] = c[k] - c_mean

    return DirichletSats(blocks=blocks, offsets=offsets, nv=nv)
