"""Eigen-decomposition of the flux matrix of the discrete-velocity micro-macro system.

With ``u = (rho, g_1, ..., g_nv)`` and forcing dropped, the system reads
``u_t + A u_x = 0``. ``A`` is diagonalizable with eigenvalues
``0, v_1/eps, ..., v_nv/eps`` and closed-form eigenvectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stsbp.sbp_core import SbpOperator1D
from stsbp.velocity_space import VelocitySpace

DIAG_TOL = 1.0e-12


class DiagonalizationError(RuntimeError):
    """The closed-form eigen-decomposition failed its own consistency check."""


def _inf_norm(a: np.ndarray) -> float:
    return float(np.max(np.sum(np.abs(a), axis=1)))


def build_flux_matrix(vspace: VelocitySpace, epsilon: float) -> np.ndarray:
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    v, w = np.asarray(vspace.v), np.asarray(vspace.w)
    nv = v.size
    wv = w * v
    A = np.zeros((nv + 1, nv + 1))
    A[0, 1:] = wv
    A[1:, 0] = v / epsilon**2
    A[1:, 1:] = -np.tile(wv, (nv, 1)) / epsilon
    A[1:, 1:] += np.diag(v) / epsilon
    return A


@dataclass(frozen=True)
class HyperbolicDiag:
    A: np.ndarray
    X: np.ndarray
    Xinv: np.ndarray
    Lambda: np.ndarray
    theta: np.ndarray
    epsilon: float

    # Residuals are scaled by the norms of the factors: the column of X^-1
    # that carries 1/eps cancels in floating point only to that accuracy.
    @property
    def inverse_residual(self) -> float:
        n = self.X.shape[0]
        scale = _inf_norm(self.X) * _inf_norm(self.Xinv)
        return _inf_norm(self.X @ self.Xinv - np.eye(n)) / scale

    @property
    def similarity_residual(self) -> float:
        diff = self.A - self.X @ self.Lambda @ self.Xinv
        scale = _inf_norm(self.X) * _inf_norm(self.Lambda) * _inf_norm(self.Xinv)
        return _inf_norm(diff) / scale

    def characteristic(self, rho, g) -> np.ndarray:
        """Characteristic variables ``z = X^-1 u`` for nodal ``rho`` and ``g[k]``."""
        u = np.vstack([np.atleast_1d(rho)[None, ...], np.atleast_2d(g)])
        return self.Xinv @ u


def build_diagonalization(vspace: VelocitySpace, epsilon: float, check: bool = True) -> HyperbolicDiag:
    v, w = np.asarray(vspace.v), np.asarray(vspace.w)
    if np.any(w <= 0):
        raise ValueError("velocity weights must be positive")
    nv = v.size
    eps = float(epsilon)
    theta = (1.0 - w) / w

    X = -np.ones((nv + 1, nv + 1))
    X[0, 0] = -eps
    X[0, 1:] = eps
    X[1:, 0] = 1.0
    X[1:, 1:] += np.diag(theta + 1.0)

    Xinv = np.zeros((nv + 1, nv + 1))
    Xinv[0, 1:] = w
    Xinv[1:, 0] = w / eps
    Xinv[1:, 1:] = np.diag(w)

    Lam = np.diag(np.concatenate([[0.0], v / eps]))
    diag = HyperbolicDiag(A=build_flux_matrix(vspace, eps), X=X, Xinv=Xinv, Lambda=Lam,
                          theta=theta, epsilon=eps)
    if check:
        if diag.inverse_residual > DIAG_TOL:
            raise DiagonalizationError(f"X X^-1 - I residual {diag.inverse_residual:.3e}")
        if diag.similarity_residual > DIAG_TOL:
            raise DiagonalizationError(f"A - X L X^-1 residual {diag.similarity_residual:.3e}")
    return diag


def boundary_condition_count(vspace: VelocitySpace) -> tuple[int, int, int]:
    """``(left, right, none)``: inflow conditions at each side and characteristics needing none.

    The ``none`` count includes the zero eigenvalue of the macro mode.
    """
    v = np.asarray(vspace.v)
    return int(np.sum(v > 0)), int(np.sum(v < 0)), 1 + int(np.sum(v == 0))


def periodic_penalty(space_op: SbpOperator1D) -> np.ndarray:
    """Single-element periodic penalty ``P`` with ``D - P`` the absorbed operator."""
    tL, tR = space_op.tL, space_op.tR
    inner = np.outer(tR, tR - tL) - np.outer(tL, tL - tR)
    return 0.5 * inner / np.asarray(space_op.weights)[:, None]


def characteristic_sat_equivalence(vspace: VelocitySpace, epsilon: float, space_op: SbpOperator1D,
                                   seed: int = 0) -> float:
    """Compare characteristic periodic SATs mapped back by ``X`` with the primitive ones.

    Returns the max-norm difference relative to the size of the primitive
    SATs on a random state.
    """
    diag = build_diagonalization(vspace, epsilon)
    P = periodic_penalty(space_op)
    rng = np.random.default_rng(seed)
    nv = vspace.nv
    u = rng.standard_normal((nv + 1, space_op.n))

    z = diag.Xinv @ u
    sat_z = np.diag(diag.Lambda)[:, None] * (z @ P.T)
    via_char = diag.X @ sat_z

    v, w = np.asarray(vspace.v), np.asarray(vspace.w)
    rho, g = u[0], u[1:]
    flux = (w * v) @ g
    direct = np.empty_like(u)
    direct[0] = P @ flux
    for k in range(nv):
        direct[k + 1] = P @ (v[k] / epsilon * rho + v[k] * g[k] - flux) / epsilon

    scale = max(1.0, float(np.max(np.abs(direct))))
    return float(np.max(np.abs(via_char - direct))) / scale
