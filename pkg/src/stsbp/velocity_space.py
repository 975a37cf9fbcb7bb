"""Discrete velocity spaces and the normalized velocity average."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from stsbp.sbp_core import gauss_lobatto_rule


class VelocityKind(enum.Enum):
    TWO = "two"
    GAUSS_LOBATTO = "glb"


@dataclass(frozen=True)
class VelocitySpace:
    """Velocity nodes ``v`` with weights ``w`` summing to one.

    The discrete average of per-node values ``f_k`` is ``sum_k w_k f_k``.
    """

    kind: VelocityKind
    v: np.ndarray
    w: np.ndarray

    @property
    def nv(self) -> int:
        return self.v.size

    @property
    def v_plus(self) -> np.ndarray:
        return np.maximum(self.v, 0.0)

    @property
    def v_minus(self) -> np.ndarray:
        return np.minimum(self.v, 0.0)

    @property
    def v2_mean(self) -> float:
        return float(self.w @ self.v**2)

    def is_symmetric(self, tol: float = 1.0e-14) -> bool:
        return bool(
            np.all(np.abs(self.v + self.v[::-1]) <= tol)
            and np.all(np.abs(self.w - self.w[::-1]) <= tol)
        )

    def average(self, values) -> np.ndarray:
        return average(self, values)

    def weighted_average(self, coef, values) -> np.ndarray:
        return weighted_average(self, coef, values)


def build_velocity_space(kind: VelocityKind | str = VelocityKind.GAUSS_LOBATTO,
                         nv: int | None = None) -> VelocitySpace:
    """Construct the two-velocity set or a Gauss-Lobatto velocity rule.

    Gauss-Lobatto weights are halved so that the average of one is one.
    """
    kind = VelocityKind(kind)
    if kind is VelocityKind.TWO:
        if nv not in (None, 2):
            raise ValueError(f"the two-velocity space has exactly 2 nodes, got nv={nv}")
        v = np.array([-1.0, 1.0])
        w = np.array([0.5, 0.5])
    else:
        if nv is None or nv < 2:
            raise ValueError(f"Gauss-Lobatto velocity space needs nv >= 2, got {nv}")
        v, w = gauss_lobatto_rule(nv)
        w = 0.5 * w

    v.setflags(write=False)
    w.setflags(write=False)
    return VelocitySpace(kind=kind, v=v, w=w)


def _stack(vspace: VelocitySpace, values) -> np.ndarray:
    try:
        arr = np.asarray(values, dtype=np.float64)
    except ValueError as exc:
        raise ValueError("values must have equal length for every velocity node") from exc
    if arr.ndim == 0 or arr.shape[0] != vspace.nv:
        raise ValueError(
            f"expected one value array per velocity node ({vspace.nv}), "
            f"got leading dimension {arr.shape[:1]}")
    return arr


def average(vspace: VelocitySpace, values) -> np.ndarray:
    """Discrete velocity average of ``values[k]`` over the nodes ``k``."""
    arr = _stack(vspace, values)
    return np.tensordot(vspace.w, arr, axes=(0, 0))


def weighted_average(vspace: VelocitySpace, coef, values) -> np.ndarray:
    """Average of ``coef[k] * values[k]``, e.g. with ``coef = v`` for the flux."""
    arr = _stack(vspace, values)
    coef = np.asarray(coef, dtype=np.float64)
    if coef.shape != (vspace.nv,):
        raise ValueError(f"coef must have shape ({vspace.nv},), got {coef.shape}")
    return np.tensordot(vspace.w * coef, arr, axes=(0, 0))
