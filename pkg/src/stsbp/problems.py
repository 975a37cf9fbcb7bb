"""Problem definitions for the micro-macro kinetic model and the diffusion-limit solver.

All data functions broadcast over NumPy arrays. Spatial and temporal
arguments are ``x`` and ``t``; velocity-dependent functions take ``(x, v, t)``
or ``(x, v)`` for initial data.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from stsbp.errors import ConfigurationError, InvalidProblemError
from stsbp.velocity_space import VelocitySpace, build_velocity_space


class BoundaryKind(enum.Enum):
    PERIODIC = "periodic"
    DIRICHLET = "dirichlet"


def _zero_x(x, *args):
    return np.zeros(np.broadcast(x, *args).shape)


def _zero_v(v):
    return np.zeros_like(np.asarray(v, dtype=np.float64))


def _one(x):
    return np.ones_like(np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class ProblemSpec:
    """Coefficients, data and (optionally) the exact solution of one run."""

    epsilon: float
    vspace: VelocitySpace
    domain: tuple[float, float]
    T: float
    bc: BoundaryKind = BoundaryKind.PERIODIC
    sigma_s: Callable = _one
    sigma_a: Callable = _zero_x
    rho0: Callable = _zero_x
    g0: Callable = _zero_x
    F_rho: Callable | None = None
    F_g: Callable | None = None
    f_L: Callable = _zero_v
    f_R: Callable = _zero_v
    rho_ex: Callable | None = None
    g_ex: Callable | None = None
    report_times: tuple[float, ...] = ()
    name: str = "custom"
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidProblemError(f"epsilon must be positive, got {self.epsilon}")
        if not self.domain[1] > self.domain[0]:
            raise InvalidProblemError(f"invalid domain {self.domain}")

    @property
    def has_exact(self) -> bool:
        return self.rho_ex is not None and self.g_ex is not None

    @property
    def has_forcing(self) -> bool:
        return self.F_rho is not None or self.F_g is not None

    def with_(self, **changes) -> "ProblemSpec":
        return replace(self, **changes)

    # sampling helpers; x is a flat vector of spatial nodes
    def sample_sigma(self, x):
        s = np.broadcast_to(np.asarray(self.sigma_s(x), dtype=np.float64), np.shape(x)).copy()
        a = np.broadcast_to(np.asarray(self.sigma_a(x), dtype=np.float64), np.shape(x)).copy()
        if np.any(~np.isfinite(s)) or np.any(s <= 0):
            raise InvalidProblemError("sigma_s must be positive at every spatial node")
        if np.any(~np.isfinite(a)) or np.any(a < 0):
            raise InvalidProblemError("sigma_a must be non-negative at every spatial node")
        return s, a

    def sample_initial(self, x):
        """Initial ``rho`` (shape ``x``) and ``g`` (shape ``(nv,) + x``)."""
        v = np.asarray(self.vspace.v).reshape((-1,) + (1,) * np.ndim(x))
        rho = np.broadcast_to(self.rho0(x), np.shape(x)).astype(np.float64)
        g = np.broadcast_to(self.g0(x, v), v.shape[:1] + np.shape(x)).astype(np.float64)
        return rho, g

    def sample_forcing(self, x, t):
        """Forcing on the tensor grid ``t x x``: ``(nt, nx)`` and ``(nv, nt, nx)``."""
        T, X = np.meshgrid(t, x, indexing="ij")
        v = np.asarray(self.vspace.v)[:, None, None]
        shape = (v.shape[0],) + X.shape
        Fr = np.zeros(X.shape) if self.F_rho is None else np.broadcast_to(self.F_rho(X, T), X.shape)
        Fg = np.zeros(shape) if self.F_g is None else np.broadcast_to(self.F_g(X[None], v, T[None]), shape)
        return np.asarray(Fr, dtype=np.float64), np.asarray(Fg, dtype=np.float64)

    def sample_exact(self, x, t):
        if not self.has_exact:
            raise InvalidProblemError(f"problem '{self.name}' has no exact solution")
        v = np.asarray(self.vspace.v).reshape((-1,) + (1,) * np.ndim(x))
        rho = np.broadcast_to(self.rho_ex(x, t), np.shape(x)).astype(np.float64)
        g = np.broadcast_to(self.g_ex(x, v, t), v.shape[:1] + np.shape(x)).astype(np.float64)
        return rho, g


def default_velocity_space() -> VelocitySpace:
    return build_velocity_space("glb", 16)


def manufactured_rate(epsilon: float) -> float:
    """Decay rate ``r`` solving ``eps^2 r^2 + r + 1 = 0`` on the branch ``r -> -1``."""
    eps = float(epsilon)
    if not 0 < eps <= 0.5:
        raise ValueError(f"manufactured solution needs 0 < epsilon <= 1/2, got {eps}")
    return -2.0 / (1.0 + math.sqrt(1.0 - 4.0 * eps * eps))


def manufactured_problem(epsilon: float, vspace: VelocitySpace | None = None,
                         T: float = 1.0) -> ProblemSpec:
    """Periodic smooth solution on ``[-pi, pi]`` with ``sigma_s = 1``, ``sigma_a = 0``.

    ``rho = e^{rt} sin(x) / r`` and ``g = v e^{rt} cos(x)``; the forcing
    uses the discrete second moment of ``vspace``.
    """
    r = manufactured_rate(epsilon)
    vs = vspace or default_velocity_space()
    m2 = vs.v2_mean
    eps = float(epsilon)

    return ProblemSpec(
        epsilon=eps,
        vspace=vs,
        domain=(-math.pi, math.pi),
        T=T,
        rho0=lambda x: np.sin(x) / r,
        g0=lambda x, v: v * np.cos(x),
        F_rho=lambda x, t: (1.0 - m2) * np.exp(r * t) * np.sin(x),
        F_g=lambda x, v, t: (m2 - v * v) / eps * np.exp(r * t) * np.sin(x),
        rho_ex=lambda x, t: np.exp(r * t) * np.sin(x) / r,
        g_ex=lambda x, v, t: v * np.exp(r * t) * np.cos(x),
        name="manufactured",
        extras={"r": r},
    )


def limit_manufactured_problem(vspace: VelocitySpace | None = None, T: float = 1.0,
                               epsilon: float = 1.0e-6) -> ProblemSpec:
    """Zero-epsilon limit of :func:`manufactured_problem` for the diffusion solver.

    ``epsilon`` is carried only so the problem stays valid; the limit solver ignores it.
    """
    vs = vspace or default_velocity_space()
    m2 = vs.v2_mean
    return ProblemSpec(
        epsilon=epsilon,
        vspace=vs,
        domain=(-math.pi, math.pi),
        T=T,
        rho0=lambda x: -np.sin(x),
        F_rho=lambda x, t: (1.0 - m2) * np.exp(-t) * np.sin(x),
        rho_ex=lambda x, t: -np.exp(-t) * np.sin(x),
        g_ex=lambda x, v, t: v * np.exp(-t) * np.cos(x),
        name="manufactured-limit",
    )


def variable_scattering_problem(source: float = 1.0, T: float = 0.4, epsilon: float = 1.0e-2,
                                vspace: VelocitySpace | None = None) -> ProblemSpec:
    """Homogeneous inflow on ``[0, 1]`` with ``sigma_s = 1 + 100 x^2`` and a constant macro source."""
    G = float(source)
    return ProblemSpec(
        epsilon=epsilon,
        vspace=vspace or default_velocity_space(),
        domain=(0.0, 1.0),
        T=T,
        bc=BoundaryKind.DIRICHLET,
        sigma_s=lambda x: 1.0 + 100.0 * np.asarray(x) ** 2,
        F_rho=(lambda x, t: G * np.ones(np.broadcast(x, t).shape)) if G != 0.0 else None,
        report_times=(T,),
        name="variable-scattering",
        extras={"source": G},
    )


INFLOW_REPORT_TIMES = (0.1, 0.4, 1.0, 1.6, 4.0)


def inhomogeneous_dirichlet_problem(epsilon: float, T: float = 4.0,
                                    vspace: VelocitySpace | None = None) -> ProblemSpec:
    """Unit inflow from the left into an initially empty slab ``[0, 1]``."""
    return ProblemSpec(
        epsilon=epsilon,
        vspace=vspace or default_velocity_space(),
        domain=(0.0, 1.0),
        T=T,
        bc=BoundaryKind.DIRICHLET,
        f_L=lambda v: np.where(np.asarray(v) > 0, 1.0, 0.0),
        f_R=_zero_v,
        report_times=tuple(t for t in INFLOW_REPORT_TIMES if t <= T + 1e-12),
        name="inflow",
    )


def solve_limit_diffusion(problem: ProblemSpec, grid):
    """Space-time solve of the discrete diffusion limit on the kinetic grid.

    The limit of the kinetic scheme replaces the transport coupling by
    ``D (m2 / sigma_s) D rho`` with the same periodic operator ``D`` and the
    same temporal SATs and slab marching. Returns one ``(nt, K, n)`` array
    per slab.
    """
    from stsbp.slab_solver import march_limit_diffusion

    if problem.bc is not BoundaryKind.PERIODIC:
        raise ConfigurationError("the discrete diffusion limit is only available for periodic problems")
    return march_limit_diffusion(problem, grid)
