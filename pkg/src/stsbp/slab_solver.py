r"""
Fully implicit space-time slab systems for the micro-macro scheme.

Unknowns are stacked field-major, ``[rho; g_1; ...; g_nv]``, each field in
the time-major slab ordering of :mod:`stsbp.operators`. Micro-equation
rows are multiplied by :math:`\varepsilon^2` before factorization, which
keeps all entries bounded as :math:`\varepsilon \to 0`.

With a constant slab length and time-independent coefficients the slab
matrix is the same for every slab, so :func:`march_slabs` factorizes once
and only rebuilds the right-hand side.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import BarycentricInterpolator

from stsbp.errors import ConfigurationError, InvalidProblemError, SolverError
from stsbp.operators import (
    DirichletSatConfig,
    SpaceTimeOps,
    SpatialOp,
    build_nonperiodic_op_multielement,
    build_periodic_op_multielement,
    build_spacetime_ops,
    dirichlet_sats,
    element_ops,
    slab_interface_sat,
    temporal_sat,
)
from stsbp.problems import BoundaryKind, ProblemSpec
from stsbp.sbp_core import build_glb_sbp, scale_to_interval

RESIDUAL_TOL = 1.0e-10
MEAN_G_TOL = 1.0e-14


@dataclass(frozen=True)
class Grid:
    """Tensor grid: ``K`` elements of ``nx`` nodes and ``n_slabs`` slabs of ``nt`` nodes."""

    x_left: float
    x_right: float
    K: int
    nx: int
    nt: int
    slab_length: float
    n_slabs: int
    t0: float = 0.0

    def __post_init__(self):
        if self.K < 1:
            raise ConfigurationError(f"need at least one element, got K={self.K}")
        if self.nx < 2 or self.nt < 2:
            raise ConfigurationError("elements and slabs need at least 2 nodes")
        if self.n_slabs < 1:
            raise ConfigurationError(f"need at least one slab, got {self.n_slabs}")
        if not self.slab_length > 0:
            raise ConfigurationError(f"slab length must be positive, got {self.slab_length}")
        if not self.x_right > self.x_left:
            raise ConfigurationError("invalid spatial domain")

    @classmethod
    def uniform(cls, domain, K: int, N: int, T: float, n_slabs: int, nt: int | None = None) -> "Grid":
        if int(n_slabs) < 1:
            raise ConfigurationError(f"need at least one slab, got {n_slabs}")
        return cls(x_left=float(domain[0]), x_right=float(domain[1]), K=int(K), nx=int(N),
                   nt=int(nt if nt is not None else N), slab_length=float(T) / int(n_slabs),
                   n_slabs=int(n_slabs))

    @property
    def dx(self) -> float:
        return (self.x_right - self.x_left) / self.K

    @property
    def T(self) -> float:
        return self.t0 + self.n_slabs * self.slab_length

    def slab_interval(self, s: int) -> tuple[float, float]:
        a = self.t0 + s * self.slab_length
        b = self.t0 + (s + 1) * self.slab_length
        if s == self.n_slabs - 1:
            b = self.T
        return a, b

    def spacetime_ops(self, s: int = 0) -> SpaceTimeOps:
        a, b = self.slab_interval(s)
        t_op = scale_to_interval(build_glb_sbp(self.nt), a, b)
        x_ops = element_ops(build_glb_sbp(self.nx), self.x_left, self.x_right, self.K)
        return build_spacetime_ops(t_op, x_ops, self.K)

    def spatial_op(self, bc: BoundaryKind) -> SpatialOp:
        x_ops = element_ops(build_glb_sbp(self.nx), self.x_left, self.x_right, self.K)
        if bc is BoundaryKind.PERIODIC:
            return build_periodic_op_multielement(x_ops, self.K)
        return build_nonperiodic_op_multielement(x_ops, self.K)


@dataclass
class SlabSystem:
    """Sparse slab matrix and right-hand side, with the block layout."""

    matrix: sp.csc_matrix
    rhs: np.ndarray
    nv: int
    M: int
    micro_rows_scaled: bool = True
    slab: int = 0


@dataclass
class SlabSolution:
    """Nodal values on one slab: ``rho[t, e, i]`` and ``g[k, t, e, i]``."""

    rho: np.ndarray
    g: np.ndarray
    t_nodes: np.ndarray
    x: np.ndarray
    bottom_rho: np.ndarray
    bottom_g: np.ndarray
    slab: int = 0
    residual: float = 0.0

    @property
    def interval(self) -> tuple[float, float]:
        return float(self.t_nodes[0]), float(self.t_nodes[-1])

    @property
    def nt(self) -> int:
        return self.rho.shape[0]

    def rho_flat(self) -> np.ndarray:
        return self.rho.reshape(-1)

    def g_flat(self) -> np.ndarray:
        return self.g.reshape(self.g.shape[0], -1)

    def top_slice(self):
        return self.rho[-1].reshape(-1).copy(), self.g[:, -1].reshape(self.g.shape[0], -1).copy()

    def bottom_slice(self):
        return self.rho[0].reshape(-1).copy(), self.g[:, 0].reshape(self.g.shape[0], -1).copy()

    def slice_at(self, j: int):
        return self.rho[j].reshape(-1).copy(), self.g[:, j].reshape(self.g.shape[0], -1).copy()


@dataclass
class _SlabMatrix:
    matrix: sp.csc_matrix
    ops: SpaceTimeOps
    dirichlet: object | None
    augmented: sp.csc_matrix | None = field(default=None, repr=False)
    lu: object | None = field(default=None, repr=False)


class _AugmentedLU:
    """Solve ``A u = b`` through ``[[B, U], [-V, I]] [u; phi] = [b; 0]`` with ``A = B + U V``.

    ``phi = <v g>`` is carried as an extra unknown so the velocity coupling
    no longer fills every micro row; this cuts fill-in several times over.
    """

    def __init__(self, augmented: sp.csc_matrix, n: int, slab: int):
        self._lu = _factorize(augmented, slab)
        self._n = n
        self._pad = augmented.shape[0] - n

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self._lu.solve(np.concatenate([rhs, np.zeros(self._pad)]))[: self._n]


def _check_mean_g(problem: ProblemSpec, g0: np.ndarray) -> None:
    mean = problem.vspace.average(g0)
    scale = max(1.0, float(np.max(np.abs(g0)))) if g0.size else 1.0
    if mean.size and float(np.max(np.abs(mean))) > MEAN_G_TOL * scale:
        raise InvalidProblemError("initial micro data must have zero velocity average")


def _assemble_matrix(problem: ProblemSpec, grid: Grid, ops: SpaceTimeOps) -> _SlabMatrix:
    eps = problem.epsilon
    vs = problem.vspace
    nv, M = vs.nv, ops.size
    v, w = np.asarray(vs.v), np.asarray(vs.w)
    wv = w * v

    sig_s, sig_a = problem.sample_sigma(ops.x)
    Ss = sp.diags(np.tile(sig_s, ops.nt))
    Sa = sp.diags(np.tile(sig_a, ops.nt))

    D = ops.lift(grid.spatial_op(problem.bc).D)
    sat0 = temporal_sat(ops, np.zeros(ops.n_space)).matrix
    base = ops.Dt - sat0

    # A = B + U V, where V u = <v g> and U distributes D <v g> to every row
    A00 = base + Sa
    Ag0 = sp.kron(v.reshape(-1, 1), D)
    Agg = sp.kron(sp.identity(nv), eps**2 * base + Ss + eps**2 * Sa) + sp.kron(sp.diags(eps * v), D)
    B = sp.bmat([[A00, None], [Ag0, Agg]], format="csc")
    U = sp.vstack([D, -eps * sp.kron(np.ones((nv, 1)), D)], format="csc")
    V = sp.hstack([sp.csc_matrix((M, M)), sp.kron(wv.reshape(1, -1), sp.identity(M))], format="csc")

    dsat = None
    if problem.bc is BoundaryKind.DIRICHLET:
        dsat = dirichlet_sats(DirichletSatConfig(eps, problem.f_L, problem.f_R), vs, ops)
        blocks = [[None] * (nv + 1) for _ in range(nv + 1)]
        for (r, c), blk in dsat.blocks.items():
            scale = 1.0 if r == 0 else eps**2
            blocks[r][c] = -scale * blk
        for r in range(nv + 1):
            if blocks[r][r] is None:
                blocks[r][r] = sp.csc_matrix((M, M))
        B = B + sp.bmat(blocks, format="csc")

    A = _tidy(B + U @ V)
    aug = _tidy(sp.bmat([[B, U], [-V, sp.identity(M)]]))
    return _SlabMatrix(matrix=A, ops=ops, dirichlet=dsat, augmented=aug)


def _tidy(m) -> sp.csc_matrix:
    m = sp.csc_matrix(m)
    m.eliminate_zeros()
    m.sort_indices()
    return m


def _assemble_rhs(problem: ProblemSpec, ops: SpaceTimeOps, slab_matrix: _SlabMatrix,
                  bottom_rho: np.ndarray, bottom_g: np.ndarray) -> np.ndarray:
    eps = problem.epsilon
    nv = problem.vspace.nv
    Fr, Fg = problem.sample_forcing(ops.x, ops.t)

    parts = [Fr.reshape(-1) + temporal_sat(ops, bottom_rho).offset]
    for k in range(nv):
        parts.append(eps**2 * (Fg[k].reshape(-1) + temporal_sat(ops, bottom_g[k]).offset))

    if slab_matrix.dirichlet is not None:
        offs = slab_matrix.dirichlet.offsets
        parts[0] = parts[0] + offs[0]
        for k in range(nv):
            parts[k + 1] = parts[k + 1] + eps**2 * offs[k + 1]
    return np.concatenate(parts)


def _ops_for_slab(grid: Grid, ops: SpaceTimeOps, s: int) -> SpaceTimeOps:
    """Reuse the spatial structure; only the time nodes move between slabs."""
    a, b = grid.slab_interval(s)
    if abs(ops.t[0] - a) <= 1e-15 and abs(ops.t[-1] - b) <= 1e-15:
        return ops
    t_op = scale_to_interval(build_glb_sbp(grid.nt), a, b)
    return SpaceTimeOps(**{**{f: getattr(ops, f) for f in ops.__dataclass_fields__}, "time_op": t_op})


def initial_data(problem: ProblemSpec, grid: Grid):
    ops = grid.spacetime_ops(0)
    rho0, g0 = problem.sample_initial(ops.x)
    _check_mean_g(problem, g0)
    return rho0, g0


def assemble_slab(problem: ProblemSpec, grid: Grid, ops: SpaceTimeOps | None = None,
                  bottom_data=None, slab: int = 0) -> SlabSystem:
    """Assemble the slab matrix and rhs for given bottom-face data.

    ``bottom_data`` is ``(rho, g)`` with ``g`` of shape ``(nv, K * nx)``;
    the problem's initial data is used when omitted.
    """
    ops = ops or grid.spacetime_ops(slab)
    if bottom_data is None:
        bottom_data = initial_data(problem, grid)
    rho_b, g_b = _validate_bottom(problem, ops, bottom_data)
    sm = _assemble_matrix(problem, grid, ops)
    rhs = _assemble_rhs(problem, ops, sm, rho_b, g_b)
    return SlabSystem(matrix=sm.matrix, rhs=rhs, nv=problem.vspace.nv, M=ops.size, slab=slab)


def _validate_bottom(problem, ops, bottom_data):
    rho_b, g_b = bottom_data
    rho_b = np.asarray(rho_b, dtype=np.float64).reshape(-1)
    g_b = np.asarray(g_b, dtype=np.float64).reshape(problem.vspace.nv, -1)
    if rho_b.size != ops.n_space or g_b.shape[1] != ops.n_space:
        raise ValueError("bottom data does not match the spatial grid")
    return rho_b, g_b


def _factorize(matrix: sp.csc_matrix, slab: int):
    try:
        return spla.splu(matrix, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SolverError(f"factorization failed: {exc}", slab=slab) from exc


def _solve(lu, matrix, rhs, slab: int) -> tuple[np.ndarray, float]:
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise SolverError("non-finite solution", slab=slab)
    bnorm = float(np.linalg.norm(rhs))
    res = float(np.linalg.norm(matrix @ x - rhs))
    rel = res / bnorm if bnorm > 0 else res
    if rel > RESIDUAL_TOL:
        # one step of iterative refinement before giving up
        x = x + lu.solve(rhs - matrix @ x)
        res = float(np.linalg.norm(matrix @ x - rhs))
        rel = res / bnorm if bnorm > 0 else res
        if rel > RESIDUAL_TOL:
            raise SolverError(f"relative residual {rel:.3e} exceeds {RESIDUAL_TOL:.0e}", slab=slab)
    return x, rel


def solve_linear(system: SlabSystem, lu=None) -> tuple[np.ndarray, float]:
    """Direct solve of a slab system; returns the solution vector and relative residual."""
    lu = lu or _factorize(system.matrix, system.slab)
    return _solve(lu, system.matrix, system.rhs, system.slab)


def _to_solution(u: np.ndarray, ops: SpaceTimeOps, nv: int, bottom, slab: int, res: float) -> SlabSolution:
    nt, K, nx = ops.shape
    M = ops.size
    rho = u[:M].reshape(nt, K, nx).copy()
    g = u[M:].reshape(nv, nt, K, nx).copy()
    return SlabSolution(rho=rho, g=g, t_nodes=ops.t.copy(), x=ops.x.reshape(K, nx).copy(),
                        bottom_rho=bottom[0].copy(), bottom_g=bottom[1].copy(),
                        slab=slab, residual=res)


def solve_slab(system: SlabSystem, ops: SpaceTimeOps, bottom_data=None) -> SlabSolution:
    """Factorize and solve one slab system and unpack the fields."""
    u, res = solve_linear(system)
    if bottom_data is None:
        bottom_data = (np.full(ops.n_space, np.nan), np.full((system.nv, ops.n_space), np.nan))
    return _to_solution(u, ops, system.nv, bottom_data, system.slab, res)


def march_slabs(problem: ProblemSpec, grid: Grid, n_slabs: int | None = None) -> list[SlabSolution]:
    """Solve slab after slab, feeding each top face into the next bottom SAT."""
    n_slabs = grid.n_slabs if n_slabs is None else int(n_slabs)
    if n_slabs < 1:
        raise ConfigurationError(f"need at least one slab, got {n_slabs}")
    if not problem.epsilon > 0:
        raise InvalidProblemError("epsilon must be positive")

    ops0 = grid.spacetime_ops(0)
    sm = _assemble_matrix(problem, grid, ops0)
    sm.lu = _AugmentedLU(sm.augmented, sm.matrix.shape[0], 0)

    bottom = initial_data(problem, grid)
    out: list[SlabSolution] = []
    for s in range(n_slabs):
        ops = _ops_for_slab(grid, ops0, s)
        rhs = _assemble_rhs(problem, ops, sm, *bottom)
        u, res = _solve(sm.lu, sm.matrix, rhs, s)
        sol = _to_solution(u, ops, problem.vspace.nv, bottom, s, res)
        out.append(sol)
        bottom = sol.top_slice()
    return out


def march_limit_diffusion(problem: ProblemSpec, grid: Grid) -> list[np.ndarray]:
    """Slab marching for ``Dt rho = D (m2/sigma_s) D rho - sigma_a rho + SAT + F``."""
    ops0 = grid.spacetime_ops(0)
    sig_s, sig_a = problem.sample_sigma(ops0.x)
    Dbar = grid.spatial_op(BoundaryKind.PERIODIC).D
    L = Dbar @ sp.diags(problem.vspace.v2_mean / sig_s) @ Dbar
    sat0 = temporal_sat(ops0, np.zeros(ops0.n_space)).matrix
    A = sp.csc_matrix(ops0.Dt - ops0.lift(L) + sp.diags(np.tile(sig_a, ops0.nt)) - sat0)
    lu = _factorize(A, 0)

    rho_b, _ = problem.sample_initial(ops0.x)
    out = []
    for s in range(grid.n_slabs):
        ops = _ops_for_slab(grid, ops0, s)
        Fr, _ = problem.sample_forcing(ops.x, ops.t)
        rhs = Fr.reshape(-1) + temporal_sat(ops, rho_b).offset
        u, _ = _solve(lu, A, rhs, s)
        rho = u.reshape(ops.shape)
        out.append(rho)
        rho_b = rho[-1].reshape(-1).copy()
    return out


def _time_tol(solutions: Sequence[SlabSolution]) -> float:
    a, b = solutions[0].interval[0], solutions[-1].interval[1]
    return 1e-12 * max(1.0, abs(a), abs(b))


def extract_slice(solutions: Sequence[SlabSolution], t: float):
    """Nodal ``(rho, g)`` at a time level of the slab grid.

    At slab junctions the later slab's bottom face is returned.
    """
    tol = _time_tol(solutions)
    for sol in reversed(solutions):
        hits = np.nonzero(np.abs(sol.t_nodes - t) <= tol)[0]
        if hits.size:
            return sol.slice_at(int(hits[0]))
    nodes = np.concatenate([sol.t_nodes for sol in solutions])
    nearest = np.unique(nodes[np.argsort(np.abs(nodes - t))[:3]])
    raise ValueError(f"t={t} is not a temporal node; nearest nodes are {nearest.tolist()}")


def evaluate_at_time(solutions: Sequence[SlabSolution], t: float):
    """Values at an arbitrary time via the slab's Lagrange interpolant in time.

    Nodal times give the same result as :func:`extract_slice`.
    """
    try:
        return extract_slice(solutions, t)
    except ValueError:
        pass
    for sol in solutions:
        a, b = sol.interval
        if a <= t <= b:
            nt = sol.nt
            rho = BarycentricInterpolator(sol.t_nodes, sol.rho.reshape(nt, -1))(t)
            gs = np.moveaxis(sol.g, 1, 0).reshape(nt, -1)
            g = BarycentricInterpolator(sol.t_nodes, gs)(t).reshape(sol.g.shape[0], -1)
            return np.asarray(rho).reshape(-1), g
    raise ValueError(f"t={t} lies outside the computed time range")


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def solution_rows(solutions: Sequence[SlabSolution], times: Iterable[float]):
    """Rows ``(field, k, time, x, value)``; ``k = 0`` for rho, velocity index 1..nv for g."""
    for t in times:
        rho, g = evaluate_at_time(solutions, t)
        x = solutions[0].x.reshape(-1)
        for xi, val in zip(x, rho):
            yield ("rho", 0, t, xi, val)
        for k in range(g.shape[0]):
            for xi, val in zip(x, g[k]):
                yield ("g", k + 1, t, xi, val)


def write_solution_csv(stream, solutions: Sequence[SlabSolution], times: Iterable[float]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["field", "k", "time", "x", "value"])
    for fld, k, t, x, val in solution_rows(solutions, times):
        writer.writerow([fld, k, _fmt(t), _fmt(x), _fmt(val)])


def solution_csv_text(solutions: Sequence[SlabSolution], times: Iterable[float]) -> str:
    buf = io.StringIO()
    write_solution_csv(buf, solutions, times)
    return buf.getvalue()


def convergence_grid(problem: ProblemSpec, K: int, N: int) -> Grid:
    """``K`` elements and ``K`` slabs of ``N`` nodes each over ``[0, problem.T]``."""
    return Grid.uniform(problem.domain, K, N, problem.T, n_slabs=K, nt=N)


def dt_rule_grid(problem: ProblemSpec, K: int, N: int, rule: str = "match-K",
                 n_slabs: int | None = None) -> Grid:
    """Slab layout from a named rule: ``match-K``, ``10dx`` or ``explicit``."""
    if rule == "match-K":
        return Grid.uniform(problem.domain, K, N, problem.T, n_slabs=K, nt=N)
    if rule == "10dx":
        dx = (problem.domain[1] - problem.domain[0]) / K
        n = max(1, int(math.ceil(problem.T / (10.0 * dx) - 1e-9)))
        return Grid.uniform(problem.domain, K, N, n * 10.0 * dx, n_slabs=n, nt=N)
    if rule == "explicit":
        if n_slabs is None:
            raise ConfigurationError("the explicit slab rule needs a slab count")
        return Grid.uniform(problem.domain, K, N, problem.T, n_slabs=n_slabs, nt=N)
    raise ConfigurationError(f"unknown slab rule '{rule}'")
