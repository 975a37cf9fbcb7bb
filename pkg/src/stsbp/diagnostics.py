r"""
Error norms, convergence orders and discrete energy accounting.

The energy ledger evaluates both sides of the slab energy identity obtained
by testing the macro equation with :math:`\rho^T H` and micro equation
``k`` with :math:`\varepsilon^2 w_k g_k^T H`:

.. math::

    \tfrac12\|\rho_T\|^2 + \tfrac{\varepsilon^2}{2}\langle\|g_T\|^2\rangle
    = -\rho^T H \sigma_a \rho - \langle g^T H (\sigma_s + \varepsilon^2\sigma_a) g\rangle
      - \tfrac12\|\rho_B - \rho_0\|^2 - \tfrac{\varepsilon^2}{2}\langle\|g_B - g_0\|^2\rangle
      + \tfrac12\|\rho_0\|^2 + \tfrac{\varepsilon^2}{2}\langle\|g_0\|^2\rangle
      + b_{LR} + W_F

where face norms use :math:`\bar H_x`, ``b_LR`` collects the outer
boundary terms (zero for periodic problems) and ``W_F`` is the work done
by the forcing, :math:`\rho^T H F_\rho + \varepsilon^2 \langle g^T H F_g\rangle`.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from stsbp.errors import InvalidProblemError
from stsbp.problems import BoundaryKind, ProblemSpec
from stsbp.slab_solver import Grid, SlabSolution, extract_slice


@dataclass(frozen=True)
class ErrorReport:
    err_rho: float
    err_g: float
    K: int
    N: int
    epsilon: float
    t: float = 1.0


def _slice_for_errors(solutions: Sequence[SlabSolution], t: float):
    # prefer the top face of the slab that ends at t
    tol = 1e-12 * max(1.0, abs(t))
    for sol in solutions:
        if abs(sol.t_nodes[-1] - t) <= tol:
            return sol.top_slice()
    return extract_slice(solutions, t)


def compute_errors(solutions: Sequence[SlabSolution], problem: ProblemSpec, t: float = 1.0) -> ErrorReport:
    """Nodal max-norm errors at time ``t``; the g error is maximized over velocities."""
    if not problem.has_exact:
        raise ValueError(f"problem '{problem.name}' has no exact solution")
    rho, g = _slice_for_errors(solutions, t)
    x = solutions[0].x.reshape(-1)
    rho_ex, g_ex = problem.sample_exact(x, t)
    K, N = solutions[0].x.shape
    return ErrorReport(
        err_rho=float(np.max(np.abs(rho - rho_ex))),
        err_g=float(np.max(np.abs(g - g_ex))),
        K=K, N=N, epsilon=problem.epsilon, t=t,
    )


def _order(e0: float, e1: float, K0: int, K1: int) -> float | None:
    if e0 <= 0 or e1 <= 0 or not (math.isfinite(e0) and math.isfinite(e1)):
        return None
    return math.log(e0 / e1) / math.log(K1 / K0)


def convergence_orders(reports: Sequence[ErrorReport]) -> list[tuple[float | None, float | None]]:
    """Observed orders between consecutive rows; ``None`` for the first row or a zero error."""
    if len(reports) < 2:
        raise ValueError("need at least two error reports")
    if len({r.K for r in reports}) != len(reports):
        raise ValueError("reports must have distinct K")
    if len({(r.N, r.epsilon) for r in reports}) != 1:
        raise ValueError("reports must share N and epsilon")
    out: list[tuple[float | None, float | None]] = [(None, None)]
    for a, b in zip(reports[:-1], reports[1:]):
        out.append((_order(a.err_rho, b.err_rho, a.K, b.K), _order(a.err_g, b.err_g, a.K, b.K)))
    return out


def _fmt(x) -> str:
    return "" if x is None else format(float(x), ".17g")


def write_table_csv(stream, reports: Sequence[ErrorReport]) -> None:
    """Columns ``epsilon, K, err_rho, order_rho, err_g, order_g``."""
    orders = convergence_orders(reports) if len(reports) > 1 else [(None, None)]
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["epsilon", "K", "err_rho", "order_rho", "err_g", "order_g"])
    for rep, (o_r, o_g) in zip(reports, orders):
        writer.writerow([_fmt(rep.epsilon), rep.K, _fmt(rep.err_rho), _fmt(o_r), _fmt(rep.err_g), _fmt(o_g)])


def table_csv_text(reports: Sequence[ErrorReport]) -> str:
    buf = io.StringIO()
    write_table_csv(buf, reports)
    return buf.getvalue()


def mean_g_defect(solutions: SlabSolution | Sequence[SlabSolution], vspace) -> float:
    """Largest ``|<g>_h|`` over all space-time nodes."""
    sols = [solutions] if isinstance(solutions, SlabSolution) else list(solutions)
    return max(float(np.max(np.abs(vspace.average(s.g)))) for s in sols)


def g_max_norm(solutions: SlabSolution | Sequence[SlabSolution]) -> float:
    sols = [solutions] if isinstance(solutions, SlabSolution) else list(solutions)
    return max(float(np.max(np.abs(s.g))) for s in sols)


def ap_gap(kinetic_rho, limit_rho) -> float:
    """Max nodal difference of two final-time density profiles on the same grid."""
    a = np.asarray(kinetic_rho, dtype=np.float64)
    b = np.asarray(limit_rho, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"grid mismatch: {a.shape} vs {b.shape}")
    return float(np.max(np.abs(a - b))) if a.size else 0.0


@dataclass(frozen=True)
class EnergyLedger:
    """Both sides of the slab energy identity, term by term."""

    top_energy: float
    bottom_energy: float
    init_energy: float
    init_mismatch: float
    damping_rho: float
    damping_g: float
    forcing_work: float
    b_LR: float
    b_LR_closed: float

    @property
    def lhs(self) -> float:
        return self.top_energy

    @property
    def rhs(self) -> float:
        return (-self.damping_rho - self.damping_g - self.init_mismatch + self.init_energy
                + self.b_LR + self.forcing_work)

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def relative_residual(self) -> float:
        scale = max(abs(self.lhs), abs(self.rhs))
        return self.residual / scale if scale > 0 else self.residual


def _face_energies(problem: ProblemSpec, hx, rho_face, g_face):
    eps2 = problem.epsilon**2
    w = np.asarray(problem.vspace.w)
    return 0.5 * float(rho_face @ (hx * rho_face)) + 0.5 * eps2 * float(w @ ((g_face**2) @ hx))


def energy_ledger(solution: SlabSolution, problem: ProblemSpec, grid: Grid) -> EnergyLedger:
    """Evaluate every term of the energy identity on one computed slab."""
    eps = problem.epsilon
    vs = problem.vspace
    v, w = np.asarray(vs.v), np.asarray(vs.w)
    vp, vm = vs.v_plus, vs.v_minus
    nv = vs.nv

    s = solution.slab
    ops = grid.spacetime_ops(s)
    ht = np.asarray(ops.time_op.weights)
    hx = ops.hx_weights
    Hd = np.kron(ht, hx)

    rho = solution.rho_flat()
    g = solution.g_flat()
    rho_T, g_T = solution.top_slice()
    rho_B, g_B = solution.bottom_slice()
    rho0, g0 = solution.bottom_rho, solution.bottom_g

    top = _face_energies(problem, hx, rho_T, g_T)
    bottom = _face_energies(problem, hx, rho_B, g_B)
    init = _face_energies(problem, hx, rho0, g0)
    mismatch = _face_energies(problem, hx, rho_B - rho0, g_B - g0)

    sig_s, sig_a = problem.sample_sigma(ops.x)
    Sa = np.tile(sig_a, ops.nt)
    Ss = np.tile(sig_s, ops.nt)
    damping_rho = float(rho @ (Hd * Sa * rho))
    damping_g = float(w @ ((g**2) @ (Hd * (Ss + eps**2 * Sa))))

    Fr, Fg = problem.sample_forcing(ops.x, ops.t)
    work = float(rho @ (Hd * Fr.reshape(-1))) + eps**2 * float(w @ np.sum(g * Fg.reshape(nv, -1) * Hd, axis=1))

    b_def = 0.0
    b_closed = 0.0
    if problem.bc is BoundaryKind.DIRICHLET:
        b_def, b_closed = _boundary_terms(problem, solution, ht)

    return EnergyLedger(
        top_energy=top, bottom_energy=bottom, init_energy=init, init_mismatch=mismatch,
        damping_rho=damping_rho, damping_g=damping_g, forcing_work=work,
        b_LR=b_def, b_LR_closed=b_closed,
    )


def _boundary_terms(problem: ProblemSpec, solution: SlabSolution, ht: np.ndarray) -> tuple[float, float]:
    """Outer-face contribution from its definition and from the closed form.

    The definition adds the Dirichlet SAT work to the face terms left over
    by the SBP property of the non-periodic operator. The closed form keeps
    only outgoing characteristics and holds for homogeneous data.
    """
    eps = problem.epsilon
    vs = problem.vspace
    v, w = np.asarray(vs.v), np.asarray(vs.w)
    vp, vm = vs.v_plus, vs.v_minus
    tr, tg = 1.0 / (2.0 * eps), 1.0 / (2.0 * eps**2)

    # face traces over the slab's time nodes
    rL, rR = solution.rho[:, 0, 0], solution.rho[:, -1, -1]
    gL, gR = solution.g[:, :, 0, 0], solution.g[:, :, -1, -1]
    fL = np.where(vp > 0, np.asarray(problem.f_L(v), dtype=np.float64) * np.ones(vs.nv), 0.0)
    fR = np.where(vm < 0, np.asarray(problem.f_R(v), dtype=np.float64) * np.ones(vs.nv), 0.0)

    # rho^T H SAT_rho, with H Hx^{-1} reducing to the time weights on a face
    uL = rL[None, :] + eps * gL - fL[:, None]
    uR = rR[None, :] + eps * gR - fR[:, None]
    sat_rho = (-tr * ht @ (rL * ((w * vp) @ uL)) + tr * ht @ (rR * ((w * vm) @ uR)))
    sat_g = eps**2 * (
        -tg * float(np.sum((w * vp)[:, None] * gL * uL * ht[None, :]))
        + tg * float(np.sum((w * vm)[:, None] * gR * uR * ht[None, :]))
    )

    # face terms from Q + Q^T = E, moved to the right-hand side
    flux_L, flux_R = (w * v) @ gL, (w * v) @ gR
    faces = (ht @ (rR * flux_R) - ht @ (rL * flux_L)
             + 0.5 * eps * (float(np.sum((w * v)[:, None] * gR**2 * ht[None, :]))
                            - float(np.sum((w * v)[:, None] * gL**2 * ht[None, :]))))
    b_def = float(sat_rho + sat_g - faces)

    sL = rL[None, :] + eps * gL
    sR = rR[None, :] + eps * gR
    b_closed = (float(np.sum((w * vm)[:, None] * sL**2 * ht[None, :]))
                - float(np.sum((w * vp)[:, None] * sR**2 * ht[None, :]))) / (2.0 * eps)
    return b_def, b_closed


def energy_trace(solutions: Sequence[SlabSolution], problem: ProblemSpec, grid: Grid) -> list[EnergyLedger]:
    return [energy_ledger(s, problem, grid) for s in solutions]
