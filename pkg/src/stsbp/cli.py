"""Command-line driver: convergence tables, Dirichlet experiments and invariant suites.

Every subcommand is deterministic. Tables and profiles are CSV with 17
significant digits; ``--out DIR`` writes files and otherwise CSV goes to
stdout.

Exit codes: 0 pass, 1 invariant failure, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from stsbp import diag_system, diagnostics
from stsbp.errors import ConfigurationError, InvalidProblemError, SolverError
from stsbp.operators import build_periodic_op_multielement, build_periodic_op_single, element_ops
from stsbp.problems import (
    inhomogeneous_dirichlet_problem,
    limit_manufactured_problem,
    manufactured_problem,
    solve_limit_diffusion,
    variable_scattering_problem,
)
from stsbp.sbp_core import build_glb_sbp, verify_sbp
from stsbp.slab_solver import (
    Grid,
    convergence_grid,
    dt_rule_grid,
    march_slabs,
    write_solution_csv,
)
from stsbp.velocity_space import build_velocity_space

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

DEFAULT_K_LIST = (5, 10, 15, 20, 25)
MEAN_G_REL_TOL = 1.0e-10
ENERGY_REL_TOL = 1.0e-8
B_LR_TOL = 1.0e-12
AP_TOL = 1.0e-4
DIAG_TOL = 1.0e-12
SKEW_TOL = 1.0e-13


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    epsilon: float | None = None
    K: tuple[int, ...] = ()
    N: int = 3
    nv: int = 16
    velocity: str = "glb"
    n_slabs: int | None = None
    dt_rule: str = "match-K"
    out: Path | None = None
    gnuplot: bool = False

    def __post_init__(self):
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigurationError(f"--epsilon must be positive, got {self.epsilon}")
        if any(k < 1 for k in self.K):
            raise ConfigurationError(f"--elements must be positive, got {list(self.K)}")
        if self.N < 2:
            raise ConfigurationError(f"--nodes must be at least 2, got {self.N}")
        if self.nv < 2:
            raise ConfigurationError(f"--nv must be at least 2, got {self.nv}")
        if self.n_slabs is not None and self.n_slabs < 1:
            raise ConfigurationError(f"--slabs must be positive, got {self.n_slabs}")
        if self.gnuplot and self.out is None:
            raise ConfigurationError("--gnuplot needs --out")

    def vspace(self):
        try:
            return build_velocity_space(self.velocity, self.nv)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float
    threshold: float

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.value:.3e} (threshold {self.threshold:.1e})"


# -- invariant suites ---------------------------------------------------------

def suite_sbp(n_values: Sequence[int] = range(2, 9)) -> list[Check]:
    out = []
    for n in n_values:
        rep = verify_sbp(build_glb_sbp(n))
        out.append(Check(f"sbp n={n} symmetry", rep.symmetry_defect <= rep.symmetry_tol,
                         rep.symmetry_defect, rep.symmetry_tol))
        ex = max(rep.exactness)
        out.append(Check(f"sbp n={n} exactness", ex <= rep.exactness_tol, ex, rep.exactness_tol))
    for n in (2, 3, 5):
        ref = build_glb_sbp(n)
        single = build_periodic_op_single(ref).skew_defect()
        out.append(Check(f"periodic skew n={n} K=1 single", single <= SKEW_TOL, single, SKEW_TOL))
        for K in (1, 3, 10):
            op = build_periodic_op_multielement(element_ops(ref, -np.pi, np.pi, K), K)
            d = op.skew_defect()
            out.append(Check(f"periodic skew n={n} K={K}", d <= SKEW_TOL, d, SKEW_TOL))
    return out


def suite_diag() -> list[Check]:
    out = []
    for kind, nv in (("two", 2), ("glb", 16)):
        vs = build_velocity_space(kind, nv)
        for eps in (1.0, 1e-2):
            d = diag_system.build_diagonalization(vs, eps, check=False)
            tag = f"nv={nv} eps={eps:g}"
            out.append(Check(f"diag {tag} A - X L X^-1", d.similarity_residual <= DIAG_TOL,
                             d.similarity_residual, DIAG_TOL))
            out.append(Check(f"diag {tag} X X^-1 - I", d.inverse_residual <= DIAG_TOL,
                             d.inverse_residual, DIAG_TOL))
            eq = diag_system.characteristic_sat_equivalence(vs, eps, build_glb_sbp(4))
            out.append(Check(f"diag {tag} characteristic SATs", eq <= DIAG_TOL, eq, DIAG_TOL))
    return out


def suite_energy() -> list[Check]:
    out = []
    p = manufactured_problem(1e-2)
    grid = convergence_grid(p, 10, 3)
    worst = max(diagnostics.energy_ledger(s, p, grid).relative_residual for s in march_slabs(p, grid))
    out.append(Check("energy identity periodic eps=1e-2 K=10 N=3", worst <= ENERGY_REL_TOL,
                     worst, ENERGY_REL_TOL))
    out.extend(dirichlet_stability_checks())
    return out


def dirichlet_stability_checks(K: int = 10, N: int = 3, n_slabs: int = 10, T: float = 0.4) -> list[Check]:
    p = variable_scattering_problem(source=0.0, T=T).with_(rho0=lambda x: np.sin(np.pi * np.asarray(x)))
    grid = Grid.uniform(p.domain, K, N, T, n_slabs=n_slabs)
    ledgers = diagnostics.energy_trace(march_slabs(p, grid), p, grid)
    b_max = max(L.b_LR for L in ledgers)
    tops = [ledgers[0].init_energy] + [L.top_energy for L in ledgers]
    rise = max(b - a for a, b in zip(tops[:-1], tops[1:]))
    return [
        Check(f"dirichlet b_LR <= 0 over {n_slabs} slabs", b_max <= B_LR_TOL, b_max, B_LR_TOL),
        Check(f"dirichlet slab-top energy non-increasing over {n_slabs} slabs", rise <= 0.0, rise, 0.0),
    ]


def suite_meang(epsilon: float = 1e-2, K: int = 10, N: int = 3) -> list[Check]:
    p = manufactured_problem(epsilon)
    sols = march_slabs(p, convergence_grid(p, K, N))
    ratio = diagnostics.mean_g_defect(sols, p.vspace) / diagnostics.g_max_norm(sols)
    return [Check(f"mean-g eps={epsilon:g} K={K} N={N}", ratio <= MEAN_G_REL_TOL, ratio, MEAN_G_REL_TOL)]


def ap_gap_run(epsilon: float = 1e-6, K: int = 10, N: int = 3) -> float:
    p = manufactured_problem(epsilon)
    grid = convergence_grid(p, K, N)
    kinetic = march_slabs(p, grid)[-1].top_slice()[0]
    limit = solve_limit_diffusion(limit_manufactured_problem(p.vspace, T=p.T), grid)[-1][-1].reshape(-1)
    return diagnostics.ap_gap(kinetic, limit)


def suite_ap() -> list[Check]:
    gap = ap_gap_run()
    return [Check("AP gap eps=1e-6 K=10 N=3", gap <= AP_TOL, gap, AP_TOL)]


SUITES: dict[str, Callable[[], list[Check]]] = {
    "sbp": suite_sbp,
    "diag": suite_diag,
    "energy": suite_energy,
    "meang": suite_meang,
    "ap": suite_ap,
}


# -- output helpers -----------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _emit(cfg: RunConfig, name: str, text: str, stdout) -> Path | None:
    if cfg.out is None:
        stdout.write(text)
        return None
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / name
    path.write_text(text)
    stdout.write(f"wrote {path}\n")
    return path


def _gnuplot(cfg: RunConfig, name: str, body: str, stdout) -> None:
    if cfg.gnuplot:
        _emit(cfg, name, body, stdout)


def _energy_csv(ledgers, solutions) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["top_energy", "bottom_energy", "init_energy", "init_mismatch", "damping_rho",
            "damping_g", "forcing_work", "b_LR", "b_LR_closed", "residual"]
    w.writerow(["slab", "t_top"] + cols)
    for L, s in zip(ledgers, solutions):
        w.writerow([s.slab, _fmt(s.t_nodes[-1])] + [_fmt(getattr(L, c)) for c in cols])
    return buf.getvalue()


def _profile_csv(solutions, times) -> str:
    buf = io.StringIO()
    write_solution_csv(buf, solutions, times)
    return buf.getvalue()


# -- subcommands --------------------------------------------------------------

def cmd_convergence(cfg: RunConfig, stdout=sys.stdout) -> int:
    eps = 1e-2 if cfg.epsilon is None else cfg.epsilon
    try:
        p = manufactured_problem(eps, cfg.vspace())
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc
    K_list = cfg.K or DEFAULT_K_LIST
    reports, defects = [], []
    for K in K_list:
        sols = march_slabs(p, convergence_grid(p, K, cfg.N))
        reports.append(diagnostics.compute_errors(sols, p, p.T))
        defects.append(diagnostics.mean_g_defect(sols, p.vspace) / diagnostics.g_max_norm(sols))
    name = f"convergence_eps{eps:g}_N{cfg.N}.csv"
    _emit(cfg, name, diagnostics.table_csv_text(reports), stdout)
    _gnuplot(cfg, f"convergence_eps{eps:g}_N{cfg.N}.gp",
             "set datafile separator ','\nset logscale xy\nset key autotitle columnhead\n"
             f"plot '{name}' using 2:3 with linespoints, '' using 2:5 with linespoints\n", stdout)
    worst = max(defects)
    if worst > MEAN_G_REL_TOL:
        sys.stderr.write(f"mean-g defect {worst:.3e} exceeds {MEAN_G_REL_TOL:.1e}\n")
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_dirichlet_source(cfg: RunConfig, source: float = 1.0, stdout=sys.stdout) -> int:
    eps = 1e-2 if cfg.epsilon is None else cfg.epsilon
    p = variable_scattering_problem(source=source, T=0.4, epsilon=eps, vspace=cfg.vspace())
    K = cfg.K[0] if cfg.K else 10
    grid = Grid.uniform(p.domain, K, cfg.N, p.T, n_slabs=cfg.n_slabs or 1)
    sols = march_slabs(p, grid)
    ledgers = diagnostics.energy_trace(sols, p, grid)
    tag = f"K{K}_N{cfg.N}"
    _emit(cfg, f"dirichlet_source_{tag}.csv", _profile_csv(sols, [p.T]), stdout)
    _emit(cfg, f"dirichlet_source_{tag}_energy.csv", _energy_csv(ledgers, sols), stdout)
    _gnuplot(cfg, f"dirichlet_source_{tag}.gp",
             "set datafile separator ','\n"
             f"plot 'dirichlet_source_{tag}.csv' using ($2==0?$4:1/0):5 with linespoints title 'rho'\n",
             stdout)
    finite = all(np.all(np.isfinite(s.rho)) and np.all(np.isfinite(s.g)) for s in sols)
    bad_b = max(L.b_LR for L in ledgers) > B_LR_TOL
    return EXIT_OK if finite and not bad_b else EXIT_INVARIANT


def cmd_dirichlet_inflow(cfg: RunConfig, stdout=sys.stdout) -> int:
    eps = 1.0 if cfg.epsilon is None else cfg.epsilon
    p = inhomogeneous_dirichlet_problem(eps, T=4.0, vspace=cfg.vspace())
    K = cfg.K[0] if cfg.K else 10
    grid = dt_rule_grid(p, K, cfg.N, cfg.dt_rule, cfg.n_slabs)
    sols = march_slabs(p, grid)
    times = [t for t in p.report_times if t <= grid.T + 1e-12]
    tag = f"eps{eps:g}_K{K}_N{cfg.N}"
    _emit(cfg, f"dirichlet_inflow_{tag}.csv", _profile_csv(sols, times), stdout)
    plots = ", ".join(
        f"'dirichlet_inflow_{tag}.csv' using ($2==0 && abs($3-{t})<1e-12?$4:1/0):5 with lines title 't={t:g}'"
        for t in times)
    _gnuplot(cfg, f"dirichlet_inflow_{tag}.gp", f"set datafile separator ','\nplot {plots}\n", stdout)
    finite = all(np.all(np.isfinite(s.rho)) and np.all(np.isfinite(s.g)) for s in sols)
    return EXIT_OK if finite else EXIT_INVARIANT


def cmd_verify(which: str, stdout=sys.stdout) -> int:
    names = list(SUITES) if which == "all" else [which]
    checks = [c for n in names for c in SUITES[n]()]
    for c in checks:
        stdout.write(c.line() + "\n")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_INVARIANT


def cmd_sbp_verify(n_values: Sequence[int], stdout=sys.stdout) -> int:
    ok = True
    for n in n_values:
        rep = verify_sbp(build_glb_sbp(n))
        stdout.write(rep.to_table() + "\n")
        ok &= rep.passed
    return EXIT_OK if ok else EXIT_INVARIANT


def cmd_diag_verify(cfg: RunConfig, stdout=sys.stdout) -> int:
    vs = cfg.vspace()
    eps_list = [cfg.epsilon] if cfg.epsilon is not None else [1.0, 1e-2]
    left, right, none = diag_system.boundary_condition_count(vs)
    stdout.write(f"velocity={cfg.velocity} nv={vs.nv} left={left} right={right} none={none}\n")
    ok = True
    for eps in eps_list:
        d = diag_system.build_diagonalization(vs, eps, check=False)
        eq = diag_system.characteristic_sat_equivalence(vs, eps, build_glb_sbp(cfg.N))
        stdout.write(f"eps={eps:g} similarity={d.similarity_residual:.3e} "
                     f"inverse={d.inverse_residual:.3e} characteristic_sat={eq:.3e}\n")
        ok &= max(d.similarity_residual, d.inverse_residual, eq) <= DIAG_TOL
    return EXIT_OK if ok else EXIT_INVARIANT


# -- argument parsing ---------------------------------------------------------

def _common(sp: argparse.ArgumentParser, nodes_default: int = 3) -> None:
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--elements", type=int, nargs="+", metavar="K")
    sp.add_argument("--nodes", type=int, default=nodes_default, metavar="N")
    sp.add_argument("--nv", type=int, default=16)
    sp.add_argument("--velocity", choices=("two", "glb"), default="glb")
    sp.add_argument("--slabs", type=int)
    sp.add_argument("--dt-rule", choices=("match-K", "10dx", "explicit"), default=None)
    sp.add_argument("--out", type=Path)
    sp.add_argument("--gnuplot", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stsbp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("convergence", help="manufactured-solution error table"))
    src = sub.add_parser("dirichlet-source", help="variable scattering with a macro source")
    _common(src)
    src.add_argument("--source", type=float, default=1.0)
    _common(sub.add_parser("dirichlet-inflow", help="unit inflow from the left"))

    ver = sub.add_parser("verify", help="invariant suites")
    ver.add_argument("suite", nargs="?", default="all", choices=("all",) + tuple(SUITES))

    sv = sub.add_parser("sbp-verify", help="print SBP verification tables")
    sv.add_argument("--nodes", type=int, nargs="+", default=list(range(2, 9)))

    _common(sub.add_parser("diag-verify", help="print diagonalization residuals"), nodes_default=4)
    return parser


def _config(args: argparse.Namespace) -> RunConfig:
    if args.velocity == "two" and args.nv == 16:
        args.nv = 2
    rule = args.dt_rule or ("10dx" if args.command == "dirichlet-inflow" else "match-K")
    if rule == "explicit" and args.slabs is None:
        raise ConfigurationError("--dt-rule explicit needs --slabs")
    return RunConfig(
        subcommand=args.command, epsilon=args.epsilon, K=tuple(args.elements or ()),
        N=args.nodes, nv=args.nv, velocity=args.velocity, n_slabs=args.slabs,
        dt_rule=rule, out=args.out, gnuplot=args.gnuplot,
    )


def main(argv: Sequence[str] | None = None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        if args.command == "verify":
            return cmd_verify(args.suite, stdout)
        if args.command == "sbp-verify":
            if any(n < 2 for n in args.nodes):
                raise ConfigurationError("--nodes must be at least 2")
            return cmd_sbp_verify(args.nodes, stdout)
        cfg = _config(args)
        if args.command == "convergence":
            return cmd_convergence(cfg, stdout)
        if args.command == "dirichlet-source":
            return cmd_dirichlet_source(cfg, args.source, stdout)
        if args.command == "dirichlet-inflow":
            return cmd_dirichlet_inflow(cfg, stdout)
        return cmd_diag_verify(cfg, stdout)
    except SolverError as exc:
        sys.stderr.write(f"solver failure: {exc}\n")
        return EXIT_SOLVER
    except (ConfigurationError, InvalidProblemError, ValueError) as exc:
        sys.stderr.write(f"configuration error: {exc}\n")
        return EXIT_CONFIG
    except diag_system.DiagonalizationError as exc:
        sys.stderr.write(f"invariant failure: {exc}\n")
        return EXIT_INVARIANT


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
