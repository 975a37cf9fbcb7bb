import csv
import io
import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from stsbp.errors import ConfigurationError, InvalidProblemError, SolverError
from stsbp.problems import (
    BoundaryKind,
    ProblemSpec,
    inhomogeneous_dirichlet_problem,
    manufactured_problem,
    variable_scattering_problem,
)
from stsbp.slab_solver import (
    Grid,
    SlabSystem,
    assemble_slab,
    convergence_grid,
    dt_rule_grid,
    evaluate_at_time,
    extract_slice,
    march_slabs,
    solution_csv_text,
    solve_linear,
    solve_slab,
)
from stsbp.velocity_space import build_velocity_space


def _linear_in_time(eps, bc=BoundaryKind.PERIODIC):
    """rho = 2 + 3t, g = 0 solves the forced system exactly on any grid."""
    return ProblemSpec(
        epsilon=eps, vspace=build_velocity_space("glb", 6), domain=(0.0, 1.0), T=1.0, bc=bc,
        rho0=lambda x: 2.0 + 0 * x, F_rho=lambda x, t: 3.0 + 0 * x * t,
        f_L=lambda v: 2.0 + 0 * v, f_R=lambda v: 2.0 + 0 * v,
    )


@pytest.mark.parametrize("eps", [1.0, 1e-3, 1e-8])
@pytest.mark.parametrize("N", [2, 4])
def test_polynomial_in_time_is_reproduced(eps, N):
    p = _linear_in_time(eps)
    sols = march_slabs(p, Grid.uniform(p.domain, 3, N, 1.0, n_slabs=2))
    for s in sols:
        np.testing.assert_allclose(s.rho, (2 + 3 * s.t_nodes)[:, None, None] * np.ones_like(s.rho), atol=1e-11)
        assert np.max(np.abs(s.g)) < 1e-11


@pytest.mark.parametrize("eps", [1.0, 1e-2, 1e-8])
def test_dirichlet_steady_state_is_preserved(eps):
    # f = 1 for all velocities matches rho = 1, g = 0 on both faces
    p = inhomogeneous_dirichlet_problem(eps, T=1.0).with_(
        rho0=lambda x: 1.0 + 0 * x, f_L=lambda v: np.ones_like(v), f_R=lambda v: np.ones_like(v))
    sols = march_slabs(p, Grid.uniform(p.domain, 4, 3, 1.0, n_slabs=2))
    for s in sols:
        np.testing.assert_allclose(s.rho, 1.0, atol=1e-10)
        # g is only determined up to roundoff / eps; eps g is the physical part
        assert np.max(np.abs(eps * s.g)) < 1e-12


def test_marching_matches_slab_by_slab_assembly():
    p = manufactured_problem(0.1)
    grid = convergence_grid(p, 4, 3)
    marched = march_slabs(p, grid)
    bottom = None
    for s in range(grid.n_slabs):
        ops = grid.spacetime_ops(s)
        system = assemble_slab(p, grid, ops, bottom, slab=s)
        sol = solve_slab(system, ops, bottom)
        np.testing.assert_allclose(sol.rho, marched[s].rho, atol=1e-13)
        np.testing.assert_allclose(sol.g, marched[s].g, atol=1e-13)
        bottom = sol.top_slice()


def test_micro_scaling_keeps_matrix_bounded():
    p = manufactured_problem(1e-8)
    grid = convergence_grid(p, 5, 3)
    A = assemble_slab(p, grid).matrix
    assert abs(A).max() < 1e3
    # with Dirichlet data only the macro row carries the 1/eps boundary penalty
    q = variable_scattering_problem(epsilon=1e-8)
    system = assemble_slab(q, Grid.uniform(q.domain, 5, 3, 0.4, 1))
    assert abs(system.matrix[system.M:]).max() < 1e3


@settings(max_examples=10)
@given(st.sampled_from([0.5, 1e-2, 1e-6]), st.integers(2, 4), st.integers(2, 6))
def test_mean_g_vanishes(eps, N, K):
    p = manufactured_problem(eps)
    sols = march_slabs(p, convergence_grid(p, K, N))
    for s in sols:
        assert np.max(np.abs(p.vspace.average(s.g))) <= 1e-10 * max(1.0, np.max(np.abs(s.g)))


def test_nonzero_initial_mean_rejected():
    p = manufactured_problem(0.1).with_(g0=lambda x, v: 1.0 + 0 * x * v)
    with pytest.raises(InvalidProblemError):
        march_slabs(p, convergence_grid(p, 2, 2))


def test_convergence_on_refinement():
    p = manufactured_problem(1e-2)
    e = []
    for K in (5, 10):
        s = march_slabs(p, convergence_grid(p, K, 3))[-1]
        rho_ex, _ = p.sample_exact(s.x.reshape(-1), 1.0)
        e.append(np.max(np.abs(s.top_slice()[0] - rho_ex)))
    assert e[1] < e[0] / 8


def test_extract_slice_conventions():
    p = manufactured_problem(0.5)
    grid = Grid.uniform(p.domain, 3, 3, 1.0, n_slabs=4)
    sols = march_slabs(p, grid)
    rho, _ = extract_slice(sols, 0.5)
    np.testing.assert_array_equal(rho, sols[2].bottom_slice()[0])
    np.testing.assert_array_equal(extract_slice(sols, 1.0)[0], sols[-1].top_slice()[0])
    with pytest.raises(ValueError, match="nearest"):
        extract_slice(sols, 0.3)


def test_evaluate_at_time_interpolates():
    p = _linear_in_time(0.1)
    sols = march_slabs(p, Grid.uniform(p.domain, 2, 3, 1.0, n_slabs=2))
    rho, g = evaluate_at_time(sols, 0.3)
    np.testing.assert_allclose(rho, 2.9, atol=1e-11)
    np.testing.assert_array_equal(evaluate_at_time(sols, 0.5)[0], extract_slice(sols, 0.5)[0])
    with pytest.raises(ValueError):
        evaluate_at_time(sols, 1.5)


def test_csv_is_deterministic_and_lossless():
    p = manufactured_problem(0.1)
    grid = convergence_grid(p, 3, 2)
    a = solution_csv_text(march_slabs(p, grid), [1 / 3, 1.0])
    b = solution_csv_text(march_slabs(p, grid), [1 / 3, 1.0])
    assert a == b
    rows = list(csv.reader(io.StringIO(a)))
    assert rows[0] == ["field", "k", "time", "x", "value"]
    assert len(rows) == 1 + 2 * (1 + 16) * 6
    sols = march_slabs(p, grid)
    assert float(rows[1][4]) == extract_slice(sols, 1 / 3)[0][0]


def test_grid_rules():
    p = inhomogeneous_dirichlet_problem(1.0)
    g = dt_rule_grid(p, 10, 3, "10dx")
    assert g.n_slabs == 4 and math.isclose(g.slab_length, 1.0) and math.isclose(g.T, 4.0)
    assert dt_rule_grid(p, 10, 3, "match-K").n_slabs == 10
    assert dt_rule_grid(p, 10, 3, "explicit", 7).n_slabs == 7
    with pytest.raises(ConfigurationError):
        dt_rule_grid(p, 10, 3, "explicit")
    with pytest.raises(ConfigurationError):
        dt_rule_grid(p, 10, 3, "bogus")


@pytest.mark.parametrize("kw", [dict(K=0), dict(N=1), dict(n_slabs=0), dict(T=0.0)])
def test_grid_validation(kw):
    args = dict(K=2, N=3, T=1.0, n_slabs=1) | kw
    with pytest.raises(ConfigurationError):
        Grid.uniform((0.0, 1.0), **args)


def test_singular_system_raises_solver_error():
    system = SlabSystem(matrix=sp.csc_matrix((4, 4)), rhs=np.ones(4), nv=1, M=2, slab=3)
    with pytest.raises(SolverError, match="slab 3"):
        solve_linear(system)


def test_bottom_data_shape_checked():
    p = manufactured_problem(0.1)
    grid = convergence_grid(p, 2, 2)
    with pytest.raises(ValueError):
        assemble_slab(p, grid, bottom_data=(np.zeros(3), np.zeros((16, 4))))


def test_augmented_solve_matches_direct_factorization():
    p = variable_scattering_problem(epsilon=1e-2)
    grid = Grid.uniform(p.domain, 3, 4, 0.4, 1)
    ops = grid.spacetime_ops(0)
    direct = solve_slab(assemble_slab(p, grid), ops)
    marched = march_slabs(p, grid)[0]
    scale = np.max(np.abs(direct.rho))
    assert np.max(np.abs(direct.rho - marched.rho)) <= 1e-12 * scale
    assert np.max(np.abs(direct.g - marched.g)) <= 1e-10 * max(1.0, np.max(np.abs(direct.g)))


def test_every_micro_row_couples_all_velocities():
    p = manufactured_problem(0.1, build_velocity_space("glb", 4))
    system = assemble_slab(p, convergence_grid(p, 2, 2))
    M, nv = system.M, system.nv
    A = system.matrix.tocsr()
    for k in range(nv):
        for j in range(nv):
            block = A[(k + 1) * M:(k + 2) * M, (j + 1) * M:(j + 2) * M]
            assert block.nnz > 0


def test_zero_data_gives_zero_solution():
    p = ProblemSpec(epsilon=0.3, vspace=build_velocity_space("two"), domain=(0.0, 1.0), T=1.0)
    sols = march_slabs(p, Grid.uniform(p.domain, 1, 2, 1.0, 1))
    assert np.all(sols[0].rho == 0) and np.all(sols[0].g == 0)


def test_identity_system():
    b = np.arange(1.0, 5.0)
    x, res = solve_linear(SlabSystem(matrix=sp.identity(4, format="csc"), rhs=b, nv=1, M=2))
    np.testing.assert_array_equal(x, b)
    assert res == 0.0


def test_exact_solution_residual_converges():
    p = manufactured_problem(0.1)
    res = []
    for K in (6, 12):
        grid = convergence_grid(p, K, 3)
        ops = grid.spacetime_ops(0)
        system = assemble_slab(p, grid, ops)
        x = ops.x
        rho = np.concatenate([p.sample_exact(x, t)[0] for t in ops.t])
        g = np.stack([p.sample_exact(x, t)[1] for t in ops.t], axis=1).reshape(p.vspace.nv, -1)
        u = np.concatenate([rho, g.reshape(-1)])
        r = system.matrix @ u - system.rhs
        # rescale micro rows back to their unscaled size
        r[system.M:] /= p.epsilon**2
        res.append(np.max(np.abs(r)))
    assert res[1] < res[0] / 3
