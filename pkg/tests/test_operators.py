import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stsbp.errors import ConfigurationError
from stsbp.operators import (
    DirichletSatConfig,
    build_nonperiodic_op_multielement,
    build_periodic_op_multielement,
    build_periodic_op_single,
    build_spacetime_ops,
    dirichlet_sats,
    element_ops,
    slab_interface_sat,
    temporal_sat,
)
from stsbp.sbp_core import build_glb_sbp, scale_to_interval
from stsbp.velocity_space import VelocityKind, VelocitySpace, build_velocity_space


def _slab(nt=3, nx=4, K=3, a=0.0, b=1.0, t0=0.0, t1=0.5):
    time_op = scale_to_interval(build_glb_sbp(nt), t0, t1)
    return build_spacetime_ops(time_op, element_ops(build_glb_sbp(nx), a, b, K), K)


def _loop_global_q(space_ops, periodic):
    """Element Q blocks plus central interface penalties assembled face by face."""
    K, n = len(space_ops), space_ops[0].n
    Q = np.zeros((K * n, K * n))
    for e, op in enumerate(space_ops):
        Q[e * n:(e + 1) * n, e * n:(e + 1) * n] = op.Q
    faces = [(e, e + 1) for e in range(K - 1)] + ([(K - 1, 0)] if periodic else [])
    for left, right in faces:
        r, l = left * n + n - 1, right * n
        # -1/2 t_R (t_R^T u_left - t_L^T u_right) on the left element
        Q[r, r] -= 0.5
        Q[r, l] += 0.5
        # +1/2 t_L (t_L^T u_right - t_R^T u_left) on the right element
        Q[l, l] += 0.5
        Q[l, r] -= 0.5
    return Q


@pytest.mark.parametrize("periodic", [True, False])
@pytest.mark.parametrize("n,K", [(2, 1), (2, 4), (3, 3), (5, 10), (7, 2)])
def test_global_q_matches_facewise_oracle(periodic, n, K):
    ops = element_ops(build_glb_sbp(n), -math.pi, math.pi, K)
    build = build_periodic_op_multielement if periodic else build_nonperiodic_op_multielement
    got = build(ops, K).Q.toarray()
    np.testing.assert_allclose(got, _loop_global_q(ops, periodic), atol=1e-14)


def test_single_element_variants_agree():
    ref = build_glb_sbp(5)
    a = build_periodic_op_single(ref).Q.toarray()
    b = build_periodic_op_multielement([ref], 1).Q.toarray()
    np.testing.assert_allclose(a, b, atol=1e-15)


@given(st.integers(2, 8), st.integers(1, 12))
def test_periodic_skew(n, K):
    op = build_periodic_op_multielement(element_ops(build_glb_sbp(n), -1.0, 2.0, K), K)
    assert op.skew_defect() <= 1e-13


@given(st.integers(2, 8), st.integers(1, 12))
def test_nonperiodic_boundary_form(n, K):
    op = build_nonperiodic_op_multielement(element_ops(build_glb_sbp(n), 0.0, 1.0, K), K)
    E = np.zeros((K * n, K * n))
    E[0, 0], E[-1, -1] = -1.0, 1.0
    np.testing.assert_allclose((op.Q + op.Q.T).toarray(), E, atol=1e-13)


@pytest.mark.parametrize("n", [2, 3, 5])
def test_periodic_derivative_converges(n):
    errs = []
    for K in (8, 16):
        ops = element_ops(build_glb_sbp(n), -math.pi, math.pi, K)
        x = np.concatenate([o.nodes for o in ops])
        D = build_periodic_op_multielement(ops, K).D
        assert np.max(np.abs(D @ np.ones_like(x))) < 1e-12
        errs.append(np.max(np.abs(D @ np.sin(x) - np.cos(x))))
    assert errs[1] < errs[0] / 1.8


def test_kronecker_derivatives_are_exact_on_polynomials():
    ops = _slab(nt=4, nx=5, K=2)
    T, X = np.meshgrid(ops.t, ops.x, indexing="ij")
    u = (T**3 * X**4).ravel()
    np.testing.assert_allclose(ops.Dt @ u, (3 * T**2 * X**4).ravel(), atol=1e-12)
    np.testing.assert_allclose(ops.Dx @ u, (4 * T**3 * X**3).ravel(), atol=1e-12)


def test_norm_factors():
    ops = _slab()
    np.testing.assert_allclose(ops.H.diagonal(), (ops.Ht @ ops.Hx).diagonal())
    assert abs(ops.H.diagonal().sum() - 0.5) < 1e-14
    assert ops.shape == (3, 3, 4) and ops.size == 36


def test_face_restrictions():
    ops = _slab()
    T, X = np.meshgrid(ops.t, ops.x, indexing="ij")
    u = (T + 10 * X).ravel()
    np.testing.assert_allclose(ops.tB.T @ u, 10 * ops.x)
    np.testing.assert_allclose(ops.tT.T @ u, 0.5 + 10 * ops.x)
    np.testing.assert_allclose(ops.tL.T @ u, ops.t)
    np.testing.assert_allclose(ops.tR.T @ u, ops.t + 10)


def test_temporal_sat_preserves_steady_state():
    ops = _slab()
    c = np.cos(ops.x)
    sat = temporal_sat(ops, c)
    u = np.tile(c, ops.nt)
    np.testing.assert_allclose(ops.Dt @ u - (sat.matrix @ u + sat.offset), 0, atol=1e-13)


def test_temporal_sat_errors():
    ops = _slab()
    with pytest.raises(ValueError):
        temporal_sat(ops, np.zeros(ops.n_space + 1))
    with pytest.raises(RuntimeError):
        slab_interface_sat(ops, None)


def _random_fields(ops, nv, rng):
    return [rng.standard_normal(ops.size) for _ in range(nv + 1)]


@pytest.mark.parametrize("nv", [2, 3, 16])
def test_dirichlet_micro_penalties_have_zero_mean(nv):
    vs = build_velocity_space("two" if nv == 2 else "glb", nv)
    ops = _slab()
    sats = dirichlet_sats(DirichletSatConfig(0.1, lambda v: 1 + v, lambda v: 2 - v), vs, ops)
    out = sats.apply(_random_fields(ops, nv, np.random.default_rng(1)))
    mean = sum(vs.w[k] * out[k + 1] for k in range(nv))
    assert np.max(np.abs(mean)) < 1e-12 * max(np.max(np.abs(o)) for o in out)


def test_dirichlet_penalty_vanishes_on_matching_state():
    # rho = 1, g = 0 satisfies f = 1 on both sides, so every penalty is zero
    vs = build_velocity_space("glb", 8)
    ops = _slab()
    sats = dirichlet_sats(DirichletSatConfig(1e-3, lambda v: np.ones_like(v), lambda v: np.ones_like(v)), vs, ops)
    fields = [np.ones(ops.size)] + [np.zeros(ops.size)] * vs.nv
    for r in sats.apply(fields):
        assert np.max(np.abs(r)) < 1e-6


def test_dirichlet_penalties_hit_only_boundary_nodes():
    vs = build_velocity_space("glb", 4)
    ops = _slab()
    out = dirichlet_sats(DirichletSatConfig(0.5), vs, ops).apply(_random_fields(ops, 4, np.random.default_rng(2)))
    interior = np.ones(ops.shape, bool)
    interior[:, 0, 0] = interior[:, -1, -1] = False
    for r in out:
        assert np.all(r.reshape(ops.shape)[interior] == 0)


def test_dirichlet_strengths():
    cfg = DirichletSatConfig(0.25)
    assert cfg.tau_rho == 2.0 and cfg.tau_g == 8.0


def test_dirichlet_rejects_asymmetric_rule():
    vs = VelocitySpace(VelocityKind.GAUSS_LOBATTO, np.array([-1.0, 0.5]), np.array([0.5, 0.5]))
    with pytest.raises(ConfigurationError):
        dirichlet_sats(DirichletSatConfig(0.1), vs, _slab())


def test_element_validation():
    ref = build_glb_sbp(3)
    with pytest.raises(ValueError):
        element_ops(ref, 0, 1, 0)
    ops = element_ops(ref, 0, 1, 3)
    with pytest.raises(ValueError):
        build_periodic_op_multielement(ops[:2], 3)
    with pytest.raises(ValueError):
        build_periodic_op_multielement([ops[0], ops[2]], 2)
