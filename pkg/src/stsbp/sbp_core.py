r"""
Diagonal-norm SBP first-derivative operators on Gauss-Lobatto nodes.

An operator :math:`D = H^{-1} Q` on nodes :math:`x_0 < \dots < x_m` is a
degree-:math:`p` SBP operator if it differentiates monomials up to degree
:math:`p` exactly, :math:`H` is symmetric positive definite and

.. math::

    Q + Q^T = E = t_R t_R^T - t_L t_L^T = \mathrm{diag}(-1, 0, \dots, 0, 1).

Gauss-Lobatto collocation gives such an operator with :math:`p = m`, since
the Lobatto rule integrates the degree :math:`2m - 1` products
:math:`u\,v'` of two nodal interpolants exactly.

The same building block is used in space (:math:`t_L, t_R`) and in time where
the selectors play the role of the bottom and top faces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NEWTON_TOL = 1.0e-14
NEWTON_MAXITER = 100

EXACTNESS_TOL = 1.0e-12
SYMMETRY_TOL = 1.0e-13


def _legendre(n: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Evaluate :math:`P_n` and its first two derivatives by the three-term recurrence."""
    p_prev = np.ones_like(x)
    if n == 0:
        return p_prev, np.zeros_like(x), np.zeros_like(x)

    p = x.copy()
    for k in range(1, n):
        p_prev, p = p, ((2 * k + 1) * x * p - k * p_prev) / (k + 1)

    # derivative identities valid away from x = +-1 (only interior points
    # are fed in here)
    dp = n * (x * p - p_prev) / (x**2 - 1.0)
    d2p = (2.0 * x * dp - n * (n + 1) * p) / (1.0 - x**2)
    return p, dp, d2p


def gauss_lobatto_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Lobatto nodes and weights on :math:`[-1, 1]`.

    The interior nodes are the roots of :math:`P'_{n-1}`, found by Newton
    iteration from Chebyshev-Gauss-Lobatto initial guesses. The rule is exact
    for polynomials of degree :math:`2n - 3`.

    :arg n: number of nodes, at least 2.
    :returns: a tuple ``(nodes, weights)`` with strictly increasing nodes.
    """
    n = int(n)
    if n < 2:
        raise ValueError(f"Gauss-Lobatto rule needs at least 2 nodes, got {n}")

    m = n - 1
    x = np.empty(n)
    x[0], x[-1] = -1.0, 1.0

    if n > 2:
        xi = -np.cos(np.pi * np.arange(1, m) / m)
        for _ in range(NEWTON_MAXITER):
            _, dp, d2p = _legendre(m, xi)
            step = dp / d2p
            xi = xi - step
            if np.max(np.abs(step)) < NEWTON_TOL:
                break
        else:
            raise RuntimeError(f"Newton iteration for {n} Lobatto nodes did not converge")

        # enforce exact symmetry about the origin
        xi = 0.5 * (xi - xi[::-1])
        x[1:-1] = xi

    p = np.empty(n)
    p[0], p[-1] = (-1.0) ** m, 1.0
    if n > 2:
        p[1:-1] = _legendre(m, x[1:-1])[0]

    w = 2.0 / (m * (m + 1) * p**2)
    w = 0.5 * (w + w[::-1])
    return x, w


def barycentric_derivative_matrix(nodes: np.ndarray) -> np.ndarray:
    """Differentiation matrix of the nodal Lagrange interpolant.

    Uses barycentric weights :math:`\\lambda_j = 1 / \\prod_{m \\ne j} (x_j - x_m)`
    and the negative-sum trick for the diagonal so that constants are
    annihilated to roundoff.
    """
    x = np.asarray(nodes, dtype=np.float64)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    lam = 1.0 / np.prod(diff, axis=1)

    D = (lam[None, :] / lam[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -np.sum(D, axis=1))
    return D


@dataclass(frozen=True)
class SbpOperator1D:
    """A one-dimensional diagonal-norm SBP first-derivative operator.

    .. attribute:: nodes

        Node coordinates on the interval :math:`[a, b]`.

    .. attribute:: weights

        Diagonal of the norm matrix :math:`H`.

    .. attribute:: Q

        The matrix with :math:`Q + Q^T = E`; invariant under affine scaling.

    .. attribute:: D

        The derivative :math:`H^{-1} Q`.

    .. attribute:: degree
    """

    nodes: np.ndarray
    weights: np.ndarray
    Q: np.ndarray
    D: np.ndarray
    degree: int

    @property
    def n(self) -> int:
        return self.nodes.size

    @property
    def interval(self) -> tuple[float, float]:
        return float(self.nodes[0]), float(self.nodes[-1])

    @property
    def length(self) -> float:
        a, b = self.interval
        return b - a

    @property
    def H(self) -> np.ndarray:
        return np.diag(self.weights)

    @property
    def Hinv(self) -> np.ndarray:
        return np.diag(1.0 / self.weights)

    @property
    def tL(self) -> np.ndarray:
        t = np.zeros(self.n)
        t[0] = 1.0
        return t

    @property
    def tR(self) -> np.ndarray:
        t = np.zeros(self.n)
        t[-1] = 1.0
        return t

    # the temporal names for the same selectors
    tB = tL
    tT = tR

    @property
    def E(self) -> np.ndarray:
        return np.outer(self.tR, self.tR) - np.outer(self.tL, self.tL)

    @property
    def S(self) -> np.ndarray:
        """Skew-symmetric part :math:`S = Q - E / 2`."""
        return 0.5 * (self.Q - self.Q.T)


def build_glb_sbp(n: int) -> SbpOperator1D:
    """Gauss-Lobatto collocation SBP operator with ``n`` nodes on [-1, 1]."""
    x, w = gauss_lobatto_rule(n)
    D = barycentric_derivative_matrix(x)
    Q = w[:, None] * D

    for arr in (x, w, Q, D):
        arr.setflags(write=False)
    return SbpOperator1D(nodes=x, weights=w, Q=Q, D=D, degree=n - 1)


def scale_to_interval(op: SbpOperator1D, a: float, b: float) -> SbpOperator1D:
    """Map *op* affinely onto :math:`[a, b]`.

    Weights scale with the Jacobian :math:`J = (b - a) / L`, the derivative
    with :math:`1 / J`, and :math:`Q` is left unchanged.
    """
    a, b = float(a), float(b)
    if not b > a:
        raise ValueError(f"invalid interval [{a}, {b}]")

    a0, b0 = op.interval
    jac = (b - a) / (b0 - a0)
    x = a + (op.nodes - a0) * jac
    # pin the endpoints so adjacent elements share node coordinates exactly
    x[0], x[-1] = a, b

    w = op.weights * jac
    D = op.D / jac
    for arr in (x, w, D):
        arr.setflags(write=False)
    return SbpOperator1D(nodes=x, weights=w, Q=op.Q, D=D, degree=op.degree)


@dataclass(frozen=True)
class VerificationReport:
    """Outcome of :func:`verify_sbp`.

    .. attribute:: exactness

        Maximum nodal error of :math:`D x^k - k x^{k-1}` for ``k = 0..p``.
    """

    n: int
    degree: int
    exactness: tuple[float, ...]
    symmetry_defect: float
    exactness_tol: float = EXACTNESS_TOL
    symmetry_tol: float = SYMMETRY_TOL
    beyond_degree_error: float | None = field(default=None)

    @property
    def passed(self) -> bool:
        return (
            max(self.exactness) <= self.exactness_tol
            and self.symmetry_defect <= self.symmetry_tol
        )

    def to_table(self) -> str:
        lines = [f"SBP operator n={self.n} degree={self.degree}"]
        lines.append(f"  {'k':>3}  {'max |D x^k - k x^(k-1)|':>26}")
        for k, err in enumerate(self.exactness):
            lines.append(f"  {k:>3}  {err:>26.3e}")
        if self.beyond_degree_error is not None:
            lines.append(
                f"  {self.degree + 1:>3}  {self.beyond_degree_error:>26.3e}  (beyond degree)")
        lines.append(f"  symmetry defect max|Q + Q^T - E| = {self.symmetry_defect:.3e}")
        lines.append(f"  {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def monomial_errors(op: SbpOperator1D, kmax: int) -> list[float]:
    """Max nodal error of :math:`D x^k - k x^{k-1}` for ``k = 0..kmax``.

    Monomials are taken about the interval midpoint and in units of the
    half-length, which keeps the check meaningful on scaled intervals.
    """
    a, b = op.interval
    c, h = 0.5 * (a + b), 0.5 * (b - a)
    s = (op.nodes - c) / h

    errors = []
    for k in range(kmax + 1):
        du = h * (op.D @ s**k)
        exact = k * s ** (k - 1) if k > 0 else np.zeros_like(s)
        errors.append(float(np.max(np.abs(du - exact))))
    return errors


def verify_sbp(op: SbpOperator1D) -> VerificationReport:
    """Check monomial exactness up to the design degree and :math:`Q + Q^T = E`."""
    errors = monomial_errors(op, op.degree + 1)
    defect = float(np.max(np.abs(op.Q + op.Q.T - op.E)))
    return VerificationReport(
        n=op.n,
        degree=op.degree,
        exactness=tuple(errors[:-1]),
        symmetry_defect=defect,
        beyond_degree_error=errors[-1],
    )
