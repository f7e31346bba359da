"""Cofactor-pair recursion under a driving/driven split.

For ``J + eps P2`` (``P2`` the projector onto the driven coordinates) the
cofactor tensor and the determinant are polynomials in ``eps``::

    cof(J + eps P2) = sum_i A_(i) eps^(i-1),   det(J + eps P2) = sum_i Delta_(i) eps^(i-1)

for i = 1..n+1. Everything here is evaluated numerically per point, from the
closed form in terms of the Schur complement ``Jbar = J2 - J21 J1^-1 J12``:

    A_(i)2  = sum_{j>=0} (-1)^j Delta_(i+1+j) Jbar^j
    A_(i)12 = -J1^-1 J12 A_(i)2
    A_(i)21 = -A_(i)2 J21 J1^-1
    A_(i)1  = Delta_(i) J1^-1 + J1^-1 J12 A_(i)2 J21 J1^-1

Block names follow the matrix layout of a (1,1) tensor ordered (y, x):
``J = [[J1, J12], [J21, J2]]``. All routines accept complex input so that
derivatives can be taken by the complex-step rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad_vec

from .geometry import (GeometryError, OneFormField, TensorField11, complex_step_jacobian,
                       form_action)

J1_CONDITION_LIMIT = 1e10
DELTA_CROSSCHECK_RTOL = 1e-8


class ChainError(GeometryError):
    pass


class DependencePatternError(ChainError):
    pass


class SingularBlockError(ChainError):
    pass


class QuadratureError(ChainError):
    pass


class ClosednessError(ChainError):
    pass


@dataclass
class BlockSplit:
    J: TensorField11
    m: int
    n: int

    @property
    def coords(self):
        return self.J.coords

    def blocks(self, q):
        Jv = self.J.value(q)
        m = self.m
        return Jv[:m, :m], Jv[:m, m:], Jv[m:, :m], Jv[m:, m:]


def _check_pattern(J: TensorField11, m: int, points, tol: float = 1e-9):
    checks = {
        "d J^i_j / d x^a = 0 (driving block depends on y only)": [],
        "d J^a_b / d y^i = 0 (driven block depends on x only)": [],
        "d J^i_a / d x^b symmetric in (a, b)": [],
        "d J^a_i / d y^k symmetric in (i, k)": [],
    }
    names = list(checks)
    for q in points:
        dJ = J.jacobian(q)
        scale = max(1.0, float(np.abs(dJ).max()))
        checks[names[0]].append(np.abs(dJ[m:, :m, :m]).max(initial=0.0) / scale)
        checks[names[1]].append(np.abs(dJ[:m, m:, m:]).max(initial=0.0) / scale)
        d12 = dJ[m:, :m, m:]  # [b, i, a] = d_{x^b} J^i_a
        checks[names[2]].append(np.abs(d12 - np.einsum("bia->aib", d12)).max(initial=0.0) / scale)
        d21 = dJ[:m, m:, :m]  # [k, a, i] = d_{y^k} J^a_i
        checks[names[3]].append(np.abs(d21 - np.einsum("kai->iak", d21)).max(initial=0.0) / scale)
    worst = {k: (max(v) if v else 0.0) for k, v in checks.items()}
    for name, value in worst.items():
        if value > tol:
            raise DependencePatternError(f"dependence pattern violated: {name} (residual {value:.3e})")
    return worst


def block_split(J: TensorField11, m: int, n: int, points=()) -> BlockSplit:
    """Split ``J`` into driving/driven blocks, validating the dependence pattern."""
    if m + n != J.dim:
        raise ValueError(f"m + n = {m + n} does not match dimension {J.dim}")
    _check_pattern(J, m, points)
    return BlockSplit(J, m, n)


def dependence_residuals(split: BlockSplit, points) -> dict:
    return _check_pattern(split.J, split.m, points, tol=np.inf)


# ---------------------------------------------------------------------------
# linear algebra on numeric J


def _inv_j1(J1):
    """Inverse of the driving block; 1-norm condition above the limit is an error."""
    try:
        inv = np.linalg.inv(J1)
    except np.linalg.LinAlgError:
        raise SingularBlockError("J1 is singular") from None
    if not np.iscomplexobj(J1):
        cond = np.abs(J1).sum(axis=0).max() * np.abs(inv).sum(axis=0).max()
        if not np.isfinite(cond) or cond > J1_CONDITION_LIMIT:
            raise SingularBlockError(f"J1 is singular or ill-conditioned (condition {cond:.3e})")
    return inv


def jbar_from_matrix(Jv, m):
    J1, J12, J21, J2 = Jv[:m, :m], Jv[:m, m:], Jv[m:, :m], Jv[m:, m:]
    return J2 - J21 @ _inv_j1(J1) @ J12


def jbar_at(split: BlockSplit, q) -> np.ndarray:
    """Schur complement ``J2 - J21 J1^-1 J12`` at ``q``."""
    return jbar_from_matrix(split.J.value(q), split.m)


def faddeev_leverrier(M) -> np.ndarray:
    """Coefficients ``c[0..n]`` of ``det(lam I - M) = sum_k c[k] lam^k``."""
    M = np.asarray(M)
    n = M.shape[0]
    c = np.zeros(n + 1, dtype=M.dtype)
    c[n] = 1.0
    Mk = np.zeros_like(M)
    eye = np.eye(n, dtype=M.dtype)
    for k in range(1, n + 1):
        Mk = M @ Mk + c[n - k + 1] * eye
        c[n - k] = -np.trace(M @ Mk) / k
    return c


def delta_by_charpoly(Jv, m, jbar=None) -> np.ndarray:
    """Delta_(1..n+1) as det(J1) times the coefficients of det(Jbar + eps I)."""
    Jv = np.asarray(Jv)
    n = Jv.shape[0] - m
    det1 = np.linalg.det(Jv[:m, :m]) if m else 1.0
    c = faddeev_leverrier(jbar_from_matrix(Jv, m) if jbar is None else jbar)
    k = np.arange(n + 1)
    # det(Jbar + eps I) = (-1)^n p(-eps)
    return det1 * c * (-1.0) ** (n + k)


def delta_by_interpolation(Jv, m) -> np.ndarray:
    """Delta_(1..n+1) from det(J + eps P2) sampled at eps = 0..n."""
    Jv = np.asarray(Jv)
    N = Jv.shape[0]
    n = N - m
    p2 = np.zeros((N, N))
    p2[m:, m:] = np.eye(n)
    eps = np.arange(n + 1, dtype=float)
    dets = np.array([np.linalg.det(Jv + e * p2) for e in eps])
    V = np.vander(eps, n + 1, increasing=True)
    return np.linalg.solve(V, dets)


def delta_coeffs_matrix(Jv, m, cross_check: bool = True, jbar=None) -> np.ndarray:
    delta = delta_by_charpoly(Jv, m, jbar)
    if cross_check:
        other = delta_by_interpolation(Jv, m)
        scale = max(float(np.abs(delta).max()), float(np.abs(other).max()), 1e-300)
        gap = float(np.abs(delta - other).max()) / scale
        if gap > DELTA_CROSSCHECK_RTOL:
            raise ChainError(f"Delta cross-check failed: relative disagreement {gap:.3e}")
    return delta


def delta_coeffs(split: BlockSplit, q) -> np.ndarray:
    """Delta_(1)..Delta_(n+1) at ``q`` (charpoly route, cross-checked)."""
    return delta_coeffs_matrix(split.J.value(q), split.m)


@dataclass
class ChainPoint:
    """All chain data at one configuration point (index i-1 holds A_(i))."""

    m: int
    n: int
    delta: np.ndarray
    jbar: np.ndarray
    J1inv: np.ndarray
    A1: list
    A12: list
    A21: list
    A2: list

    def full(self, i: int) -> np.ndarray:
        """Reassembled N x N matrix of A_(i), 1-based ``i``."""
        k, m = i - 1, self.m
        N = m + self.n
        out = np.empty((N, N), dtype=np.result_type(self.A1[k], self.A2[k]))
        out[:m, :m], out[:m, m:] = self.A1[k], self.A12[k]
        out[m:, :m], out[m:, m:] = self.A21[k], self.A2[k]
        return out

    def all_full(self) -> np.ndarray:
        return np.array([self.full(i) for i in range(1, self.n + 2)])


def chain_from_matrix(Jv, m: int, cross_check: bool = True) -> ChainPoint:
    Jv = np.asarray(Jv)
    N = Jv.shape[0]
    n = N - m
    J12, J21 = Jv[:m, m:], Jv[m:, :m]
    J1inv = _inv_j1(Jv[:m, :m])
    L = J1inv @ J12
    R = J21 @ J1inv
    jbar = Jv[m:, m:] - J21 @ L
    delta = delta_coeffs_matrix(Jv, m, cross_check=cross_check, jbar=jbar)
    powers = [np.eye(n, dtype=jbar.dtype)]
    for _ in range(n):
        powers.append(powers[-1] @ jbar)
    A1, A12, A21, A2 = [], [], [], []
    for i in range(1, n + 2):
        a2 = np.zeros((n, n), dtype=jbar.dtype)
        for j in range(0, n - i + 1):
            a2 = a2 + (-1) ** j * delta[i + j] * powers[j]
        A1.append(delta[i - 1] * J1inv + L @ a2 @ R)
        A12.append(-L @ a2)
        A21.append(-a2 @ R)
        A2.append(a2)
    return ChainPoint(m, n, delta, jbar, J1inv, A1, A12, A21, A2)


def a_chain(split: BlockSplit, q, cross_check: bool = True) -> ChainPoint:
    return chain_from_matrix(split.J.value(q), split.m, cross_check=cross_check)


# ---------------------------------------------------------------------------
# identity residuals (pure linear algebra, any J with invertible J1)


def _rel(lhs, rhs, scale):
    return float(np.abs(np.asarray(lhs) - np.asarray(rhs)).max(initial=0.0)) / max(scale, 1e-300)


def _nrm(*mats):
    return max([float(np.abs(M).max(initial=0.0)) for M in mats] + [0.0])


def chain_identity_residuals(Jv, m: int, eps_values=(0.0, 0.5, 1.0, 2.0)) -> dict:
    """Relative residuals of every block identity of the recursion at one matrix."""
    from .geometry import cofactor

    Jv = np.asarray(Jv, dtype=float)
    N = Jv.shape[0]
    n = N - m
    c = chain_from_matrix(Jv, m, cross_check=False)
    J1, J12, J21, J2 = Jv[:m, :m], Jv[:m, m:], Jv[m:, :m], Jv[m:, m:]
    out = {k: 0.0 for k in ("id1", "id2", "id3", "id4", "jbar_commutes", "recursion",
                            "cofactor_polynomial_vs_adjugate", "det_factorization", "cayley_hamilton",
                            "delta_crosscheck", "boundary_n_plus_1", "boundary_n",
                            "a1_is_cofactor")}
    for k in range(n + 1):
        a1, a12, a21, a2 = c.A1[k], c.A12[k], c.A21[k], c.A2[k]
        s = _nrm(J1) * _nrm(a12) + _nrm(J12) * _nrm(a2)
        out["id1"] = max(out["id1"], _rel(J1 @ a12 + J12 @ a2, 0, s))
        s = _nrm(a21) * _nrm(J1) + _nrm(a2) * _nrm(J21)
        out["id2"] = max(out["id2"], _rel(a21 @ J1 + a2 @ J21, 0, s))
        s = _nrm(J21) * _nrm(a12) + _nrm(J2) * _nrm(a2) + _nrm(a21) * _nrm(J12)
        out["id3"] = max(out["id3"], _rel(J21 @ a12 + J2 @ a2, a21 @ J12 + a2 @ J2, s))
        s = _nrm(J1) * _nrm(a1) + _nrm(J12) * _nrm(a21) + _nrm(a12) * _nrm(J21)
        out["id4"] = max(out["id4"], _rel(J1 @ a1 + J12 @ a21, a1 @ J1 + a12 @ J21, s))
        s = _nrm(c.jbar) * _nrm(a2)
        out["jbar_commutes"] = max(out["jbar_commutes"], _rel(c.jbar @ a2, a2 @ c.jbar, s))
        if k < n:
            nxt = c.A2[k + 1]
            rhs = c.delta[k + 1] * np.eye(n) - c.jbar @ nxt
            s = abs(c.delta[k + 1]) + _nrm(c.jbar) * _nrm(nxt)
            out["recursion"] = max(out["recursion"], _rel(a2, rhs, s))
    for eps in eps_values:
        p2 = np.zeros((N, N))
        p2[m:, m:] = np.eye(n)
        direct = cofactor(Jv + eps * p2)
        poly = sum(c.full(i) * eps ** (i - 1) for i in range(1, n + 2))
        out["cofactor_polynomial_vs_adjugate"] = max(out["cofactor_polynomial_vs_adjugate"],
                                        _rel(poly, direct, _nrm(direct, poly)))
    detJ, det1 = np.linalg.det(Jv), np.linalg.det(J1)
    detbar = np.linalg.det(c.jbar)
    out["det_factorization"] = _rel(detJ, det1 * detbar, max(abs(detJ), abs(det1 * detbar)))
    # Jbar [Delta_2 I + sum_j (-1)^j Delta_(j+2) Jbar^j] = Delta_1 I
    bracket = c.A2[0]
    s = _nrm(c.jbar) * _nrm(bracket) + abs(c.delta[0])
    out["cayley_hamilton"] = _rel(c.jbar @ bracket, c.delta[0] * np.eye(n), s)
    d1, d2 = delta_by_charpoly(Jv, m), delta_by_interpolation(Jv, m)
    out["delta_crosscheck"] = _rel(d1, d2, _nrm(d1, d2))
    s = _nrm(c.A1[n])
    out["boundary_n_plus_1"] = max(_rel(c.A1[n], cofactor(J1), _nrm(cofactor(J1))),
                                   _rel(np.hstack([c.A12[n].ravel(), c.A21[n].ravel(),
                                                   c.A2[n].ravel()]), 0, max(s, 1.0)),
                                   _rel(c.delta[n], det1, abs(det1)))
    if n >= 1:
        k = n - 1
        cj1 = cofactor(J1)
        s = _nrm(cj1) * max(_nrm(J12), _nrm(J21), 1.0)
        out["boundary_n"] = max(_rel(c.A2[k], det1 * np.eye(n), abs(det1)),
                                _rel(c.A21[k], -J21 @ cj1, s),
                                _rel(c.A12[k], -cj1 @ J12, s))
    cj = cofactor(Jv)
    out["a1_is_cofactor"] = _rel(c.full(1), cj, _nrm(cj))
    return out


# ---------------------------------------------------------------------------
# potentials


def _segments(base, target, waypoints):
    pts = [np.asarray(base, float)] + [np.asarray(w, float) for w in (waypoints or [])]
    pts.append(np.asarray(target, float))
    return list(zip(pts[:-1], pts[1:]))


def reconstruct_potential(omega: Callable, base, target, waypoints=None,
                          check_closed: bool = True, closed_tol: float = 1e-6,
                          epsabs: float = 1e-10) -> np.ndarray:
    """Integrate a closed 1-form (or a stack of them) along base -> target.

    ``omega(q)`` returns covector components with shape ``(N,)`` or
    ``(k, N)``; the result has shape ``()`` or ``(k,)``. The path is the
    straight segment, or the polyline through ``waypoints``. Gauge: the
    potential vanishes at ``base``. Closedness is checked by complex-step
    differentiation at the segment ends and midpoints before integrating.
    """
    segs = _segments(base, target, waypoints)
    if check_closed:
        for a, b in segs:
            for q in (a, 0.5 * (a + b), b):
                d = complex_step_jacobian(omega, q)  # [c, ..., a]
                anti = d - np.swapaxes(d, 0, -1)
                scale = max(1.0, float(np.abs(d).max()))
                res = float(np.abs(anti).max()) / scale
                if res > closed_tol:
                    raise ClosednessError(f"form is not closed at q={list(q)} (residual {res:.3e})")
    total = np.zeros(np.shape(omega(np.asarray(base, float)))[:-1])
    for a, b in segs:
        step = b - a
        if not np.any(step):
            continue

        def integrand(t, a=a, step=step):
            return np.asarray(omega(a + t * step)) @ step

        val, err = quad_vec(integrand, 0.0, 1.0, epsabs=epsabs, epsrel=1e-12, limit=200,
                            quadrature="gk15")
        if not np.all(np.isfinite(val)) or np.max(np.abs(err)) > 10 * epsabs + 1e-12 * np.max(np.abs(val)):
            raise QuadratureError(f"line integral did not converge (error estimate {np.max(err):.3e})")
        total = total + val
    return np.asarray(total)


class CofactorChain:
    """Pointwise evaluator of the whole chain and the potentials W_(i).

    The potentials satisfy ``A_(i) mu = -dW_(i)`` and vanish at ``base``.
    """

    def __init__(self, split: BlockSplit, mu: OneFormField, base, waypoints=None):
        self.split = split
        self.mu = mu
        self.base = np.asarray(base, float)
        self.waypoints = waypoints

    @property
    def m(self):
        return self.split.m

    @property
    def n(self):
        return self.split.n

    def at(self, q, cross_check: bool = False) -> ChainPoint:
        return a_chain(self.split, q, cross_check=cross_check)

    def matrices(self, q) -> np.ndarray:
        """Stack of A_(i) as (n+1, N, N)."""
        return self.at(q).all_full()

    def forms(self, q) -> np.ndarray:
        """dW_(i) = -A_(i) mu as rows, shape (n+1, N)."""
        A = self.matrices(q)
        mu = self.mu.value(q)
        return -np.einsum("iab,a->ib", A, mu)

    def potentials(self, q, check_closed: bool = False) -> np.ndarray:
        return reconstruct_potential(self.forms, self.base, q, self.waypoints,
                                     check_closed=check_closed)

    def closedness(self, points) -> np.ndarray:
        """Max |d(A_(i) mu)| per i over ``points``."""
        worst = np.zeros(self.n + 1)
        for q in points:
            d = complex_step_jacobian(self.forms, q)  # [c, i, a]
            anti = np.abs(d - np.einsum("cia->aic", d)).max(axis=(0, 2))
            worst = np.maximum(worst, anti)
        return worst

    def w1_form(self, q) -> np.ndarray:
        """dW^1 on the driving coordinates: -(cof J1) mu_1."""
        from .geometry import cofactor

        m = self.m
        J1 = self.split.J.value(q)[:m, :m]
        return -form_action(cofactor(J1), self.mu.value(q)[:m])


def mu_bar2(split: BlockSplit, chain: CofactorChain, q, tol: float = 1e-7):
    """Modified driven forces d_2 W_(n) and the residual of their defining relation.

    Returns ``(mubar, residual)`` where the residual measures
    ``det(J1) mu_2 + J12 (d_1 W^1) + d_2 W_(n)`` (relative).
    """
    m, n = split.m, split.n
    forms = chain.forms(q)
    mubar = forms[n - 1][m:]
    J1, J12, _, _ = split.blocks(q)
    det1 = np.linalg.det(J1)
    mu = chain.mu.value(q)
    dW1 = chain.w1_form(q)
    lhs = det1 * mu[m:] + J12.T @ dW1
    scale = max(1.0, _nrm(det1 * mu[m:]), _nrm(J12.T @ dW1), _nrm(mubar))
    residual = _rel(lhs, -mubar, scale)
    if residual > tol:
        raise ChainError(f"modified-force relation violated (residual {residual:.3e})")
    return mubar, residual
