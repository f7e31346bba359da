"""Quadratic integrals and the two Poisson structures.

``P_J`` is the Poisson map lifted from a (1,1) tensor ``J``::

    P_J(dH):  qdot^a = J^a_b dH/dp_b
              pdot_b = -J^a_b dH/dq^a - p_c (d_b J^c_a - d_a J^c_b) dH/dp_a

and ``P_P2`` is the canonical structure in the driven pair ``(x, p_x)``.
Brackets follow ``{f, g}_J = P_J(dg)(f)``, which gives ``{q, p} = +1`` for
``J = I``. Phase-space gradients are stored as ``(dH/dq, dH/dp)`` stacked in
one vector of length 2N.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cofactor_chain import CofactorChain, chain_from_matrix
from .dynamics import PhaseField, SystemSpec
from .geometry import TensorField11, complex_step_jacobian, cofactor


@dataclass
class PhasePoint:
    q: np.ndarray
    p: np.ndarray

    @classmethod
    def from_vector(cls, z):
        z = np.asarray(z, float)
        N = z.size // 2
        return cls(z[:N].copy(), z[N:].copy())

    def vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.p])


class IntegralFamily:
    """Evaluators for ``H_(i) = 1/2 A_(i)^{ab} p_a p_b + W_(i)``, i = 1..n+1.

    ``A_(i)^{ab}`` is ``A_(i)`` with its lower index raised by ``g^-1``.
    ``shifts`` optionally adds extra complex-safe functions of q to given
    W_(i) (keyed by 1-based i); it exists for negative controls.
    """

    def __init__(self, spec: SystemSpec, chain: CofactorChain | None = None,
                 shifts: dict | None = None):
        self.spec = spec
        self.chain = chain or spec.chain
        self.shifts = dict(shifts or {})
        self.n = spec.n
        self.count = spec.n + 1

    # quadratic parts -------------------------------------------------------
    def quadratic(self, q) -> np.ndarray:
        """Stack of symmetric ``A_(i) g^-1`` matrices, shape (n+1, N, N)."""
        q = np.asarray(q)
        Jv = self.spec.J.value(q)
        cp = chain_from_matrix(Jv, self.spec.m, cross_check=False)
        ginv = np.linalg.inv(self.spec.metric.value(q))
        mats = np.einsum("iab,bc->iac", cp.all_full(), ginv)
        return 0.5 * (mats + np.swapaxes(mats, 1, 2))

    def _shift_value(self, q):
        out = np.zeros(self.count)
        for i, fn in self.shifts.items():
            out[i - 1] += float(np.real(fn(q)))
        return out

    def _shift_grad(self, q):
        out = np.zeros((self.count, self.spec.N))
        for i, fn in self.shifts.items():
            out[i - 1] += complex_step_jacobian(lambda z: np.asarray(fn(z)), q)
        return out

    def potentials(self, q) -> np.ndarray:
        return self.chain.potentials(q) + self._shift_value(q)

    def values(self, z) -> np.ndarray:
        z = np.asarray(z, float)
        N = self.spec.N
        q, p = z[:N], z[N:]
        M = self.quadratic(q)
        return 0.5 * np.einsum("iab,a,b->i", M, p, p) + self.potentials(q)

    def kinetic(self, z) -> np.ndarray:
        z = np.asarray(z, float)
        N = self.spec.N
        M = self.quadratic(z[:N])
        return 0.5 * np.einsum("iab,a,b->i", M, z[N:], z[N:])

    def gradients(self, z) -> np.ndarray:
        """Exact phase-space gradients, shape (n+1, 2N).

        The momentum part is ``M p``; the configuration part combines the
        complex-step derivative of the quadratic form with ``dW_(i) = -A_(i) mu``.
        """
        z = np.asarray(z, float)
        N = self.spec.N
        q, p = z[:N], z[N:]
        M = self.quadratic(q)
        dM = complex_step_jacobian(self.quadratic, q)  # [c, i, a, b]
        dq = 0.5 * np.einsum("ciab,a,b->ic", dM, p, p) + self.chain.forms(q) + self._shift_grad(q)
        dp = np.einsum("iab,b->ia", M, p)
        return np.hstack([dq, dp])

    def values_tilde(self, q, ptilde) -> np.ndarray:
        """The same integrals in the momenta ``ptilde`` (no mixed driving/driven terms).

        ``H_(i) = 1/2 A_(i)2 g2^-1 (pt_x, pt_x) + 1/2 Delta_(i) J1 g1^-1 (pt_y, pt_y) + W_(i)``.
        """
        q, pt = np.asarray(q, float), np.asarray(ptilde, float)
        m = self.spec.m
        cp = self.chain.at(q)
        g = self.spec.metric.value(q)
        g1inv, g2inv = np.linalg.inv(g[:m, :m]), np.linalg.inv(g[m:, m:])
        J1 = self.spec.J.value(q)[:m, :m]
        k1 = pt[:m] @ (J1 @ g1inv) @ pt[:m]
        out = np.array([0.5 * pt[m:] @ (cp.A2[k] @ g2inv) @ pt[m:] + 0.5 * cp.delta[k] * k1
                        for k in range(self.count)])
        return out + self.potentials(q)

    def E1(self, z0) -> float:
        """Driving constant: the value of H_(n+1) on the initial data."""
        return float(self.values(z0)[self.n])


def build_family(spec: SystemSpec, chain: CofactorChain | None = None) -> IntegralFamily:
    return IntegralFamily(spec, chain)


# ---------------------------------------------------------------------------
# Poisson maps and brackets


def poisson_map_J(Jv, dJ, p, grad) -> np.ndarray:
    """Vector field ``P_J(dH)`` at one phase point, from numeric J and dJ."""
    N = len(p)
    dHq, dHp = grad[:N], grad[N:]
    qdot = Jv @ dHp
    twist = (np.einsum("g,bga,a->b", p, dJ, dHp) - np.einsum("g,agb,a->b", p, dJ, dHp))
    pdot = -Jv.T @ dHq - twist
    return np.concatenate([qdot, pdot])


def poisson_map_P2(m: int, grad) -> np.ndarray:
    """``P_P2(dH)``: canonical flow in (x, p_x), zero on the driving pair."""
    N = len(grad) // 2
    out = np.zeros(2 * N)
    out[m:N] = grad[N + m:]
    out[N + m:] = -grad[m:N]
    return out


def bracket_J(df, dg, J: TensorField11, z) -> float:
    """``{f, g}_J`` from phase-space gradients of f and g at ``z``."""
    z = np.asarray(z, float)
    N = z.size // 2
    q, p = z[:N], z[N:]
    X = poisson_map_J(J.value(q), J.jacobian(q), p, np.asarray(dg, float))
    return float(np.asarray(df, float) @ X)


def bracket_canonical_driven(df, dg, m: int) -> float:
    """``sum_a df/dx^a dg/dp_a - df/dp_a dg/dx^a``; the driving pair is inert."""
    df, dg = np.asarray(df, float), np.asarray(dg, float)
    return float(df @ poisson_map_P2(m, dg))


def involutivity(family: IntegralFamily, z) -> dict:
    """Brackets between all members at ``z``, each divided by |grad f| |grad g|."""
    z = np.asarray(z, float)
    spec = family.spec
    N = spec.N
    q, p = z[:N], z[N:]
    G = family.gradients(z)
    Jv, dJ = spec.J.value(q), spec.J.jacobian(q)
    k = family.count
    bj = np.zeros((k, k))
    b2 = np.zeros((k, k))
    norms = np.linalg.norm(G, axis=1)
    for l in range(k):
        XJ = poisson_map_J(Jv, dJ, p, G[l])
        X2 = poisson_map_P2(spec.m, G[l])
        for i in range(k):
            scale = max(norms[i] * norms[l], 1e-300)
            bj[i, l] = (G[i] @ XJ) / scale
            b2[i, l] = (G[i] @ X2) / scale
    return {"J": bj, "P2": b2}


def quasi_ham_residual(spec: SystemSpec, family: IntegralFamily, z, per_level: bool = False):
    """Residual of ``Delta_(i) Gamma = P_J(dH_(i)) + P_P2(dH_(i-1))`` for i = 1..n+2.

    ``H_(0)`` and ``H_(n+2)`` are zero and ``Delta_(n+2) = 0``, so the two
    ends are the quasi-Hamiltonian form of the full field and the statement
    that ``H_(n+1)`` has no canonical driven flow. Each level is scaled by
    ``max(1, |Delta_(i)| |Gamma|)``.
    """
    z = np.asarray(z, float)
    N, m, n = spec.N, spec.m, spec.n
    q, p = z[:N], z[N:]
    gamma = PhaseField(spec).rhs(0.0, z)
    delta = family.chain.at(q).delta
    G = family.gradients(z)
    Jv, dJ = spec.J.value(q), spec.J.jacobian(q)
    zero = np.zeros(2 * N)
    levels = []
    for i in range(1, n + 3):
        d = delta[i - 1] if i <= n + 1 else 0.0
        pj = poisson_map_J(Jv, dJ, p, G[i - 1]) if i <= n + 1 else zero
        p2 = poisson_map_P2(m, G[i - 2]) if i >= 2 else zero
        scale = max(1.0, abs(d) * float(np.abs(gamma).max()))
        levels.append(float(np.abs(d * gamma - pj - p2).max()) / scale)
    return levels if per_level else max(levels)


def quasi_ham_tolerance(delta, gamma) -> float:
    return 1e-7 * max(1.0, float(np.abs(delta).max()) * float(np.abs(gamma).max()))


# ---------------------------------------------------------------------------
# Darboux criterion


def _jinv(J: TensorField11):
    def fn(q):
        return np.linalg.inv(J.value(q))
    return fn


def darboux_residual(J: TensorField11, z) -> float:
    """Mismatch between the dq^dq parts of omega_J and d(pcheck)^dq.

    ``pcheck = J^-T p``. Both dp^dq parts are ``J^-1 dp ^ dq`` by
    construction, so the chart is Darboux exactly when the two dq^dq
    coefficient matrices agree. The second one is built from a complex-step
    derivative of ``J^-1`` so it shares no algebra with the first.
    """
    z = np.asarray(z, float)
    N = z.size // 2
    q, p = z[:N], z[N:]
    Jv = J.value(q)
    cond = np.linalg.cond(Jv)
    if not np.isfinite(cond) or cond > 1e12:
        raise np.linalg.LinAlgError(f"J is singular at q={list(q)}")
    Ji = np.linalg.inv(Jv)
    dJ = J.jacobian(q)  # [c, a, b]
    # omega_J: -1/2 p_g (d_b J^g_a - d_a J^g_b) Ji^b_s Ji^a_r dq^s ^ dq^r
    T = np.einsum("g,bga->ba", p, dJ) - np.einsum("g,agb->ba", p, dJ)
    C = -0.5 * np.einsum("ba,bs,ar->sr", T, Ji, Ji)
    omega = C - C.T
    # d(pcheck_b) ^ dq^b, pcheck_b = Ji^a_b p_a
    dJi = complex_step_jacobian(_jinv(J), q)  # [s, a, b]
    D = np.einsum("a,sab->sb", p, dJi)
    check = D - D.T
    scale = max(1.0, float(np.abs(omega).max()), float(np.abs(check).max()))
    return float(np.abs(omega - check).max()) / scale


def raised_cofactor_check(spec: SystemSpec, family: IntegralFamily, z) -> float:
    """Relative mismatch of A_(1)^{ab} p_a p_b via the chain versus cof J directly."""
    z = np.asarray(z, float)
    N = spec.N
    q, p = z[:N], z[N:]
    chain_val = p @ family.quadratic(q)[0] @ p
    direct = p @ (cofactor(spec.J.value(q)) @ spec.metric.inverse(q)) @ p
    return abs(chain_val - direct) / max(1.0, abs(direct))
