"""Pointwise differential geometry on configuration space.

Index convention, fixed everywhere in the package: a type (1,1) tensor is a
matrix whose row is the upper index and whose column is the lower index, so
it acts on vector components by ``T @ v`` and on covector components by
``T.T @ w``. Covariant inputs (all indices down) are turned into this form
with the inverse metric.

All derivative arrays put the differentiation index first:
``dJ[c, a, b] = d J^a_b / d q^c``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .expr_core import compile_exprs, diff_expr, free_names

COMPLEX_STEP = 1e-30


class GeometryError(Exception):
    pass


class SingularMetricError(GeometryError):
    pass


def complex_step_jacobian(fn: Callable[[np.ndarray], np.ndarray], q, h: float = COMPLEX_STEP):
    """Derivatives of an analytic ``fn`` at real ``q`` by the complex-step rule.

    Returns an array of shape ``(len(q),) + fn(q).shape`` accurate to
    rounding; ``fn`` must accept complex arguments and avoid ``abs``/``conj``.
    """
    q = np.asarray(q, dtype=float)
    out = []
    for k in range(q.size):
        z = q.astype(complex)
        z[k] += 1j * h
        out.append(np.imag(np.asarray(fn(z))) / h)
    return np.array(out)


class _CompiledMatrix:
    """Expr array compiled for real and (lazily) complex evaluation."""

    def __init__(self, exprs, coords, params):
        self.exprs = np.array(exprs, dtype=object)
        self.shape = self.exprs.shape
        self.coords = list(coords)
        self.params = dict(params or {})
        self._flat = list(self.exprs.ravel())
        self._real = compile_exprs(self._flat, self.coords, self.params)
        self._cplx = None
        self._d1 = None
        self._d2 = None

    def __call__(self, q):
        q = np.asarray(q)
        if q.dtype.kind == "c":
            if self._cplx is None:
                self._cplx = compile_exprs(self._flat, self.coords, self.params, complex_mode=True)
            vals = self._cplx([complex(v) for v in q])
            return np.array(vals, dtype=complex).reshape(self.shape)
        return np.array(self._real(q.astype(float).tolist()), dtype=float).reshape(self.shape)

    def derivative(self) -> "_CompiledMatrix":
        if self._d1 is None:
            d = [[diff_expr(e, c) for e in self._flat] for c in self.coords]
            self._d1 = _CompiledMatrix(
                np.array(d, dtype=object).reshape((len(self.coords),) + self.shape),
                self.coords, self.params)
        return self._d1

    def names(self) -> set[str]:
        out = set()
        for e in self._flat:
            out |= free_names(e)
        return out


@dataclass
class MetricField:
    """Riemannian metric g_{ab}(q) given by expressions (upper triangle used)."""

    exprs: list
    coords: list
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.coords)
        rows = [[self.exprs[min(i, j)][max(i, j)] for j in range(n)] for i in range(n)]
        self.exprs = rows
        self._g = _CompiledMatrix(rows, self.coords, self.params)

    @property
    def dim(self):
        return len(self.coords)

    def value(self, q):
        return self._g(q)

    def d1(self, q):
        """``dg[c, a, b] = d g_ab / d q^c``."""
        return self._g.derivative()(q)

    def d2(self, q):
        """``ddg[c, d, a, b] = d^2 g_ab / d q^c d q^d``."""
        return self._g.derivative().derivative()(q)

    def inverse(self, q):
        g = self.value(q)
        if not np.iscomplexobj(g):
            try:
                np.linalg.cholesky(g)
            except np.linalg.LinAlgError:
                raise SingularMetricError(f"metric not positive-definite at q={list(q)}") from None
        return np.linalg.inv(g)

    def inverse_d1(self, q):
        """``d g^{ab} / d q^c`` as ``[c, a, b]``."""
        ginv = self.inverse(q)
        return -np.einsum("ai,cij,jb->cab", ginv, self.d1(q), ginv)

    def depends_on(self) -> set[str]:
        return self._g.names()


class TensorField11:
    """Type (1,1) tensor field J^a_b(q); row = upper index."""

    def __init__(self, exprs, coords, params=None, metric: MetricField | None = None,
                 covariant: bool = False):
        self.coords = list(coords)
        self.params = dict(params or {})
        self.covariant = covariant
        self.metric = metric
        if covariant and metric is None:
            raise ValueError("covariant input needs a metric to raise the index")
        self.exprs = exprs
        self._m = _CompiledMatrix(exprs, self.coords, self.params)

    @property
    def dim(self):
        return len(self.coords)

    def value(self, q):
        raw = self._m(q)
        if self.covariant:
            return np.linalg.solve(self.metric.value(q), raw)
        return raw

    def jacobian(self, q):
        """``dJ[c, a, b] = d J^a_b / d q^c`` (exact)."""
        draw = self._m.derivative()(q)
        if not self.covariant:
            return draw
        ginv = self.metric.inverse(q)
        raw = self._m(q)
        dginv = self.metric.inverse_d1(q)
        return np.einsum("cai,ib->cab", dginv, raw) + np.einsum("ai,cib->cab", ginv, draw)

    def lowered(self, q):
        """Covariant components J_ab = g_ac J^c_b."""
        if self.metric is None:
            raise ValueError("no metric attached")
        return self.metric.value(q) @ self.value(q)

    def component_names(self, i, j) -> set[str]:
        return free_names(self.exprs[i][j])


@dataclass
class OneFormField:
    """Covector field with components Q_a(q)."""

    exprs: list
    coords: list
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self._m = _CompiledMatrix(list(self.exprs), self.coords, self.params)

    def value(self, q):
        return self._m(q)

    def jacobian(self, q):
        """``dQ[c, a] = d Q_a / d q^c``."""
        return self._m.derivative()(q)

    def component_names(self, i) -> set[str]:
        return free_names(self.exprs[i])


# ---------------------------------------------------------------------------
# operations


def christoffel(g: MetricField, q) -> np.ndarray:
    """Levi-Civita symbols ``G[a, b, c] = Gamma^a_{bc}``."""
    ginv = g.inverse(q)
    dg = g.d1(q)  # [c, a, b]
    # S_{k b c} = d_b g_{kc} + d_c g_{kb} - d_k g_{bc}
    s = np.einsum("bkc->kbc", dg) + np.einsum("ckb->kbc", dg) - dg
    return 0.5 * np.einsum("ak,kbc->abc", ginv, s)


def christoffel_d1(g: MetricField, q) -> np.ndarray:
    """``dG[d, a, b, c] = d Gamma^a_{bc} / d q^d``."""
    ginv = g.inverse(q)
    dginv = g.inverse_d1(q)
    dg = g.d1(q)
    ddg = g.d2(q)  # [d, c, a, b]
    s = np.einsum("bkc->kbc", dg) + np.einsum("ckb->kbc", dg) - dg
    ds = (np.einsum("dbkc->dkbc", ddg) + np.einsum("dckb->dkbc", ddg) - ddg)
    return 0.5 * (np.einsum("dak,kbc->dabc", dginv, s) + np.einsum("ak,dkbc->dabc", ginv, ds))


@dataclass
class ScktPoint:
    residual: float
    alpha: np.ndarray
    symmetry: float


def sckt_residual(g: MetricField, J: TensorField11, q) -> ScktPoint:
    """Max-norm residual of the special conformal Killing condition at ``q``.

    Checks ``J^a_{b|c} = 1/2 (alpha_b delta^a_c + alpha_s g^{sa} g_{bc})`` with
    ``alpha = d(tr J)``; the g-symmetry defect of ``J`` is reported alongside.
    """
    Jv = J.value(q)
    dJ = J.jacobian(q)
    G = christoffel(g, q)
    gv = g.value(q)
    ginv = g.inverse(q)
    alpha = np.einsum("caa->c", dJ)
    # covariant derivative, index order [a, b, c]
    cov = (np.einsum("cab->abc", dJ)
           - np.einsum("as,sbc->abc", Jv, G)
           + np.einsum("sb,asc->abc", Jv, G))
    n = len(alpha)
    rhs = 0.5 * (np.einsum("b,ac->abc", alpha, np.eye(n))
                 + np.einsum("s,sa,bc->abc", alpha, ginv, gv))
    gj = gv @ Jv
    scale = max(1.0, np.abs(gj).max())
    return ScktPoint(float(np.abs(cov - rhs).max()), alpha,
                     float(np.abs(gj - gj.T).max() / scale))


def nijenhuis_tensor(J: TensorField11, q) -> np.ndarray:
    """Components ``N[a, c, d]`` of the Nijenhuis torsion."""
    Jv = J.value(q)
    dJ = J.jacobian(q)  # [c, a, b]
    d = np.einsum("cab->abc", dJ)  # d[a, b, c] = d_c J^a_b
    term1 = np.einsum("ab,bcd->acd", Jv, d - np.einsum("bdc->bcd", d))
    term2 = -np.einsum("bd,acb->acd", Jv, d)
    term3 = np.einsum("bc,adb->acd", Jv, d)
    return term1 + term2 + term3


def nijenhuis_norm(J: TensorField11, q) -> float:
    return float(np.abs(nijenhuis_tensor(J, q)).max())


def _adjugate_minors(M: np.ndarray) -> np.ndarray:
    n = M.shape[0]
    if n == 1:
        return np.ones((1, 1), dtype=M.dtype)
    adj = np.empty_like(M)
    for i in range(n):
        for j in range(n):
            minor = np.delete(np.delete(M, i, axis=0), j, axis=1)
            adj[j, i] = (-1) ** (i + j) * _det_small(minor)
    return adj


def _det_small(M: np.ndarray):
    n = M.shape[0]
    if n == 1:
        return M[0, 0]
    if n == 2:
        return M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    if n == 3:
        return (M[0, 0] * (M[1, 1] * M[2, 2] - M[1, 2] * M[2, 1])
                - M[0, 1] * (M[1, 0] * M[2, 2] - M[1, 2] * M[2, 0])
                + M[0, 2] * (M[1, 0] * M[2, 1] - M[1, 1] * M[2, 0]))
    return np.linalg.det(M)


def cofactor(M) -> np.ndarray:
    """Cofactor (adjugate) tensor A with ``M A = A M = det(M) I``.

    Signed minors for N <= 4; otherwise det(M) M^{-1} from an LU solve with
    one round of iterative refinement, reverting to minors when M is
    numerically singular.
    """
    M = np.asarray(M)
    n = M.shape[0]
    if n <= 4:
        return _adjugate_minors(M)
    if not np.iscomplexobj(M) and np.linalg.cond(M) > 1e12:
        return _adjugate_minors(M)
    lu, piv = scipy.linalg.lu_factor(M)
    eye = np.eye(n, dtype=M.dtype)
    X = scipy.linalg.lu_solve((lu, piv), eye)
    X = X + scipy.linalg.lu_solve((lu, piv), eye - M @ X)
    sign = np.prod(np.where(piv != np.arange(n), -1.0, 1.0))
    det = sign * np.prod(np.diag(lu))
    return det * X


def form_action(T: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Action of a (1,1) tensor on covector components."""
    return T.T @ w


def cofactor_form(J: TensorField11, mu: OneFormField, q) -> np.ndarray:
    return form_action(cofactor(J.value(q)), mu.value(q))


def exterior_derivative_residual(omega: Callable, q) -> float:
    """Max |d_b w_a - d_a w_b| for a covector field given as a complex-safe callable."""
    d = complex_step_jacobian(omega, q)  # [b, a] = d_b w_a
    return float(np.abs(d - d.T).max())


def dj_mu_closedness(g: MetricField, J: TensorField11, mu: OneFormField, points) -> float:
    """Max closedness defect of the 1-form (cof J) mu over ``points``.

    ``g`` is accepted for interface symmetry; closedness is metric-free.
    """
    del g
    worst = 0.0
    for q in points:
        worst = max(worst, exterior_derivative_residual(lambda z: cofactor_form(J, mu, z), q))
    return worst


def sample_points(lo: Sequence[float], hi: Sequence[float], count: int, seed: int) -> np.ndarray:
    """Uniform sample of a box; deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    return lo + (hi - lo) * rng.random((count, lo.size))
