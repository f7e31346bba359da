"""Equations of motion for a driven cofactor system.

The phase-space field is integrated in momentum variables ``z = (q, p)``
with ``p = g v``::

    qdot^a = g^{ab} p_b
    pdot_a = 1/2 d_a g_{bc} v^b v^c + Q_a

Coordinates are ordered ``(y^1..y^m, x^1..x^n)`` throughout: the first
block is the driving system, the second the driven one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .cofactor_chain import BlockSplit, CofactorChain, block_split, reconstruct_potential
from .expr_core import Expr, compile_exprs, free_names
from .geometry import (MetricField, OneFormField, TensorField11, christoffel, christoffel_d1,
                       complex_step_jacobian, sample_points)

BLOWUP_LIMIT = 1e8
COUPLING_THRESHOLD = 1e-6


class NumericAbort(RuntimeError):
    """Integration stopped on a non-finite or runaway state."""

    def __init__(self, message, t_last: float, trajectory: "Trajectory | None" = None):
        super().__init__(message)
        self.t_last = t_last
        self.trajectory = trajectory


class StructureError(ValueError):
    pass


@dataclass
class IntegrationControl:
    method: str = "rk4"
    dt: float = 1e-3
    rtol: float = 1e-10
    t_end: float = 0.0
    output_stride: int = 100


@dataclass
class OriginalSystem:
    """The system in the user's original coordinates, before the adapted change."""

    coords: list
    metric: MetricField
    J: TensorField11
    mu: OneFormField
    point_map: dict
    K_basis: np.ndarray | None = None

    def to_original(self, q_adapted, adapted_coords) -> np.ndarray:
        fn = compile_exprs([self.point_map[c] for c in self.coords], adapted_coords,
                           self.metric.params)
        return np.array(fn([float(v) for v in q_adapted]))


@dataclass
class SystemSpec:
    """Everything needed to analyse one driven system, in adapted coordinates."""

    m: int
    n: int
    coords: list
    params: dict
    metric: MetricField
    J: TensorField11
    mu: OneFormField
    potential: Expr | None = None
    base_point: np.ndarray = None
    box_lo: np.ndarray = None
    box_hi: np.ndarray = None
    seed: int = 0
    waypoints: list | None = None
    integration: IntegrationControl = field(default_factory=IntegrationControl)
    initial_state: np.ndarray | None = None
    K_basis: np.ndarray | None = None
    original: OriginalSystem | None = None
    name: str = "system"

    def __post_init__(self):
        N = len(self.coords)
        if self.m + self.n != N:
            raise ValueError(f"m + n = {self.m + self.n} but there are {N} coordinates")
        if self.base_point is None:
            self.base_point = np.zeros(N)
        self.base_point = np.asarray(self.base_point, float)
        if self.box_lo is None:
            self.box_lo, self.box_hi = -np.ones(N), np.ones(N)
        self.box_lo = np.asarray(self.box_lo, float)
        self.box_hi = np.asarray(self.box_hi, float)

    @property
    def N(self) -> int:
        return self.m + self.n

    @property
    def driving(self) -> list:
        return self.coords[:self.m]

    @property
    def driven(self) -> list:
        return self.coords[self.m:]

    def sample(self, count: int = 100, seed: int | None = None) -> np.ndarray:
        return sample_points(self.box_lo, self.box_hi, count, self.seed if seed is None else seed)

    @cached_property
    def split(self) -> BlockSplit:
        return block_split(self.J, self.m, self.n, self.sample(20))

    @cached_property
    def chain(self) -> CofactorChain:
        return CofactorChain(self.split, self.mu, self.base_point, self.waypoints)

    @cached_property
    def _potential_fn(self):
        if self.potential is None:
            return None
        return compile_exprs([self.potential], self.coords, self.params)

    def driven_potential(self, q) -> float:
        """V(y, x) with ``Q_a = -dV/dx^a``; reconstructed along x if not given."""
        q = np.asarray(q, float)
        if self._potential_fn is not None:
            return float(self._potential_fn([float(v) for v in q])[0])
        m = self.m
        start = q.copy()
        start[m:] = self.base_point[m:]

        def omega(z):
            w = np.zeros(self.N, dtype=np.result_type(z, float))
            w[m:] = -self.mu.value(z)[m:]
            return w

        return float(reconstruct_potential(omega, start, q, check_closed=False))


# ---------------------------------------------------------------------------
# phase-space field


def _is_flat(g: MetricField) -> bool:
    return not (g.depends_on() & set(g.coords))


class PhaseField:
    """Callable ``(q, p) -> (qdot, pdot)``; caches the inverse of a constant metric."""

    def __init__(self, spec: SystemSpec):
        self.spec = spec
        self.flat = _is_flat(spec.metric)
        self._ginv = spec.metric.inverse(spec.base_point) if self.flat else None

    def __call__(self, q, p):
        g, mu = self.spec.metric, self.spec.mu
        if self.flat:
            return self._ginv @ p, mu.value(q)
        v = g.inverse(q) @ p
        pdot = 0.5 * np.einsum("cab,a,b->c", g.d1(q), v, v) + mu.value(q)
        return v, pdot

    def rhs(self, t, z):
        N = self.spec.N
        qd, pd = self(z[:N], z[N:])
        return np.concatenate([qd, pd])


def gamma_hat(spec: SystemSpec, z) -> np.ndarray:
    """Phase-space velocity ``(qdot, pdot)`` at ``z = (q, p)``."""
    z = np.asarray(z, float)
    return PhaseField(spec).rhs(0.0, z)


def sode_force(spec: SystemSpec, q, v) -> np.ndarray:
    """Second-order field ``f^a = -Gamma^a_bc v^b v^c + g^ab Q_b``."""
    G = christoffel(spec.metric, q)
    return -np.einsum("abc,b,c->a", G, v, v) + spec.metric.inverse(q) @ spec.mu.value(q)


# ---------------------------------------------------------------------------
# integration


@dataclass
class Trajectory:
    t: np.ndarray
    z: np.ndarray
    values: np.ndarray | None = None
    steps: int = 0
    max_error_estimate: float | None = None
    aborted: bool = False
    message: str = ""

    @property
    def q(self):
        return self.z[:, :self.z.shape[1] // 2]

    @property
    def p(self):
        return self.z[:, self.z.shape[1] // 2:]

    def drift(self) -> np.ndarray:
        """Max drift per monitored integral: relative when |H0| > 1e-8, else absolute."""
        if self.values is None or len(self.values) == 0:
            return np.zeros(0)
        h0 = self.values[0]
        dev = np.abs(self.values - h0).max(axis=0)
        scale = np.where(np.abs(h0) > 1e-8, np.abs(h0), 1.0)
        return dev / scale

    def drift_series(self) -> np.ndarray:
        h0 = self.values[0]
        scale = np.where(np.abs(h0) > 1e-8, np.abs(h0), 1.0)
        return np.abs(self.values - h0) / scale


def _rk4_step(f, t, z, h):
    k1 = f(t, z)
    k2 = f(t + 0.5 * h, z + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, z + 0.5 * h * k2)
    k4 = f(t + h, z + h * k3)
    return z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _guard(z, t):
    if not np.abs(z).max() <= BLOWUP_LIMIT:  # also catches nan
        raise NumericAbort(f"state left the finite range at t = {t:.6g}", t)


def integrate(spec: SystemSpec, z0, t_end: float | None = None,
              control: IntegrationControl | None = None,
              monitor: Callable | None = None) -> Trajectory:
    """Integrate the phase-space field from ``z0``.

    Fixed-step RK4 (``control.dt``) records every ``output_stride``-th state
    plus the final one; RK45 records on the same time grid through scipy.
    ``monitor(z)`` returns the integral values attached to each record.
    On blow-up a :class:`NumericAbort` carries the partial trajectory.
    """
    control = control or spec.integration
    t_end = control.t_end if t_end is None else t_end
    if t_end < 0:
        raise ValueError("t_end must be non-negative")
    field_ = PhaseField(spec).rhs
    z = np.asarray(z0, float).copy()
    if z.size != 2 * spec.N:
        raise ValueError(f"initial state needs {2 * spec.N} components")
    ts, zs = [0.0], [z.copy()]
    steps, err = 0, 0.0
    stride = max(1, int(control.output_stride))
    try:
        if t_end == 0:
            pass
        elif control.method.lower() == "rk4":
            nsteps = int(np.ceil(t_end / control.dt - 1e-9))
            h = t_end / nsteps
            t = 0.0
            for k in range(1, nsteps + 1):
                z = _rk4_step(field_, t, z, h)
                t = k * h
                steps += 1
                _guard(z, t)
                if k % stride == 0 or k == nsteps:
                    ts.append(t)
                    zs.append(z.copy())
            err = _rk4_error_probe(field_, zs, ts, h)
        elif control.method.lower() == "rk45":
            grid = np.arange(1, int(np.floor(t_end / (control.dt * stride) + 1e-9)) + 1) * control.dt * stride
            grid = np.unique(np.append(grid[grid < t_end], t_end))

            def blowup(t, y):
                return BLOWUP_LIMIT - np.abs(y).max()
            blowup.terminal = True

            sol = solve_ivp(field_, (0.0, t_end), z, method="RK45", t_eval=grid,
                            rtol=control.rtol, atol=control.rtol * 1e-2, events=blowup)
            steps = int(sol.nfev)
            for t, col in zip(sol.t, sol.y.T):
                ts.append(float(t))
                zs.append(col.copy())
            if sol.status == 1 or not sol.success:
                raise NumericAbort(f"integration stopped at t = {ts[-1]:.6g}: {sol.message}", ts[-1])
            err = None
        else:
            raise ValueError(f"unknown integration method {control.method!r}")
    except NumericAbort as exc:
        traj = _finish(ts, zs, monitor, steps, None, aborted=True, message=str(exc))
        exc.trajectory = traj
        exc.t_last = ts[-1]
        raise
    return _finish(ts, zs, monitor, steps, err)


def _rk4_error_probe(f, zs, ts, h):
    """Step-doubling estimate of the local error at a few recorded states."""
    if len(zs) < 2:
        return 0.0
    idx = np.unique(np.linspace(0, len(zs) - 2, min(len(zs) - 1, 8)).astype(int))
    worst = 0.0
    for i in idx:
        z, t = zs[i], ts[i]
        full = _rk4_step(f, t, z, h)
        half = _rk4_step(f, t + 0.5 * h, _rk4_step(f, t, z, 0.5 * h), 0.5 * h)
        worst = max(worst, float(np.abs(full - half).max()) * 16.0 / 15.0)
    return worst


def _finish(ts, zs, monitor, steps, err, aborted=False, message=""):
    z = np.array(zs)
    values = None
    if monitor is not None:
        values = np.array([monitor(row) for row in z]) if len(z) else None
    return Trajectory(np.array(ts), z, values, steps, err, aborted, message)


# ---------------------------------------------------------------------------
# Jacobi endomorphism


def jacobi_endomorphism(spec: SystemSpec, q, v=None) -> np.ndarray:
    """``Phi^a_b = -df^a/dq^b - Gamma^a_c Gamma^c_b - Gamma(Gamma^a_b)``.

    Uses the connection coefficients ``Gamma^a_b = -1/2 df^a/dv^b`` of the
    second-order field. Forces are velocity independent here, so all terms
    are available in closed form from the metric and its derivatives.
    """
    g, mu = spec.metric, spec.mu
    q = np.asarray(q, float)
    v = np.zeros(q.size) if v is None else np.asarray(v, float)
    G = christoffel(g, q)
    dG = christoffel_d1(g, q)
    ginv, dginv = g.inverse(q), g.inverse_d1(q)
    Q, dQ = mu.value(q), mu.jacobian(q)
    f = -np.einsum("abc,b,c->a", G, v, v) + ginv @ Q
    df_dq = (-np.einsum("dabc,b,c->ad", dG, v, v)
             + np.einsum("dab,b->ad", dginv, Q)
             + np.einsum("ab,db->ad", ginv, dQ))
    conn = np.einsum("abc,c->ab", G, v)
    along = np.einsum("d,dabc,c->ab", v, dG, v) + np.einsum("c,abc->ab", f, G)
    return -df_dq - conn @ conn - along


def invariant_distribution_check(phis, K) -> float:
    """Max distance of ``Phi k`` from span(K) over samples and basis vectors."""
    K = np.atleast_2d(np.asarray(K, float))
    Qb, _ = np.linalg.qr(K.T)
    worst = 0.0
    for phi in phis:
        for k in K:
            w = np.asarray(phi) @ k
            worst = max(worst, float(np.abs(w - Qb @ (Qb.T @ w)).max()))
    return worst


def k_eigenspaces(phi, tol: float = 1e-9) -> list:
    """Eigen-decomposition of a constant Phi as candidate invariant distributions."""
    w, V = np.linalg.eig(np.asarray(phi, float))
    out = []
    for lam, vec in zip(w, V.T):
        if abs(lam.imag) < tol and np.all(np.abs(vec.imag) < tol):
            vec = vec.real / vec.real[np.argmax(np.abs(vec.real))]  # largest entry = +1
            out.append((float(lam.real), vec))
    return sorted(out, key=lambda item: item[0])


# ---------------------------------------------------------------------------
# driven structure


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool
    comparison: str = "<="
    method: str = "numeric"


@dataclass
class StructureReport:
    checks: list
    phi_samples: list
    witness: dict | None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c.name for c in self.checks if not c.passed]

    def require(self):
        if not self.passed:
            raise StructureError("driven-structure check failed: " + ", ".join(self.failures()))


def _structural_free(exprs, names) -> bool:
    used = set()
    for e in exprs:
        used |= free_names(e)
    return not (used & set(names))


def _velocity_samples(spec, count):
    rng = np.random.default_rng(spec.seed + 1)
    return rng.normal(size=(count, spec.N))


def verify_driven_structure(spec: SystemSpec, points=None, tol: float = 1e-9) -> StructureReport:
    """Adapted-coordinate checks that make the system a driven one.

    1. driving equations ignore (x, xdot);
    2. metric is block diagonal with g1(y) and g2(x);
    3. driven forces derive from a potential in x;
    4. some point shows genuine coupling dQ_a/dy^i != 0.
    The Jacobi endomorphism is sampled and ``Phi(K) in K`` checked for
    ``K = span(d/dx)``.
    """
    points = spec.sample(100) if points is None else np.asarray(points, float)
    m, N = spec.m, spec.N
    x_names, y_names = spec.driven, spec.driving
    vels = _velocity_samples(spec, len(points))
    checks = []

    # 1. driving decoupling
    structural = (_structural_free(spec.mu.exprs[:m], x_names)
                  and _structural_free([spec.metric.exprs[i][j] for i in range(m) for j in range(m)], x_names))
    worst = 0.0
    for q, v in zip(points, vels):
        def f_of(w):
            return sode_force_complex(spec, w[:N], w[N:])[:m]
        d = complex_step_jacobian(f_of, np.concatenate([q, v]))  # [k, i]
        scale = max(1.0, float(np.abs(d).max()))
        worst = max(worst, float(np.abs(np.concatenate([d[m:N], d[N + m:]])).max(initial=0.0)) / scale)
    checks.append(Check("driving equations independent of (x, xdot)", worst, tol, worst <= tol,
                        method="structural" if structural else "numeric"))

    # 2. metric blocks
    g = spec.metric
    worst = 0.0
    for q in points:
        gv, dg = g.value(q), g.d1(q)
        scale = max(1.0, float(np.abs(gv).max()))
        worst = max(worst, float(np.abs(gv[:m, m:]).max(initial=0.0)) / scale,
                    float(np.abs(dg[m:, :m, :m]).max(initial=0.0)) / scale,
                    float(np.abs(dg[:m, m:, m:]).max(initial=0.0)) / scale)
    checks.append(Check("metric blocks g1(y), g2(x), g12 = 0", worst, tol, worst <= tol))

    # 3. d mu (K, K) = 0
    worst = 0.0
    witness, wval = None, 0.0
    for q in points:
        dQ = spec.mu.jacobian(q)  # [c, a]
        blk = dQ[m:, m:]
        scale = max(1.0, float(np.abs(dQ).max()))
        worst = max(worst, float(np.abs(blk - blk.T).max(initial=0.0)) / scale)
        cpl = np.abs(dQ[:m, m:])
        if cpl.size and cpl.max() > wval:
            wval = float(cpl.max())
            i, a = np.unravel_index(int(np.argmax(cpl)), cpl.shape)
            witness = {"point": [float(c) for c in q], "value": float(dQ[i, m + a]),
                       "component": f"dQ_{x_names[a]}/d{y_names[i]}"}
    checks.append(Check("driven forces closed in x (dmu(K,K) = 0)", worst, tol, worst <= tol))

    # 4. coupling witness
    checks.append(Check("driving coupling witness |dQ_a/dy^i|", wval, COUPLING_THRESHOLD,
                        wval > COUPLING_THRESHOLD, comparison=">"))

    # Phi samples and invariance of K = span(d/dx)
    phis = [jacobi_endomorphism(spec, q, v) for q, v in zip(points[:10], vels[:10])]
    kres = max(float(np.abs(phi[:m, m:]).max(initial=0.0)) for phi in phis)
    checks.append(Check("Phi(K) in K for K = span(d/dx)", kres, tol, kres <= tol))
    if not witness:
        witness = None
    return StructureReport(checks, phis, witness)


def sode_force_complex(spec: SystemSpec, q, v):
    """Complex-safe second-order field for complex-step differentiation."""
    g = spec.metric
    gv = g.value(q)
    dg = g.d1(q)
    ginv = np.linalg.inv(gv)
    s = np.einsum("bkc->kbc", dg) + np.einsum("ckb->kbc", dg) - dg
    G = 0.5 * np.einsum("ak,kbc->abc", ginv, s)
    return -np.einsum("abc,b,c->a", G, v, v) + ginv @ spec.mu.value(q)
