"""Reduction of the driven subsystem to separable form.

Steps, all pointwise along a known driving solution ``(y(t), pt_y(t))``:

* eigenfunctions ``u^a(y, x)`` of ``Jbar`` (a symmetric pencil w.r.t. ``g2``);
* new momenta ``pt``: ``p_y = J1^T pt_y`` and ``p_x = pt_x + J12^T pt_y``;
* potentials ``psi^i`` with ``J^i_a = d psi^i / dx^a`` (gauge: zero at the base x);
* the transformed driven Hamiltonian ``ht = h + dPsi/dt``;
* the chart ``(u, s)`` with ``pt_x = (du/dx)^T s``.

Certificates check that the integrals become time independent in ``(u, s)``
and that ``Jbar`` with the modified forces forms a separable system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment

from .cofactor_chain import ChainError, jbar_from_matrix, reconstruct_potential
from .dynamics import PhaseField, SystemSpec, Trajectory
from .geometry import christoffel, cofactor, complex_step_jacobian
from .hamiltonian import IntegralFamily

EIG_GAP_TOL = 1e-8
FD_STEP = 1e-5


class RepeatedEigenvalueError(ChainError):
    pass


class ChartError(ChainError):
    pass


# ---------------------------------------------------------------------------
# eigenfunctions


def _jbar(spec: SystemSpec, q):
    return jbar_from_matrix(spec.J.value(q), spec.m)


def eigenvalues(spec: SystemSpec, q, gap_tol: float = EIG_GAP_TOL) -> np.ndarray:
    """Ascending eigenvalues of Jbar at ``q`` from the pencil (g2 Jbar, g2)."""
    q = np.asarray(q, float)
    m = spec.m
    g2 = spec.metric.value(q)[m:, m:]
    S = g2 @ _jbar(spec, q)
    scale = max(1.0, float(np.abs(S).max()))
    asym = float(np.abs(S - S.T).max()) / scale
    if asym > 1e-9:
        raise ChainError(f"Jbar is not g2-symmetric at q={list(q)} (defect {asym:.3e})")
    u = scipy.linalg.eigh(0.5 * (S + S.T), g2, eigvals_only=True)
    if u.size > 1:
        gap = float(np.diff(u).min())
        if gap < gap_tol * max(1.0, float(np.abs(u).max())):
            raise RepeatedEigenvalueError(f"repeated eigenvalue of Jbar at q={list(q)} (gap {gap:.3e})")
    return u


@dataclass
class EigenData:
    q: np.ndarray
    u: np.ndarray
    du: np.ndarray  # [a, k] = du^a / dq^k
    m: int
    det_residual: float = 0.0

    @property
    def jac(self) -> np.ndarray:
        """du^a / dx^b."""
        return self.du[:, self.m:]

    @property
    def jac_cond(self) -> float:
        return float(np.linalg.cond(self.jac))


def fd_gradient(fn, q, step: float = FD_STEP) -> np.ndarray:
    """Central differences of a vector function, step ``step (1 + |q_k|)``; shape [a, k]."""
    q = np.asarray(q, float)
    cols = []
    for k in range(q.size):
        h = step * (1.0 + abs(q[k]))
        e = np.zeros_like(q)
        e[k] = h
        cols.append((np.asarray(fn(q + e)) - np.asarray(fn(q - e))) / (2 * h))
    return np.array(cols).T


def eigenfunctions(spec: SystemSpec, q) -> EigenData:
    q = np.asarray(q, float)
    u = eigenvalues(spec, q)
    du = fd_gradient(lambda z: eigenvalues(spec, z), q)
    Jv = spec.J.value(q)
    P2 = np.zeros_like(Jv)
    P2[spec.m:, spec.m:] = np.eye(spec.n)
    scale = max(1.0, float(np.abs(Jv).max()), float(np.abs(u).max())) ** spec.N
    det_res = max(abs(np.linalg.det(Jv - lam * P2)) for lam in u) / scale
    if det_res > 1e-8:
        raise ChainError(f"det(J - u P2) check failed at q={list(q)} (residual {det_res:.3e})")
    return EigenData(q, u, du, spec.m, det_res)


def eigenform_residual(spec: SystemSpec, u_field, q) -> float:
    """max_a |(J - u^a P2) du^a| with du^a from central differences of ``u_field``."""
    q = np.asarray(q, float)
    u = np.asarray(u_field(q))
    du = fd_gradient(u_field, q)
    Jv = spec.J.value(q)
    P2 = np.zeros_like(Jv)
    P2[spec.m:, spec.m:] = np.eye(spec.n)
    worst = 0.0
    for a in range(u.size):
        worst = max(worst, float(np.abs((Jv - u[a] * P2).T @ du[a]).max()))
    return worst


def driving_eigenform_residual(spec: SystemSpec, eig: EigenData) -> float:
    """max |J^k_j du^a/dy^k + J^b_j du^a/dx^b| (the driving part of J^T du^a)."""
    Jv = spec.J.value(eig.q)
    return max(float(np.abs((Jv.T @ d)[:spec.m]).max()) for d in eig.du)


def sigma_residual(spec: SystemSpec, q) -> float:
    """Relative mismatch of Delta_(i+1) = det(J1) sigma_(n-i)(u), i = 0..n."""
    q = np.asarray(q, float)
    u = eigenvalues(spec, q)
    n = spec.n
    coeffs = np.poly(u)  # prod(lam - u) = sum_k (-1)^k sigma_k lam^(n-k)
    sigma = np.array([(-1) ** k * coeffs[k] for k in range(n + 1)])
    det1 = np.linalg.det(spec.J.value(q)[:spec.m, :spec.m])
    delta = spec.chain.at(q).delta
    pred = np.array([det1 * sigma[n - i] for i in range(n + 1)])
    return float(np.abs(delta - pred).max()) / max(1.0, float(np.abs(delta).max()))


def match_order(prev, cur) -> np.ndarray:
    """Reorder ``cur`` to the nearest labelling of ``prev``."""
    prev, cur = np.asarray(prev), np.asarray(cur)
    cost = np.abs(prev[:, None] - cur[None, :])
    _, cols = linear_sum_assignment(cost)
    return cur[cols]


# ---------------------------------------------------------------------------
# momenta and generating potentials


def to_tilde(spec: SystemSpec, q, p) -> np.ndarray:
    m = spec.m
    Jv = spec.J.value(np.asarray(q, float))
    J1, J12 = Jv[:m, :m], Jv[:m, m:]
    pt_y = np.linalg.solve(J1.T, np.asarray(p)[:m])
    pt_x = np.asarray(p)[m:] - J12.T @ pt_y
    return np.concatenate([pt_y, pt_x])


def from_tilde(spec: SystemSpec, q, pt) -> np.ndarray:
    m = spec.m
    Jv = spec.J.value(np.asarray(q, float))
    J1, J12 = Jv[:m, :m], Jv[:m, m:]
    pt = np.asarray(pt, float)
    return np.concatenate([J1.T @ pt[:m], pt[m:] + J12.T @ pt[:m]])


def _x_segment_integral(spec: SystemSpec, q, integrand, count: int, check_closed: bool):
    """Integrate a stack of x-covectors from (y, x_base) to (y, x) at fixed y."""
    q = np.asarray(q, float)
    m = spec.m
    y = q[:m]
    xb = spec.base_point[m:]

    def omega(xs):
        full = np.concatenate([y.astype(xs.dtype), xs])
        return integrand(full)

    if count == 0:
        return np.zeros(0)
    return reconstruct_potential(omega, xb, q[m:], check_closed=check_closed, closed_tol=1e-9)


def psi_potentials(spec: SystemSpec, q, check_closed: bool = True) -> np.ndarray:
    """psi^i(y, x) with d psi^i/dx^a = J^i_a and psi^i(y, x_base) = 0."""
    m = spec.m
    return _x_segment_integral(spec, q, lambda z: spec.J.value(z)[:m, m:], m, check_closed)


def psi_y_derivatives(spec: SystemSpec, q) -> np.ndarray:
    """d psi^i / dy^k as [i, k], by differentiating under the x-integral."""
    m, n = spec.m, spec.n

    def integrand(z):
        dJ = spec.J.jacobian(z)  # [c, a, b]
        return np.einsum("kia->ika", dJ[:m, :m, m:]).reshape(m * m, n)

    return _x_segment_integral(spec, q, integrand, m, False).reshape(m, m)


def driven_hamiltonian(spec: SystemSpec, q, p) -> float:
    """h = 1/2 g2^{ab} p_a p_b + V(y, x)."""
    m = spec.m
    g2 = spec.metric.value(q)[m:, m:]
    px = np.asarray(p)[m:]
    return 0.5 * px @ np.linalg.solve(g2, px) + spec.driven_potential(q)


def _det1(spec, z):
    m = spec.m
    return np.linalg.det(spec.J.value(z)[:m, :m])


def tilde_h(spec: SystemSpec, q, pt, psi_sign: float = 1.0) -> float:
    """Transformed driven Hamiltonian, assembled term by term.

    ``ht = h + dpsi^i/dy^k J1^{kj} pt_i pt_j + J1^{jl} G^i_{kl} psi^k pt_i pt_j
    - 1/2 J1^{ij}_{|k} psi^k pt_i pt_j - 1/2 (det J1)^-1 d_k(det J1) psi^k J1^{ij} pt_i pt_j
    - (det J1)^-1 psi^k d_k W^1``, with indices raised by ``g1``.
    ``psi_sign = -1`` flips psi (a negative control).
    """
    q, pt = np.asarray(q, float), np.asarray(pt, float)
    m = spec.m
    p = from_tilde(spec, q, pt)
    h = driven_hamiltonian(spec, q, p)
    pty = pt[:m]
    psi = psi_sign * psi_potentials(spec, q, check_closed=False)
    dpsi = psi_sign * psi_y_derivatives(spec, q)

    def j1_up(z):
        gz = spec.metric.value(z)
        return spec.J.value(z)[:m, :m] @ np.linalg.inv(gz[:m, :m])

    Jup = j1_up(q)
    dJup = complex_step_jacobian(j1_up, q)[:m]  # [k, i, j]
    G = christoffel(spec.metric, q)[:m, :m, :m]  # G[i, k, l]
    cov = (dJup + np.einsum("ikl,lj->kij", G, Jup) + np.einsum("jkl,il->kij", G, Jup))
    det1 = _det1(spec, q)
    ddet1 = complex_step_jacobian(lambda z: _det1(spec, z), q)[:m]
    dW1 = spec.chain.w1_form(q)
    out = h
    out += np.einsum("ik,kj,i,j->", dpsi, Jup, pty, pty)
    out += np.einsum("jl,ikl,k,i,j->", Jup, G, psi, pty, pty)
    out -= 0.5 * np.einsum("kij,k,i,j->", cov, psi, pty, pty)
    out -= 0.5 / det1 * (ddet1 @ psi) * (pty @ Jup @ pty)
    out -= (psi @ dW1) / det1
    return float(out)


def tilde_h_direct(spec: SystemSpec, q, pt) -> float:
    """``h + dPsi/dt`` from the driving equations of motion directly."""
    q, pt = np.asarray(q, float), np.asarray(pt, float)
    m = spec.m
    p = from_tilde(spec, q, pt)
    qdot, pdot = PhaseField(spec)(q, p)
    ydot = qdot[:m]
    psi = psi_potentials(spec, q, check_closed=False)
    dpsi = psi_y_derivatives(spec, q)
    dJ = spec.J.jacobian(q)
    J1 = spec.J.value(q)[:m, :m]
    J1dot = np.einsum("k,kij->ij", ydot, dJ[:m, :m, :m])
    # pt_y = J1^-T p_y
    J1Tinv = np.linalg.inv(J1.T)
    ptdot = -J1Tinv @ J1dot.T @ J1Tinv @ p[:m] + J1Tinv @ pdot[:m]
    return float(driven_hamiltonian(spec, q, p) + pt[:m] @ dpsi @ ydot + psi @ ptdot)


def lemma2_rhs(spec: SystemSpec, family: IntegralFamily, q, pt) -> float:
    """(det J1)^-1 H_(n) + J^{ai} pt_a pt_i."""
    q, pt = np.asarray(q, float), np.asarray(pt, float)
    m, n = spec.m, spec.n
    p = from_tilde(spec, q, pt)
    Hn = family.values(np.concatenate([q, p]))[n - 1]
    g = spec.metric.value(q)
    J21 = spec.J.value(q)[m:, :m]
    Jup = J21 @ np.linalg.inv(g[:m, :m])
    return float(Hn / _det1(spec, q) + pt[m:] @ Jup @ pt[:m])


def _fd5(fn, x, k, h):
    e = np.zeros_like(x)
    e[k] = h
    return (-fn(x + 2 * e) + 8 * fn(x + e) - 8 * fn(x - e) + fn(x - 2 * e)) / (12 * h)


def lemma2_residual(spec: SystemSpec, family: IntegralFamily, q, pt,
                    step: float = 1e-3, psi_sign: float = 1.0) -> float:
    """Max mismatch of d/dx and d/dpt_x between ht and its claimed form.

    Both sides are compared through 5-point differences at fixed
    ``(y, pt_y)``, since they agree only up to a function of time.
    """
    q, pt = np.asarray(q, float), np.asarray(pt, float)
    m, n = spec.m, spec.n
    w0 = np.concatenate([q[m:], pt[m:]])

    def pack(w):
        return np.concatenate([q[:m], w[:n]]), np.concatenate([pt[:m], w[n:]])

    def lhs(w):
        return tilde_h(spec, *pack(w), psi_sign=psi_sign)

    def rhs(w):
        return lemma2_rhs(spec, family, *pack(w))

    worst = 0.0
    for k in range(2 * n):
        h = step * (1.0 + abs(w0[k]))
        a, b = _fd5(lhs, w0, k, h), _fd5(rhs, w0, k, h)
        worst = max(worst, abs(a - b) / max(1.0, abs(a), abs(b)))
    return worst


# ---------------------------------------------------------------------------
# (u, s) chart


def to_us(spec: SystemSpec, q, pt):
    eig = eigenfunctions(spec, q)
    jac = eig.jac
    if jac.size and np.linalg.cond(jac) > 1e12:
        raise ChartError(f"du/dx is singular at q={list(q)}")
    s = np.linalg.solve(jac.T, np.asarray(pt, float)[spec.m:])
    return eig.u, s


def solve_x(spec: SystemSpec, y, u_target, x_seed, tol: float = 1e-12, maxiter: int = 50):
    """Damped Newton for u(y, x) = u_target in x."""
    y, x = np.asarray(y, float), np.asarray(x_seed, float).copy()
    u_target = np.asarray(u_target, float)

    def resid(xx):
        return eigenvalues(spec, np.concatenate([y, xx])) - u_target

    r = resid(x)
    scale = 1.0 + float(np.abs(u_target).max())
    for _ in range(maxiter):
        if np.abs(r).max() <= tol * scale:
            return x
        jac = fd_gradient(lambda z: eigenvalues(spec, z), np.concatenate([y, x]))[:, spec.m:]
        try:
            dx = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            raise ChartError("singular Jacobian in chart inversion") from None
        lam = 1.0
        while lam > 1e-4:
            try:
                r_new = resid(x + lam * dx)
            except ChainError:
                r_new = None
            if r_new is not None and np.abs(r_new).max() < np.abs(r).max():
                break
            lam *= 0.5
        else:
            raise ChartError("Newton line search failed in chart inversion")
        x, r = x + lam * dx, r_new
    if np.abs(r).max() <= tol * scale:
        return x
    raise ChartError(f"Newton did not converge (residual {np.abs(r).max():.3e})")


def from_us(spec: SystemSpec, y, u, s, x_seed):
    """Inverse chart: returns (x, pt_x)."""
    x = solve_x(spec, y, u, x_seed)
    eig = eigenfunctions(spec, np.concatenate([np.asarray(y, float), x]))
    return x, eig.jac.T @ np.asarray(s, float)


def driving_state(spec: SystemSpec, z):
    """(y, pt_y) of a full phase point."""
    z = np.asarray(z, float)
    N, m = spec.N, spec.m
    q, p = z[:N], z[N:]
    return q[:m], to_tilde(spec, q, p)[:m]


def us_trajectory(spec: SystemSpec, family: IntegralFamily, traj: Trajectory):
    """Columns t, u, s and H_(1..n) along a trajectory (u labels tracked)."""
    N, n = spec.N, spec.n
    rows = []
    prev = None
    for t, z in zip(traj.t, traj.z):
        q, p = z[:N], z[N:]
        pt = to_tilde(spec, q, p)
        u, s = to_us(spec, q, pt)
        if prev is not None and n > 1:
            order = match_order(prev, u)
            if not np.array_equal(order, u):
                raise ChartError(f"eigenvalue labels crossed at t = {t:.6g}")
        prev = u
        H = family.values(z)[:n]
        rows.append(np.concatenate([[t], u, s, H]))
    return np.array(rows)


# ---------------------------------------------------------------------------
# certificates


@dataclass
class TimeIndependence:
    drift: np.ndarray
    scale: float
    tolerance: float
    grid: tuple
    times: list
    probes: int
    skipped: int
    skipped_points: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(np.all(self.drift <= self.tolerance * self.scale)) and self.skipped == 0


def _probe_values(lo, hi, count):
    if count <= 1:
        return [0.5 * (lo + hi)]
    if np.allclose(lo, hi):
        lo, hi = lo - 0.5, hi + 0.5
    return [lo + (hi - lo) * k / (count - 1) for k in range(count)]


def time_independence_certificate(spec: SystemSpec, family: IntegralFamily, traj: Trajectory,
                                  grid=(5, 5), n_times: int = 11, tol: float = 1e-6,
                                  use_tilde: bool = True) -> TimeIndependence:
    """Pull each H_(i) back through the chart at several times and compare.

    The probe grid spans the ``(u, s)`` ranges seen along the trajectory:
    ``grid[0]`` values for u (moved together along the diagonal of the box
    when n > 1) times ``grid[1]`` values for s. At each time ``t_k`` a probe
    is mapped to ``(x, pt_x)`` with the driving state of that time and back
    to the original momenta. ``use_tilde=False`` replaces the momentum map
    by ``p_x = pt_x`` (a negative control).
    """
    N, m = spec.N, spec.m
    chart = us_trajectory(spec, family, traj)
    n = spec.n
    U, S = chart[:, 1:1 + n], chart[:, 1 + n:1 + 2 * n]
    u_vals = _probe_values(U.min(axis=0), U.max(axis=0), grid[0])
    s_vals = _probe_values(S.min(axis=0), S.max(axis=0), grid[1])
    idx = np.unique(np.linspace(0, len(traj.t) - 1, min(n_times, len(traj.t))).astype(int))
    table = {}
    skipped = []
    for k in idx:
        z = traj.z[k]
        y, pty = driving_state(spec, z)
        x_seed = z[m:N]
        for iu, u in enumerate(u_vals):
            try:
                x = solve_x(spec, y, u, x_seed)
                eig = eigenfunctions(spec, np.concatenate([y, x]))
            except ChainError as exc:
                skipped.append({"t": float(traj.t[k]), "u": [float(v) for v in u], "error": str(exc)})
                continue
            q = np.concatenate([y, x])
            for js, s in enumerate(s_vals):
                ptx = eig.jac.T @ s
                if use_tilde:
                    p = from_tilde(spec, q, np.concatenate([pty, ptx]))
                else:
                    p = np.concatenate([traj.z[k][N:N + m], ptx])
                table[(k, iu, js)] = family.values(np.concatenate([q, p]))
    drift = np.zeros(family.count)
    scale = 1.0
    k0 = idx[0]
    for (k, iu, js), val in table.items():
        scale = max(scale, float(np.abs(val).max()))
        ref = table.get((k0, iu, js))
        if ref is not None:
            drift = np.maximum(drift, np.abs(val - ref))
    probes = len(u_vals) * len(s_vals) * len(idx)
    return TimeIndependence(drift, scale, tol, tuple(grid), [float(traj.t[k]) for k in idx],
                            probes, len(skipped) * len(s_vals), skipped)


def w_invariance(spec: SystemSpec, traj: Trajectory, n_probes: int = 5, n_times: int = 11):
    """Variation along the driving motion of W_(i) - (Delta_(i)/det J1) W^1 at fixed u."""
    N, m, n = spec.N, spec.m, spec.n
    U = np.array([eigenvalues(spec, z[:N]) for z in traj.z])
    u_vals = _probe_values(U.min(axis=0), U.max(axis=0), n_probes)
    idx = np.unique(np.linspace(0, len(traj.t) - 1, min(n_times, len(traj.t))).astype(int))
    worst, scale = np.zeros(n), 1.0
    for u in u_vals:
        ref = None
        for k in idx:
            z = traj.z[k]
            x = solve_x(spec, z[:m], u, z[m:N])
            q = np.concatenate([z[:m], x])
            W = spec.chain.potentials(q)
            delta = spec.chain.at(q).delta
            det1 = delta[n]
            val = W[:n] - delta[:n] / det1 * W[n]
            scale = max(scale, float(np.abs(W).max()))
            if ref is None:
                ref = val
            worst = np.maximum(worst, np.abs(val - ref))
    return worst, scale


@dataclass
class StackelReport:
    sckt: float
    alpha_bar: float
    closedness: float
    cofactor_relation: float
    u_metric_offdiag: float
    tolerances: dict

    @property
    def checks(self) -> dict:
        t = self.tolerances
        return {
            "jbar_sckt_for_g2": (self.sckt, t["sckt"]),
            "alpha_bar_matches_d_tr_jbar": (self.alpha_bar, t["sckt"]),
            "cof_jbar_mubar_closed_in_x": (self.closedness, t["closed"]),
            "cof_jbar_mubar_equals_d2W1": (self.cofactor_relation, t["closed"]),
            "g2_diagonal_in_u": (self.u_metric_offdiag, t["diag"]),
        }

    @property
    def passed(self) -> bool:
        return all(v <= tol for v, tol in self.checks.values())

    def failures(self) -> list:
        return [k for k, (v, tol) in self.checks.items() if not v <= tol]


def stackel_certificate(spec: SystemSpec, points, tol_sckt: float = 1e-9,
                        tol_closed: float = 1e-9, tol_diag: float = 1e-7) -> StackelReport:
    """Separability of the driven system read with y as a parameter.

    1. Jbar is a special conformal Killing tensor for g2 with
       ``alpha_bar_c = alpha_c - J_ci (J1^-1)^{ij} alpha_j``;
    2. ``cof(Jbar) mubar`` (``mubar = d2 W_(n)``) is closed in x and equals ``d2 W_(1)``;
    3. the inverse metric pushed to u is diagonal.
    """
    m, n = spec.m, spec.n
    worst = dict(sckt=0.0, abar=0.0, closed=0.0, rel=0.0, diag=0.0)
    for q in np.asarray(points, float):
        y = q[:m]

        def jb(xs):
            return _jbar(spec, np.concatenate([y.astype(xs.dtype), xs]))

        x = q[m:]
        Jb = jb(x)
        dJb = complex_step_jacobian(jb, x)  # [c, a, b]
        g = spec.metric.value(q)
        g1, g2 = g[:m, :m], g[m:, m:]
        g2inv = np.linalg.inv(g2)
        G = christoffel(spec.metric, q)[m:, m:, m:]
        Jv = spec.J.value(q)
        alpha = np.einsum("caa->c", spec.J.jacobian(q))
        J1inv = np.linalg.inv(Jv[:m, :m])
        abar = alpha[m:] - g2 @ Jv[m:, :m] @ J1inv @ np.linalg.solve(g1, alpha[:m])
        abar_tr = np.einsum("caa->c", dJb)
        cov = (np.einsum("cab->abc", dJb) - np.einsum("as,sbc->abc", Jb, G)
               + np.einsum("sb,asc->abc", Jb, G))
        rhs = 0.5 * (np.einsum("b,ac->abc", abar, np.eye(n))
                     + np.einsum("s,sa,bc->abc", abar, g2inv, g2))
        sc = max(1.0, float(np.abs(dJb).max()))
        worst["sckt"] = max(worst["sckt"], float(np.abs(cov - rhs).max()) / sc)
        worst["abar"] = max(worst["abar"], float(np.abs(abar - abar_tr).max()) / sc)

        def cof_mubar(xs):
            qq = np.concatenate([y.astype(xs.dtype), xs])
            forms = spec.chain.forms(qq)
            return cofactor(_jbar(spec, qq)).T @ forms[n - 1][m:], forms[0][m:]

        omega, d2w1 = cof_mubar(x)
        d = complex_step_jacobian(lambda xs: cof_mubar(xs)[0], x)
        sc = max(1.0, float(np.abs(d).max()))
        worst["closed"] = max(worst["closed"], float(np.abs(d - d.T).max()) / sc)
        sc = max(1.0, float(np.abs(d2w1).max()))
        worst["rel"] = max(worst["rel"], float(np.abs(omega - d2w1).max()) / sc)

        eig = eigenfunctions(spec, q)
        Gu = eig.jac @ g2inv @ eig.jac.T
        off = Gu - np.diag(np.diag(Gu))
        worst["diag"] = max(worst["diag"], float(np.abs(off).max(initial=0.0))
                            / max(1.0, float(np.abs(Gu).max())))
    return StackelReport(worst["sckt"], worst["abar"], worst["closed"], worst["rel"], worst["diag"],
                         {"sckt": tol_sckt, "closed": tol_closed, "diag": tol_diag})
