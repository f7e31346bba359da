"""Command-line entry point: ``cofactor-lab verify|integrate|separate``.

Exit codes: 0 all checks pass, 1 a check failed, 2 bad input, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import separation as sep
from .cofactor_chain import ChainError, _check_pattern, chain_identity_residuals, mu_bar2
from .dynamics import (NumericAbort, StructureError, integrate, invariant_distribution_check,
                       jacobi_endomorphism, k_eigenspaces, verify_driven_structure)
from .expr_core import ExprError, compile_exprs, diff_expr
from .geometry import GeometryError, dj_mu_closedness, nijenhuis_norm, sckt_residual
from .hamiltonian import (build_family, darboux_residual, involutivity, quasi_ham_residual,
                          raised_cofactor_check)
from .plotting import separation_figures, trajectory_figures
from .report import Report, entry, failed, write_csv
from .specfile import SpecError, load_spec

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_ABORT = 0, 1, 2, 3

# tolerances used in reports
TOL = {
    "structure": 1e-9,
    "sckt": 1e-10,
    "symmetry": 1e-10,
    "nijenhuis": 1e-8,
    "closed": 1e-9,
    "identity": 1e-8,
    "mubar": 1e-7,
    "involution": 1e-8,
    "quasi_ham": 1e-7,
    "darboux": 1e-8,
    "raised": 1e-10,
    "phi_k": 1e-12,
    "drift": 1e-6,
    "eigenform": 1e-6,
    "sigma": 1e-8,
    "eigenform_driving_part": 1e-6,
    "lemma2": 1e-6,
    "tilde_h": 1e-9,
    "certificate": 1e-6,
}


class Refusal(Exception):
    """A command declined to run; maps to exit code 1."""


def worker_count() -> int:
    raw = os.environ.get("COFACTOR_LAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def pmap(fn, items) -> list:
    """Ordered map over ``items``, threaded up to COFACTOR_LAB_THREADS workers."""
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def phase_points(spec, count: int, seed: int | None = None) -> np.ndarray:
    seed = spec.seed if seed is None else seed
    qs = spec.sample(count, seed)
    ps = np.random.default_rng(seed + 2).uniform(-1.0, 1.0, size=qs.shape)
    return np.hstack([qs, ps])


def _vmax(values) -> float:
    return float(np.max(values)) if len(values) else 0.0


# ---------------------------------------------------------------------------
# verify


def _structure_section(rep: Report, spec, points):
    sr = verify_driven_structure(spec, points, tol=TOL["structure"])
    for c in sr.checks:
        rep.add("structure", c.name, entry(c.value, c.tolerance, c.comparison, method=c.method))
    rep.info("structure", "coupling_witness", sr.witness)
    phis = np.array(sr.phi_samples)
    spread = float(np.abs(phis - phis[0]).max()) if len(phis) else 0.0
    rep.info("structure", "phi_sample", phis[0] if len(phis) else None)
    rep.info("structure", "phi_constant", spread <= 1e-12)
    if len(phis) and spread <= 1e-12:
        rep.info("structure", "phi_eigenspaces",
                 [{"eigenvalue": lam, "vector": vec} for lam, vec in k_eigenspaces(phis[0])])
    if spec.K_basis is not None:
        m = spec.m
        K = np.atleast_2d(spec.K_basis)
        res = float(np.abs(K[:, :m]).max(initial=0.0)) / max(1.0, float(np.abs(K).max()))
        rank = np.linalg.matrix_rank(K[:, m:]) if K.shape[1] > m else 0
        ok_rank = rank == spec.n
        rep.add("structure", "K_basis spans d/dx", entry(res if ok_rank else np.inf, TOL["structure"]))
    return sr


def _original_section(rep: Report, spec, points):
    o = spec.original
    if o is None:
        return
    qo = np.array([o.to_original(q, spec.coords) for q in points])
    sk = [sckt_residual(o.metric, o.J, q) for q in qo]
    rep.add("original", "sckt_residual", entry(_vmax([s.residual for s in sk]), TOL["sckt"]))
    rep.add("original", "J_g_symmetry", entry(_vmax([s.symmetry for s in sk]), TOL["symmetry"]))
    phis = [jacobi_endomorphism(o, q) for q in qo[:20]]
    rep.info("original", "coords", o.coords)
    rep.info("original", "phi_sample", phis[0])
    spread = float(np.abs(np.array(phis) - phis[0]).max())
    rep.info("original", "phi_constant", spread <= 1e-12)
    if spread <= 1e-12:
        rep.info("original", "phi_eigenspaces",
                 [{"eigenvalue": lam, "vector": vec} for lam, vec in k_eigenspaces(phis[0])])
    # pushforward of d/dx^a gives the distribution K in original coordinates
    C = compile_exprs([diff_expr(o.point_map[c], x) for c in o.coords for x in spec.driven],
                      spec.coords, spec.params)
    pushed = np.array(C([float(v) for v in points[0]])).reshape(len(o.coords), spec.n).T
    if o.K_basis is not None:
        K = np.atleast_2d(o.K_basis)
        rep.add("original", "Phi(K) in K", entry(invariant_distribution_check(phis, K), TOL["phi_k"]))
        Qb, _ = np.linalg.qr(K.T)
        miss = float(np.abs(pushed.T - Qb @ (Qb.T @ pushed.T)).max())
        rep.add("original", "K matches adapted d/dx", entry(miss, TOL["phi_k"]))
    rep.info("original", "adapted_d_dx", pushed)


def _sckt_section(rep: Report, spec, points):
    sk = pmap(lambda q: sckt_residual(spec.metric, spec.J, q), points)
    rep.add("sckt", "residual", entry(_vmax([s.residual for s in sk]), TOL["sckt"]))
    rep.add("sckt", "J_g_symmetry", entry(_vmax([s.symmetry for s in sk]), TOL["symmetry"]))
    nij = pmap(lambda q: nijenhuis_norm(spec.J, q), points)
    rep.add("sckt", "nijenhuis", entry(_vmax(nij), TOL["nijenhuis"]))
    rep.info("sckt", "alpha_at_base", sckt_residual(spec.metric, spec.J, spec.base_point).alpha)


def _chain_section(rep: Report, spec, points):
    pattern = _check_pattern(spec.J, spec.m, points, tol=np.inf)
    for name, value in pattern.items():
        rep.add("dependence", name, entry(value, TOL["structure"]))
    if not all(v <= TOL["structure"] for v in pattern.values()):
        for sec in ("chain", "integrals"):
            rep.add(sec, "skipped", failed("dependence pattern of J violated; chain not built"))
        return False
    rep.add("chain", "dj_mu_closed", entry(dj_mu_closedness(spec.metric, spec.J, spec.mu, points),
                                           TOL["closed"]))
    chain = spec.chain
    closed = chain.closedness(points)
    for i, v in enumerate(closed, start=1):
        rep.add("chain", f"A({i})mu_closed", entry(v, TOL["closed"]))
    ids = pmap(lambda q: chain_identity_residuals(spec.J.value(q), spec.m), points[:20])
    for key in sorted(ids[0]):
        rep.add("chain", f"identity_{key}", entry(max(d[key] for d in ids), TOL["identity"]))
    mb = []
    for q in points[:20]:
        try:
            mb.append(mu_bar2(spec.split, chain, q, tol=np.inf)[1])
        except ChainError as exc:  # pragma: no cover - tol is infinite
            mb.append(np.inf)
            rep.info("chain", "mubar_error", str(exc))
    rep.add("chain", "modified_force_relation", entry(_vmax(mb), TOL["mubar"]))
    rep.info("chain", "delta_samples", [{"q": q, "delta": chain.at(q).delta} for q in points[:5]])
    rep.info("chain", "W_samples", [{"q": q, "W": chain.potentials(q)} for q in points[:3]])
    return True


def _integrals_section(rep: Report, spec, zs):
    fam = build_family(spec)

    def one(z):
        inv = involutivity(fam, z)
        try:
            dar = darboux_residual(spec.J, z)
        except np.linalg.LinAlgError:
            dar = np.inf  # singular J: no Darboux chart at this point
        return (float(np.abs(inv["J"]).max()), float(np.abs(inv["P2"]).max()),
                quasi_ham_residual(spec, fam, z), dar, raised_cofactor_check(spec, fam, z))

    rows = np.array(pmap(one, zs))
    rep.add("integrals", "involution_J", entry(rows[:, 0].max(), TOL["involution"]))
    rep.add("integrals", "involution_P2", entry(rows[:, 1].max(), TOL["involution"]))
    rep.add("integrals", "quasi_hamiltonian", entry(rows[:, 2].max(), TOL["quasi_ham"]))
    rep.add("integrals", "darboux", entry(rows[:, 3].max(), TOL["darboux"]))
    rep.add("integrals", "A1_is_cofactor", entry(rows[:, 4].max(), TOL["raised"]))
    rep.info("integrals", "involution_matrix_J_first_point", involutivity(fam, zs[0])["J"])
    rep.info("integrals", "H_at_first_point", fam.values(zs[0]))


def verify_report(spec, n_points: int = 100, seed: int | None = None) -> Report:
    points = spec.sample(n_points, seed)
    rep = Report("verify", spec.name, {"points": n_points, "seed": spec.seed if seed is None else seed})
    _structure_section(rep, spec, points)
    _original_section(rep, spec, points)
    _sckt_section(rep, spec, points)
    if _chain_section(rep, spec, points):
        _integrals_section(rep, spec, phase_points(spec, n_points, seed))
    return rep


# ---------------------------------------------------------------------------
# integrate


def trajectory_header(spec) -> list:
    coords = list(spec.coords)
    return (["t"] + coords + [f"p_{c}" for c in coords]
            + [f"H_{i}" for i in range(1, spec.n + 2)])


def integrate_run(spec, control, t_end=None):
    """Returns (summary report, header, rows)."""
    if spec.initial_state is None:
        raise SpecError("initial_state: required for integration")
    fam = build_family(spec)
    t_end = control.t_end if t_end is None else t_end
    rep = Report("integrate", spec.name,
                 {"method": control.method, "dt": control.dt, "rtol": control.rtol,
                  "t_end": t_end, "output_stride": control.output_stride})
    try:
        traj = integrate(spec, spec.initial_state, t_end, control, monitor=fam.values)
        aborted = None
    except NumericAbort as exc:
        traj, aborted = exc.trajectory, str(exc)
    header = trajectory_header(spec)
    rows = [] if t_end == 0 else np.hstack([traj.t[:, None], traj.z, traj.values])
    drift = traj.drift()
    for i, d in enumerate(drift, start=1):
        rep.add("dynamics", f"drift_H_{i}", entry(d, TOL["drift"]))
    rep.info("dynamics", "H_initial", traj.values[0] if traj.values is not None else None)
    rep.info("dynamics", "steps", traj.steps)
    rep.info("dynamics", "records", len(rows))
    rep.info("dynamics", "local_error_estimate", traj.max_error_estimate)
    rep.info("dynamics", "partial", aborted is not None)
    if aborted is not None:
        rep.add("dynamics", "completed", failed(aborted))
    return rep, header, rows, aborted


# ---------------------------------------------------------------------------
# separate


def separation_header(spec) -> list:
    n = spec.n
    return (["t"] + [f"u{a}" for a in range(1, n + 1)] + [f"s{a}" for a in range(1, n + 1)]
            + [f"H_{i}" for i in range(1, n + 1)])


def separate_run(spec, control, probe_grid=(5, 5), n_points: int = 20, seed=None, t_end=None):
    """Returns (report, header, rows); refuses if the driven structure fails."""
    if spec.initial_state is None:
        raise SpecError("initial_state: required for separation")
    points = spec.sample(100, seed)
    sr = verify_driven_structure(spec, points, tol=TOL["structure"])
    if not sr.passed:
        raise Refusal("driven-structure check failed (" + ", ".join(sr.failures())
                      + "); run `cofactor-lab verify` on this spec for the full report")
    fam = build_family(spec)
    t_end = control.t_end if t_end is None else t_end
    rep = Report("separate", spec.name,
                 {"probe_grid": f"{probe_grid[0]}x{probe_grid[1]}", "points": n_points,
                  "seed": spec.seed if seed is None else seed, "method": control.method,
                  "dt": control.dt, "t_end": t_end})
    traj = integrate(spec, spec.initial_state, t_end, control, monitor=fam.values)
    pts = points[:n_points]

    # eigen data
    eig = pmap(lambda q: sep.eigenfunctions(spec, q), pts)
    rep.add("separation", "eigen_det_crosscheck", entry(_vmax([e.det_residual for e in eig]),
                                                        TOL["sigma"]))
    drive = _vmax([sep.driving_eigenform_residual(spec, e) for e in eig])
    rep.add("separation", "eigenform_driving_part", entry(drive, TOL["eigenform_driving_part"]))
    rep.add("separation", "sigma_identity", entry(_vmax([sep.sigma_residual(spec, q) for q in pts]),
                                                  TOL["sigma"]))
    u_field = lambda q: sep.eigenvalues(spec, q)  # noqa: E731
    rep.add("separation", "eigenform", entry(_vmax([sep.eigenform_residual(spec, u_field, q)
                                                    for q in pts]), TOL["eigenform"]))
    q0 = spec.initial_state[:spec.N]
    rep.info("separation", "u_at_initial", sep.eigenvalues(spec, q0))

    # momenta and the transformed driven Hamiltonian
    rng = np.random.default_rng((spec.seed if seed is None else seed) + 3)
    pts_l = pts[:10]
    pts_t = rng.uniform(-1.0, 1.0, size=pts_l.shape)
    l2 = [sep.lemma2_residual(spec, fam, q, pt) for q, pt in zip(pts_l, pts_t)]
    rep.add("separation", "lemma2", entry(_vmax(l2), TOL["lemma2"]))
    th = []
    for q, pt in zip(pts_l, pts_t):
        a, b = sep.tilde_h(spec, q, pt), sep.tilde_h_direct(spec, q, pt)
        th.append(abs(a - b) / max(1.0, abs(b)))
    rep.add("separation", "tilde_h_termwise_vs_direct", entry(_vmax(th), TOL["tilde_h"]))

    # certificates
    ti = sep.time_independence_certificate(spec, fam, traj, grid=probe_grid, tol=TOL["certificate"])
    cert = rep.section("separation").setdefault("time_independence", {})
    for i, d in enumerate(ti.drift, start=1):
        cert[f"H_{i}"] = entry(d, ti.tolerance * ti.scale)
    cert["skipped_probes"] = entry(ti.skipped, 0)
    cert["info"] = {"scale": ti.scale, "times": ti.times, "probes": ti.probes,
                    "grid": list(ti.grid), "skipped": ti.skipped_points}
    worst, scale = sep.w_invariance(spec, traj)
    for i, w in enumerate(worst, start=1):
        rep.add("separation", f"W_invariance_{i}", entry(w, TOL["certificate"] * scale))
    st = sep.stackel_certificate(spec, pts)
    stk = rep.section("separation").setdefault("stackel", {})
    for key, (value, tol) in st.checks.items():
        stk[key] = entry(value, tol)

    # (u, s) trajectory
    rows = sep.us_trajectory(spec, fam, traj)
    H = rows[:, 1 + 2 * spec.n:]
    h0 = H[0]
    scale = np.where(np.abs(h0) > 1e-8, np.abs(h0), 1.0)
    dev = (np.abs(H - h0).max(axis=0) / scale) if len(H) else np.zeros(spec.n)
    for i, d in enumerate(dev, start=1):
        rep.add("separation", f"H_{i}_constant_along_us", entry(d, TOL["drift"]))
    if t_end == 0:
        rows = rows[:0]
    return rep, separation_header(spec), rows


# ---------------------------------------------------------------------------
# argument handling


def _grid(text: str):
    try:
        r, c = text.lower().split("x")
        r, c = int(r), int(c)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected RxC, got {text!r}") from None
    if r < 1 or c < 1:
        raise argparse.ArgumentTypeError("grid sizes must be positive")
    return (r, c)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cofactor-lab",
                                 description="Verify and analyse driven cofactor systems.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("verify", "integrate", "separate"):
        p = sub.add_parser(name)
        p.add_argument("spec", help="spec JSON path, or fixture:NAME for a bundled example")
        p.add_argument("--out", help="output path (report or CSV, see README)")
        p.add_argument("--seed", type=int, help="override the sampling seed")
        p.add_argument("--points", type=int, help="number of sample points")
        step = p.add_mutually_exclusive_group()
        step.add_argument("--dt", type=float, help="fixed RK4 step")
        step.add_argument("--rtol", type=float, help="switch to adaptive RK45 with this rtol")
        p.add_argument("--method", choices=["rk4", "rk45"])
        p.add_argument("--t-end", type=float, dest="t_end")
        p.add_argument("--probe-grid", type=_grid, default=(5, 5), dest="probe_grid",
                       help="probe grid RxC for the time-independence certificate")
        p.add_argument("--figures", action="store_true",
                       help="also write PNG figures next to the CSV output")
    return ap


def _control(spec, args):
    c = dataclasses.replace(spec.integration)
    if args.method:
        c.method = args.method
    if args.dt is not None:
        if args.dt <= 0:
            raise SpecError("--dt must be positive")
        c.dt = args.dt
    if args.rtol is not None:
        if args.rtol <= 0:
            raise SpecError("--rtol must be positive")
        c.rtol, c.method = args.rtol, "rk45"
    if args.t_end is not None:
        if args.t_end < 0:
            raise SpecError("--t-end must be non-negative")
        c.t_end = args.t_end
    return c


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _status(rep: Report) -> int:
    if rep.passed:
        return EXIT_OK
    print("failed checks: " + "; ".join(rep.failures()), file=sys.stderr)
    return EXIT_FAIL


def _run(args) -> int:
    spec = load_spec(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    if args.points is not None and args.points < 1:
        raise SpecError("--points must be positive")
    control = _control(spec, args)

    if args.command == "verify":
        rep = verify_report(spec, args.points or 100)
        _emit(rep.to_json(), args.out)
        return _status(rep)

    if args.command == "integrate":
        rep, header, rows, aborted = integrate_run(spec, control)
        csv = Path(args.out or f"{spec.name}_trajectory.csv")
        write_csv(csv, header, rows)
        rep.meta["csv"] = csv.name
        summary = csv.with_name(csv.stem + "_summary.json")
        text = rep.to_json()
        summary.write_text(text)
        sys.stdout.write(text)
        if args.figures:
            trajectory_figures(csv.with_suffix(""), header, rows, spec.N, spec.n + 1)
        if aborted is not None:
            print(f"numeric abort: {aborted}; partial CSV written to {csv}", file=sys.stderr)
            return EXIT_ABORT
        return _status(rep)

    rep, header, rows = separate_run(spec, control, args.probe_grid, args.points or 20)
    stem = Path(args.out).with_suffix("") if args.out else Path(f"{spec.name}_separation")
    csv = stem.with_name(stem.name + "_us.csv")
    write_csv(csv, header, rows)
    rep.meta["csv"] = csv.name
    _emit(rep.to_json(), args.out)
    if args.figures:
        separation_figures(csv.with_suffix(""), header, rows, spec.n)
    return _status(rep)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        code = _run(args)
    except (SpecError, ExprError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericAbort, sep.RepeatedEigenvalueError, np.linalg.LinAlgError) as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except Refusal as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (StructureError, GeometryError) as exc:
        print(f"check failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
