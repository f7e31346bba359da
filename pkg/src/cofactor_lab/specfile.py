"""Loading system descriptions from JSON.

A document describes the system in adapted coordinates directly, or gives an
``original`` block (coordinates, metric, J, forces) together with the map
from adapted to original coordinates; the loader then pulls everything back
symbolically.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .dynamics import IntegrationControl, OriginalSystem, SystemSpec
from .expr_core import (ExprError, add, as_expr, const, diff_expr, mul, neg, parse_expr, substitute,
                        to_string)
from .geometry import MetricField, OneFormField, TensorField11

_expr = {"type": ["string", "number"]}
_vec = {"type": "array", "items": {"type": "number"}}
_matrix = {"type": "array", "items": {"type": "array", "items": _expr}}

SCHEMA = {
    "type": "object",
    "required": ["dims", "coords"],
    "properties": {
        "name": {"type": "string"},
        "dims": {"type": "object", "required": ["m", "n"],
                 "properties": {"m": {"type": "integer", "minimum": 1},
                                "n": {"type": "integer", "minimum": 1}},
                 "additionalProperties": False},
        "coords": {"type": "array", "items": {"type": "string", "pattern": "^[A-Za-z_][A-Za-z0-9_]*$"}},
        "params": {"type": "object", "additionalProperties": {"type": "number"}},
        "metric": _matrix,
        "covariant_J": {"type": "boolean"},
        "J": _matrix,
        "forces": {"type": "array", "items": _expr},
        "potential": _expr,
        "driving_forces": {"type": "array", "items": _expr},
        "base_point": _vec,
        "waypoints": {"type": "array", "items": _vec},
        "sample_box": {"type": "object", "required": ["lo", "hi"],
                       "properties": {"lo": _vec, "hi": _vec}},
        "seed": {"type": "integer"},
        "integration": {
            "type": "object",
            "properties": {"method": {"enum": ["rk4", "rk45", "RK4", "RK45"]},
                           "dt": {"type": "number", "exclusiveMinimum": 0},
                           "rtol": {"type": "number", "exclusiveMinimum": 0},
                           "t_end": {"type": "number", "minimum": 0},
                           "output_stride": {"type": "integer", "minimum": 1}},
            "additionalProperties": False,
        },
        "initial_state": _vec,
        "K_basis": {"type": "array", "items": _vec},
        "original": {
            "type": "object",
            "required": ["coords", "map", "metric", "J"],
            "properties": {
                "coords": {"type": "array", "items": {"type": "string"}},
                "map": {"type": "object", "additionalProperties": _expr},
                "metric": _matrix,
                "J": _matrix,
                "covariant_J": {"type": "boolean"},
                "forces": {"type": "array", "items": _expr},
                "K_basis": {"type": "array", "items": _vec},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


class SpecError(ValueError):
    """Invalid system description; the message carries the location."""


def _parse(value, where: str):
    try:
        return as_expr(value) if not isinstance(value, str) else parse_expr(value)
    except ExprError as exc:
        raise SpecError(f"{where}: {exc}") from None


def _parse_matrix(rows, where: str, size: int):
    if len(rows) != size or any(len(r) != size for r in rows):
        raise SpecError(f"{where}: expected a {size}x{size} matrix")
    return [[_parse(v, f"{where}[{i}][{j}]") for j, v in enumerate(r)] for i, r in enumerate(rows)]


def _parse_vector(vals, where: str, size: int):
    if len(vals) != size:
        raise SpecError(f"{where}: expected {size} entries, got {len(vals)}")
    return [_parse(v, f"{where}[{i}]") for i, v in enumerate(vals)]


def _check_names(exprs, allowed, where):
    from .expr_core import free_names

    for e in exprs:
        extra = free_names(e) - set(allowed)
        if extra:
            raise SpecError(f"{where}: unknown names {sorted(extra)} in {to_string(e)!r}")


def _matmul_T(C, M):
    """Symbolic C^T M C for expression matrices."""
    N, K = len(C), len(C[0])
    out = []
    for i in range(K):
        row = []
        for j in range(K):
            acc = const(0.0)
            for a in range(N):
                for b in range(N):
                    acc = add(acc, mul(mul(C[a][i], M[a][b]), C[b][j]))
            row.append(acc)
        out.append(row)
    return out


def _matmul(A, B):
    N = len(A)
    out = []
    for i in range(N):
        row = []
        for j in range(len(B[0])):
            acc = const(0.0)
            for k in range(len(B)):
                acc = add(acc, mul(A[i][k], B[k][j]))
            row.append(acc)
        out.append(row)
    return out


def _pullback(doc, coords, params):
    orig = doc["original"]
    ocoords = list(orig["coords"])
    N = len(coords)
    if len(ocoords) != N:
        raise SpecError("original.coords: dimension differs from coords")
    if set(orig["map"]) != set(ocoords):
        raise SpecError("original.map: must give every original coordinate")
    qmap = {c: _parse(orig["map"][c], f"original.map.{c}") for c in ocoords}
    _check_names(qmap.values(), list(coords) + list(params), "original.map")
    allowed = ocoords + list(params)
    g = _parse_matrix(orig["metric"], "original.metric", N)
    J = _parse_matrix(orig["J"], "original.J", N)
    _check_names([e for r in g + J for e in r], allowed, "original")
    cov = bool(orig.get("covariant_J", False))
    if "forces" not in orig:
        raise SpecError("original.forces: required with an original block")
    Q = _parse_vector(orig["forces"], "original.forces", N)
    _check_names(Q, allowed, "original.forces")
    metric_o = MetricField(g, ocoords, params)
    J_o = TensorField11(J, ocoords, params, metric=metric_o, covariant=cov)
    mu_o = OneFormField(Q, ocoords, params)
    Jcov = J if cov else _matmul(g, J)

    def sub(e):
        return substitute(e, qmap)

    C = [[diff_expr(qmap[a], c) for c in coords] for a in ocoords]
    g_new = _matmul_T(C, [[sub(e) for e in r] for r in g])
    J_new = _matmul_T(C, [[sub(e) for e in r] for r in Jcov])
    Qs = [sub(e) for e in Q]
    Q_new = []
    for i in range(N):
        acc = const(0.0)
        for a in range(N):
            acc = add(acc, mul(C[a][i], Qs[a]))
        Q_new.append(acc)
    K = orig.get("K_basis")
    original = OriginalSystem(ocoords, metric_o, J_o, mu_o, qmap,
                              None if K is None else np.array(K, float))
    return g_new, J_new, True, Q_new, original


def load_spec_dict(doc: dict, source: str = "<spec>") -> SystemSpec:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SpecError(f"{source}: schema error at {loc}: {exc.message}") from None
    m, n = doc["dims"]["m"], doc["dims"]["n"]
    coords = list(doc["coords"])
    N = m + n
    if len(coords) != N:
        raise SpecError(f"coords: expected m + n = {N} names, got {len(coords)}")
    if len(set(coords)) != N:
        raise SpecError("coords: names must be unique")
    params = {k: float(v) for k, v in doc.get("params", {}).items()}
    clash = set(params) & set(coords)
    if clash:
        raise SpecError(f"params: names {sorted(clash)} are also coordinates")
    allowed = coords + list(params)

    original = None
    if "original" in doc:
        g, J, cov, Q, original = _pullback(doc, coords, params)
        potential = None
    else:
        for key in ("metric", "J"):
            if key not in doc:
                raise SpecError(f"{key}: required (or give an original block)")
        g = _parse_matrix(doc["metric"], "metric", N)
        J = _parse_matrix(doc["J"], "J", N)
        _check_names([e for r in g + J for e in r], allowed, "metric/J")
        cov = bool(doc.get("covariant_J", False))
        potential = None
        if "potential" in doc:
            potential = _parse(doc["potential"], "potential")
            _check_names([potential], allowed, "potential")
        if "forces" in doc:
            Q = _parse_vector(doc["forces"], "forces", N)
        elif potential is not None and "driving_forces" in doc:
            Qd = _parse_vector(doc["driving_forces"], "driving_forces", m)
            Q = Qd + [neg(diff_expr(potential, x)) for x in coords[m:]]
        else:
            raise SpecError("forces: give 'forces' or 'potential' with 'driving_forces'")
        _check_names(Q, allowed, "forces")

    metric = MetricField(g, coords, params)
    Jf = TensorField11(J, coords, params, metric=metric, covariant=cov)
    mu = OneFormField(Q, coords, params)

    def vec(key, size, default=None):
        if key not in doc:
            return default
        v = np.array(doc[key], float)
        if v.shape != (size,):
            raise SpecError(f"{key}: expected {size} values")
        return v

    box = doc.get("sample_box")
    lo = hi = None
    if box is not None:
        lo, hi = np.array(box["lo"], float), np.array(box["hi"], float)
        if lo.shape != (N,) or hi.shape != (N,) or np.any(hi <= lo):
            raise SpecError("sample_box: lo/hi must have N entries with lo < hi")
    wp = doc.get("waypoints")
    if wp is not None and any(len(w) != N for w in wp):
        raise SpecError("waypoints: every waypoint needs N values")
    integ = IntegrationControl(**{k: v for k, v in doc.get("integration", {}).items()})
    integ.method = integ.method.lower()
    K = doc.get("K_basis")
    spec = SystemSpec(
        m=m, n=n, coords=coords, params=params, metric=metric, J=Jf, mu=mu,
        potential=potential, base_point=vec("base_point", N), box_lo=lo, box_hi=hi,
        seed=int(doc.get("seed", 0)), waypoints=wp, integration=integ,
        initial_state=vec("initial_state", 2 * N), K_basis=None if K is None else np.array(K, float),
        original=original, name=doc.get("name", Path(source).stem),
    )
    _check_potential(spec)
    return spec


def _check_potential(spec: SystemSpec, tol: float = 1e-9):
    """If both forces and V are known, -dV/dx must reproduce Q_x."""
    if spec.potential is None:
        return
    dV = [diff_expr(spec.potential, x) for x in spec.driven]
    from .expr_core import compile_exprs

    fn = compile_exprs(dV, spec.coords, spec.params)
    for q in spec.sample(10):
        lhs = -np.array(fn(list(q)))
        rhs = spec.mu.value(q)[spec.m:]
        if np.abs(lhs - rhs).max() > tol * max(1.0, np.abs(rhs).max()):
            raise SpecError("potential: -dV/dx does not match the driven forces")


def fixture_path(name: str) -> Path:
    root = resources.files("cofactor_lab") / "fixtures"
    path = Path(str(root / (name if name.endswith(".json") else name + ".json")))
    if not path.exists():
        raise SpecError(f"no bundled fixture named {name!r}")
    return path


def resolve_path(path: str) -> Path:
    """A file path, or ``fixture:NAME`` for a bundled fixture."""
    if path.startswith("fixture:"):
        return fixture_path(path.split(":", 1)[1])
    return Path(path)


def load_spec(path) -> SystemSpec:
    p = resolve_path(str(path))
    try:
        text = p.read_text()
    except OSError as exc:
        raise SpecError(f"{p}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{p}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return load_spec_dict(doc, str(p))


def load_fixture(name: str) -> SystemSpec:
    return load_spec(fixture_path(name))
