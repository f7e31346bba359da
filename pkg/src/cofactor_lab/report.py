"""Machine-readable reports.

A report is a tree of sections; every numeric leaf that is a check is an
entry ``{value, tolerance, comparison, pass}``. Anything that is only
informative goes in the ``info`` block of its section. The top-level
``pass`` is the conjunction of every entry. Serialization is deterministic:
sorted keys, fixed indentation and no timestamps.
"""

from __future__ import annotations

import json
import math

import numpy as np

_COMPARE = {
    "<=": lambda v, t: v <= t,
    "<": lambda v, t: v < t,
    ">": lambda v, t: v > t,
    ">=": lambda v, t: v >= t,
}


def entry(value, tolerance, comparison: str = "<=", **extra) -> dict:
    """One checked quantity; NaN never passes."""
    v = float(value)
    ok = bool(math.isfinite(v) and _COMPARE[comparison](v, float(tolerance)))
    out = {"value": v, "tolerance": float(tolerance), "comparison": comparison, "pass": ok}
    out.update(extra)
    return out


def failed(message: str) -> dict:
    """An entry for a check that could not be evaluated at all."""
    return {"value": None, "tolerance": None, "comparison": "n/a", "pass": False, "error": message}


def is_entry(node) -> bool:
    return isinstance(node, dict) and "pass" in node and "comparison" in node


class Report:
    """Accumulates sections and renders them as JSON."""

    def __init__(self, command: str, spec_name: str, meta: dict | None = None):
        self.command = command
        self.spec_name = spec_name
        self.meta = dict(meta or {})
        self.sections: dict = {}

    def section(self, name: str) -> dict:
        return self.sections.setdefault(name, {})

    def add(self, section: str, key: str, value):
        self.section(section)[key] = value

    def info(self, section: str, key: str, value):
        self.section(section).setdefault("info", {})[key] = value

    def entries(self):
        """Yield (path, entry) for every checked leaf."""
        def walk(node, path):
            if is_entry(node):
                yield path, node
            elif isinstance(node, dict):
                for k in sorted(node):
                    if k != "info":
                        yield from walk(node[k], path + (k,))
        yield from walk(self.sections, ())

    @property
    def passed(self) -> bool:
        return all(e["pass"] for _, e in self.entries())

    def failures(self) -> list:
        return ["/".join(p) for p, e in self.entries() if not e["pass"]]

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "spec": self.spec_name,
            "meta": self.meta,
            "pass": self.passed,
            "failures": self.failures(),
            "sections": self.sections,
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())


def clean(obj):
    """Convert numpy containers and scalars to plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def dumps(obj) -> str:
    return json.dumps(clean(obj), sort_keys=True, indent=2) + "\n"


def format_row(values) -> str:
    """CSV row with round-trip float formatting."""
    return ",".join(repr(float(v)) for v in values)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(format_row(r) + "\n")
