"""Sample CSV files, JSON documents, atomic writes and run manifests.

Sample CSV: a header row, columns ``x0 .. x{d-1}``, optionally ``y`` (0/1)
and ``domain`` (source/target). Rows and columns in error messages are
1-based and count the header as row 1.
"""

import csv
import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from shift_audit import __version__
from shift_audit.densities import SampleSet

SCHEMA = "shift-audit/1"


class ParseError(ValueError):
    def __init__(self, path, row, column, message):
        self.row, self.column = row, column
        super().__init__(f"{path}: row {row}, column {column}: {message}")


class DimensionMismatch(ValueError):
    pass


def _header(path, names):
    xs = [n for n in names if n.startswith("x")]
    expected = [f"x{i}" for i in range(len(xs))]
    if not xs or xs != expected or names[: len(xs)] != expected:
        raise ParseError(path, 1, 1, "header must start with x0, x1, ... x{d-1}")
    for j, n in enumerate(names[len(xs):], start=len(xs) + 1):
        if n not in ("y", "domain") or names.count(n) > 1:
            raise ParseError(path, 1, j, f"unexpected column {n!r}")
    return len(xs)


def read_samples(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(path, 1, 1, "empty file")
    names = [n.strip() for n in rows[0]]
    d = _header(path, names)
    y_col = names.index("y") if "y" in names else None
    dom_col = names.index("domain") if "domain" in names else None
    points, labels, domains = [], [], set()
    for r, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(names):
            raise ParseError(path, r, min(len(row), len(names)) + 1, f"expected {len(names)} fields, got {len(row)}")
        pt = []
        for c in range(d):
            try:
                v = float(row[c])
            except ValueError:
                raise ParseError(path, r, c + 1, f"not a number: {row[c]!r}") from None
            if not math.isfinite(v):
                raise ParseError(path, r, c + 1, "value must be finite")
            pt.append(v)
        points.append(pt)
        if y_col is not None:
            if row[y_col].strip() not in ("0", "1"):
                raise ParseError(path, r, y_col + 1, f"label must be 0 or 1, got {row[y_col]!r}")
            labels.append(int(row[y_col]))
        if dom_col is not None:
            dom = row[dom_col].strip()
            if dom not in ("source", "target"):
                raise ParseError(path, r, dom_col + 1, f"domain must be source or target, got {dom!r}")
            domains.add(dom)
    if not points:
        raise ParseError(path, 2, 1, "no sample rows")
    if len(domains) > 1:
        raise ParseError(path, 2, dom_col + 1, "a file may hold one domain only")
    return SampleSet(
        np.array(points, dtype=float),
        np.array(labels) if y_col is not None else None,
        domains.pop() if domains else None,
    )


def samples_csv(samples):
    names = [f"x{i}" for i in range(samples.dim)]
    if samples.labeled:
        names.append("y")
    if samples.domain:
        names.append("domain")
    lines = [",".join(names)]
    for i in range(samples.n):
        row = [repr(float(v)) for v in samples.points[i]]
        if samples.labeled:
            row.append(str(int(samples.labels[i])))
        if samples.domain:
            row.append(samples.domain)
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def require_same_dim(a, b):
    if a.dim != b.dim:
        raise DimensionMismatch(f"dimension mismatch: {a.dim} columns vs {b.dim} columns")


def atomic_write(path, text):
    """Write via a temporary file in the same directory, then rename."""
    path = os.path.abspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def dumps(doc):
    return json.dumps(_plain({"schema": SCHEMA, **doc}), indent=2, sort_keys=True) + "\n"


def write_json(path, doc):
    atomic_write(path, dumps(doc))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as e:
            raise ParseError(path, e.lineno, e.colno, e.msg) from None


def digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    inputs: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    version: str = __version__

    @classmethod
    def for_inputs(cls, command, paths, config):
        return cls(command, {str(p): digest(p) for p in paths if p}, dict(config))

    def verify(self):
        """True when every input file still hashes to its recorded digest."""
        return all(os.path.exists(p) and digest(p) == d for p, d in self.inputs.items())

    def to_dict(self):
        return {"command": self.command, "inputs": self.inputs, "config": self.config,
                "version": self.version}

    @classmethod
    def from_dict(cls, d):
        return cls(d["command"], d.get("inputs", {}), d.get("config", {}), d.get("version", __version__))
