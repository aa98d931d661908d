"""
Persistence: a small binary container for fields and correctors, plus
deterministic JSON and CSV writers.

Container layout::

    b"GRADHOM\\0"              8-byte magic
    uint32 LE                 format version
    uint64 LE                 header length n
    n bytes                   UTF-8 JSON header (sorted keys)
    raw arrays                little-endian float64, C order, back to back

The header lists every array with its shape, byte offset (relative to the
start of the data block) and sha256 digest; digests are checked on load.
"""

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .cell_solver import CorrectorHS1, CorrectorHS2, PeriodicVectorField
from .errors import ConfigError, GradhomError
from .microstructure import CellGrid, CoefficientField

MAGIC = b"GRADHOM\0"
VERSION = 1

__all__ = [
    "write_container",
    "read_container",
    "save_field",
    "load_field",
    "save_correctors",
    "load_correctors",
    "write_json",
    "canonical_json",
    "sha256_file",
    "write_csv",
    "read_csv",
]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        obj = float(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)  # "inf" / "nan" as strings keep the file valid JSON
    return obj


def canonical_json(obj):
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj):
    Path(path).write_text(canonical_json(obj), encoding="utf-8")


def sha256_bytes(b):
    return hashlib.sha256(b).hexdigest()


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_container(path, kind, meta, arrays):
    """Write named float64 arrays with a JSON header."""
    entries, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        blob = a.tobytes()
        entries.append({"name": name, "shape": list(a.shape), "offset": offset,
                        "nbytes": len(blob), "sha256": sha256_bytes(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(_jsonable({"kind": kind, "meta": meta, "arrays": entries}),
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_container(path, expect_kind=None):
    """Return (kind, meta, arrays); raises ConfigError on malformed files."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ConfigError(f"{path}: not a gradhom container")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != VERSION:
        raise ConfigError(f"{path}: unsupported container version {version}")
    try:
        header = json.loads(raw[20:20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: corrupt header") from exc
    if expect_kind is not None and header["kind"] != expect_kind:
        raise ConfigError(f"{path}: expected a {expect_kind} container, found {header['kind']}")
    base = 20 + hlen
    arrays = {}
    for e in header["arrays"]:
        blob = raw[base + e["offset"]: base + e["offset"] + e["nbytes"]]
        if len(blob) != e["nbytes"] or sha256_bytes(blob) != e["sha256"]:
            raise ConfigError(f"{path}: array {e['name']!r} is truncated or corrupt")
        arrays[e["name"]] = np.frombuffer(blob, dtype="<f8").reshape(e["shape"]).astype(float)
    return header["kind"], header["meta"], arrays


def save_field(path, field_):
    meta = {"d": field_.d, "N": field_.grid.N, "meta": field_.meta}
    write_container(path, "coefficient_field", meta, {"K": field_.K, "S": field_.S, "A": field_.A})


def load_field(path):
    _, meta, arr = read_container(path, "coefficient_field")
    grid = CellGrid(int(meta["d"]), int(meta["N"]))
    return CoefficientField(grid, arr["K"], arr["S"], arr["A"], meta.get("meta", {}))


def save_correctors(path, corr):
    keys = sorted(corr.keys())
    meta = {
        "d": corr.grid.d,
        "N": corr.grid.N,
        "regime": corr.regime,
        "rel_tol": corr.rel_tol,
        "index_map": [list(k) for k in keys],
        "residuals": [corr.residuals.get(k, 0.0) for k in keys],
        "iterations": [corr.iterations.get(k, 0) for k in keys],
    }
    stack = np.stack([corr[k].values for k in keys]) if keys else np.zeros((0,))
    write_container(path, "correctors", meta, {"fields": stack})


def load_correctors(path):
    _, meta, arr = read_container(path, "correctors")
    grid = CellGrid(int(meta["d"]), int(meta["N"]))
    cls = CorrectorHS1 if meta["regime"] == "HS1" else CorrectorHS2
    out = cls(grid, {}, rel_tol=float(meta["rel_tol"]))
    for i, k in enumerate(meta["index_map"]):
        key = tuple(int(v) for v in k)
        out.fields[key] = PeriodicVectorField(grid, arr["fields"][i])
        out.residuals[key] = float(meta["residuals"][i])
        out.iterations[key] = int(meta["iterations"][i])
    return out


def write_csv(path, rows, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(float(r[c])) if isinstance(r[c], (float, np.floating)) else r[c]
                        for c in columns])


def read_csv(path):
    """(columns, rows) with every cell parsed as float where possible."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            columns = next(reader)
        except StopIteration as exc:
            raise GradhomError(f"{path}: empty CSV file") from exc
        rows = []
        for line in reader:
            if not line:
                continue
            if len(line) != len(columns):
                raise GradhomError(f"{path}: row {reader.line_num} has {len(line)} cells")
            rows.append({c: _parse_cell(v) for c, v in zip(columns, line)})
    return columns, rows


def _parse_cell(v):
    try:
        return float(v)
    except ValueError:
        return v
