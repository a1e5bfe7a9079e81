"""File formats: raw little-endian float64 arrays with JSON sidecars, chain CSVs."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

DTYPE = "<f8"


def _sidecar(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".json")


def write_field(path, values, meta: dict | None = None) -> dict:
    """Write one array row-major (x fastest for (ny, nx) fields) plus a metadata sidecar."""
    path = Path(path)
    arr = np.ascontiguousarray(values, dtype=DTYPE)
    raw = arr.tobytes()
    info = dict(meta or {})
    info.update({"dtype": "float64-le", "shape": list(arr.shape), "sha256": hashlib.sha256(raw).hexdigest()})
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(raw)
    _sidecar(path).write_text(json.dumps(info, indent=2, sort_keys=True))
    return info


def read_meta(path) -> dict:
    return json.loads(_sidecar(Path(path)).read_text())


def read_field(path, verify: bool = True):
    path = Path(path)
    info = read_meta(path)
    raw = path.read_bytes()
    if verify and hashlib.sha256(raw).hexdigest() != info["sha256"]:
        raise ValueError(f"{path}: content hash mismatch")
    return np.frombuffer(raw, dtype=DTYPE).reshape(info["shape"]).copy(), info


def write_bundle(path, arrays: dict, meta: dict | None = None) -> dict:
    """Several named arrays concatenated in one file; offsets in the sidecar."""
    path = Path(path)
    entries, chunks, offset = {}, [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype=DTYPE)
        entries[name] = {"offset": offset, "shape": list(a.shape)}
        chunks.append(a.tobytes())
        offset += a.size
    raw = b"".join(chunks)
    info = dict(meta or {})
    info.update({"dtype": "float64-le", "arrays": entries, "sha256": hashlib.sha256(raw).hexdigest()})
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(raw)
    _sidecar(path).write_text(json.dumps(info, indent=2, sort_keys=True))
    return info


def read_bundle(path, verify: bool = True):
    path = Path(path)
    info = read_meta(path)
    raw = path.read_bytes()
    if verify and hashlib.sha256(raw).hexdigest() != info["sha256"]:
        raise ValueError(f"{path}: content hash mismatch")
    flat = np.frombuffer(raw, dtype=DTYPE)
    out = {}
    for name, e in info["arrays"].items():
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        out[name] = flat[e["offset"]:e["offset"] + n].reshape(e["shape"]).copy()
    return out, info


CHAIN_COLUMNS = ("step", "accepted", "log_like_fine", "log_like_coarse", "qoi")


def write_chain_csv(path, record) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CHAIN_COLUMNS)
        for t in range(record.n_steps):
            w.writerow(
                (t + 1, int(record.accepted[t]), repr(float(record.log_like_fine[t])),
                 repr(float(record.log_like_coarse[t])), repr(float(record.qoi[t])))
            )


def read_chain_csv(path) -> dict:
    data = np.genfromtxt(path, delimiter=",", names=True)
    data = np.atleast_1d(data)
    return {c: np.asarray(data[c]) for c in CHAIN_COLUMNS}


def write_table(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
