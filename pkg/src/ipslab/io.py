"""Provenance-stamped exports: COO generators, CSV vectors and JSON reports.

Every file opens with ``# key=value`` comment lines carrying the model hash,
the seed and the package version.  No timestamps are written, so reruns are
byte-identical.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import __version__


def provenance(model_hash: str, seed=None, **extra) -> dict:
    out = {"model_hash": model_hash, "seed": "none" if seed is None else seed, "version": __version__}
    out.update(extra)
    return out


def _header(fh, header: dict):
    for k, v in header.items():
        fh.write(f"# {k}={v}\n")


def read_header(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("# "):
                break
            k, _, v = line[2:].rstrip("\n").partition("=")
            out[k] = v
    return out


def write_coo(path, L, header: dict):
    """Sparse matrix as ``row,col,value`` lines (diagonal included)."""
    C = sp.coo_matrix(L)
    order = np.lexsort((C.col, C.row))
    with open(path, "w", newline="") as fh:
        _header(fh, dict(header, shape=f"{C.shape[0]}x{C.shape[1]}"))
        w = csv.writer(fh)
        w.writerow(["row", "col", "value"])
        for i in order:
            w.writerow([int(C.row[i]), int(C.col[i]), repr(float(C.data[i]))])


def read_coo(path) -> sp.csr_matrix:
    h = read_header(path)
    n, m = map(int, h["shape"].split("x"))
    with open(path) as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))[1:]
    if not rows:
        return sp.csr_matrix((n, m))
    r, c, v = zip(*rows)
    return sp.csr_matrix((np.array(v, dtype=float), (np.array(r, dtype=int), np.array(c, dtype=int))), shape=(n, m))


def write_vector(path, values, configs, header: dict, name: str = "value"):
    """One row per enumerated state: index, configuration (``;``-joined), value."""
    with open(path, "w", newline="") as fh:
        _header(fh, header)
        w = csv.writer(fh)
        w.writerow(["index", "config", name])
        for i, v in enumerate(values):
            w.writerow([i, ";".join(map(str, configs[i].tolist())), repr(float(v))])


def read_vector(path) -> np.ndarray:
    with open(path) as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    return np.array([float(r[2]) for r in rows[1:]])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


def write_report(path, report: dict, header: dict):
    """Structured-text (JSON) report; the provenance header sits under ``provenance``."""
    Path(path).write_text(json.dumps(_clean({"provenance": header, **report}), indent=2, sort_keys=True) + "\n")
