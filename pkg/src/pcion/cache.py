"""Versioned on-disk cache for band structures and quadrature results.

A cache entry is a directory named by a content hash of everything the
result depends on (stack geometry, index model, cutoff, grid resolution).
It holds:

* ``meta.json``    -- the hashed payload, for inspection;
* ``nodes.csv``    -- per-quadrature-node partial integrals, enough to
  re-assemble the mass coefficients without a single dispersion solve;
* ``bands.csv``    -- band frequencies ``k_rho,k_z,pol,n,omega_ev`` on the
  band-diagram grid;
* ``coeffs.csv``   -- sidecar Fourier coefficients ``k_rho,k_z,pol,n,m,re,im``.

All floats are serialized with repr(), which round-trips binary64 exactly,
so a warm run is byte-identical to the cold run that populated the cache.
Writers populate a temporary sibling directory and commit it with an atomic
rename; readers never observe partial entries.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import uuid
from pathlib import Path

import numpy as np

CACHE_VERSION = "pcion-cache-v1"


class CacheError(RuntimeError):
    pass


def default_cache_dir() -> Path:
    env = os.environ.get("PCION_CACHE_DIR")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "pcion"


def cache_key(payload: dict) -> str:
    """Content hash of a JSON-serializable payload; stable across runs."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:32]


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def _write_versioned_csv(path: Path, header: list, rows) -> None:
    buf = io.StringIO()
    buf.write(CACHE_VERSION + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    path.write_text(buf.getvalue(), encoding="utf-8")


def _read_versioned_csv(path: Path, header: list):
    text = path.read_text(encoding="utf-8")
    lines = io.StringIO(text)
    version = lines.readline().strip()
    if version != CACHE_VERSION:
        raise CacheError(f"unsupported cache version {version!r} in {path}")
    reader = csv.reader(lines)
    got = next(reader, None)
    if got != header:
        raise CacheError(f"unexpected columns {got} in {path}")
    return list(reader)


BAND_HEADER = ["k_rho", "k_z", "pol", "n", "omega_ev"]
COEFF_HEADER = ["k_rho", "k_z", "pol", "n", "m", "re", "im"]
NODE_HEADER = ["grid", "node", "ia", "ib", "solves", "shells"]


def write_band_cache(path, rows) -> None:
    """rows: iterable of (k_rho, k_z, pol, band_index, omega_ev)."""
    _write_versioned_csv(
        Path(path),
        BAND_HEADER,
        ((repr(float(kr)), repr(float(kz)), pol, int(n), repr(float(w)))
         for kr, kz, pol, n, w in rows),
    )


def read_band_cache(path):
    return [
        (float(kr), float(kz), pol, int(n), float(w))
        for kr, kz, pol, n, w in _read_versioned_csv(Path(path), BAND_HEADER)
    ]


def write_coeff_cache(path, rows) -> None:
    """rows: iterable of (k_rho, k_z, pol, band_index, m, re, im)."""
    _write_versioned_csv(
        Path(path),
        COEFF_HEADER,
        ((repr(float(kr)), repr(float(kz)), pol, int(n), int(m),
          repr(float(re)), repr(float(im)))
         for kr, kz, pol, n, m, re, im in rows),
    )


def read_coeff_cache(path):
    return [
        (float(kr), float(kz), pol, int(n), int(m), float(re), float(im))
        for kr, kz, pol, n, m, re, im in _read_versioned_csv(Path(path), COEFF_HEADER)
    ]


def write_node_cache(path, node_results: dict) -> None:
    """node_results: {'fine': [(ia, ib, shells, solves), ...], 'coarse': ...}."""
    rows = []
    for grid in ("fine", "coarse"):
        results = node_results.get(grid)
        if results is None:
            continue
        for idx, (ia, ib, shells, solves) in enumerate(results):
            rows.append(
                (
                    grid,
                    idx,
                    repr(float(ia)),
                    repr(float(ib)),
                    int(solves),
                    ";".join(repr(float(s)) for s in shells),
                )
            )
    _write_versioned_csv(Path(path), NODE_HEADER, rows)


def read_node_cache(path) -> dict:
    out = {"fine": [], "coarse": []}
    for grid, idx, ia, ib, solves, shells in _read_versioned_csv(Path(path), NODE_HEADER):
        if grid not in out:
            raise CacheError(f"unknown grid {grid!r} in {path}")
        sh = np.array([float(s) for s in shells.split(";")] if shells else [0.0])
        out[grid].append((float(ia), float(ib), sh, int(solves)))
    if not out["coarse"]:
        out["coarse"] = None
    return out


# ---------------------------------------------------------------------------
# entry management
# ---------------------------------------------------------------------------


def entry_dir(cache_dir, key: str) -> Path:
    return Path(cache_dir) / key


def load_entry(cache_dir, key: str):
    """Node results of a committed cache entry, or None when absent."""
    entry = entry_dir(cache_dir, key)
    nodes = entry / "nodes.csv"
    if not nodes.is_file():
        return None
    return read_node_cache(nodes)


def store_entry(cache_dir, key: str, payload: dict, node_results: dict,
                band_rows=None, coeff_rows=None) -> Path:
    """Commit a cache entry atomically; a concurrent identical writer wins
    harmlessly.  Returns the committed directory."""
    cache_dir = Path(cache_dir)
    final = entry_dir(cache_dir, key)
    if (final / "nodes.csv").is_file():
        return final
    cache_dir.mkdir(parents=True, exist_ok=True)
    tmp = cache_dir / f".{key}.tmp-{uuid.uuid4().hex}"
    tmp.mkdir()
    try:
        (tmp / "meta.json").write_text(
            json.dumps({"version": CACHE_VERSION, "payload": payload},
                       indent=2, sort_keys=True),
            encoding="utf-8",
        )
        write_node_cache(tmp / "nodes.csv", node_results)
        if band_rows is not None:
            write_band_cache(tmp / "bands.csv", band_rows)
        if coeff_rows is not None:
            write_coeff_cache(tmp / "coeffs.csv", coeff_rows)
        try:
            os.rename(tmp, final)
        except OSError:
            if not (final / "nodes.csv").is_file():
                raise
    finally:
        if tmp.is_dir():
            import shutil

            shutil.rmtree(tmp, ignore_errors=True)
    return final
