"""Content-addressed cache of process tensors.

Entries live in memory for the lifetime of the process and, when the
``SUPERPNC_CACHE_DIR`` environment variable names a directory, as ``.npz`` files
there.  The key hashes every input that changes the tensor together with the
format version, so stale files are never reused.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .bath import InfluenceCoeffs, PhononSpec, eta_coefficients
from .process_tensor import CompressionConfig, ProcessTensor, build_from_coeffs

log = logging.getLogger(__name__)

CACHE_ENV = "SUPERPNC_CACHE_DIR"
FORMAT_VERSION = 2

_memory: dict[str, ProcessTensor] = {}


def cache_key(spec: PhononSpec, dt_pt: float, n_c: int, comp: CompressionConfig) -> str:
    fields = asdict(spec)
    fields.pop("enabled")
    fields.pop("compensate_polaron_shift")
    payload = {"version": FORMAT_VERSION, "spec": fields, "dt_pt": float(dt_pt), "n_c": int(n_c),
               "comp": asdict(comp)}
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:32]


def cache_dir() -> Path | None:
    d = os.environ.get(CACHE_ENV)
    return Path(d) if d else None


def save(pt: ProcessTensor, path) -> None:
    np.savez(path, version=FORMAT_VERSION, tensor=pt.tensor, left=pt.left, right=pt.right,
             eta=pt.coeffs.eta, dt=pt.coeffs.dt, n_c=pt.coeffs.n_c, threshold=pt.comp.threshold,
             max_bond=pt.comp.max_bond, layer_bonds=np.asarray(pt.layer_bonds, dtype=int))


def load(path) -> ProcessTensor:
    with np.load(path) as z:
        if int(z["version"]) != FORMAT_VERSION:
            raise ValueError(f"cache file {path} has format version {int(z['version'])}")
        coeffs = InfluenceCoeffs(float(z["dt"]), int(z["n_c"]), z["eta"])
        comp = CompressionConfig(float(z["threshold"]), int(z["max_bond"]))
        return ProcessTensor(z["tensor"], z["left"], z["right"], coeffs, comp, 0, list(z["layer_bonds"]))


def get_process_tensor(spec: PhononSpec, dt_pt: float = 0.0125, n_c: int = 1280,
                       comp: CompressionConfig = CompressionConfig()) -> ProcessTensor:
    key = cache_key(spec, dt_pt, n_c, comp)
    if key in _memory:
        return _memory[key]
    d = cache_dir()
    path = d / f"pt-{key}.npz" if d is not None else None
    pt = None
    if path is not None and path.exists():
        try:
            pt = load(path)
        except (OSError, ValueError, KeyError) as e:
            log.warning("ignoring unreadable cache file %s: %s", path, e)
    if pt is None:
        pt = build_from_coeffs(eta_coefficients(spec, dt_pt, n_c), comp)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp.npz")
            save(pt, tmp)
            os.replace(tmp, path)
    _memory[key] = pt
    return pt


def clear_memory() -> None:
    _memory.clear()
