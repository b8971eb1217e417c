"""Atomic artifact writes and reproducibility manifests.

Every stage output is written to a temp file in the destination directory
and renamed into place, and is accompanied by a manifest recording the
configuration hash, input digests, package version, and RNG seed. A rerun
with an identical manifest must reproduce artifacts byte for byte, so
nothing time- or environment-dependent belongs in either file.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

PACKAGE_VERSION = "0.1.0"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write(path, data):
    """Write bytes (or text as UTF-8) via temp file + rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def config_digest(config: dict) -> str:
    """Hash of the run configuration, excluding artifact locations (the
    same inputs and settings must hash identically wherever outputs go)."""
    reduced = {k: v for k, v in config.items() if k != "out"}
    return sha256_bytes(json.dumps(reduced, sort_keys=True).encode("utf-8"))


def write_manifest(artifact_path, config: dict, inputs: dict, rng_seed=None) -> Path:
    """Manifest sidecar <artifact>.manifest.json; returns its path."""
    manifest = {
        "artifact": Path(artifact_path).name,
        "config_sha256": config_digest(config),
        "inputs": {name: sha256_file(p) for name, p in sorted(inputs.items())},
        "package_version": PACKAGE_VERSION,
        "rng_seed": rng_seed,
    }
    path = Path(str(artifact_path) + ".manifest.json")
    atomic_write(path, json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return path
