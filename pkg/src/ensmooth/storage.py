"""Disk format: JSON manifests with checksummed little-endian float64 payloads.

Every saved object is a pair of files: ``<stem>.manifest`` (JSON with schema
version, kind, dimensions, iteration and the payload checksum) and
``<stem>.payload`` (raw ``<f8`` bytes). Matrices are serialized column-major,
fields row-major in node order.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .core import Ensemble, Grid2D, InvalidInputError, ScalarField

SCHEMA_VERSION = 1


class StorageError(RuntimeError):
    """Base class for load failures."""


class ManifestError(StorageError):
    """Manifest file missing, unparseable, or structurally wrong."""


class PayloadError(StorageError):
    """Payload truncated or checksum mismatch."""


class DimensionError(StorageError):
    """Manifest dimensions inconsistent with the payload size."""


def _checksum(data: bytes) -> str:
    return "sha256:" + hashlib.sha256(data).hexdigest()


def _write_pair(stem: Path, manifest: dict, payload: bytes) -> None:
    stem.parent.mkdir(parents=True, exist_ok=True)
    manifest = dict(manifest)
    manifest["schema_version"] = SCHEMA_VERSION
    manifest["payload_file"] = stem.name + ".payload"
    manifest["checksum"] = _checksum(payload)
    with open(stem.with_name(stem.name + ".payload"), "wb") as f:
        f.write(payload)
    with open(stem.with_name(stem.name + ".manifest"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _read_pair(stem: Path, kind: str) -> tuple[dict, np.ndarray]:
    mpath = stem.with_name(stem.name + ".manifest")
    try:
        with open(mpath) as f:
            manifest = json.load(f)
    except FileNotFoundError as exc:
        raise ManifestError(f"manifest not found: {mpath}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {mpath}") from exc
    for key in ("schema_version", "kind", "dims", "payload_file", "checksum"):
        if key not in manifest:
            raise ManifestError(f"manifest missing key {key!r}: {mpath}")
    if manifest["schema_version"] != SCHEMA_VERSION:
        raise ManifestError(f"unsupported schema version {manifest['schema_version']}")
    if manifest["kind"] != kind:
        raise ManifestError(f"expected kind {kind!r}, found {manifest['kind']!r}")
    ppath = mpath.with_name(manifest["payload_file"])
    try:
        data = ppath.read_bytes()
    except FileNotFoundError as exc:
        raise PayloadError(f"payload not found: {ppath}") from exc
    if _checksum(data) != manifest["checksum"]:
        raise PayloadError(f"payload checksum mismatch: {ppath}")
    if len(data) % 8 != 0:
        raise PayloadError(f"payload length {len(data)} is not a float64 multiple")
    return manifest, np.frombuffer(data, dtype="<f8")


def save_ensemble(e: Ensemble, stem: str | Path) -> None:
    """Write ``<stem>.manifest`` + ``<stem>.payload`` for an ensemble.

    The payload is the params matrix column-major, followed by the outputs
    matrix column-major when outputs are present.
    """
    stem = Path(stem)
    dims = {
        "n_params": e.n_params,
        "n_members": e.n_members,
        "n_data": e.n_data,
    }
    parts = [np.asarray(e.params, dtype="<f8").tobytes(order="F")]
    if e.outputs is not None:
        parts.append(np.asarray(e.outputs, dtype="<f8").tobytes(order="F"))
    payload = b"".join(parts)
    _write_pair(stem, {"kind": "ensemble", "dims": dims, "iteration": e.iteration}, payload)


def load_ensemble(stem: str | Path) -> Ensemble:
    manifest, flat = _read_pair(Path(stem), "ensemble")
    dims = manifest["dims"]
    try:
        n_m, n_e = int(dims["n_params"]), int(dims["n_members"])
        n_y = dims["n_data"]
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"ensemble dims malformed: {dims}") from exc
    expected = n_m * n_e + (int(n_y) * n_e if n_y is not None else 0)
    if flat.size != expected:
        raise DimensionError(f"payload has {flat.size} values, dims imply {expected}")
    params = flat[: n_m * n_e].reshape((n_m, n_e), order="F")
    outputs = None
    if n_y is not None:
        outputs = flat[n_m * n_e :].reshape((int(n_y), n_e), order="F")
    return Ensemble(params.copy(), None if outputs is None else outputs.copy(),
                    iteration=int(manifest.get("iteration", 0)))


def save_field(f: ScalarField, stem: str | Path) -> None:
    """Write a scalar field with its grid geometry in the manifest."""
    g = f.grid
    dims = {"nx": g.nx, "ny": g.ny, "lx": g.lx, "ly": g.ly}
    _write_pair(Path(stem), {"kind": "field", "dims": dims, "iteration": 0},
                f.values.astype("<f8").tobytes(order="C"))


def load_field(stem: str | Path) -> ScalarField:
    manifest, flat = _read_pair(Path(stem), "field")
    dims = manifest["dims"]
    try:
        grid = Grid2D(int(dims["nx"]), int(dims["ny"]), float(dims["lx"]), float(dims["ly"]))
    except (KeyError, TypeError, InvalidInputError) as exc:
        raise ManifestError(f"field dims malformed: {dims}") from exc
    if flat.size != grid.n_nodes:
        raise DimensionError(f"payload has {flat.size} values, grid has {grid.n_nodes} nodes")
    return ScalarField(grid, flat.copy())


def save_arrays(arrays: dict[str, np.ndarray], stem: str | Path, kind: str = "arrays") -> None:
    """Write a named-array bundle (used for network parameters).

    The manifest records each array's name, shape and offset; the payload is
    the arrays flattened row-major, concatenated in recorded order.
    """
    table = []
    parts = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=float)
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        parts.append(arr.astype("<f8").tobytes(order="C"))
        offset += arr.size
    _write_pair(Path(stem), {"kind": kind, "dims": {"entries": table, "total": offset},
                             "iteration": 0}, b"".join(parts))


def load_arrays(stem: str | Path, kind: str = "arrays") -> dict[str, np.ndarray]:
    manifest, flat = _read_pair(Path(stem), kind)
    dims = manifest["dims"]
    try:
        table, total = dims["entries"], int(dims["total"])
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"array dims malformed: {dims}") from exc
    if flat.size != total:
        raise DimensionError(f"payload has {flat.size} values, dims imply {total}")
    out: dict[str, np.ndarray] = {}
    for entry in table:
        shape = tuple(int(s) for s in entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = int(entry["offset"])
        if start + size > flat.size:
            raise DimensionError(f"entry {entry['name']!r} overruns payload")
        out[entry["name"]] = flat[start : start + size].reshape(shape).copy()
    return out


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> None:
    """Plain deterministic CSV: fixed header, repr-stable float formatting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    def fmt(v) -> str:
        if isinstance(v, float):
            return format(v, ".17g")
        return str(v)
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    text = Path(path).read_text().strip().splitlines()
    if not text:
        raise StorageError(f"empty CSV: {path}")
    header = text[0].split(",")
    return header, [line.split(",") for line in text[1:]]
