"""Bit-exact tensor container, run-directory layout, and manifest handling.

Tensors are stored in a little-endian binary format (magic ``BINV0001``):

    8-byte magic | uint32 rank | rank x uint64 dims | float32 payload

The payload is row-major IEEE-754 float32.  Inputs of higher precision are
downcast on save, so float64 results lose precision at the container
boundary; this is deliberate (training runs in float32) and documented here.

Manifests are human-readable JSON stored in a file named ``manifest`` at the
run-directory root.  Bulk data stays binary, metadata stays diffable.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"BINV0001"
MANIFEST_NAME = "manifest"
# "dataset" extends the base run kinds: generated supervised pairs get their
# own run directories so trainers can reference them by fingerprint
RUN_KINDS = ("wgan", "direct_mean", "direct_var", "prior_sample", "oracle", "dataset")

# run-directory layout
CHECKPOINT_DIR = "checkpoints"
SAMPLES_DIR = "samples"
TENSORS_DIR = "tensors"


class TensorFormatError(ValueError):
    """Malformed tensor file; ``offset`` is the byte position of the defect."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ManifestSchemaError(ValueError):
    """Manifest missing or violating a required field; ``field`` names it."""

    def __init__(self, field_name: str, message: str | None = None):
        super().__init__(message or f"manifest field {field_name!r} missing or invalid")
        self.field = field_name


def tensor_to_bytes(tensor: np.ndarray) -> bytes:
    """Serialize an array to the BINV0001 wire format (float32, little-endian)."""
    arr = np.asarray(tensor)
    if arr.ndim == 0:
        raise TensorFormatError("rank must be >= 1", 8)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")
    payload = np.ascontiguousarray(arr, dtype="<f4")
    header = MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + payload.tobytes()


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    """Parse the BINV0001 wire format; inverse of :func:`tensor_to_bytes`."""
    if len(buf) < 8 or buf[:8] != MAGIC:
        raise TensorFormatError(f"bad magic {buf[:8]!r}, expected {MAGIC!r}", 0)
    if len(buf) < 12:
        raise TensorFormatError("truncated rank field", 8)
    (rank,) = struct.unpack_from("<I", buf, 8)
    if rank == 0:
        raise TensorFormatError("rank 0 not allowed", 8)
    dims_end = 12 + 8 * rank
    if len(buf) < dims_end:
        raise TensorFormatError("truncated dims", 12)
    shape = struct.unpack_from(f"<{rank}Q", buf, 12)
    if any(d == 0 for d in shape):
        raise TensorFormatError(f"zero dimension in shape {shape}", 12)
    count = 1
    for d in shape:
        count *= d
    expected = dims_end + 4 * count
    if len(buf) != expected:
        raise TensorFormatError(
            f"payload size mismatch: file has {len(buf)} bytes, expected {expected}",
            dims_end,
        )
    data = np.frombuffer(buf, dtype="<f4", offset=dims_end, count=count)
    return data.reshape(shape).copy()


def write_tensor(path: str | os.PathLike, tensor: np.ndarray) -> None:
    """Write a tensor file; rejects non-finite values."""
    data = tensor_to_bytes(tensor)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(data)


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        return tensor_from_bytes(f.read())


def payload_offset(rank: int) -> int:
    """Byte offset of the float32 payload for a tensor of the given rank."""
    return 12 + 8 * rank


def fingerprint_tensors(tensors) -> str:
    """sha256 over the serialized form of a sequence of tensors."""
    h = hashlib.sha256()
    for t in tensors:
        h.update(tensor_to_bytes(t))
    return h.hexdigest()


@dataclass
class RunManifest:
    """Provenance record for one run directory.

    ``config`` must be a JSON-serializable nested dict so it round-trips
    losslessly.  ``artifact_paths`` maps role names to paths relative to the
    run root; absolute paths and traversal outside the run are rejected.
    """

    run_id: str
    kind: str
    config: dict
    seed: int
    dataset_fingerprint: str
    artifact_paths: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not isinstance(self.run_id, str) or not self.run_id:
            raise ManifestSchemaError("run_id")
        if self.kind not in RUN_KINDS:
            raise ManifestSchemaError("kind", f"unknown run kind {self.kind!r}")
        if not isinstance(self.config, dict):
            raise ManifestSchemaError("config")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ManifestSchemaError("seed")
        if not isinstance(self.dataset_fingerprint, str):
            raise ManifestSchemaError("dataset_fingerprint")
        if not isinstance(self.artifact_paths, dict):
            raise ManifestSchemaError("artifact_paths")
        for role, rel in self.artifact_paths.items():
            p = Path(rel)
            if p.is_absolute() or ".." in p.parts:
                raise ManifestSchemaError(
                    "artifact_paths", f"path for role {role!r} escapes the run directory: {rel}"
                )

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "kind": self.kind,
            "config": self.config,
            "seed": self.seed,
            "dataset_fingerprint": self.dataset_fingerprint,
            "artifact_paths": dict(self.artifact_paths),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        for key in ("run_id", "kind", "config", "seed", "dataset_fingerprint", "artifact_paths"):
            if key not in d:
                raise ManifestSchemaError(key)
        m = cls(
            run_id=d["run_id"],
            kind=d["kind"],
            config=d["config"],
            seed=d["seed"],
            dataset_fingerprint=d["dataset_fingerprint"],
            artifact_paths=d["artifact_paths"],
        )
        m.validate()
        return m


def write_manifest(run_dir: str | os.PathLike, manifest: RunManifest) -> None:
    manifest.validate()
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    text = json.dumps(manifest.to_dict(), indent=2, sort_keys=True)
    (run_dir / MANIFEST_NAME).write_text(text + "\n")


def read_manifest(run_dir: str | os.PathLike) -> RunManifest:
    path = Path(run_dir) / MANIFEST_NAME
    return RunManifest.from_dict(json.loads(path.read_text()))


def artifact_path(run_dir: str | os.PathLike, manifest: RunManifest, role: str) -> Path:
    if role not in manifest.artifact_paths:
        raise KeyError(f"run {manifest.run_id} has no artifact for role {role!r}")
    return Path(run_dir) / manifest.artifact_paths[role]


def new_run_dir(root: str | os.PathLike, run_id: str) -> Path:
    """Create a fresh run directory with the standard sub-layout."""
    run_dir = Path(root) / run_id
    if run_dir.exists() and any(run_dir.iterdir()):
        raise FileExistsError(f"run directory {run_dir} already exists and is not empty")
    for sub in ("", CHECKPOINT_DIR, SAMPLES_DIR, TENSORS_DIR):
        (run_dir / sub).mkdir(parents=True, exist_ok=True)
    return run_dir


def list_run_dirs(root: str | os.PathLike):
    """Yield (run_dir, manifest) for every parseable run under root."""
    root = Path(root)
    if not root.is_dir():
        return
    for child in sorted(root.iterdir()):
        if not child.is_dir() or not (child / MANIFEST_NAME).is_file():
            continue
        try:
            yield child, read_manifest(child)
        except (ManifestSchemaError, json.JSONDecodeError):
            continue
