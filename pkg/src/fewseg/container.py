"""Versioned binary containers for checkpoints and feature sidecars.

Checkpoint layout: an ASCII header (magic line, ``kind``, ``meta`` entries
with JSON-encoded values, one ``array`` line per weight array) terminated by
``end``, followed by the raw little-endian float32 payload of every array in
header order. The same container backs codec and model checkpoints; ``meta``
carries the config echo, architecture manifest, and optimizer/rng state.

Feature sidecars are a two-line header (magic, then ``d h w``) plus row-major
little-endian float32 data for one feature map.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import CheckpointError

_MAGIC = "FEWSEG-CKPT v1"
_FEAT_MAGIC = "FEWSEG-FEAT v1"


def save_container(path, kind: str, meta: dict, arrays: dict) -> None:
    """Write named float32 arrays plus metadata to ``path``."""
    lines = [_MAGIC, f"kind = {kind}"]
    for key, value in meta.items():
        encoded = json.dumps(value)
        if "\n" in encoded:
            raise CheckpointError(f"meta value for {key!r} does not encode to one line")
        lines.append(f"meta {key} = {encoded}")
    payload = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        dims = " ".join(str(d) for d in arr.shape)
        lines.append(f"array {name} {dims}".rstrip())
        payload.append(arr.tobytes())
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        for chunk in payload:
            fh.write(chunk)


def load_container(path):
    """Read a checkpoint container; returns (kind, meta, arrays)."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint: {path}") from e
    newline = blob.find(b"\n")
    if newline < 0 or blob[:newline].decode("ascii", "replace") != _MAGIC:
        raise CheckpointError(f"not a checkpoint container: {path}")
    # locate the end-of-header marker on its own line
    marker = b"\nend\n"
    end = blob.find(marker)
    if end < 0:
        raise CheckpointError(f"checkpoint header not terminated: {path}")
    header = blob[newline + 1:end].decode("ascii")
    offset = end + len(marker)

    kind = None
    meta = {}
    shapes = []
    for line in header.splitlines():
        if line.startswith("kind = "):
            kind = line[len("kind = "):]
        elif line.startswith("meta "):
            body = line[len("meta "):]
            key, _, encoded = body.partition(" = ")
            try:
                meta[key] = json.loads(encoded)
            except json.JSONDecodeError as e:
                raise CheckpointError(f"bad meta entry {key!r} in {path}") from e
        elif line.startswith("array "):
            parts = line.split()
            name = parts[1]
            dims = tuple(int(d) for d in parts[2:])
            shapes.append((name, dims))
        else:
            raise CheckpointError(f"unrecognized header line in {path}: {line!r}")
    if kind is None:
        raise CheckpointError(f"checkpoint missing kind: {path}")

    arrays = {}
    for name, dims in shapes:
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        nbytes = count * 4
        chunk = blob[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"checkpoint payload truncated at array {name!r}: {path}")
        arrays[name] = np.frombuffer(chunk, dtype="<f4").reshape(dims).copy()
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"trailing bytes after arrays in {path}")
    return kind, meta, arrays


def save_features(path, feat: np.ndarray) -> None:
    """Write one (d, h, w) feature map as a sidecar file."""
    feat = np.ascontiguousarray(feat, dtype="<f4")
    if feat.ndim != 3:
        raise CheckpointError(f"feature sidecar expects a (d, h, w) array, got shape {feat.shape}")
    d, h, w = feat.shape
    with open(path, "wb") as fh:
        fh.write(f"{_FEAT_MAGIC}\n{d} {h} {w}\n".encode("ascii"))
        fh.write(feat.tobytes())


def load_features(path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            magic = fh.readline().decode("ascii", "replace").rstrip("\n")
            dims_line = fh.readline().decode("ascii", "replace")
            data = fh.read()
    except OSError as e:
        raise CheckpointError(f"cannot read feature sidecar: {path}") from e
    if magic != _FEAT_MAGIC:
        raise CheckpointError(f"not a feature sidecar: {path}")
    try:
        d, h, w = (int(x) for x in dims_line.split())
    except ValueError as e:
        raise CheckpointError(f"bad feature sidecar header: {path}") from e
    if len(data) != d * h * w * 4:
        raise CheckpointError(f"feature sidecar payload size mismatch: {path}")
    return np.frombuffer(data, dtype="<f4").reshape(d, h, w).copy()
