"""Flat binary tensor archives with plain-text manifests.

An archive is a pair of files with a shared stem: ``<stem>.manifest`` and
``<stem>.bin``. The binary file is the raw little-endian, row-major
concatenation of all tensors. Each manifest line describes one tensor:

    <name> <dtype> <dim0>x<dim1>x... <byte offset>

Lines starting with '#' are comments. Tensor names must not contain
whitespace. Both the classifier zoo and the perceptual net use this format.
"""

from __future__ import annotations

import os

import numpy as np

_DTYPES = {
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
    "int64": np.dtype("<i8"),
}
_DTYPE_NAMES = {np.dtype(np.float32): "float32",
                np.dtype(np.float64): "float64",
                np.dtype(np.int64): "int64"}


def _paths(manifest_path: str) -> tuple[str, str]:
    if not manifest_path.endswith(".manifest"):
        raise ValueError(f"archive manifest must end in .manifest: {manifest_path}")
    return manifest_path, manifest_path[: -len(".manifest")] + ".bin"


def save_tensors(manifest_path: str, tensors: dict[str, np.ndarray]) -> None:
    """Write a tensor archive; tensors keep their given order."""
    manifest_path, bin_path = _paths(manifest_path)
    lines = ["# tensor archive v1 (little-endian, row-major)"]
    offset = 0
    blobs = []
    for name, value in tensors.items():
        if any(ch.isspace() for ch in name):
            raise ValueError(f"tensor name contains whitespace: {name!r}")
        arr = np.asarray(value)
        if arr.dtype not in _DTYPE_NAMES:
            raise ValueError(f"unsupported dtype {arr.dtype} for tensor {name}")
        arr = np.atleast_1d(arr)
        le = np.ascontiguousarray(arr, dtype=_DTYPES[_DTYPE_NAMES[arr.dtype]])
        shape = "x".join(str(d) for d in le.shape)
        lines.append(f"{name} {_DTYPE_NAMES[arr.dtype]} {shape} {offset}")
        blob = le.tobytes()
        blobs.append(blob)
        offset += len(blob)
    with open(bin_path, "wb") as fh:
        for blob in blobs:
            fh.write(blob)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_tensors(manifest_path: str) -> dict[str, np.ndarray]:
    """Read a tensor archive back as named numpy arrays."""
    manifest_path, bin_path = _paths(manifest_path)
    if not os.path.isfile(manifest_path):
        raise FileNotFoundError(f"missing tensor manifest: {manifest_path}")
    if not os.path.isfile(bin_path):
        raise FileNotFoundError(f"missing tensor archive: {bin_path}")
    with open(bin_path, "rb") as fh:
        payload = fh.read()
    tensors: dict[str, np.ndarray] = {}
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(
                    f"{manifest_path}:{lineno}: expected 'name dtype shape offset'"
                )
            name, dtype_name, shape_s, offset_s = parts
            if dtype_name not in _DTYPES:
                raise ValueError(
                    f"{manifest_path}:{lineno}: unsupported dtype {dtype_name}"
                )
            try:
                shape = tuple(int(d) for d in shape_s.split("x"))
                offset = int(offset_s)
            except ValueError as exc:
                raise ValueError(f"{manifest_path}:{lineno}: bad shape/offset") from exc
            dtype = _DTYPES[dtype_name]
            nbytes = int(np.prod(shape)) * dtype.itemsize
            if offset < 0 or offset + nbytes > len(payload):
                raise ValueError(
                    f"{manifest_path}:{lineno}: tensor {name} overruns archive "
                    f"({offset}+{nbytes} > {len(payload)} bytes in {bin_path})"
                )
            flat = np.frombuffer(payload, dtype=dtype, count=int(np.prod(shape)),
                                 offset=offset)
            tensors[name] = flat.reshape(shape).copy()
    return tensors
