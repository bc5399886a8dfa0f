"""Weight container: a JSON manifest plus a little-endian binary blob.

The manifest records the architecture config, tensor names, shapes, dtype,
and byte offsets; the blob holds raw IEEE-754 bytes in manifest order.
Writing the same parameters twice yields byte-identical files, so run
outputs can be diffed directly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .layers import NnError

__all__ = ["save_weights", "load_weights", "MANIFEST_NAME", "BLOB_NAME"]

MANIFEST_NAME = "weights.json"
BLOB_NAME = "weights.bin"
_FORMAT = "drugfusion-weights/1"

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_weights(directory: str | Path, architecture: dict, params: dict[str, np.ndarray]) -> None:
    """Write ``weights.json`` and ``weights.bin`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    dtypes = {str(v.dtype) for v in params.values()}
    if len(dtypes) != 1:
        raise NnError(f"mixed parameter dtypes: {sorted(dtypes)}")
    dtype_name = dtypes.pop()
    if dtype_name not in _DTYPES:
        raise NnError(f"unsupported parameter dtype {dtype_name}")
    np_dtype = np.dtype(_DTYPES[dtype_name])

    tensors = []
    offset = 0
    chunks = []
    for name, value in params.items():
        raw = np.ascontiguousarray(value, dtype=np_dtype).tobytes()
        tensors.append(
            {
                "name": name,
                "shape": list(value.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)

    manifest = {
        "format": _FORMAT,
        "architecture": architecture,
        "dtype": dtype_name,
        "byte_order": "little",
        "total_bytes": offset,
        "tensors": tensors,
    }
    (directory / MANIFEST_NAME).write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    )
    (directory / BLOB_NAME).write_bytes(b"".join(chunks))


def load_weights(directory: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a weight container back into (architecture, named arrays)."""
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_NAME).read_text())
    if manifest.get("format") != _FORMAT:
        raise NnError(f"unrecognized weight container format {manifest.get('format')!r}")
    dtype_name = manifest["dtype"]
    if dtype_name not in _DTYPES:
        raise NnError(f"unsupported dtype {dtype_name!r} in manifest")
    np_dtype = np.dtype(_DTYPES[dtype_name])

    blob = (directory / BLOB_NAME).read_bytes()
    if len(blob) != manifest["total_bytes"]:
        raise NnError(
            f"blob size {len(blob)} does not match manifest total {manifest['total_bytes']}"
        )

    params: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        start = entry["offset"]
        stop = start + entry["nbytes"]
        if stop > len(blob):
            raise NnError(f"tensor {entry['name']!r} extends past the blob")
        flat = np.frombuffer(blob[start:stop], dtype=np_dtype)
        params[entry["name"]] = flat.reshape(entry["shape"]).astype(dtype_name).copy()
    return manifest["architecture"], params
