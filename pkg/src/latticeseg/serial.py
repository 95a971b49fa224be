"""Flat-blob parameter serialization with a structured text manifest.

Layout: one ASCII header line `latticeseg-params 1 <manifest_bytes>`, then a
JSON manifest listing (name, dtype, shape, byte offset) per entry, then the
raw little-endian scalar blob. Round-trips are bit-exact.
"""

import json

import numpy as np

from latticeseg.errors import ParseError

_MAGIC = "latticeseg-params"
_VERSION = 1


def save_arrays(path, named_arrays):
    """Write an ordered (name, array) iterable to `path`."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in named_arrays:
        arr = np.ascontiguousarray(arr)
        if arr.dtype.byteorder not in ("=", "<", "|"):
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        entries.append(
            {"name": name, "dtype": arr.dtype.name, "shape": list(arr.shape), "offset": offset}
        )
        blobs.append(arr.tobytes())
        offset += len(blobs[-1])
    manifest = json.dumps({"entries": entries, "total_bytes": offset}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(f"{_MAGIC} {_VERSION} {len(manifest)}\n".encode("ascii"))
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)


def load_arrays(path):
    """Read a parameter file back into an ordered {name: array} dict."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace").strip()
        parts = header.split()
        if len(parts) != 3 or parts[0] != _MAGIC:
            raise ParseError(f"{path}: not a parameter file (header {header!r})")
        if int(parts[1]) != _VERSION:
            raise ParseError(f"{path}: unsupported version {parts[1]}")
        manifest = json.loads(fh.read(int(parts[2])).decode("utf-8"))
        blob = fh.read()
    if len(blob) != manifest["total_bytes"]:
        raise ParseError(
            f"{path}: blob has {len(blob)} bytes, manifest says {manifest['total_bytes']}"
        )
    out = {}
    for entry in manifest["entries"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=start).reshape(entry["shape"])
        out[entry["name"]] = arr.copy()
    return out
