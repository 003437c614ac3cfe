"""Self-describing binary checkpoint files.

Layout: 4-byte magic, little-endian uint32 format version, uint64 header
length, a UTF-8 JSON header, then the raw array buffers in header order.
The writer is fully deterministic (no timestamps, sorted JSON keys), so
identical contents produce byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FKRL"
FORMAT_VERSION = 1


class CheckpointFormatError(RuntimeError):
    pass


def save_checkpoint(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write meta (JSON-serializable) and named arrays to path."""
    entries = []
    payloads = []
    for key in arrays:
        arr = np.ascontiguousarray(arrays[key])
        entries.append({"key": key, "shape": list(arr.shape), "dtype": arr.dtype.str})
        payloads.append(arr.tobytes())
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "meta": meta, "arrays": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in payloads:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read back (meta, arrays); raises CheckpointFormatError on anything
    that is not a well-formed checkpoint of the supported version."""
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != MAGIC:
        raise CheckpointFormatError(
            f"{path}: not a checkpoint (bad magic; format-version mismatch "
            f"or corrupted file)"
        )
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(
            f"{path}: format-version mismatch (file has {version}, "
            f"reader supports {FORMAT_VERSION})"
        )
    (header_len,) = struct.unpack_from("<Q", data, 8)
    header_end = 16 + header_len
    if header_end > len(data):
        raise CheckpointFormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[16:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable header ({exc})") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointFormatError(
            f"{path}: format-version mismatch in header "
            f"({header.get('format_version')!r} != {FORMAT_VERSION})"
        )
    arrays: dict[str, np.ndarray] = {}
    offset = header_end
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = dtype.itemsize * count
        if offset + nbytes > len(data):
            raise CheckpointFormatError(f"{path}: truncated array {entry['key']!r}")
        arrays[entry["key"]] = np.frombuffer(
            data, dtype=dtype, count=count, offset=offset
        ).reshape(shape).copy()
        offset += nbytes
    if offset != len(data):
        raise CheckpointFormatError(f"{path}: {len(data) - offset} trailing bytes")
    return header["meta"], arrays
