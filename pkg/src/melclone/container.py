"""Flat binary container for named float/int arrays with a JSON header.

Layout (all integers little-endian):

    magic   b"UTTS"                      4 bytes
    version u32                          4 bytes
    hlen    u64                          8 bytes
    header  UTF-8 JSON                   hlen bytes
    arrays  raw little-endian data, in directory order
    crc     u32 CRC32 of everything prior

The header is ``{"meta": {...}, "arrays": [{"name", "dtype", "shape",
"offset"}, ...]}`` where ``offset`` is the byte offset of the array payload
relative to the end of the header.  Checkpoints, spectrograms, pitch tracks
and cepstra all ride on this one format; they differ only in ``meta``.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .errors import CheckpointError

MAGIC = b"UTTS"
VERSION = 1

_SUPPORTED_KINDS = "fiub"  # float, int, uint, bool


def _dtype_tag(dtype: np.dtype) -> str:
    dt = np.dtype(dtype).newbyteorder("<")
    if dt.kind not in _SUPPORTED_KINDS:
        raise CheckpointError(f"unsupported array dtype {dtype!r}")
    return dt.str


def write_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named arrays plus a metadata dict to ``path``."""
    directory = []
    payloads = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        tag = _dtype_tag(arr.dtype)
        raw = arr.astype(np.dtype(tag), copy=False).tobytes()
        directory.append(
            {"name": name, "dtype": tag, "shape": list(arr.shape), "offset": offset}
        )
        payloads.append(raw)
        offset += len(raw)

    header = json.dumps({"meta": meta or {}, "arrays": directory}).encode("utf-8")
    body = b"".join(
        [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(header)), header]
        + payloads
    )
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", crc))


def read_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container written by :func:`write_arrays`.

    Returns ``(arrays, meta)``.  Raises :class:`CheckpointError` on a bad
    magic, unsupported version, truncation, or CRC mismatch.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 20:
        raise CheckpointError(f"{path}: file too short to be a container")
    body, crc_bytes = blob[:-4], blob[-4:]
    if body[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {body[:4]!r}")
    (version,) = struct.unpack("<I", body[4:8])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")
    (crc_stored,) = struct.unpack("<I", crc_bytes)
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise CheckpointError(f"{path}: CRC mismatch (truncated or corrupt file)")

    (hlen,) = struct.unpack("<Q", body[8:16])
    if 16 + hlen > len(body):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(body[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed header ({exc})") from exc

    data_start = 16 + hlen
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        dt = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dt.itemsize * int(np.prod(shape, dtype=np.int64))
        start = data_start + entry["offset"]
        stop = start + nbytes
        if stop > len(body):
            raise CheckpointError(f"{path}: truncated array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(body[start:stop], dtype=dt).reshape(shape).copy()
    return arrays, header["meta"]
