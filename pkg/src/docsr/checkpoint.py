"""Single-file checkpoint container.

Layout: 8-byte magic, uint32 header length, JSON header, raw array
payload. The header carries the format version, a free-form config dict,
the array directory (name, shape, dtype, byte offset/length in payload
order) and a crc32 of the payload; arrays are little-endian and float
arrays are stored as 32-bit unless declared otherwise. Truncation or a
bad checksum raises CheckpointError.
"""

from __future__ import annotations

import json
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"DOCSRCK1"
FORMAT_VERSION = 1

_DTYPES = {"f4": "<f4", "f8": "<f8", "i8": "<i8", "u1": "|u1"}


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray], config: dict,
                    extra: dict | None = None) -> None:
    """Write named arrays plus a config dict. Float arrays are stored f4
    unless they already are f8/i8/u1."""
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype == np.float64 or arr.dtype == np.float32:
            data = arr.astype("<f4", copy=False)
            code = "f4"
        elif arr.dtype == np.int64:
            data = arr.astype("<i8", copy=False)
            code = "i8"
        elif arr.dtype == np.uint8:
            data = arr
            code = "u1"
        else:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        raw = np.ascontiguousarray(data).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": code,
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)

    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "arrays": entries,
        "payload_crc32": zlib.crc32(payload) & 0xFFFFFFFF,
        "payload_nbytes": len(payload),
    }
    if extra:
        header.update(extra)
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(np.uint32(len(hdr)).tobytes())
        f.write(hdr)
        f.write(payload)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back (arrays, header). Arrays come out with their stored dtype."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
    if len(blob) < 12 or blob[:8] != MAGIC:
        raise CheckpointError("corrupt checkpoint: bad magic")
    hlen = int(np.frombuffer(blob[8:12], dtype="<u4")[0])
    if len(blob) < 12 + hlen:
        raise CheckpointError("corrupt checkpoint: truncated header")
    try:
        header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: bad header ({exc})") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {header.get('format_version')} "
            f"not supported (expected {FORMAT_VERSION})")
    payload = blob[12 + hlen:]
    if len(payload) != header["payload_nbytes"]:
        raise CheckpointError("corrupt checkpoint: truncated payload")
    if (zlib.crc32(payload) & 0xFFFFFFFF) != header["payload_crc32"]:
        raise CheckpointError("corrupt checkpoint: checksum mismatch")

    arrays = {}
    for ent in header["arrays"]:
        lo, n = ent["offset"], ent["nbytes"]
        arr = np.frombuffer(payload[lo:lo + n], dtype=_DTYPES[ent["dtype"]])
        arrays[ent["name"]] = arr.reshape(ent["shape"]).copy()
    return arrays, header
