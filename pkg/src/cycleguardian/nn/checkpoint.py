"""Checkpoint container: magic bytes, version, JSON tensor table, raw
little-endian payloads with a CRC32 per tensor."""

import json
import struct
import zlib

import numpy as np

MAGIC = b"CGRD"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, state, meta=None):
    """Write a name->ndarray mapping plus a free-form metadata dict."""
    entries = []
    payloads = []
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": arr.dtype.str.lstrip("<>=|"),
                "nbytes": len(raw),
                "crc32": zlib.crc32(raw) & 0xFFFFFFFF,
            }
        )
        payloads.append(raw)
    header = json.dumps({"version": VERSION, "tensors": entries, "meta": meta or {}}).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for raw in payloads:
            f.write(raw)


def load_checkpoint(path):
    """Read back (state dict, meta dict); validates magic, version, CRCs."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (hlen,) = struct.unpack_from("<Q", blob, 8)
    if 16 + hlen > len(blob):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[16 : 16 + hlen])
    except ValueError as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from None
    state = {}
    off = 16 + hlen
    for ent in header["tensors"]:
        raw = blob[off : off + ent["nbytes"]]
        if len(raw) != ent["nbytes"]:
            raise CheckpointError(f"{path}: truncated payload for {ent['name']}")
        if (zlib.crc32(raw) & 0xFFFFFFFF) != ent["crc32"]:
            raise CheckpointError(f"{path}: CRC mismatch for {ent['name']}")
        arr = np.frombuffer(raw, dtype=np.dtype("<" + ent["dtype"])).reshape(ent["shape"])
        state[ent["name"]] = arr.copy()
        off += ent["nbytes"]
    return state, header.get("meta", {})
