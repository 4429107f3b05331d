"""Little-endian tensor records: ``b"TCAT"``, u32 rank, u64 extents, f64 payload."""

import json
import os
import struct

import numpy as np

MAGIC = b"TCAT"


class FormatError(ValueError):
    pass


def encode(array):
    array = np.ascontiguousarray(array, dtype="<f8")
    header = MAGIC + struct.pack("<I", array.ndim) + struct.pack(f"<{array.ndim}Q", *array.shape)
    return header + array.tobytes()


def decode(buf, offset=0):
    """Decode one record starting at ``offset``; returns ``(array, next_offset)``."""
    if bytes(buf[offset : offset + 4]) != MAGIC:
        raise FormatError(f"bad magic at offset {offset}")
    (rank,) = struct.unpack_from("<I", buf, offset + 4)
    pos = offset + 8
    shape = struct.unpack_from(f"<{rank}Q", buf, pos)
    pos += 8 * rank
    count = int(np.prod(shape)) if rank else 1
    end = pos + 8 * count
    if end > len(buf):
        raise FormatError("truncated tensor payload")
    data = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(shape)
    return data, end


def save_tensor(path, array):
    with open(path, "wb") as fh:
        fh.write(encode(array))


def load_tensor(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    data, end = decode(buf)
    if end != len(buf):
        raise FormatError("trailing bytes after tensor record")
    return data


def write_records(path, arrays):
    """Concatenate records into one file; returns each record's byte offset."""
    offsets, pos = [], 0
    with open(path, "wb") as fh:
        for arr in arrays:
            blob = encode(arr)
            offsets.append(pos)
            fh.write(blob)
            pos += len(blob)
    return offsets


def read_records(path, offsets):
    with open(path, "rb") as fh:
        buf = fh.read()
    return [decode(buf, off)[0] for off in offsets]


def save_state(manifest_path, state, extra=None):
    """Write a name->array mapping as a JSON manifest plus a sibling ``.bin`` payload."""
    bin_path = str(manifest_path) + ".bin"
    names = list(state)
    offsets = write_records(bin_path, [state[n] for n in names])
    manifest = {
        "payload": bin_path.rsplit("/", 1)[-1],
        "tensors": [
            {"name": n, "shape": list(np.shape(state[n])), "offset": off} for n, off in zip(names, offsets)
        ],
    }
    if extra:
        manifest.update(extra)
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def load_state(manifest_path):
    """Inverse of :func:`save_state`; returns ``(state, manifest)``."""
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    bin_path = os.path.join(os.path.dirname(str(manifest_path)), manifest["payload"])
    entries = manifest["tensors"]
    arrays = read_records(bin_path, [e["offset"] for e in entries])
    state = {}
    for e, arr in zip(entries, arrays):
        if list(arr.shape) != list(e["shape"]):
            raise FormatError(f"tensor {e['name']}: manifest shape {e['shape']} != payload {arr.shape}")
        state[e["name"]] = arr
    return state, manifest
