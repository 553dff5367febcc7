"""A minimal self-describing binary container.

Checkpoints, datasets, and retrieval indexes all share one on-disk layout:

    magic "CONA" | uint64 LE header length | UTF-8 JSON header | raw blocks

The header carries a ``kind``, a format version, arbitrary metadata, and a
``blocks`` list of ``{"name", "shape"}`` entries.  Blocks are float64
little-endian arrays stored back to back in declaration order, so identical
arrays always produce identical bytes.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .exceptions import IoError

MAGIC = b"CONA"


def write_container(path: str, header: dict, blocks: list[tuple[str, np.ndarray]]) -> None:
    """Write header + named float64 blocks atomically (tmp file + rename).

    The header must not already contain a "blocks" entry; it is derived
    from ``blocks`` so names, shapes, and payload always agree.
    """
    if "blocks" in header:
        raise ValueError("header must not pre-declare 'blocks'")
    doc = dict(header)
    doc["blocks"] = [{"name": name, "shape": list(arr.shape)} for name, arr in blocks]
    payload = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for _, arr in blocks:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    os.replace(tmp, path)


def read_container(path: str, expected_kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container back as (header, {block name: array}).

    Raises:
        IoError: on missing files, bad magic, truncation, or trailing bytes.
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(raw) < len(MAGIC) + 8 or raw[: len(MAGIC)] != MAGIC:
        raise IoError(f"{path} is not a container file (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[len(MAGIC) : len(MAGIC) + 8])
    start = len(MAGIC) + 8
    if len(raw) < start + hlen:
        raise IoError(f"{path} is truncated inside the header")
    try:
        header = json.loads(raw[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IoError(f"{path} has a malformed header: {exc}") from exc
    if expected_kind is not None and header.get("kind") != expected_kind:
        raise IoError(f"{path} holds kind {header.get('kind')!r}, expected {expected_kind!r}")
    offset = start + hlen
    out: dict[str, np.ndarray] = {}
    for entry in header.get("blocks", []):
        shape = tuple(int(x) for x in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if len(raw) < offset + nbytes:
            raise IoError(f"{path} is truncated inside block {entry['name']!r}")
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
        out[entry["name"]] = arr.astype(np.float64, copy=True)
        offset += nbytes
    if offset != len(raw):
        raise IoError(f"{path} has {len(raw) - offset} trailing bytes")
    return header, out
