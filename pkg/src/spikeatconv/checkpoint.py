"""Binary checkpoint format.

Layout: 8-byte magic ``SPKATCK1``, little-endian uint64 header length, UTF-8
JSON header, then every tensor's raw little-endian bytes back to back in
header order. The header carries the resolved config text, normalisation
statistics, the training position and, per tensor, its name, dtype, shape and
byte offset.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError

MAGIC = b"SPKATCK1"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    config_text: str = ""
    meta: dict = field(default_factory=dict)

    def params(self) -> dict[str, np.ndarray]:
        return {k[len("param."):]: v for k, v in self.tensors.items() if k.startswith("param.")}

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)}


def save(path, ckpt: Checkpoint) -> None:
    index, blobs, offset = [], [], 0
    for name, arr in ckpt.tensors.items():
        a = np.ascontiguousarray(arr)
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = a.tobytes()
        index.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset,
                      "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"version": FORMAT_VERSION, "config": ckpt.config_text, "meta": ckpt.meta,
                         "tensors": index}, sort_keys=True).encode("utf-8")
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)
    os.replace(tmp, path)


def load(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise DataFormatError(f"{path}: not a checkpoint (bad magic {raw[:8]!r})")
    if len(raw) < 16:
        raise DataFormatError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: corrupt header ({exc})") from None
    if header.get("version") != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {header.get('version')}")
    body = raw[16 + hlen:]
    tensors = {}
    for entry in header["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(body):
            raise DataFormatError(f"{path}: tensor {entry['name']} runs past end of file "
                                  f"({start + n} > {len(body)} bytes)")
        arr = np.frombuffer(body, dtype=np.dtype(entry["dtype"]), count=n // np.dtype(entry["dtype"]).itemsize,
                            offset=start)
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(arr.dtype.newbyteorder("="))
    return Checkpoint(tensors, header["config"], header["meta"])
