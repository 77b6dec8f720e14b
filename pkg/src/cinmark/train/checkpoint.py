"""Checkpoint file I/O.

Layout (all integers little-endian)::

    offset 0   4 bytes   magic b"CINW"
    offset 4   u32       format version (1)
    offset 8   u32       header length N in bytes
    offset 12  N bytes   UTF-8 JSON header
    offset 12+N          tensor blobs, float32 little-endian, C order

The header holds ``model`` (architecture settings), ``meta`` (stage history
and training metadata), ``optimizer`` (Adam scalars, or null) and
``tensors``: a list of ``{"name", "shape", "offset", "nbytes"}`` where
``offset`` counts from the first blob byte. Adam moments are stored as
tensors named ``adam.m.<param>`` and ``adam.v.<param>``.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from ..core.optim import AdamState
from ..model import CIN, ModelConfig

MAGIC = b"CINW"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: CIN, meta: Optional[dict] = None, optimizer: Optional[AdamState] = None) -> Path:
    path = Path(path)
    tensors = dict(model.state_dict())
    opt_header = None
    if optimizer is not None:
        opt_header = {"lr": optimizer.lr, "beta1": optimizer.beta1, "beta2": optimizer.beta2,
                      "eps": optimizer.eps, "t": optimizer.t}
        for name, arr in optimizer.m.items():
            tensors[f"adam.m.{name}"] = arr
            tensors[f"adam.v.{name}"] = optimizer.v[name]

    directory, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    meta = dict(meta or {})
    meta["niam_trained"] = bool(model.niam_trained)
    header = json.dumps({"model": model.config.to_dict(), "meta": meta, "optimizer": opt_header,
                         "tensors": directory}).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)
    return path


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read(fh)[0]


def _read(fh) -> Tuple[dict, int]:
    magic = fh.read(4)
    if magic != MAGIC:
        raise CheckpointError(f"not a checkpoint (magic {magic!r})")
    version, n = struct.unpack("<II", fh.read(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    return json.loads(fh.read(n).decode("utf-8")), 12 + n


def load_checkpoint(path) -> Tuple[CIN, dict, Optional[AdamState]]:
    """Returns (model, meta, optimizer state or None)."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    header, start = _read(io.BytesIO(raw))
    arrays = {}
    for entry in header["tensors"]:
        lo = start + entry["offset"]
        buf = raw[lo:lo + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(buf, dtype="<f4").astype(np.float32).reshape(entry["shape"])

    model = CIN(ModelConfig.from_dict(header["model"]))
    model.load_state_dict({k: v for k, v in arrays.items() if not k.startswith("adam.")})
    meta = header.get("meta") or {}
    model.niam_trained = bool(meta.get("niam_trained", False))
    opt = None
    if header.get("optimizer"):
        o = header["optimizer"]
        opt = AdamState(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"], t=o["t"])
        for k, v in arrays.items():
            if k.startswith("adam.m."):
                opt.m[k[7:]] = v.copy()
            elif k.startswith("adam.v."):
                opt.v[k[7:]] = v.copy()
    return model, meta, opt
