"""Checkpoint serialization.

Layout: 8 bytes little-endian u64 header length, then the UTF-8 JSON
header (layer specs, parameter shapes/dtypes, rng seed, training step,
arbitrary model metadata), then each parameter's raw bytes little-endian
in declaration order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import ValidationError
from .tensor import Tensor

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(path, header: dict, params: list[Tensor]) -> None:
    header = dict(header)
    header["params"] = [
        {"name": p.name, "shape": list(p.shape), "dtype": str(p.dtype)}
        for p in params
    ]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for p in params:
            dtype = _DTYPES.get(str(p.dtype))
            if dtype is None:
                raise ValidationError(f"cannot serialize parameter dtype {p.dtype}")
            fh.write(np.ascontiguousarray(p.data, dtype=dtype).tobytes())


def load_checkpoint(path) -> tuple[dict, list[np.ndarray]]:
    with open(path, "rb") as fh:
        raw = fh.read(8)
        if len(raw) != 8:
            raise ValidationError(f"truncated checkpoint {path}")
        (hlen,) = struct.unpack("<Q", raw)
        header = json.loads(fh.read(hlen).decode("utf-8"))
        values = []
        for meta in header["params"]:
            dtype = _DTYPES.get(meta["dtype"])
            if dtype is None:
                raise ValidationError(f"unknown parameter dtype {meta['dtype']} in {path}")
            count = int(np.prod(meta["shape"])) if meta["shape"] else 1
            buf = fh.read(count * np.dtype(dtype).itemsize)
            arr = np.frombuffer(buf, dtype=dtype).copy()
            if arr.size != count:
                raise ValidationError(f"truncated parameter payload in {path}")
            values.append(arr.reshape(meta["shape"]).astype(meta["dtype"]))
    return header, values
