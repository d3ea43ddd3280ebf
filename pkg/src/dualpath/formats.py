"""Binary dataset (DPDS) and model (DPRN) files.

DPDS layout, little-endian::

    b"DPDS" | u32 version=1 | u64 n | u32 d_in | u32 d_out
    n records of (d_in + d_out + 1) float32: input, target, dc

DPRN layout, little-endian::

    b"DPRN" | u32 version=1 | u32 header_len | header_len bytes of UTF-8 JSON
    float32 parameters in flattened order

The JSON header carries ``{"layers": [...], "n_params": N}`` with sorted keys
and compact separators, so identical models produce identical bytes.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import ContractError, FormatError, ParseError, TruncationError
from .nn import NetworkParams, PatchBatch

__all__ = [
    "DATASET_MAGIC",
    "MODEL_MAGIC",
    "save_dataset",
    "load_dataset",
    "model_bytes",
    "read_model_bytes",
    "save_model",
    "load_model",
]

DATASET_MAGIC = b"DPDS"
MODEL_MAGIC = b"DPRN"
VERSION = 1
_DS_HEADER = struct.Struct("<4sIQII")
_MODEL_PREFIX = struct.Struct("<4sII")
_CHUNK = 65536


def save_dataset(batch: PatchBatch, path) -> None:
    n, d_in = batch.X.shape
    d_out = batch.Y.shape[1]
    with open(os.fspath(path), "wb") as fh:
        fh.write(_DS_HEADER.pack(DATASET_MAGIC, VERSION, n, d_in, d_out))
        for start in range(0, n, _CHUNK):
            sl = slice(start, start + _CHUNK)
            rec = np.hstack([batch.X[sl], batch.Y[sl], batch.dc[sl, None]]).astype("<f4")
            fh.write(rec.tobytes())


def load_dataset(path) -> PatchBatch:
    """Read a DPDS file; ``X``, ``Y`` and ``dc`` are float32 views of one record array."""
    with open(os.fspath(path), "rb") as fh:
        head = fh.read(_DS_HEADER.size)
        if len(head) < _DS_HEADER.size:
            raise TruncationError("DPDS header truncated", _DS_HEADER.size, len(head))
        magic, version, n, d_in, d_out = _DS_HEADER.unpack(head)
        if magic != DATASET_MAGIC:
            raise FormatError(f"bad dataset magic {magic!r}", offset=0)
        if version != VERSION:
            raise FormatError(f"unsupported dataset version {version}", offset=4)
        if n < 1 or d_in < 1 or d_out < 1:
            raise ParseError(f"invalid dataset dims n={n}, d_in={d_in}, d_out={d_out}", offset=8)
        width = d_in + d_out + 1
        expected = n * width * 4
        payload = fh.read(expected + 1)
    if len(payload) < expected:
        raise TruncationError("DPDS payload truncated", expected, len(payload))
    if len(payload) > expected:
        raise ParseError("trailing bytes after DPDS payload", offset=_DS_HEADER.size + expected)
    rec = np.frombuffer(payload[:expected], dtype="<f4").reshape(n, width)
    return PatchBatch(rec[:, :d_in], rec[:, d_in:d_in + d_out], rec[:, -1])


def model_bytes(params: NetworkParams) -> bytes:
    header = json.dumps(
        {"layers": params.describe(), "n_params": params.n_params},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    payload = params.flatten().astype("<f4")
    if not np.all(np.isfinite(payload)):
        raise ContractError("parameters are not finite in single precision")
    return _MODEL_PREFIX.pack(MODEL_MAGIC, VERSION, len(header)) + header + payload.tobytes()


def read_model_bytes(data: bytes) -> NetworkParams:
    if len(data) < _MODEL_PREFIX.size:
        raise TruncationError("DPRN header truncated", _MODEL_PREFIX.size, len(data))
    magic, version, hlen = _MODEL_PREFIX.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad model magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported model version {version}", offset=4)
    start = _MODEL_PREFIX.size
    raw = data[start:start + hlen]
    if len(raw) < hlen:
        raise TruncationError("DPRN JSON header truncated", hlen, len(raw))
    try:
        header = json.loads(raw.decode("utf-8"))
        layers = header["layers"]
        n_params = int(header["n_params"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"invalid DPRN JSON header: {exc}", offset=start) from exc
    start += hlen
    expected = n_params * 4
    payload = data[start:]
    if len(payload) < expected:
        raise TruncationError("DPRN payload truncated", expected, len(payload))
    if len(payload) > expected:
        raise ParseError("trailing bytes after DPRN payload", offset=start + expected)
    vec = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(vec))
    if bad.size:
        raise ParseError(f"non-finite parameter #{bad[0]}", offset=start + 4 * int(bad[0]))
    try:
        params = NetworkParams.from_description(layers, vec)
    except (ContractError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"inconsistent DPRN layer description: {exc}", offset=_MODEL_PREFIX.size)
    return params


def save_model(params: NetworkParams, path) -> None:
    with open(os.fspath(path), "wb") as fh:
        fh.write(model_bytes(params))


def load_model(path) -> NetworkParams:
    with open(os.fspath(path), "rb") as fh:
        return read_model_bytes(fh.read())
