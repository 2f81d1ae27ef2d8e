"""Versioned binary container for trained models.

Layout::

    b"SEFUNMDL"  magic
    uint32       format version
    uint64       length of the JSON header
    bytes        JSON header (UTF-8, sorted keys): metadata + tensor index
    bytes        tensor payloads, little-endian float64, row-major

Writing the same parameters and metadata always yields the same bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..taxonomy import Level1, Level2

MAGIC = b"SEFUNMDL"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def taxonomy_codes() -> dict:
    return {
        "level1": {l1.name: int(l1) for l1 in Level1},
        "level2": {l2.name_en: int(l2) for l2 in Level2},
    }


def save_model(path, kind: str, meta: dict, params: dict[str, np.ndarray]) -> None:
    index = []
    offset = 0
    for name in sorted(params):
        a = np.ascontiguousarray(params[name], dtype="<f8")
        index.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.nbytes
    header = {
        "kind": kind,
        "meta": meta,
        "taxonomy": taxonomy_codes(),
        "tensors": index,
    }
    blob = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for name in sorted(params):
            fh.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())


def load_model(path, expect_kind: str | None = None) -> tuple[str, dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ModelFormatError(f"{path}: not a sefun model file")
    version, n = struct.unpack_from("<IQ", data, 8)
    if version != VERSION:
        raise ModelFormatError(f"{path}: unsupported model version {version}")
    start = 8 + struct.calcsize("<IQ")
    header = json.loads(data[start:start + n].decode("utf-8"))
    if header["taxonomy"] != taxonomy_codes():
        raise ModelFormatError(f"{path}: taxonomy codes differ from this build")
    kind = header["kind"]
    if expect_kind is not None and kind != expect_kind:
        raise ModelFormatError(f"{path}: expected a {expect_kind} model, found {kind}")
    payload = start + n
    params = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"], dtype=np.int64))
        a = np.frombuffer(data, dtype="<f8", count=count, offset=payload + t["offset"])
        params[t["name"]] = a.reshape(t["shape"]).astype(np.float64)
    return kind, header["meta"], params
