"""Single-file checkpoint format: one JSON header line, then raw float64 data.

The header records a format version, the model configuration, a name -> (byte
offset, shape) index into the data section, and free-form `extra` metadata.
Round trips are byte-exact: values are written as little-endian float64 with
no transformation.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .tensor import Tensor

FORMAT_NAME = "nodulebench-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, params: Mapping[str, Tensor | np.ndarray],
                    config: Mapping[str, Any], extra: Mapping[str, Any] | None = None) -> None:
    path = Path(path)
    names = sorted(params)
    index: dict[str, dict[str, Any]] = {}
    blobs: list[bytes] = []
    offset = 0
    for name in names:
        arr = params[name]
        data = arr.data if isinstance(arr, Tensor) else np.asarray(arr)
        data = np.ascontiguousarray(data, dtype="<f8")
        raw = data.tobytes()
        index[name] = {"offset": offset, "shape": list(data.shape)}
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": dict(config),
        "extra": dict(extra) if extra else {},
        "params": index,
    }
    header_line = json.dumps(header, sort_keys=True) + "\n"
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header_line.encode("utf-8"))
        for raw in blobs:
            fh.write(raw)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any], dict[str, Any]]:
    """Returns (params, config, extra)."""
    path = Path(path)
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"{path}: bad checkpoint header: {e}") from None
        if header.get("format") != FORMAT_NAME:
            raise CheckpointError(f"{path}: not a {FORMAT_NAME} file")
        if header.get("version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {header.get('version')}")
        payload = fh.read()

    params: dict[str, np.ndarray] = {}
    for name, entry in header["params"].items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = int(entry["offset"])
        stop = start + count * 8
        if stop > len(payload):
            raise CheckpointError(f"{path}: truncated data for parameter '{name}'")
        arr = np.frombuffer(payload[start:stop], dtype="<f8").reshape(shape)
        params[name] = arr.copy()  # writable, decoupled from the buffer
    return params, header["config"], header.get("extra", {})


def params_allclose(a: Mapping[str, np.ndarray], b: Mapping[str, np.ndarray]) -> bool:
    if set(a) != set(b):
        return False
    return all(np.array_equal(np.asarray(a[k], dtype=np.float64),
                              np.asarray(b[k], dtype=np.float64)) for k in a)
