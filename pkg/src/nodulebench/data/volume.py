"""CT-like volumes and the `.vol` file format.

A `.vol` file is a single JSON header line (dims, spacing, dtype) followed by
raw little-endian float32 voxels in row-major order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

AIR_HU = -1024.0


class VolumeError(ValueError):
    pass


@dataclass(frozen=True)
class Volume:
    """Scalar grid with physical spacing. voxels[x, y, z], spacing in mm."""
    voxels: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        v = np.asarray(self.voxels, dtype=np.float64)
        object.__setattr__(self, "voxels", v)
        if v.ndim != 3 or v.size == 0:
            raise VolumeError(f"voxels must be a non-empty 3-D grid, got shape {v.shape}")
        sp = tuple(float(s) for s in self.spacing)
        if len(sp) != 3 or any(s <= 0 for s in sp):
            raise VolumeError(f"spacing must be 3 positive extents, got {self.spacing}")
        object.__setattr__(self, "spacing", sp)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.voxels.shape  # type: ignore[return-value]

    @property
    def extent_mm(self) -> tuple[float, float, float]:
        """Physical span between first and last voxel centers, per axis."""
        return tuple((n - 1) * s for n, s in zip(self.dims, self.spacing))

    @property
    def is_isotropic(self) -> bool:
        sx, sy, sz = self.spacing
        return abs(sx - sy) < 1e-9 and abs(sy - sz) < 1e-9

    def voxel_of_mm(self, point_mm) -> tuple[int, int, int]:
        """Nearest voxel index for a physical point (voxel centers at i * spacing)."""
        idx = tuple(int(round(p / s)) for p, s in zip(point_mm, self.spacing))
        for i, n in zip(idx, self.dims):
            if i < 0 or i >= n:
                raise VolumeError(f"point {tuple(point_mm)} mm falls outside the volume")
        return idx


def save_volume(path: str | Path, volume: Volume) -> None:
    path = Path(path)
    header = {
        "dims": list(volume.dims),
        "spacing": list(volume.spacing),
        "dtype": "<f4",
    }
    data = np.ascontiguousarray(volume.voxels, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        fh.write(data.tobytes())


def load_volume(path: str | Path) -> Volume:
    path = Path(path)
    with open(path, "rb") as fh:
        try:
            header = json.loads(fh.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise VolumeError(f"{path}: bad volume header: {e}") from None
        dims = tuple(int(d) for d in header["dims"])
        dtype = header.get("dtype", "<f4")
        if dtype != "<f4":
            raise VolumeError(f"{path}: unsupported dtype {dtype!r}")
        count = dims[0] * dims[1] * dims[2]
        raw = fh.read(count * 4)
    if len(raw) != count * 4:
        raise VolumeError(f"{path}: truncated voxel data")
    voxels = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float64)
    return Volume(voxels=voxels, spacing=tuple(header["spacing"]))
