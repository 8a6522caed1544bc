"""Resampling, nodule-centered cropping, augmentation, intensity windowing."""
from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from ..engine import Tensor
from .volume import AIR_HU, Volume, VolumeError

# HU window applied before the network; clip then map to [0, 1]
WINDOW_LO = -1000.0
WINDOW_HI = 400.0

# isotropic grid the model sees, per scale profile
TARGET_SPACING_MM = {"paper": 0.6, "desk": 2.0}

MAX_JITTER_VOX = 8


def resample_isotropic(volume: Volume, target_spacing_mm: float) -> Volume:
    """Trilinear resample onto an isotropic grid of the given spacing.

    The new grid spans the same physical extent (voxel centers at i * spacing,
    last center never beyond the original). Already-aligned grids pass through
    with values unchanged.
    """
    t = float(target_spacing_mm)
    if t <= 0:
        raise VolumeError(f"target spacing must be positive, got {t}")
    new_dims = tuple(int(math.floor((n - 1) * s / t)) + 1
                     for n, s in zip(volume.dims, volume.spacing))
    # index-space sample positions: j * t / s along each axis
    axes = [np.arange(nd) * (t / s) for nd, s in zip(new_dims, volume.spacing)]
    grid = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([g.ravel() for g in grid])
    sampled = ndimage.map_coordinates(volume.voxels, coords, order=1, mode="nearest")
    return Volume(voxels=sampled.reshape(new_dims), spacing=(t, t, t))


def crop_patch(volume: Volume, center_mm, size_vox: int) -> Volume:
    """size_vox^3 patch centered on the voxel nearest center_mm, air-padded."""
    if not volume.is_isotropic:
        raise VolumeError("crop_patch requires an isotropic volume; resample first")
    if size_vox <= 0:
        raise VolumeError(f"size_vox must be positive, got {size_vox}")
    center = volume.voxel_of_mm(center_mm)  # raises if outside
    half = size_vox // 2
    out = np.full((size_vox,) * 3, AIR_HU, dtype=np.float64)
    src_lo, src_hi, dst_lo, dst_hi = [], [], [], []
    for c, n in zip(center, volume.dims):
        lo = c - half
        hi = lo + size_vox
        src_lo.append(max(lo, 0))
        src_hi.append(min(hi, n))
        dst_lo.append(max(-lo, 0))
        dst_hi.append(max(-lo, 0) + max(min(hi, n) - max(lo, 0), 0))
    if all(h > l for l, h in zip(src_lo, src_hi)):
        out[dst_lo[0]:dst_hi[0], dst_lo[1]:dst_hi[1], dst_lo[2]:dst_hi[2]] = \
            volume.voxels[src_lo[0]:src_hi[0], src_lo[1]:src_hi[1], src_lo[2]:src_hi[2]]
    return Volume(voxels=out, spacing=volume.spacing)


def patch_center_mm(size_vox: int, spacing: float) -> tuple[float, float, float]:
    """Physical location the crop center lands on inside its own patch."""
    c = (size_vox // 2) * spacing
    return (c, c, c)


def apply_augment(patch: Volume, flips: tuple[bool, bool, bool],
                  offsets: tuple[int, int, int]) -> Volume:
    """Deterministic core of `augment`: axis flips then an air-padded shift."""
    vox = patch.voxels
    for axis, flip in enumerate(flips):
        if flip:
            vox = np.flip(vox, axis=axis)
    n = patch.dims[0]
    out = np.full_like(vox, AIR_HU)
    src = []
    dst = []
    for off in offsets:
        if abs(off) >= n:
            raise VolumeError(f"jitter offset {off} exceeds patch extent {n}")
        src.append(slice(max(0, off), min(n, n + off)))
        dst.append(slice(max(0, -off), min(n, n - off)))
    out[tuple(dst)] = vox[tuple(src)]
    return Volume(voxels=out, spacing=patch.spacing)


def augment(patch: Volume, rng: np.random.Generator,
            max_jitter: int = MAX_JITTER_VOX) -> Volume:
    """Random axis flips (p=0.5 each) plus a sub-crop/pad-back translation."""
    if len(set(patch.dims)) != 1:
        raise VolumeError(f"augment expects a cubic patch, got {patch.dims}")
    flips = tuple(bool(rng.random() < 0.5) for _ in range(3))
    offsets = tuple(int(rng.integers(-max_jitter, max_jitter + 1)) for _ in range(3))
    return apply_augment(patch, flips, offsets)


def normalize_intensity(patch: Volume) -> Tensor:
    """Clip to the HU window and map onto [0, 1]."""
    clipped = np.clip(patch.voxels, WINDOW_LO, WINDOW_HI)
    return Tensor((clipped - WINDOW_LO) / (WINDOW_HI - WINDOW_LO))


def prepare_input(volume: Volume, center_mm, size_vox: int,
                  target_spacing_mm: float,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Full path from a raw volume to a normalized (size^3) network input.

    `center_mm` is in the raw volume's coordinates; it is carried through the
    resample (physical coordinates are spacing-invariant). rng enables
    training-time augmentation.
    """
    iso = resample_isotropic(volume, target_spacing_mm)
    patch = crop_patch(iso, center_mm, size_vox)
    if rng is not None:
        patch = augment(patch, rng)
    return normalize_intensity(patch)
