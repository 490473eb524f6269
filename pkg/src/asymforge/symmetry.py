"""Left-right mirroring and integer-offset mirror calibration.

The mirror flips the volume across the brain's midplane (the width/x axis by
default) and then translates it by a signed voxel offset:

    out(x, y, z) = in(W - 1 - x + offset, y, z)

with zeros wherever the reflected index leaves the array. Calibration picks
the offset that best aligns the brain's outline with the outline of its own
mirror image, scoring each candidate by the number of disagreeing outline
voxels (XOR count). Note that translating a mirror-symmetric object by t
voxels moves its best offset to 2*t: the reflection doubles any displacement
of the symmetry plane.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyBrainMask
from .volume import BrainMask, MultiModalVolume, Volume3D, compute_brain_mask

MIRROR_AXIS_DEFAULT = 2  # width / x
SEARCH_RADIUS_DEFAULT = 10

def _erode6(mask: np.ndarray) -> np.ndarray:
    """Binary erosion under 6-connectivity with out-of-array as background."""
    er = mask.copy()
    er[1:, :, :] &= mask[:-1, :, :]
    er[:-1, :, :] &= mask[1:, :, :]
    er[:, 1:, :] &= mask[:, :-1, :]
    er[:, :-1, :] &= mask[:, 1:, :]
    er[:, :, 1:] &= mask[:, :, :-1]
    er[:, :, :-1] &= mask[:, :, 1:]
    for axis in range(3):
        face = [slice(None)] * 3
        face[axis] = 0
        er[tuple(face)] = False
        face[axis] = -1
        er[tuple(face)] = False
    return er


@dataclass(frozen=True)
class MirrorSpec:
    """Mirror axis plus the calibrated integer translation along it."""

    axis: int = MIRROR_AXIS_DEFAULT
    offset: int = 0


def mirror_array(data: np.ndarray, axis: int = MIRROR_AXIS_DEFAULT, offset: int = 0) -> np.ndarray:
    """Reflect ``data`` along ``axis`` and translate by ``offset`` voxels,
    zero-filling indices that fall outside the array."""
    flipped = np.flip(data, axis)
    if offset == 0:
        return np.ascontiguousarray(flipped)
    out = np.zeros_like(data)
    w = data.shape[axis]
    if abs(offset) >= w:
        return out
    dst = [slice(None)] * data.ndim
    src = [slice(None)] * data.ndim
    if offset > 0:
        dst[axis] = slice(offset, w)
        src[axis] = slice(0, w - offset)
    else:
        dst[axis] = slice(0, w + offset)
        src[axis] = slice(-offset, w)
    out[tuple(dst)] = flipped[tuple(src)]
    return out


def vflip(vol: Volume3D, spec: MirrorSpec = MirrorSpec()) -> Volume3D:
    """Mirror a volume according to ``spec``."""
    return Volume3D(mirror_array(vol.data, spec.axis, spec.offset), vol.spacing)


def vflip_mask(mask: BrainMask, spec: MirrorSpec = MirrorSpec()) -> BrainMask:
    return BrainMask(mirror_array(mask.data, spec.axis, spec.offset))


def outline(mask: BrainMask) -> BrainMask:
    """Boundary shell: mask voxels with at least one false 6-neighbor.

    Voxels beyond the array border count as background, so foreground
    touching the border is part of the outline.
    """
    return BrainMask(mask.data & ~_erode6(mask.data))


def _support_clears_border(mask: np.ndarray, axis: int, radius: int) -> bool:
    """True when every foreground voxel stays strictly interior along ``axis``
    under any shift up to ``radius``; then outline commutes with the shift."""
    hit = np.any(mask, axis=tuple(i for i in range(mask.ndim) if i != axis))
    idx = np.nonzero(hit)[0]
    if idx.size == 0:
        return True
    w = mask.shape[axis]
    return idx[0] >= radius + 1 and idx[-1] <= w - 2 - radius


def calibration_costs(
    mask: BrainMask, radius: int, axis: int = MIRROR_AXIS_DEFAULT
) -> list[tuple[int, int]]:
    """Outline-mismatch cost for every offset in [-radius, radius].

    cost(t) = |outline(mask) XOR outline(mirror_t(mask))| in voxels.
    When the brain keeps a ``radius`` margin from the mirror-axis borders the
    outline of the shifted mirror equals the shifted mirror of the outline,
    so one erosion serves the whole sweep; otherwise each offset is scored
    literally.
    """
    base = outline(mask).data
    shift_commutes = _support_clears_border(mask.data, axis, radius)
    costs = []
    for t in range(-radius, radius + 1):
        if shift_commutes:
            moved = mirror_array(base, axis, t)
        else:
            moved = outline(BrainMask(mirror_array(mask.data, axis, t))).data
        costs.append((t, int(np.count_nonzero(base ^ moved))))
    return costs


def pick_offset(costs: list[tuple[int, int]]) -> int:
    """Lowest cost wins; ties break toward smaller |t|, then toward negative t."""
    return min(costs, key=lambda tc: (tc[1], abs(tc[0]), tc[0]))[0]


def calibrate(
    image: MultiModalVolume,
    radius: int = SEARCH_RADIUS_DEFAULT,
    axis: int = MIRROR_AXIS_DEFAULT,
    mask: BrainMask | None = None,
) -> MirrorSpec:
    """Find the mirror offset that minimizes brain-outline mismatch."""
    if mask is None:
        mask = compute_brain_mask(image)
    if not mask.data.any():
        raise EmptyBrainMask("cannot calibrate: no foreground voxels")
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    return MirrorSpec(axis=axis, offset=pick_offset(calibration_costs(mask, radius, axis)))
