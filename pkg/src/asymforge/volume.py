"""Co-registered multi-modal volumes: domain types, loading, normalization,
cropping and augmentation.

Conventions used throughout the package:

* voxel arrays are C-order ``(depth, height, width)`` so x (width) varies
  fastest, matching the on-disk layout of both supported formats;
* modality slots are ordered ``FLAIR, T1ce, T1, T2``;
* label volumes use the BraTS vocabulary {0, 1 (NCR/NET), 2 (ED), 4 (ET)};
* every type is immutable after construction and every operation is a pure
  function; RNG state is always passed in explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
import scipy.ndimage

from . import io
from .errors import (
    DegenerateIntensity,
    DimensionMismatch,
    LabelOutOfVocabulary,
    SourceTooSmall,
    TooFewModalities,
)

MODALITIES = ("flair", "t1ce", "t1", "t2")
N_MODALITIES = len(MODALITIES)
LABEL_VOCABULARY = (0, 1, 2, 4)

# Axes of the (depth, height, width) layout.
AXIAL_AXIS = 0
DEFAULT_SPACING = (1.0, 1.0, 1.0)

AUGMENT_OPS = ("rotate90", "rotate_free", "flip", "intensity_shift")


@dataclass(frozen=True, eq=False)
class Volume3D:
    """A single scalar 3-D volume, float32, C-order (depth, height, width)."""

    data: np.ndarray
    spacing: tuple[float, float, float] = DEFAULT_SPACING

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"volume data must be 3-D, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValueError(f"volume dims must be >= 1, got {arr.shape}")
        # min/max are NaN-poisoning and cheaper than isfinite over the volume
        if not (np.isfinite(float(arr.min())) and np.isfinite(float(arr.max()))):
            raise ValueError("volume contains NaN or Inf")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]


@dataclass(frozen=True, eq=False)
class MultiModalVolume:
    """An ordered 4-slot bundle [FLAIR, T1ce, T1, T2] of optional volumes."""

    modalities: tuple[Volume3D | None, Volume3D | None, Volume3D | None, Volume3D | None]

    def __post_init__(self) -> None:
        mods = tuple(self.modalities)
        if len(mods) != N_MODALITIES:
            raise ValueError(f"expected {N_MODALITIES} modality slots, got {len(mods)}")
        present = [m for m in mods if m is not None]
        if not present:
            raise ValueError("at least one modality must be present")
        dims = present[0].dims
        for m in present[1:]:
            if m.dims != dims:
                raise DimensionMismatch(f"modalities disagree on dims: {m.dims} vs {dims}")
        object.__setattr__(self, "modalities", mods)

    @property
    def availability(self) -> tuple[bool, bool, bool, bool]:
        return tuple(m is not None for m in self.modalities)  # type: ignore[return-value]

    @property
    def dims(self) -> tuple[int, int, int]:
        return next(m for m in self.modalities if m is not None).dims

    def present(self) -> Iterator[tuple[int, Volume3D]]:
        """Yield (slot index, volume) for each available modality."""
        for i, m in enumerate(self.modalities):
            if m is not None:
                yield i, m

    def map(self, fn) -> "MultiModalVolume":
        """Apply ``fn(slot, Volume3D) -> Volume3D`` to every present modality."""
        return MultiModalVolume(
            tuple(fn(i, m) if m is not None else None for i, m in enumerate(self.modalities))
        )


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Per-voxel tumor labels restricted to {0, 1, 2, 4}, stored as uint8."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ValueError(f"label data must be 3-D, got shape {arr.shape}")
        if not np.isin(arr, LABEL_VOCABULARY).all():
            bad = sorted(set(np.unique(arr).tolist()) - set(LABEL_VOCABULARY))
            raise LabelOutOfVocabulary(f"labels outside {{0,1,2,4}}: {bad}")
        object.__setattr__(self, "data", np.ascontiguousarray(arr, dtype=np.uint8))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]


@dataclass(frozen=True, eq=False)
class BrainMask:
    """Boolean foreground mask with the same layout as its source volume."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data, dtype=bool)
        if arr.ndim != 3:
            raise ValueError(f"mask data must be 3-D, got shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    def count(self) -> int:
        return int(np.count_nonzero(self.data))


@dataclass(frozen=True, eq=False)
class Sample:
    """A loaded subject: image bundle plus (optionally) its annotation."""

    sample_id: str
    image: MultiModalVolume
    labels: LabelVolume | None = None

    def __post_init__(self) -> None:
        if self.labels is not None and self.labels.dims != self.image.dims:
            raise DimensionMismatch(
                f"labels dims {self.labels.dims} != image dims {self.image.dims}"
            )


# ---------------------------------------------------------------------------
# I/O


def _read_volume_file(path: str | Path) -> tuple[np.ndarray, tuple[float, float, float]]:
    if str(path).endswith(".mmv"):
        arr = io.read_mmv(path)
        if arr.shape[0] != 1:
            raise DimensionMismatch(f"{path}: expected 1 channel, got {arr.shape[0]}")
        return arr[0], DEFAULT_SPACING
    return io.read_nifti(path)


def load_sample(
    image_paths: Sequence[str | Path | None],
    label_path: str | Path | None = None,
    sample_id: str = "",
) -> tuple[MultiModalVolume, LabelVolume | None]:
    """Load a subject from up to four modality files plus an optional label file.

    Accepts NIfTI-1 (.nii / .nii.gz) or the internal .mmv format. Image data
    is converted to float32, labels to uint8 with the {0,1,2,4} vocabulary
    enforced. All files must agree on dims.
    """
    if len(image_paths) != N_MODALITIES:
        raise ValueError(f"expected {N_MODALITIES} image paths, got {len(image_paths)}")
    slots: list[Volume3D | None] = []
    for path in image_paths:
        if path is None:
            slots.append(None)
            continue
        raw, spacing = _read_volume_file(path)
        slots.append(Volume3D(raw.astype(np.float32), spacing))
    image = MultiModalVolume(tuple(slots))

    labels = None
    if label_path is not None:
        raw, _ = _read_volume_file(label_path)
        labels = LabelVolume(raw)  # vocabulary check happens in the constructor
        if labels.dims != image.dims:
            raise DimensionMismatch(
                f"label dims {labels.dims} != image dims {image.dims}"
            )
    return image, labels


def save_sample(
    image: MultiModalVolume,
    labels: LabelVolume | None,
    out_dir: str | Path,
    stem: str = "sample",
) -> tuple[list[str | None], str | None]:
    """Write a subject as one .mmv per present modality plus a label .mmv.

    Returns (image_paths, label_path) suitable for a manifest entry;
    ``load_sample`` on those paths reproduces the voxel data bit-exactly.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    image_paths: list[str | None] = []
    for i, name in enumerate(MODALITIES):
        vol = image.modalities[i]
        if vol is None:
            image_paths.append(None)
            continue
        path = out_dir / f"{stem}_{name}.mmv"
        io.write_mmv(path, vol.data)
        image_paths.append(str(path))
    label_path = None
    if labels is not None:
        path = out_dir / f"{stem}_seg.mmv"
        io.write_mmv(path, labels.data)
        label_path = str(path)
    return image_paths, label_path


# ---------------------------------------------------------------------------
# Preprocessing


def compute_brain_mask(image: MultiModalVolume) -> BrainMask:
    """Foreground = any present modality strictly positive (raw intensities)."""
    mask = np.zeros(image.dims, dtype=bool)
    for _, vol in image.present():
        np.logical_or(mask, vol.data > 0, out=mask)
    return BrainMask(mask)


def restrict_modalities(image: MultiModalVolume, keep: Sequence[int]) -> MultiModalVolume:
    """Keep only the listed modality slots (they must be available)."""
    keep_set = set(keep)
    missing = [i for i in keep_set if not image.availability[i]]
    if missing:
        raise TooFewModalities(f"requested modalities not available: {missing}")
    if not keep_set:
        raise ValueError("cannot restrict to an empty modality set")
    return MultiModalVolume(
        tuple(m if i in keep_set else None for i, m in enumerate(image.modalities))
    )


def normalize_zscore(vol: Volume3D, mask: BrainMask) -> Volume3D:
    """Zero-mean unit-variance over masked voxels; background forced to 0.

    Uses the population standard deviation (ddof=0). Idempotent on the
    masked region up to float32 rounding.
    """
    if mask.dims != vol.dims:
        raise DimensionMismatch(f"mask dims {mask.dims} != volume dims {vol.dims}")
    m = mask.data
    n = int(np.count_nonzero(m))
    if n < 2:
        raise DegenerateIntensity(f"mask has {n} voxels; need at least 2")
    selected = vol.data[m].astype(np.float64)
    mean = selected.mean()
    std = selected.std()
    if std == 0.0:
        raise DegenerateIntensity("masked intensities are constant")
    out = np.zeros_like(vol.data)
    out[m] = ((vol.data[m] - mean) / std).astype(np.float32)
    return Volume3D(out, vol.spacing)


def normalize_sample(image: MultiModalVolume, mask: BrainMask) -> MultiModalVolume:
    """Apply :func:`normalize_zscore` to every present modality."""
    return image.map(lambda _i, vol: normalize_zscore(vol, mask))


def crop_random(
    image: MultiModalVolume,
    labels: LabelVolume | None,
    size: tuple[int, int, int],
    rng: np.random.Generator,
) -> tuple[MultiModalVolume, LabelVolume | None]:
    """Crop all modalities and labels at one uniformly sampled corner.

    The corner is drawn in (z, y, x) order so repeat calls with the same
    generator state are reproducible.
    """
    dims = image.dims
    for d, s in zip(dims, size):
        if d < s:
            raise SourceTooSmall(f"source dims {dims} smaller than crop {size}")
    corner = tuple(int(rng.integers(0, d - s + 1)) for d, s in zip(dims, size))
    sl = tuple(slice(c, c + s) for c, s in zip(corner, size))
    cropped = image.map(lambda _i, vol: Volume3D(vol.data[sl], vol.spacing))
    cropped_labels = LabelVolume(labels.data[sl]) if labels is not None else None
    return cropped, cropped_labels


# ---------------------------------------------------------------------------
# Augmentation

def rotate90(
    image: MultiModalVolume, labels: LabelVolume | None, k: int
) -> tuple[MultiModalVolume, LabelVolume | None]:
    """Rotate by k quarter turns about the axial (depth) axis."""
    k %= 4
    rot = lambda a: np.rot90(a, k, axes=(1, 2))
    out = image.map(lambda _i, vol: Volume3D(rot(vol.data), vol.spacing))
    out_labels = LabelVolume(rot(labels.data)) if labels is not None else None
    return out, out_labels


def rotate_free(
    image: MultiModalVolume, labels: LabelVolume | None, angle_deg: float
) -> tuple[MultiModalVolume, LabelVolume | None]:
    """Arbitrary-angle rotation about the axial axis (resampling path).

    Images are interpolated linearly, labels nearest-neighbor so the label
    vocabulary survives. Edges are zero-filled.
    """
    def rot(a: np.ndarray, order: int) -> np.ndarray:
        return scipy.ndimage.rotate(
            a, angle_deg, axes=(1, 2), reshape=False, order=order, cval=0, prefilter=False
        )

    out = image.map(lambda _i, vol: Volume3D(rot(vol.data, 1), vol.spacing))
    out_labels = LabelVolume(rot(labels.data, 0)) if labels is not None else None
    return out, out_labels


def flip(
    image: MultiModalVolume, labels: LabelVolume | None, axis: int
) -> tuple[MultiModalVolume, LabelVolume | None]:
    """Mirror all modalities and labels along one array axis."""
    out = image.map(lambda _i, vol: Volume3D(np.flip(vol.data, axis), vol.spacing))
    out_labels = LabelVolume(np.flip(labels.data, axis)) if labels is not None else None
    return out, out_labels


def shift_intensity(image: MultiModalVolume, deltas: Sequence[float]) -> MultiModalVolume:
    """Add a per-modality constant to image intensities (labels untouched)."""
    return image.map(lambda i, vol: Volume3D(vol.data + np.float32(deltas[i]), vol.spacing))


def augment(
    image: MultiModalVolume,
    labels: LabelVolume | None,
    ops: Iterable[str],
    rng: np.random.Generator,
    shift_range: float = 0.1,
) -> tuple[MultiModalVolume, LabelVolume | None]:
    """Randomized augmentation: any subset of rotate90 / rotate_free / flip /
    intensity_shift.

    Geometric transforms hit images and labels identically; the intensity
    shift draws one uniform delta in ``[-shift_range, +shift_range]`` per
    modality and touches images only. Ops are applied in the fixed order of
    ``AUGMENT_OPS`` regardless of the order given, so a seeded generator
    yields a reproducible transform.
    """
    requested = set(ops)
    unknown = requested - set(AUGMENT_OPS)
    if unknown:
        raise ValueError(f"unknown augmentation ops: {sorted(unknown)}")
    if "rotate90" in requested:
        image, labels = rotate90(image, labels, int(rng.integers(0, 4)))
    if "rotate_free" in requested:
        image, labels = rotate_free(image, labels, float(rng.uniform(0.0, 360.0)))
    if "flip" in requested:
        image, labels = flip(image, labels, int(rng.integers(0, 3)))
    if "intensity_shift" in requested:
        deltas = rng.uniform(-shift_range, shift_range, size=N_MODALITIES)
        image = shift_intensity(image, deltas)
    return image, labels
