"""Asymmetry error maps and additive tumor-intensity extraction.

For each modality the asymmetry error map is the elementwise absolute
difference between a volume and its calibrated mirror image. Masking that
map with the binarized annotation keeps only the side the tumor actually
grew on, yielding the additive intensity field the tumor contributed:

    error_map = |x - mirror(x)|
    tumor_field = error_map * (labels != 0)

Both results are carried as :class:`MultiModalVolume` bundles; an
``AsymmetryMap`` is nonnegative everywhere, and a ``TumorIntensity`` is zero
outside the annotated tumor.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch
from .symmetry import MirrorSpec, mirror_array
from .volume import BrainMask, LabelVolume, MultiModalVolume, Volume3D

# Aliases that document intent; both are ordinary modality bundles.
AsymmetryMap = MultiModalVolume
TumorIntensity = MultiModalVolume


def asymmetry_map(image: MultiModalVolume, spec: MirrorSpec) -> AsymmetryMap:
    """Per-modality |x - mirror(x)| under the calibrated mirror."""
    def one(_i: int, vol: Volume3D) -> Volume3D:
        mirrored = mirror_array(vol.data, spec.axis, spec.offset)
        return Volume3D(np.abs(vol.data - mirrored), vol.spacing)

    return image.map(one)


def binarize_labels(labels: LabelVolume) -> BrainMask:
    """True exactly where the annotation is nonzero."""
    return BrainMask(labels.data != 0)


def extract_tumor(amap: AsymmetryMap, labels: LabelVolume) -> TumorIntensity:
    """Keep the asymmetry error only on annotated tumor voxels."""
    if labels.dims != amap.dims:
        raise DimensionMismatch(f"label dims {labels.dims} != map dims {amap.dims}")
    tumor_mask = labels.data != 0
    return amap.map(
        lambda _i, vol: Volume3D(np.where(tumor_mask, vol.data, np.float32(0.0)), vol.spacing)
    )
