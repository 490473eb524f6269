"""Tumor transplantation and label fusion.

A synthetic subject is built by adding a donor's extracted tumor-intensity
field onto a host anatomy, modality by modality, and overlaying the donor's
annotation onto the host's. Where annotations collide, the label with the
higher clinical rank wins: ET(4) > NCR/NET(1) > ED(2), with background as
the identity. The derived evaluation regions nest as ET <= TC <= WT.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .aem import TumorIntensity
from .errors import DimensionMismatch, InvalidLabel
from .symmetry import (
    MIRROR_AXIS_DEFAULT,
    SEARCH_RADIUS_DEFAULT,
    MirrorSpec,
    calibrate,
    mirror_array,
)
from .volume import (
    LABEL_VOCABULARY,
    BrainMask,
    LabelVolume,
    MultiModalVolume,
    Sample,
    Volume3D,
    compute_brain_mask,
    normalize_sample,
)

# Fusion rank per label value (index 3 unused).
_LABEL_RANK = np.array([0, 2, 1, 0, 3], dtype=np.uint8)


@dataclass(frozen=True)
class RegionMasks:
    """The three nested evaluation regions: whole tumor, core, enhancing."""

    wt: BrainMask
    tc: BrainMask
    et: BrainMask


@dataclass(frozen=True)
class Provenance:
    """How a synthetic sample was produced, enough to regenerate it."""

    host_id: str
    donor_id: str
    seed: tuple[int, ...]
    method: str = "asymmetry"  # or "mixup"
    mirror_axis: int | None = None
    mirror_offset: int | None = None
    lam: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "host_id": self.host_id,
            "donor_id": self.donor_id,
            "seed": list(self.seed),
            "method": self.method,
            "mirror_axis": self.mirror_axis,
            "mirror_offset": self.mirror_offset,
            "lam": self.lam,
        }

    @staticmethod
    def from_dict(d: dict[str, Any]) -> "Provenance":
        return Provenance(
            host_id=d["host_id"],
            donor_id=d["donor_id"],
            seed=tuple(d["seed"]),
            method=d.get("method", "asymmetry"),
            mirror_axis=d.get("mirror_axis"),
            mirror_offset=d.get("mirror_offset"),
            lam=d.get("lam"),
        )


@dataclass(frozen=True, eq=False)
class SyntheticSample:
    sample_id: str
    image: MultiModalVolume
    labels: LabelVolume
    provenance: Provenance


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the transplantation pipeline.

    ``mask_to_brain`` zeroes donor tumor intensities outside the host's
    brain before addition (off by default: the literal sum may spill outside
    the host anatomy). ``translate_tumor`` is reserved for relocating donor
    tumors and is not implemented.
    """

    mask_to_brain: bool = False
    mirror_radius: int = SEARCH_RADIUS_DEFAULT
    mirror_axis: int = MIRROR_AXIS_DEFAULT
    translate_tumor: bool = False


@dataclass(frozen=True, eq=False)
class PreparedSample:
    """A subject staged for synthesis: normalized, masked, mirror-calibrated."""

    sample_id: str
    image: MultiModalVolume  # z-scored over the brain mask
    labels: LabelVolume
    brain_mask: BrainMask
    mirror: MirrorSpec


def prepare_sample(
    sample: Sample,
    radius: int = SEARCH_RADIUS_DEFAULT,
    axis: int = MIRROR_AXIS_DEFAULT,
) -> PreparedSample:
    """Stage a raw subject: brain mask, mirror calibration, z-score."""
    if sample.labels is None:
        raise ValueError(f"sample {sample.sample_id!r} has no labels")
    mask = compute_brain_mask(sample.image)
    mirror = calibrate(sample.image, radius=radius, axis=axis, mask=mask)
    normalized = normalize_sample(sample.image, mask)
    return PreparedSample(sample.sample_id, normalized, sample.labels, mask, mirror)


# ---------------------------------------------------------------------------
# Core operations


def transplant(
    host: MultiModalVolume,
    tumor: TumorIntensity,
    brain_mask: BrainMask | None = None,
) -> MultiModalVolume:
    """Add the tumor-intensity field onto the host, modality by modality.

    Tumor modalities must be a subset of the host's; a modality without a
    tumor field passes through unchanged. When ``brain_mask`` is given the
    field is zeroed outside it before addition.
    """
    if tumor.dims != host.dims:
        raise DimensionMismatch(f"tumor dims {tumor.dims} != host dims {host.dims}")
    for i, present in enumerate(tumor.availability):
        if present and not host.availability[i]:
            raise DimensionMismatch(f"tumor modality {i} missing from host")

    def one(i: int, vol: Volume3D) -> Volume3D:
        t = tumor.modalities[i]
        if t is None:
            return vol
        t_data = t.data
        if brain_mask is not None:
            t_data = np.where(brain_mask.data, t_data, np.float32(0.0))
        return Volume3D(vol.data + t_data, vol.spacing)

    return host.map(one)


def fuse_label_voxel(a: int, b: int) -> int:
    """Overlay two labels: background yields to the other side, collisions go
    to the higher rank ET(4) > NCR/NET(1) > ED(2)."""
    if a not in LABEL_VOCABULARY:
        raise InvalidLabel(f"label {a} outside {{0,1,2,4}}")
    if b not in LABEL_VOCABULARY:
        raise InvalidLabel(f"label {b} outside {{0,1,2,4}}")
    return a if _LABEL_RANK[a] >= _LABEL_RANK[b] else b


def fuse_labels(host_labels: LabelVolume, donor_labels: LabelVolume) -> LabelVolume:
    """Voxelwise :func:`fuse_label_voxel` with the host as the first operand."""
    if host_labels.dims != donor_labels.dims:
        raise DimensionMismatch(
            f"label dims differ: {host_labels.dims} vs {donor_labels.dims}"
        )
    a = host_labels.data
    b = donor_labels.data
    return LabelVolume(np.where(_LABEL_RANK[a] >= _LABEL_RANK[b], a, b))


def region_masks(labels: LabelVolume) -> RegionMasks:
    """WT = {1,2,4}, TC = {1,4}, ET = {4}."""
    d = labels.data
    et = d == 4
    tc = et | (d == 1)
    wt = tc | (d == 2)
    return RegionMasks(wt=BrainMask(wt), tc=BrainMask(tc), et=BrainMask(et))


# ---------------------------------------------------------------------------
# Whole-sample synthesis


def _fit_to_dims(data: np.ndarray, dims: tuple[int, int, int]) -> np.ndarray:
    """Center-crop / zero-pad to target dims (robustness path; co-registered
    datasets share dims and skip this)."""
    if data.shape == dims:
        return data
    out = np.zeros(dims, dtype=data.dtype)
    src_sl = []
    dst_sl = []
    for have, want in zip(data.shape, dims):
        if have >= want:
            lo = (have - want) // 2
            src_sl.append(slice(lo, lo + want))
            dst_sl.append(slice(0, want))
        else:
            lo = (want - have) // 2
            src_sl.append(slice(0, have))
            dst_sl.append(slice(lo, lo + have))
    out[tuple(dst_sl)] = data[tuple(src_sl)]
    return out


def _fit_bundle(bundle: MultiModalVolume, dims: tuple[int, int, int]) -> MultiModalVolume:
    if bundle.dims == dims:
        return bundle
    return bundle.map(lambda _i, vol: Volume3D(_fit_to_dims(vol.data, dims), vol.spacing))


def _tumor_field_arrays(donor: PreparedSample) -> list[np.ndarray | None]:
    """The donor's additive tumor fields, one array per modality.

    Equivalent to ``extract_tumor(asymmetry_map(image, mirror), labels)`` but
    computed only inside the annotation's bounding box; the masked field is
    identically zero elsewhere.
    """
    tumor_mask = donor.labels.data != 0
    hit = np.argwhere(tumor_mask)
    fields: list[np.ndarray | None] = []
    if hit.size == 0:
        for m in donor.image.modalities:
            fields.append(None if m is None else np.zeros(donor.image.dims, dtype=np.float32))
        return fields
    lo = hit.min(axis=0)
    hi = hit.max(axis=0) + 1
    box = tuple(slice(a, b) for a, b in zip(lo, hi))
    axis, offset = donor.mirror.axis, donor.mirror.offset
    box_mask = tumor_mask[box]
    for m in donor.image.modalities:
        if m is None:
            fields.append(None)
            continue
        mirrored = mirror_array(m.data, axis, offset)
        field = np.zeros(m.data.shape, dtype=np.float32)
        field[box] = np.where(
            box_mask, np.abs(m.data[box] - mirrored[box]), np.float32(0.0)
        )
        fields.append(field)
    return fields


def synthesize(
    host: PreparedSample,
    donor: PreparedSample,
    cfg: SynthConfig = SynthConfig(),
    seed: int | tuple[int, ...] = 0,
) -> SyntheticSample:
    """Grow the donor's tumor in the host anatomy.

    Pipeline: donor asymmetry map under its calibrated mirror, tumor-field
    extraction with the donor annotation, addition onto the host, and label
    overlay. Deterministic for a fixed seed, and bit-identical to composing
    the individual operations.
    """
    if cfg.translate_tumor:
        raise NotImplementedError("random tumor translation is reserved, not implemented")
    seed_tuple = (seed,) if isinstance(seed, int) else tuple(seed)

    tumor: TumorIntensity = MultiModalVolume(
        tuple(None if f is None else Volume3D(f) for f in _tumor_field_arrays(donor))
    )

    dims = host.image.dims
    tumor = _fit_bundle(tumor, dims)
    donor_labels = (
        donor.labels
        if donor.labels.dims == dims
        else LabelVolume(_fit_to_dims(donor.labels.data, dims))
    )

    image = transplant(host.image, tumor, host.brain_mask if cfg.mask_to_brain else None)
    labels = fuse_labels(host.labels, donor_labels)
    provenance = Provenance(
        host_id=host.sample_id,
        donor_id=donor.sample_id,
        seed=seed_tuple,
        method="asymmetry",
        mirror_axis=donor.mirror.axis,
        mirror_offset=donor.mirror.offset,
    )
    name = f"syn_{host.sample_id}_{donor.sample_id}"
    return SyntheticSample(name, image, labels, provenance)


def mixup_synthesize(
    a: PreparedSample,
    b: PreparedSample,
    alpha: float,
    rng: np.random.Generator,
    seed: int | tuple[int, ...] = 0,
    lam: float | None = None,
) -> SyntheticSample:
    """Convex-combination baseline: image = lam*A + (1-lam)*B with
    lam ~ Beta(alpha, alpha); labels follow the dominant side (lam >= 0.5
    keeps A's annotation)."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if a.image.dims != b.image.dims:
        raise DimensionMismatch(f"dims differ: {a.image.dims} vs {b.image.dims}")
    if a.image.availability != b.image.availability:
        raise DimensionMismatch("mixup requires identical modality availability")
    if lam is None:
        lam = float(rng.beta(alpha, alpha))

    def one(i: int, vol: Volume3D) -> Volume3D:
        other = b.image.modalities[i]
        assert other is not None
        mixed = lam * vol.data.astype(np.float64) + (1.0 - lam) * other.data.astype(np.float64)
        return Volume3D(mixed.astype(np.float32), vol.spacing)

    image = a.image.map(one)
    labels = a.labels if lam >= 0.5 else b.labels
    seed_tuple = (seed,) if isinstance(seed, int) else tuple(seed)
    provenance = Provenance(
        host_id=a.sample_id,
        donor_id=b.sample_id,
        seed=seed_tuple,
        method="mixup",
        lam=lam,
    )
    name = f"mix_{a.sample_id}_{b.sample_id}"
    return SyntheticSample(name, image, labels, provenance)
