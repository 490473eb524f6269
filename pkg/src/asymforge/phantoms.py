"""Constructed test subjects: mirror-symmetric anatomies with one-sided
tumors whose per-modality intensity bumps are scaled copies of one shared
field.

These phantoms drive the verification suite and the desk-scale benchmark.
The shared-field construction means any one modality's tumor signal is a
linear function of the remaining three, so a model can in principle recover
a dropped modality's evidence from the others.
"""

from __future__ import annotations

import numpy as np
import scipy.ndimage

from .volume import (
    MODALITIES,
    BrainMask,
    LabelVolume,
    MultiModalVolume,
    Sample,
    Volume3D,
    compute_brain_mask,
    normalize_sample,
)

# Per-modality scale of the shared tumor field.
MODALITY_WEIGHTS = (1.0, 0.8, 0.6, 0.9)

# Additive amplitude per label region, in raw anatomy units.
REGION_AMPLITUDES = {2: 0.8, 1: 1.6, 4: 2.4}  # ED, NCR/NET, ET

# Dropout-robustness benchmark: FLAIR carries most of the tumor signal and
# the other channels hold faint scaled copies, so a model that never saw
# dropped inputs leans on FLAIR while the evidence stays linearly
# recoverable from any three channels (channel differences cancel the
# shared anatomy).
KD_BENCHMARK_WEIGHTS = (1.0, 0.18, 0.12, 0.22)
KD_BENCHMARK_AMPLITUDES = {2: 0.6, 1: 1.2, 4: 1.8}


def kd_benchmark_cohorts(
    n_train: int,
    n_test: int,
    dims: tuple[int, int, int],
    seed: int,
) -> tuple[list["Sample"], list["Sample"]]:
    """Train and test cohorts for the modality-dropout benchmark."""
    kw = dict(weights=KD_BENCHMARK_WEIGHTS, amplitudes=KD_BENCHMARK_AMPLITUDES)
    train = make_toy_dataset(n_train, dims, seed, prefix="kdtrain", **kw)
    test = make_toy_dataset(n_test, dims, seed + 1, prefix="kdtest", **kw)
    return train, test


def ellipsoid(
    dims: tuple[int, int, int],
    center: tuple[float, float, float],
    radii: tuple[float, float, float],
) -> np.ndarray:
    """Boolean ellipsoid mask."""
    zz, yy, xx = np.ogrid[: dims[0], : dims[1], : dims[2]]
    cz, cy, cx = center
    rz, ry, rx = radii
    return ((zz - cz) / rz) ** 2 + ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def symmetric_anatomy(
    dims: tuple[int, int, int],
    rng: np.random.Generator,
    base: float = 1.0,
    texture: float = 0.3,
    smooth_sigma: float = 1.5,
) -> np.ndarray:
    """A healthy brain stand-in: positive inside a centered ellipsoid, zero
    outside, exactly mirror-symmetric across the width midplane."""
    d, h, w = dims
    brain = ellipsoid(dims, ((d - 1) / 2, (h - 1) / 2, (w - 1) / 2), (d * 0.42, h * 0.42, w * 0.45))
    noise = rng.standard_normal(dims)
    noise = scipy.ndimage.gaussian_filter(noise, smooth_sigma)
    peak = float(np.abs(noise).max())
    if peak > 0:
        noise *= texture / peak
    data = np.where(brain, base + noise, 0.0)
    # Averaging with the flipped copy is an exact symmetrizer in floats.
    data = (data + data[:, :, ::-1]) * 0.5
    return data.astype(np.float32)


def nested_tumor_labels(
    dims: tuple[int, int, int],
    center: tuple[float, float, float],
    radii: tuple[float, float, float] = (2.0, 3.0, 4.5),
) -> np.ndarray:
    """Concentric annotation: ET core, NCR/NET shell, ED rim."""
    r_et, r_tc, r_wt = radii
    if not r_et <= r_tc <= r_wt:
        raise ValueError(f"radii must nest, got {radii}")
    sphere = lambda r: ellipsoid(dims, center, (r, r, r))
    labels = np.zeros(dims, dtype=np.uint8)
    labels[sphere(r_wt)] = 2
    labels[sphere(r_tc)] = 1
    labels[sphere(r_et)] = 4
    return labels


def tumor_fields(
    labels: np.ndarray,
    weights: tuple[float, float, float, float] = MODALITY_WEIGHTS,
    amplitudes: dict[int, float] | None = None,
) -> list[np.ndarray]:
    """Per-modality additive intensity bumps: weight * shared region field."""
    amplitudes = REGION_AMPLITUDES if amplitudes is None else amplitudes
    shared = np.zeros(labels.shape, dtype=np.float32)
    for value, amp in amplitudes.items():
        shared[labels == value] = amp
    return [(w * shared).astype(np.float32) for w in weights]


def make_subject(
    sample_id: str,
    dims: tuple[int, int, int],
    rng: np.random.Generator,
    with_tumor: bool = True,
    tumor_radii: tuple[float, float, float] | None = None,
    weights: tuple[float, float, float, float] = MODALITY_WEIGHTS,
    amplitudes: dict[int, float] | None = None,
    texture: float = 0.3,
) -> Sample:
    """One raw subject: symmetric anatomy plus an optional one-sided tumor.

    The tumor sits strictly in the low-x half so its support is disjoint
    from its own mirror image.
    """
    d, h, w = dims
    anatomy = symmetric_anatomy(dims, rng, texture=texture)
    labels = np.zeros(dims, dtype=np.uint8)
    if with_tumor:
        if tumor_radii is None:
            # Largest rim that still fits strictly inside the low-x half.
            max_r_wt = w / 4.0 - 1.2
            if max_r_wt < 1.0:
                raise ValueError(f"dims {dims} too small for a one-sided tumor")
            r_wt = float(rng.uniform(0.75, 0.98)) * max_r_wt
            tumor_radii = (0.38 * r_wt, 0.62 * r_wt, r_wt)
        r_wt = tumor_radii[2]
        # Keep the whole tumor inside the brain and off the midline.
        cx = float(rng.uniform(r_wt + 1.0, w / 2 - r_wt - 1.0))
        cy = float(rng.uniform(h / 2 - h * 0.12, h / 2 + h * 0.12))
        cz = float(rng.uniform(d / 2 - d * 0.12, d / 2 + d * 0.12))
        labels = nested_tumor_labels(dims, (cz, cy, cx), tumor_radii)

    volumes = []
    bumps = tumor_fields(labels, weights, amplitudes)
    for m, _name in enumerate(MODALITIES):
        volumes.append(Volume3D(anatomy + bumps[m]))
    return Sample(sample_id, MultiModalVolume(tuple(volumes)), LabelVolume(labels))


def make_toy_dataset(
    n: int,
    dims: tuple[int, int, int],
    seed: int,
    prefix: str = "toy",
    **subject_kwargs,
) -> list[Sample]:
    """A reproducible cohort of tumor-bearing subjects."""
    samples = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        samples.append(make_subject(f"{prefix}{i:03d}", dims, rng, **subject_kwargs))
    return samples


def normalized_pairs(samples: list[Sample]) -> list[tuple[MultiModalVolume, LabelVolume]]:
    """Z-score each subject over its brain mask, ready for training."""
    out = []
    for s in samples:
        assert s.labels is not None
        mask: BrainMask = compute_brain_mask(s.image)
        out.append((normalize_sample(s.image, mask), s.labels))
    return out
