import numpy as np
import pytest

from asymforge import phantoms
from asymforge.volume import compute_brain_mask


def test_symmetric_anatomy_is_mirror_symmetric():
    data = phantoms.symmetric_anatomy((12, 12, 12), np.random.default_rng(0))
    assert np.array_equal(data, data[:, :, ::-1])
    assert data.min() >= 0.0
    assert (data > 0).any()


def test_symmetric_anatomy_positive_inside_brain():
    data = phantoms.symmetric_anatomy((16, 16, 16), np.random.default_rng(1), base=1.0, texture=0.3)
    inside = data[data != 0]
    assert inside.min() >= 0.7 - 1e-6  # base minus texture bound


def test_nested_tumor_labels():
    labels = phantoms.nested_tumor_labels((20, 20, 20), (10, 10, 10), (2.0, 3.0, 4.5))
    present = set(np.unique(labels))
    assert present == {0, 1, 2, 4}
    et = labels == 4
    tc = et | (labels == 1)
    wt = tc | (labels == 2)
    assert et.sum() < tc.sum() < wt.sum()


def test_tumor_is_one_sided_and_mirror_disjoint():
    for seed in range(8):
        sample = phantoms.make_subject("s", (20, 20, 20), np.random.default_rng(seed))
        support = sample.labels.data != 0
        assert support.any()
        mirrored = support[:, :, ::-1]
        assert not np.any(support & mirrored)


def test_tumor_fields_share_one_shape():
    labels = phantoms.nested_tumor_labels((16, 16, 16), (8, 8, 5), (1.5, 2.5, 3.5))
    fields = phantoms.tumor_fields(labels)
    base = fields[0] / phantoms.MODALITY_WEIGHTS[0]
    for weight, field in zip(phantoms.MODALITY_WEIGHTS[1:], fields[1:]):
        assert np.allclose(field, weight * base, atol=1e-6)


def test_make_subject_brain_mask_nonempty():
    sample = phantoms.make_subject("s", (16, 16, 16), np.random.default_rng(3))
    assert compute_brain_mask(sample.image).count() > 0


def test_make_toy_dataset_reproducible():
    a = phantoms.make_toy_dataset(3, (14, 14, 14), seed=9)
    b = phantoms.make_toy_dataset(3, (14, 14, 14), seed=9)
    for s, t in zip(a, b):
        assert s.sample_id == t.sample_id
        assert np.array_equal(s.image.modalities[0].data, t.image.modalities[0].data)
        assert np.array_equal(s.labels.data, t.labels.data)


def test_make_subject_too_small_rejected():
    with pytest.raises(ValueError):
        phantoms.make_subject("s", (8, 8, 8), np.random.default_rng(0))
