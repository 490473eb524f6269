import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asymforge.errors import DimensionMismatch, InvalidLabel
from asymforge.phantoms import make_subject
from asymforge.synth import (
    SynthConfig,
    fuse_label_voxel,
    fuse_labels,
    mixup_synthesize,
    prepare_sample,
    region_masks,
    synthesize,
    transplant,
)
from asymforge.volume import BrainMask

from conftest import bundle_from_arrays, labels_from

# The ranking rule applied by hand to all 16 ordered pairs:
# background yields, otherwise ET(4) > NCR/NET(1) > ED(2).
FUSION_TABLE = {
    (0, 0): 0, (0, 1): 1, (0, 2): 2, (0, 4): 4,
    (1, 0): 1, (1, 1): 1, (1, 2): 1, (1, 4): 4,
    (2, 0): 2, (2, 1): 1, (2, 2): 2, (2, 4): 4,
    (4, 0): 4, (4, 1): 4, (4, 2): 4, (4, 4): 4,
}


# ---------------------------------------------------------------------------
# transplant


def test_transplant_zero_field_is_identity(rng):
    host_arr = rng.normal(size=(4, 4, 4)).astype(np.float32)
    host = bundle_from_arrays(host_arr)
    tumor = bundle_from_arrays(np.zeros((4, 4, 4), dtype=np.float32))
    out = transplant(host, tumor)
    assert np.array_equal(
        out.modalities[0].data.view(np.uint32), host_arr.view(np.uint32)
    )


def test_transplant_zero_host_yields_field(rng):
    field = np.abs(rng.normal(size=(4, 4, 4))).astype(np.float32)
    out = transplant(
        bundle_from_arrays(np.zeros((4, 4, 4), dtype=np.float32)),
        bundle_from_arrays(field),
    )
    assert np.array_equal(out.modalities[0].data, field)


def test_transplant_elementwise_sum():
    host = bundle_from_arrays(np.full((2, 2, 2), 1.0, dtype=np.float32))
    tumor = bundle_from_arrays(np.full((2, 2, 2), 2.5, dtype=np.float32))
    out = transplant(host, tumor)
    assert np.all(out.modalities[0].data == 3.5)


def test_transplant_dims_mismatch():
    host = bundle_from_arrays(np.zeros((3, 3, 3), dtype=np.float32))
    tumor = bundle_from_arrays(np.zeros((3, 3, 4), dtype=np.float32))
    with pytest.raises(DimensionMismatch):
        transplant(host, tumor)


def test_transplant_field_requires_host_modality(rng):
    host = bundle_from_arrays(np.ones((3, 3, 3), dtype=np.float32))  # FLAIR only
    t_arr = np.ones((3, 3, 3), dtype=np.float32)
    tumor = bundle_from_arrays(t_arr, t_arr)  # FLAIR + T1ce
    with pytest.raises(DimensionMismatch):
        transplant(host, tumor)


def test_transplant_linearity_disjoint_supports(rng):
    # exact associativity holds when the two fields never overlap
    host_arr = rng.normal(size=(4, 4, 4)).astype(np.float32)
    t1 = np.zeros((4, 4, 4), dtype=np.float32)
    t2 = np.zeros((4, 4, 4), dtype=np.float32)
    t1[:, :, :2] = np.abs(rng.normal(size=(4, 4, 2))).astype(np.float32)
    t2[:, :, 2:] = np.abs(rng.normal(size=(4, 4, 2))).astype(np.float32)
    host = bundle_from_arrays(host_arr)
    combined = transplant(host, bundle_from_arrays(t1 + t2))
    staged = transplant(transplant(host, bundle_from_arrays(t1)), bundle_from_arrays(t2))
    assert np.array_equal(combined.modalities[0].data, staged.modalities[0].data)


def test_transplant_mask_to_brain(rng):
    host = bundle_from_arrays(np.ones((4, 4, 4), dtype=np.float32))
    field = np.full((4, 4, 4), 2.0, dtype=np.float32)
    brain = np.zeros((4, 4, 4), dtype=bool)
    brain[:, :, :2] = True
    out = transplant(host, bundle_from_arrays(field), brain_mask=BrainMask(brain))
    assert np.all(out.modalities[0].data[:, :, :2] == 3.0)
    assert np.all(out.modalities[0].data[:, :, 2:] == 1.0)


def test_transplant_passthrough_for_missing_field_modality(rng):
    host_arr = rng.normal(size=(3, 3, 3)).astype(np.float32)
    host = bundle_from_arrays(host_arr, host_arr)
    tumor = bundle_from_arrays(np.ones((3, 3, 3), dtype=np.float32), absent=(1,))
    out = transplant(host, tumor)
    assert np.array_equal(out.modalities[1].data, host_arr)
    assert np.array_equal(out.modalities[0].data, host_arr + 1.0)


# ---------------------------------------------------------------------------
# label fusion


def test_fuse_label_voxel_exhaustive():
    for (a, b), expected in FUSION_TABLE.items():
        assert fuse_label_voxel(a, b) == expected, (a, b)


def test_fuse_label_voxel_ranking_examples():
    assert fuse_label_voxel(2, 4) == 4
    assert fuse_label_voxel(2, 1) == 1
    for x in (0, 1, 2, 4):
        assert fuse_label_voxel(x, 0) == x


def test_fuse_label_voxel_invalid():
    with pytest.raises(InvalidLabel):
        fuse_label_voxel(3, 0)
    with pytest.raises(InvalidLabel):
        fuse_label_voxel(0, 5)


def test_fuse_labels_matches_scalar_rule():
    # brute force over all 16 ordered pairs through the vectorized path
    a_vals, b_vals = zip(*FUSION_TABLE.keys())
    a = labels_from(np.array(a_vals).reshape(4, 2, 2))
    b = labels_from(np.array(b_vals).reshape(4, 2, 2))
    fused = fuse_labels(a, b)
    expected = np.array([FUSION_TABLE[p] for p in FUSION_TABLE]).reshape(4, 2, 2)
    assert np.array_equal(fused.data, expected)


def test_fuse_labels_donor_empty_is_identity(rng):
    a = labels_from(rng.choice(np.array([0, 1, 2, 4], dtype=np.uint8), size=(3, 3, 3)))
    fused = fuse_labels(a, labels_from(np.zeros((3, 3, 3))))
    assert np.array_equal(fused.data, a.data)


def test_fuse_labels_disjoint_supports_union(rng):
    a_arr = np.zeros((3, 3, 3), dtype=np.uint8)
    b_arr = np.zeros((3, 3, 3), dtype=np.uint8)
    a_arr[0] = rng.choice(np.array([1, 2, 4], dtype=np.uint8), size=(3, 3))
    b_arr[2] = rng.choice(np.array([1, 2, 4], dtype=np.uint8), size=(3, 3))
    fused = fuse_labels(labels_from(a_arr), labels_from(b_arr))
    assert np.array_equal(fused.data[0], a_arr[0])
    assert np.array_equal(fused.data[2], b_arr[2])
    assert np.all(fused.data[1] == 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**16))
def test_fuse_labels_properties(seed):
    rng = np.random.default_rng(seed)
    vocab = np.array([0, 1, 2, 4], dtype=np.uint8)
    a = labels_from(rng.choice(vocab, size=(3, 3, 3)))
    b = labels_from(rng.choice(vocab, size=(3, 3, 3)))
    fused = fuse_labels(a, b)
    # support conservation
    assert np.array_equal(fused.data != 0, (a.data != 0) | (b.data != 0))
    # commutative on nonzero collisions (and zeros are identities)
    swapped = fuse_labels(b, a)
    assert np.array_equal(fused.data, swapped.data)


def test_fuse_labels_dims_mismatch():
    with pytest.raises(DimensionMismatch):
        fuse_labels(labels_from(np.zeros((2, 2, 2))), labels_from(np.zeros((2, 2, 3))))


# ---------------------------------------------------------------------------
# region masks


def test_region_masks_empty():
    rm = region_masks(labels_from(np.zeros((3, 3, 3))))
    assert rm.wt.count() == rm.tc.count() == rm.et.count() == 0


def test_region_masks_one_voxel_each():
    arr = np.zeros((3, 3, 3), dtype=np.uint8)
    arr[0, 0, 0] = 1
    arr[1, 1, 1] = 2
    arr[2, 2, 2] = 4
    rm = region_masks(labels_from(arr))
    assert rm.wt.count() == 3
    assert rm.tc.count() == 2
    assert rm.et.count() == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**16))
def test_region_masks_nested(seed):
    rng = np.random.default_rng(seed)
    arr = rng.choice(np.array([0, 1, 2, 4], dtype=np.uint8), size=(4, 4, 4))
    rm = region_masks(labels_from(arr))
    assert not np.any(rm.et.data & ~rm.tc.data)
    assert not np.any(rm.tc.data & ~rm.wt.data)


# ---------------------------------------------------------------------------
# synthesize


def _prepared(seed, with_tumor=True, dims=(20, 20, 20)):
    subject = make_subject(f"s{seed}", dims, np.random.default_rng(seed), with_tumor=with_tumor)
    return prepare_sample(subject)


def test_synthesize_degenerate_donor():
    host = _prepared(1)
    donor = _prepared(2, with_tumor=False)
    out = synthesize(host, donor, SynthConfig(), seed=3)
    assert np.array_equal(
        out.image.modalities[0].data.view(np.uint32),
        host.image.modalities[0].data.view(np.uint32),
    )
    assert np.array_equal(out.labels.data, host.labels.data)


def test_synthesize_adds_donor_labels():
    host = _prepared(1)
    donor = _prepared(5)
    out = synthesize(host, donor, SynthConfig(), seed=0)
    support = out.labels.data != 0
    expected = (host.labels.data != 0) | (donor.labels.data != 0)
    assert np.array_equal(support, expected)


def test_synthesize_self_pair_keeps_labels():
    prepared = _prepared(4)
    out = synthesize(prepared, prepared, SynthConfig(), seed=0)
    assert np.array_equal(out.labels.data, prepared.labels.data)


def test_synthesize_deterministic():
    host = _prepared(1)
    donor = _prepared(2)
    a = synthesize(host, donor, SynthConfig(), seed=9)
    b = synthesize(host, donor, SynthConfig(), seed=9)
    for i, vol in a.image.present():
        assert np.array_equal(
            vol.data.view(np.uint32), b.image.modalities[i].data.view(np.uint32)
        )
    assert np.array_equal(a.labels.data, b.labels.data)
    assert a.provenance == b.provenance


def test_synthesize_provenance():
    host = _prepared(1)
    donor = _prepared(2)
    out = synthesize(host, donor, SynthConfig(), seed=(3, 17))
    assert out.provenance.host_id == host.sample_id
    assert out.provenance.donor_id == donor.sample_id
    assert out.provenance.seed == (3, 17)
    assert out.provenance.mirror_offset == donor.mirror.offset


def test_synthesize_translate_hook_reserved():
    host = _prepared(1)
    with pytest.raises(NotImplementedError):
        synthesize(host, host, SynthConfig(translate_tumor=True), seed=0)


def test_synthesize_matches_op_composition_bit_exactly():
    # the pipeline must equal composing its constituent operations
    from asymforge.aem import asymmetry_map, extract_tumor

    host = _prepared(3)
    donor = _prepared(8)
    out = synthesize(host, donor, SynthConfig(), seed=0)
    tumor = extract_tumor(asymmetry_map(donor.image, donor.mirror), donor.labels)
    composed = transplant(host.image, tumor)
    for i, vol in out.image.present():
        assert np.array_equal(
            vol.data.view(np.uint32), composed.modalities[i].data.view(np.uint32)
        )
    assert np.array_equal(out.labels.data, fuse_labels(host.labels, donor.labels).data)


def test_synthesize_mask_to_brain_matches_composition():
    from asymforge.aem import asymmetry_map, extract_tumor

    host = _prepared(3)
    donor = _prepared(8)
    out = synthesize(host, donor, SynthConfig(mask_to_brain=True), seed=0)
    tumor = extract_tumor(asymmetry_map(donor.image, donor.mirror), donor.labels)
    composed = transplant(host.image, tumor, brain_mask=host.brain_mask)
    for i, vol in out.image.present():
        assert np.array_equal(vol.data, composed.modalities[i].data)


def test_synthesize_dims_differ_uses_host_dims():
    host = _prepared(1, dims=(20, 20, 20))
    donor = _prepared(2, dims=(24, 24, 24))
    out = synthesize(host, donor, SynthConfig(), seed=0)
    assert out.image.dims == (20, 20, 20)
    assert out.labels.dims == (20, 20, 20)


# ---------------------------------------------------------------------------
# mixup


def test_mixup_lambda_one_returns_first():
    a = _prepared(1)
    b = _prepared(2)
    out = mixup_synthesize(a, b, alpha=0.4, rng=np.random.default_rng(0), lam=1.0)
    assert np.array_equal(
        out.image.modalities[0].data.view(np.uint32),
        a.image.modalities[0].data.view(np.uint32),
    )
    assert np.array_equal(out.labels.data, a.labels.data)


def test_mixup_half_averages():
    from asymforge.symmetry import MirrorSpec
    from asymforge.synth import PreparedSample

    def flat(value):
        arr = np.full((3, 3, 3), value, dtype=np.float32)
        return PreparedSample(
            f"c{value}",
            bundle_from_arrays(arr),
            labels_from(np.zeros((3, 3, 3))),
            BrainMask(np.ones((3, 3, 3), dtype=bool)),
            MirrorSpec(),
        )

    out = mixup_synthesize(flat(2.0), flat(4.0), alpha=0.4, rng=np.random.default_rng(0), lam=0.5)
    assert np.all(out.image.modalities[0].data == 3.0)


def test_mixup_convexity_bounds():
    a = _prepared(1)
    b = _prepared(2)
    out = mixup_synthesize(a, b, alpha=0.4, rng=np.random.default_rng(3))
    lam = out.provenance.lam
    assert 0.0 <= lam <= 1.0
    for i, vol in out.image.present():
        lo = np.minimum(a.image.modalities[i].data, b.image.modalities[i].data)
        hi = np.maximum(a.image.modalities[i].data, b.image.modalities[i].data)
        assert np.all(vol.data >= lo - 1e-5)
        assert np.all(vol.data <= hi + 1e-5)


def test_mixup_labels_follow_dominant_side():
    a = _prepared(1)
    b = _prepared(2)
    low = mixup_synthesize(a, b, alpha=0.4, rng=np.random.default_rng(0), lam=0.2)
    assert np.array_equal(low.labels.data, b.labels.data)
    high = mixup_synthesize(a, b, alpha=0.4, rng=np.random.default_rng(0), lam=0.8)
    assert np.array_equal(high.labels.data, a.labels.data)


def test_mixup_rejects_bad_alpha():
    a = _prepared(1)
    with pytest.raises(ValueError):
        mixup_synthesize(a, a, alpha=0.0, rng=np.random.default_rng(0))
