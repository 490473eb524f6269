import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asymforge.errors import EmptyBrainMask
from asymforge.phantoms import symmetric_anatomy
from asymforge.symmetry import (
    MirrorSpec,
    calibrate,
    calibration_costs,
    mirror_array,
    outline,
    pick_offset,
    vflip,
)
from asymforge.volume import BrainMask, Volume3D

from conftest import mask_from, uniform_bundle


def brute_force_mirror(data, axis, offset):
    """Index-arithmetic oracle: out[x] = in[W-1-x+offset], zero outside."""
    out = np.zeros_like(data)
    moved = np.moveaxis(out, axis, 0)
    src = np.moveaxis(data, axis, 0)
    w = src.shape[0]
    for x in range(w):
        j = w - 1 - x + offset
        if 0 <= j < w:
            moved[x] = src[j]
    return out


def brute_force_outline(mask):
    """Enumerate 6-neighbors; array border counts as background."""
    out = np.zeros_like(mask)
    dims = mask.shape
    for z in range(dims[0]):
        for y in range(dims[1]):
            for x in range(dims[2]):
                if not mask[z, y, x]:
                    continue
                for dz, dy, dx in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                    nz, ny, nx = z + dz, y + dy, x + dx
                    if not (0 <= nz < dims[0] and 0 <= ny < dims[1] and 0 <= nx < dims[2]):
                        out[z, y, x] = True
                        break
                    if not mask[nz, ny, nx]:
                        out[z, y, x] = True
                        break
    return out


# ---------------------------------------------------------------------------
# vflip


def test_vflip_symmetric_fixed_point():
    data = symmetric_anatomy((8, 8, 8), np.random.default_rng(0))
    out = vflip(Volume3D(data), MirrorSpec(offset=0))
    assert np.array_equal(out.data, data)


def test_vflip_involution(rng):
    data = rng.normal(size=(4, 5, 6)).astype(np.float32)
    vol = Volume3D(data)
    assert np.array_equal(vflip(vflip(vol)).data, data)


def test_vflip_single_voxel():
    data = np.zeros((3, 3, 10), dtype=np.float32)
    data[1, 1, 2] = 7.0
    out = vflip(Volume3D(data), MirrorSpec(offset=0))
    assert out.data[1, 1, 7] == 7.0
    assert np.count_nonzero(out.data) == 1


def test_vflip_preserves_multiset(rng):
    data = rng.normal(size=(5, 5, 5)).astype(np.float32)
    out = vflip(Volume3D(data), MirrorSpec(offset=0))
    assert np.array_equal(np.sort(out.data, axis=None), np.sort(data, axis=None))


def test_vflip_dims_unchanged(rng):
    data = rng.normal(size=(3, 4, 9)).astype(np.float32)
    assert vflip(Volume3D(data), MirrorSpec(offset=3)).dims == (3, 4, 9)


@pytest.mark.parametrize("offset", range(-4, 5))
@pytest.mark.parametrize("axis", [0, 1, 2])
def test_mirror_matches_index_oracle(rng, axis, offset):
    data = rng.normal(size=(5, 6, 7)).astype(np.float32)
    assert np.array_equal(
        mirror_array(data, axis, offset), brute_force_mirror(data, axis, offset)
    )


def test_mirror_offset_beyond_width_all_zero(rng):
    data = rng.normal(size=(3, 3, 3)).astype(np.float32)
    assert np.count_nonzero(mirror_array(data, 2, 5)) == 0


# ---------------------------------------------------------------------------
# outline


def test_outline_all_false():
    mask = mask_from(np.zeros((4, 4, 4)))
    assert outline(mask).count() == 0


def test_outline_single_voxel():
    arr = np.zeros((5, 5, 5), dtype=bool)
    arr[2, 2, 2] = True
    assert np.array_equal(outline(mask_from(arr)).data, arr)


def test_outline_solid_block():
    # enumeration oracle: a 3x3x3 block has 26 shell voxels, 1 interior
    arr = np.zeros((5, 5, 5), dtype=bool)
    arr[1:4, 1:4, 1:4] = True
    shell = outline(mask_from(arr))
    assert shell.count() == 26
    assert not shell.data[2, 2, 2]
    assert np.array_equal(shell.data, brute_force_outline(arr))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**16))
def test_outline_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    arr = rng.uniform(size=(5, 5, 5)) < 0.5
    assert np.array_equal(outline(mask_from(arr)).data, brute_force_outline(arr))


# ---------------------------------------------------------------------------
# calibration


def test_pick_offset_prefers_smaller_magnitude():
    assert pick_offset([(-1, 3), (0, 5), (1, 3)]) == -1
    assert pick_offset([(-2, 7), (-1, 3), (0, 5), (1, 2)]) == 1


def test_pick_offset_tie_goes_negative():
    assert pick_offset([(-2, 1), (-1, 9), (0, 9), (1, 9), (2, 1)]) == -2


def test_pick_offset_zero_wins_clean_minimum():
    assert pick_offset([(-1, 4), (0, 0), (1, 4)]) == 0


def test_calibrate_symmetric_phantom():
    image = uniform_bundle(symmetric_anatomy((12, 12, 12), np.random.default_rng(3)))
    assert calibrate(image, radius=5).offset == 0


@pytest.mark.parametrize("shift", range(-3, 4))
def test_calibrate_recovers_translation(shift):
    # constructed-phantom oracle: translating a symmetric phantom by t along
    # the mirror axis moves the zero-cost offset to exactly 2t
    core = symmetric_anatomy((10, 10, 16), np.random.default_rng(1))
    base = np.pad(core, ((0, 0), (0, 0), (6, 6)))  # margin so shifts stay interior
    shifted = np.roll(base, shift, axis=2)
    image = uniform_bundle(shifted)
    spec = calibrate(image, radius=8)
    assert spec.offset == 2 * shift
    mask = image.modalities[0].data > 0
    costs = dict(calibration_costs(BrainMask(mask), radius=8))
    assert costs[spec.offset] == 0


def test_calibrate_radius_zero():
    image = uniform_bundle(symmetric_anatomy((8, 8, 8), np.random.default_rng(2)))
    assert calibrate(image, radius=0).offset == 0


def test_calibrate_empty_mask():
    image = uniform_bundle(np.zeros((4, 4, 4)))
    with pytest.raises(EmptyBrainMask):
        calibrate(image, radius=3)


def brute_force_costs(mask_arr, radius, axis=2):
    out = []
    for t in range(-radius, radius + 1):
        mirrored = brute_force_mirror(mask_arr, axis, t)
        diff = brute_force_outline(mask_arr) ^ brute_force_outline(mirrored)
        out.append((t, int(diff.sum())))
    return out


def test_calibration_costs_interior_support_matches_literal():
    # support clears the border, engaging the shared-outline fast path
    arr = np.zeros((6, 6, 20), dtype=bool)
    arr[2:5, 1:5, 7:12] = True
    arr[3, 2, 8] = False
    assert calibration_costs(mask_from(arr), radius=4) == brute_force_costs(arr, 4)


def test_calibration_costs_border_support_matches_literal():
    # support touches the mirror-axis border, forcing the literal path
    arr = np.zeros((4, 4, 8), dtype=bool)
    arr[1:3, 1:3, 0:6] = True
    assert calibration_costs(mask_from(arr), radius=3) == brute_force_costs(arr, 3)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**16))
def test_calibration_costs_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    arr = rng.uniform(size=(4, 5, 9)) < 0.4
    assert calibration_costs(mask_from(arr), radius=3) == brute_force_costs(arr, 3)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**16))
def test_calibrate_returns_global_minimum(seed):
    # the search space is tiny, so optimality is exhaustively checkable
    rng = np.random.default_rng(seed)
    arr = rng.uniform(size=(4, 4, 8)) < 0.4
    if not arr.any():
        arr[0, 0, 0] = True
    mask = mask_from(arr)
    costs = calibration_costs(mask, radius=4)
    best = pick_offset(costs)
    best_cost = dict(costs)[best]
    assert all(best_cost <= c for _t, c in costs)
