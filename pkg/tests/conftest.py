import numpy as np
import pytest

from asymforge.volume import BrainMask, LabelVolume, MultiModalVolume, Volume3D


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def bundle_from_arrays(*arrays, absent=()):
    """Build a MultiModalVolume from up to four (D,H,W) float arrays."""
    slots = []
    for i in range(4):
        if i in absent or i >= len(arrays):
            slots.append(None)
        else:
            slots.append(Volume3D(np.asarray(arrays[i], dtype=np.float32)))
    return MultiModalVolume(tuple(slots))


def uniform_bundle(data, absent=()):
    """Same array in every present modality slot."""
    return bundle_from_arrays(data, data, data, data, absent=absent)


def labels_from(data):
    return LabelVolume(np.asarray(data, dtype=np.uint8))


def mask_from(data):
    return BrainMask(np.asarray(data, dtype=bool))
