import numpy as np
import pytest

from maskige.core import LabelMap, make_rng


@pytest.fixture
def rng():
    return make_rng(12345)


def random_label_map(rng, h=16, w=16, k=5, unlabeled_fraction=0.0) -> LabelMap:
    labels = rng.integers(0, k, size=(h, w)).astype(np.int32)
    if unlabeled_fraction > 0:
        mask = rng.random((h, w)) < unlabeled_fraction
        labels[mask] = k
    return LabelMap(labels, k)
