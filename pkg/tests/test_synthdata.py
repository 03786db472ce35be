import numpy as np
import pytest

from maskige.core import ArtifactError, make_rng
from maskige.synthdata import SceneSpec, class_base_colors, generate


def test_no_unlabeled_when_fraction_zero():
    spec = SceneSpec(width=32, height=32, num_classes=5, unlabeled_fraction=0.0, seed=1)
    for _, labels in generate(spec, 5, make_rng(0)):
        assert labels.fully_labeled()


def test_zero_noise_image_is_recoverable_recoloring():
    spec = SceneSpec(width=32, height=32, num_classes=6, noise_sigma=0.0, seed=2)
    base = class_base_colors(6, 2)
    for image, labels in generate(spec, 5, make_rng(0)):
        # nearest-base-color classification recovers every labeled pixel
        d2 = ((image[:, :, None, :].astype(float) - base[None, None, :, :]) ** 2).sum(axis=3)
        pred = np.argmin(d2, axis=2)
        assert np.array_equal(pred, labels.labels)


def test_same_seed_identical_samples():
    spec = SceneSpec(width=24, height=24, num_classes=4, unlabeled_fraction=0.1, seed=3)
    a = generate(spec, 4, make_rng(9))
    b = generate(spec, 4, make_rng(9))
    for (img_a, lab_a), (img_b, lab_b) in zip(a, b):
        assert np.array_equal(img_a, img_b)
        assert np.array_equal(lab_a.labels, lab_b.labels)


def test_unlabeled_fraction_within_two_percent():
    spec = SceneSpec(width=64, height=64, num_classes=8, unlabeled_fraction=0.2, seed=4)
    samples = generate(spec, 100, make_rng(1))
    fractions = [(lab.labels == 8).mean() for _, lab in samples]
    assert abs(np.mean(fractions) - 0.2) <= 0.02


def test_background_is_class_zero_and_shapes_present():
    spec = SceneSpec(width=48, height=48, num_classes=6, seed=5, shapes_min=2, shapes_max=4)
    samples = generate(spec, 10, make_rng(2))
    saw_shape = False
    for _, labels in samples:
        corner_vals = labels.labels[[0, 0, -1, -1], [0, -1, 0, -1]]
        assert (corner_vals <= 6).all()
        if (labels.labels > 0).any():
            saw_shape = True
    assert saw_shape


def test_invalid_specs():
    with pytest.raises(ArtifactError, match="invalid_spec"):
        SceneSpec(num_classes=1)
    with pytest.raises(ArtifactError, match="invalid_spec"):
        SceneSpec(unlabeled_fraction=1.0)
    with pytest.raises(ArtifactError, match="invalid_spec"):
        SceneSpec(shapes_min=5, shapes_max=2)
    with pytest.raises(ArtifactError, match="invalid_spec"):
        SceneSpec(shape_kinds=("hexagon",))


def test_base_colors_separated_and_deterministic():
    a = class_base_colors(8, 7)
    b = class_base_colors(8, 7)
    assert np.array_equal(a, b)
    d = np.linalg.norm(a[:, None, :] - a[None, :, :], axis=2)
    d[np.diag_indices(8)] = np.inf
    assert d.min() >= 80.0
