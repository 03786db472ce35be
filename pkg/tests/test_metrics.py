import numpy as np
import pytest

from maskige.core import ArtifactError, LabelMap, make_rng
from maskige.metrics import confusion, macc, miou, per_class_iou
from conftest import random_label_map


def set_based_miou(pred: LabelMap, gt: LabelMap) -> float:
    """Independent oracle: per-class pixel-set intersection over union."""
    labeled = gt.labels < gt.num_classes
    ious = []
    for k in range(gt.num_classes):
        gt_set = (gt.labels == k) & labeled
        if not gt_set.any():
            continue
        pred_set = (pred.labels == k) & labeled
        inter = (gt_set & pred_set).sum()
        union = (gt_set | pred_set).sum()
        ious.append(inter / union)
    return float(np.mean(ious))


def test_confusion_perfect_is_diagonal():
    rng = make_rng(1)
    m = random_label_map(rng, k=4)
    conf = confusion(m, m)
    assert np.array_equal(conf, np.diag(np.bincount(m.labels.ravel(), minlength=4)))


def test_confusion_all_unlabeled_gt_is_zero():
    gt = LabelMap(np.full((4, 4), 3), 3)
    pred = LabelMap(np.zeros((4, 4), dtype=int), 3)
    assert confusion(pred, gt).sum() == 0


def test_confusion_hand_counted():
    gt = LabelMap(np.array([[0, 0], [1, 1]]), 2)
    pred = LabelMap(np.array([[0, 1], [1, 1]]), 2)
    conf = confusion(pred, gt)
    assert conf[0, 0] == 1 and conf[0, 1] == 1 and conf[1, 1] == 2 and conf[1, 0] == 0


def test_miou_hand_counted_case():
    gt = LabelMap(np.array([[0, 0], [1, 1]]), 2)
    pred = LabelMap(np.array([[0, 1], [1, 1]]), 2)
    conf = confusion(pred, gt)
    iou = per_class_iou(conf)
    assert iou[0] == pytest.approx(1 / 2)
    assert iou[1] == pytest.approx(2 / 3)
    assert miou(conf) == pytest.approx(7 / 12)
    assert miou(conf) == pytest.approx(set_based_miou(pred, gt))


def test_miou_perfect_and_disjoint():
    gt = LabelMap(np.array([[0, 1], [2, 3]]), 4)
    assert miou(confusion(gt, gt)) == 1.0
    assert macc(confusion(gt, gt)) == 1.0
    shifted = LabelMap((gt.labels + 1) % 4, 4)
    assert miou(confusion(shifted, gt)) == 0.0


def test_miou_matches_set_oracle_on_random_maps():
    rng = make_rng(99)
    for _ in range(50):
        gt = random_label_map(rng, k=5, unlabeled_fraction=0.2)
        pred = random_label_map(rng, k=5)
        conf = confusion(pred, gt)
        assert miou(conf) == pytest.approx(set_based_miou(pred, gt), abs=1e-12)


def test_miou_permutation_equivariance():
    rng = make_rng(5)
    gt = random_label_map(rng, k=4)
    pred = random_label_map(rng, k=4)
    perm = rng.permutation(4)
    gt_p = LabelMap(perm[gt.labels], 4)
    pred_p = LabelMap(perm[pred.labels], 4)
    iou = per_class_iou(confusion(pred, gt))
    iou_p = per_class_iou(confusion(pred_p, gt_p))
    assert np.allclose(iou_p[perm], iou)
    assert miou(confusion(pred, gt)) == pytest.approx(miou(confusion(pred_p, gt_p)))


def test_absent_classes_excluded_from_means():
    gt = LabelMap(np.array([[0, 0]]), 3)
    pred = LabelMap(np.array([[0, 1]]), 3)
    conf = confusion(pred, gt)
    assert miou(conf) == pytest.approx(1 / 2)
    assert macc(conf) == pytest.approx(1 / 2)


def test_errors():
    gt = LabelMap(np.array([[0]]), 2)
    with pytest.raises(ArtifactError, match="shape_mismatch"):
        confusion(LabelMap(np.array([[0, 1]]), 2), gt)
    with pytest.raises(ArtifactError, match="no_classes_present"):
        miou(np.zeros((2, 2)))
