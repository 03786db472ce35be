"""Mask <-> color-image transforms.

The forward transform is linear: a pixel's color is its class's palette
row.  Three inverses are provided: the closed-form least-squares inverse
(3 x K), a nearest-color lookup, and a trainable per-pixel classifier over
a local RGB window for decoding noisy reconstructions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import sgd
from .core import ArtifactError, InversePalette, LabelMap, Maskige, Palette, require_valid

PIVOT_TOL = 1e-9


def encode(map: LabelMap, palette: Palette) -> Maskige:
    """Color image of a fully labeled map: pixel value = palette row of its label."""
    require_valid(map)
    if map.num_classes != palette.num_classes:
        raise ArtifactError(
            "class_count_mismatch",
            f"map has {map.num_classes} classes, palette {palette.num_classes}",
        )
    if not map.fully_labeled():
        raise ArtifactError("unlabeled_pixel_present", "compose labels before encoding")
    return Maskige(palette.colors[map.labels])


def _solve3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gaussian elimination with partial pivoting on a 3x3 system, multi-RHS."""
    a = a.astype(np.float64).copy()
    b = b.astype(np.float64).copy()
    for col in range(3):
        piv = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[piv, col]) < PIVOT_TOL:
            raise ArtifactError("rank_deficient_palette", "normal-equation matrix is singular")
        if piv != col:
            a[[col, piv]] = a[[piv, col]]
            b[[col, piv]] = b[[piv, col]]
        for row in range(col + 1, 3):
            m = a[row, col] / a[col, col]
            a[row, col:] -= m * a[col, col:]
            b[row] -= m * b[col]
    x = np.zeros_like(b)
    for row in (2, 1, 0):
        x[row] = (b[row] - a[row, row + 1 :] @ x[row + 1 :]) / a[row, row]
    return x


def least_squares_inverse(palette: Palette) -> InversePalette:
    """Closed-form least-squares inverse of the palette.

    Solves the normal equations of min over G of the squared residual of
    (palette @ G - I); two rounds of iterative refinement keep the residual
    of the normal equations near machine precision even at 0..255 scale.
    """
    beta = palette.colors
    gram = beta.T @ beta
    rhs = beta.T.copy()
    gamma = _solve3(gram, rhs)
    for _ in range(2):
        residual = rhs - gram @ gamma
        gamma = gamma + _solve3(gram, residual)
    return InversePalette(gamma)


def decode_linear(maskige: Maskige, inv: InversePalette) -> LabelMap:
    """Per-pixel scores = pixel @ weights; label = argmax, ties to the lowest id."""
    scores = maskige.values @ inv.weights
    return LabelMap(np.argmax(scores, axis=2), inv.num_classes)


def decode_nearest(maskige: Maskige, palette: Palette) -> LabelMap:
    """Per-pixel nearest palette color in Euclidean RGB, ties to the lowest id."""
    h, w = maskige.height, maskige.width
    pixels = maskige.values.reshape(-1, 3)
    labels = np.empty(pixels.shape[0], dtype=np.int64)
    chunk = 8192
    for lo in range(0, pixels.shape[0], chunk):
        part = pixels[lo : lo + chunk]
        d2 = ((part[:, None, :] - palette.colors[None, :, :]) ** 2).sum(axis=2)
        labels[lo : lo + chunk] = np.argmin(d2, axis=1)
    return LabelMap(labels.reshape(h, w), palette.num_classes)


@dataclass(frozen=True)
class WindowInverseModel:
    """Per-pixel classifier over a w x w RGB window of a [0,1]-normalized image.

    Feature layout per pixel: the window flattened row-major as
    (dy, dx, channel), followed by a constant bias feature.
    """

    window: int
    weights: np.ndarray  # (3*w*w + 1, K)

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ArtifactError("bad_window", "window must be an odd positive integer")
        arr = np.asarray(self.weights, dtype=np.float64)
        expected = 3 * self.window * self.window + 1
        if arr.ndim != 2 or arr.shape[0] != expected:
            raise ArtifactError("bad_window_weights", f"expected ({expected}, K), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ArtifactError("nonfinite_window_weights", "NaN or Inf weight")
        object.__setattr__(self, "weights", arr.copy())

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]


def window_features(values01: np.ndarray, window: int) -> np.ndarray:
    """(H*W, 3*w*w + 1) features from a [0,1] RGB array, clamp-to-edge padded."""
    h, w = values01.shape[0], values01.shape[1]
    pad = window // 2
    padded = np.pad(values01, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    view = sliding_window_view(padded, (window, window), axis=(0, 1))
    # view: (H, W, 3, w, w) -> per-pixel (w, w, 3) row-major
    feats = view.transpose(0, 1, 3, 4, 2).reshape(h * w, 3 * window * window)
    return np.concatenate([feats, np.ones((h * w, 1))], axis=1)


def apply_window_inverse(model: WindowInverseModel, maskige: Maskige) -> LabelMap:
    feats = window_features(maskige.values / 255.0, model.window)
    scores = feats @ model.weights
    labels = np.argmax(scores, axis=1).reshape(maskige.height, maskige.width)
    return LabelMap(labels, model.num_classes)


def linear_inverse_as_window_model(inv: InversePalette) -> WindowInverseModel:
    """Embed a 3 x K linear inverse as a w=1 window model (same argmax output)."""
    weights = np.zeros((4, inv.num_classes))
    weights[:3] = inv.weights * 255.0
    return WindowInverseModel(1, weights)


def train_window_inverse(
    samples: list[tuple[Maskige, LabelMap]],
    window: int,
    epochs: int,
    lr: float,
    rng: np.random.Generator,
    batch: int = 256,
    max_pixels: int = 120_000,
) -> tuple[WindowInverseModel, sgd.FitReport]:
    """Fit the window classifier on labeled pixels of (noisy image, labels) pairs.

    Images are normalized to [0,1] internally.  Starts from zero weights so a
    zero-epoch fit scores every class equally.
    """
    if not samples:
        raise ArtifactError("empty_sample_set", "need at least one training pair")
    k = samples[0][1].num_classes
    feats = []
    targets = []
    for maskige, labels in samples:
        if labels.num_classes != k:
            raise ArtifactError("class_count_mismatch", "all samples must share K")
        if maskige.values.shape[:2] != labels.labels.shape:
            raise ArtifactError("shape_mismatch", "image and labels must share dims")
        if window > maskige.height or window > maskige.width:
            raise ArtifactError("window_exceeds_image", f"window {window} larger than image")
        f = window_features(maskige.values / 255.0, window)
        lab = labels.labels.reshape(-1)
        keep = lab < k
        feats.append(f[keep])
        targets.append(lab[keep])
    x = np.concatenate(feats, axis=0)
    y = np.concatenate(targets, axis=0).astype(np.int64)
    if x.shape[0] == 0:
        raise ArtifactError("empty_sample_set", "no labeled pixels in the samples")
    if x.shape[0] > max_pixels:
        pick = rng.choice(x.shape[0], size=max_pixels, replace=False)
        x, y = x[pick], y[pick]
    weights, report = sgd.fit_linear(x, y, k, epochs, lr, rng, batch=batch)
    return WindowInverseModel(window, weights), report
