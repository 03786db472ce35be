"""Latent prior learning: predict tokens from images, fill unlabeled areas.

The token predictor maps each non-overlapping image patch to a categorical
distribution over codebook ids; targets come from tokenizing the color
encoding of the (composed) ground truth.  The auxiliary head is a per-pixel
window classifier over the image used to pseudo-label unlabeled pixels
before composition, so the token targets never contain an "unknown" class.
The discriminative baseline is the same window classifier used directly as
a segmenter.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import codec, sgd, vq
from .core import ArtifactError, LabelMap, LatentGrid, make_rng
from .stage1 import Stage1Artifacts


@dataclass(frozen=True)
class TokenPredictor:
    """Per-cell categorical distribution over tokens given an image patch.

    Features are the flattened [0,1] RGB patch plus a bias; an optional
    tanh hidden layer sits between features and token scores.
    """

    patch: int
    vocab: int
    w1: np.ndarray
    w2: np.ndarray | None = None

    def __post_init__(self):
        n_feat = 3 * self.patch * self.patch + 1
        if self.w1.shape[0] != n_feat:
            raise ArtifactError("bad_predictor_shape", f"expected {n_feat} input features")
        if self.w2 is None:
            if self.w1.shape[1] != self.vocab:
                raise ArtifactError("bad_predictor_shape", "linear weights must map to vocab")
        elif self.w2.shape != (self.w1.shape[1] + 1, self.vocab):
            raise ArtifactError("bad_predictor_shape", "hidden weights must map to vocab")

    @property
    def hidden(self) -> int:
        return 0 if self.w2 is None else self.w1.shape[1]

    def scores(self, image: np.ndarray) -> np.ndarray:
        feats = patch_features(image, self.patch)
        if self.w2 is None:
            return feats @ self.w1
        hid = np.tanh(feats @ self.w1)
        return np.concatenate([hid, np.ones((hid.shape[0], 1))], axis=1) @ self.w2

    def predict_proba(self, image: np.ndarray) -> np.ndarray:
        """(grid_h, grid_w, vocab) softmax distributions."""
        gh = image.shape[0] // self.patch
        gw = image.shape[1] // self.patch
        return sgd.softmax(self.scores(image)).reshape(gh, gw, self.vocab)

    def predict_tokens(self, image: np.ndarray) -> LatentGrid:
        gh = image.shape[0] // self.patch
        gw = image.shape[1] // self.patch
        ids = np.argmax(self.scores(image), axis=1).reshape(gh, gw)
        return LatentGrid(ids, self.vocab)


@dataclass(frozen=True)
class AuxiliaryHead:
    """Per-pixel class scores from a w x w window of the [0,1] image."""

    window: int
    weights: np.ndarray  # (3*w*w + 1, K)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]

    def predict(self, image: np.ndarray) -> LabelMap:
        feats = codec.window_features(np.asarray(image, dtype=np.float64) / 255.0, self.window)
        labels = np.argmax(feats @ self.weights, axis=1)
        return LabelMap(labels.reshape(image.shape[0], image.shape[1]), self.num_classes)


@dataclass(frozen=True)
class ComposedLabels:
    """Fully labeled mask plus the indicator of pixels that were filled in."""

    labels: LabelMap
    replaced: np.ndarray

    def __post_init__(self):
        if not self.labels.fully_labeled():
            raise ArtifactError("pseudo_labels_incomplete", "composed mask must be fully labeled")


def compose_labels(c: LabelMap, pseudo: LabelMap) -> ComposedLabels:
    """Fill unlabeled pixels of ``c`` from ``pseudo``; labeled pixels are kept."""
    if c.labels.shape != pseudo.labels.shape or c.num_classes != pseudo.num_classes:
        raise ArtifactError("shape_mismatch", "mask and pseudo labels must share dims and K")
    if not pseudo.fully_labeled():
        raise ArtifactError("pseudo_labels_incomplete", "pseudo labels contain unlabeled pixels")
    replaced = c.labels == c.num_classes
    merged = np.where(replaced, pseudo.labels, c.labels)
    return ComposedLabels(LabelMap(merged, c.num_classes), replaced)


def patch_features(image: np.ndarray, patch: int) -> np.ndarray:
    """(cells, 3*p*p + 1) features: flattened [0,1] patch plus a bias."""
    values = np.asarray(image, dtype=np.float64) / 255.0
    rows = vq.patches_from_values(values, patch)
    return np.concatenate([rows, np.ones((rows.shape[0], 1))], axis=1)


def _window_training_set(
    images: list[np.ndarray],
    labelmaps: list[LabelMap],
    window: int,
    rng: np.random.Generator,
    max_pixels: int,
):
    feats = []
    targets = []
    k = labelmaps[0].num_classes
    for image, labels in zip(images, labelmaps):
        if labels.num_classes != k:
            raise ArtifactError("class_count_mismatch", "all samples must share K")
        f = codec.window_features(np.asarray(image, dtype=np.float64) / 255.0, window)
        lab = labels.labels.reshape(-1)
        keep = lab < k
        feats.append(f[keep])
        targets.append(lab[keep])
    x = np.concatenate(feats, axis=0)
    y = np.concatenate(targets, axis=0).astype(np.int64)
    if x.shape[0] == 0:
        raise ArtifactError("no_labeled_pixels", "every pixel is unlabeled")
    if x.shape[0] > max_pixels:
        pick = rng.choice(x.shape[0], size=max_pixels, replace=False)
        x, y = x[pick], y[pick]
    return x, y, k


def train_auxiliary(
    images: list[np.ndarray],
    labelmaps: list[LabelMap],
    window: int = 5,
    epochs: int = 6,
    lr: float = 2.0,
    rng: np.random.Generator | None = None,
    batch: int = 256,
    max_pixels: int = 150_000,
) -> tuple[AuxiliaryHead, sgd.FitReport]:
    """Fit the pseudo-labeling head on labeled pixels only."""
    if rng is None:
        rng = make_rng(0)
    if not images:
        raise ArtifactError("no_labeled_pixels", "no training images")
    x, y, k = _window_training_set(images, labelmaps, window, rng, max_pixels)
    weights, report = sgd.fit_linear(x, y, k, epochs, lr, rng, batch=batch)
    return AuxiliaryHead(window, weights), report


def discriminative_baseline(
    images: list[np.ndarray],
    labelmaps: list[LabelMap],
    window: int = 5,
    epochs: int = 6,
    lr: float = 2.0,
    rng: np.random.Generator | None = None,
    batch: int = 256,
    max_pixels: int = 150_000,
) -> tuple[AuxiliaryHead, sgd.FitReport]:
    """Per-pixel discriminative segmenter; shares the auxiliary head's
    architecture and trainer, so identical seeds give identical weights."""
    return train_auxiliary(images, labelmaps, window, epochs, lr, rng, batch, max_pixels)


def token_targets(composed: ComposedLabels, artifacts: Stage1Artifacts) -> LatentGrid:
    x = codec.encode(composed.labels, artifacts.palette)
    return vq.tokenize(x, artifacts.codebook)


def train_token_predictor(
    images: list[np.ndarray],
    composed: list[ComposedLabels],
    artifacts: Stage1Artifacts,
    epochs: int = 30,
    lr: float = 0.5,
    rng: np.random.Generator | None = None,
    hidden: int | str | None = "auto",
    batch: int = 256,
) -> tuple[TokenPredictor, sgd.FitReport]:
    """Fit the image-to-token predictor against posterior tokens.

    ``hidden="auto"`` starts linear and switches to a 64-unit tanh layer
    when the linear fit plateaus above half the uniform loss ln(V).
    """
    if rng is None:
        rng = make_rng(0)
    if len(images) != len(composed) or not images:
        raise ArtifactError("shape_mismatch", "need one composed mask per image")
    patch = artifacts.codebook.patch
    vocab = artifacts.codebook.vocab
    feats = []
    targets = []
    for image, comp in zip(images, composed):
        if image.shape[0] % patch or image.shape[1] % patch:
            raise ArtifactError("dimension_not_divisible", "image dims must be divisible by patch")
        feats.append(patch_features(image, patch))
        targets.append(token_targets(comp, artifacts).tokens.reshape(-1))
    x = np.concatenate(feats, axis=0)
    y = np.concatenate(targets, axis=0).astype(np.int64)

    if hidden == "auto":
        seed_state = rng.bit_generator.state
        weights, report = sgd.fit_linear(x, y, vocab, epochs, lr, rng, batch=batch)
        if report.final_loss <= 0.5 * math.log(vocab):
            return TokenPredictor(patch, vocab, weights), report
        retry = np.random.Generator(np.random.PCG64())
        retry.bit_generator.state = seed_state
        (w1, w2), report = sgd.fit_mlp(x, y, vocab, 64, epochs, lr, retry, batch=batch)
        return TokenPredictor(patch, vocab, w1, w2), report
    if hidden in (None, 0):
        weights, report = sgd.fit_linear(x, y, vocab, epochs, lr, rng, batch=batch)
        return TokenPredictor(patch, vocab, weights), report
    (w1, w2), report = sgd.fit_mlp(x, y, vocab, int(hidden), epochs, lr, rng, batch=batch)
    return TokenPredictor(patch, vocab, w1, w2), report


def predictor_loss(predictor: TokenPredictor, images: list[np.ndarray], grids: list[LatentGrid]) -> float:
    """Mean per-cell cross-entropy of the predictor against target grids."""
    total = 0.0
    count = 0
    for image, grid in zip(images, grids):
        probs = predictor.predict_proba(image).reshape(-1, predictor.vocab)
        tok = grid.tokens.reshape(-1)
        total += float(-np.log(np.maximum(probs[np.arange(tok.size), tok], 1e-300)).sum())
        count += tok.size
    return total / count
