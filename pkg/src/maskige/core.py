"""Shared domain types, validation, and the deterministic RNG contract.

All label/image data is stored row-major with the origin at the top-left
corner.  Color values are kept as real numbers internally; quantization to
8-bit happens only when a file is written.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np


class ArtifactError(ValueError):
    """Error with a stable machine-readable code.

    ``str(err)`` renders as ``"code: message"`` so the CLI can emit it
    verbatim as its one-line failure report.
    """

    def __init__(self, code: str, message: str = ""):
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)


def make_rng(seed: int) -> np.random.Generator:
    """Return the package-wide deterministic generator (PCG64).

    Identical seeds produce identical streams on every platform; every
    routine that needs randomness takes one of these explicitly.  A
    generator instance must not be shared across threads.
    """
    return np.random.default_rng(seed)


def derive_seed(root_seed: int, label: str) -> int:
    """Stable 64-bit child seed for a named component of a larger run."""
    digest = hashlib.sha256(f"{root_seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel class ids in [0, K]; the value K marks an unlabeled pixel.

    Construction only coerces shape and dtype so that malformed maps can be
    built and inspected; ``validate`` reports the first violated invariant.
    """

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise ArtifactError("bad_label_shape", f"expected 2-d labels, got shape {arr.shape}")
        object.__setattr__(self, "labels", _freeze(arr.astype(np.int32, copy=True)))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def unlabeled(self) -> int:
        """The sentinel value marking unlabeled pixels."""
        return self.num_classes

    def fully_labeled(self) -> bool:
        return bool(np.all(self.labels < self.num_classes))


def validate(map: LabelMap) -> str | None:
    """Return the first invariant violation of a LabelMap, or None if ok."""
    if map.num_classes < 1:
        return "nonpositive class count"
    if map.height < 1 or map.width < 1:
        return "nonpositive dimension"
    if map.labels.size and (map.labels.min() < 0 or map.labels.max() > map.num_classes):
        return "label out of range"
    return None


def require_valid(map: LabelMap) -> None:
    report = validate(map)
    if report is not None:
        raise ArtifactError("invalid_label_map", report)


def one_hot(map: LabelMap) -> np.ndarray:
    """One-hot view (H, W, K) of a LabelMap; unlabeled pixels get all-zero rows."""
    require_valid(map)
    k = map.num_classes
    flat = map.labels.reshape(-1)
    out = np.zeros((flat.size, k), dtype=np.float64)
    labeled = flat < k
    out[np.nonzero(labeled)[0], flat[labeled]] = 1.0
    return out.reshape(map.height, map.width, k)


@dataclass(frozen=True)
class Maskige:
    """Real-valued H x W x 3 image; canonical range [0, 255], finite values only."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ArtifactError("bad_maskige_shape", f"expected (H, W, 3), got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ArtifactError("bad_maskige_shape", "nonpositive dimension")
        if not np.all(np.isfinite(arr)):
            raise ArtifactError("nonfinite_maskige", "NaN or Inf in image values")
        object.__setattr__(self, "values", _freeze(arr.copy()))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Palette:
    """K x 3 color matrix mapping class ids to RGB colors.

    Rows must be pairwise distinct and every value must lie in [0, 255];
    downstream decoding relies on both.
    """

    colors: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.colors, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] < 1:
            raise ArtifactError("bad_palette_shape", f"expected (K, 3), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ArtifactError("nonfinite_palette", "NaN or Inf color value")
        if arr.min() < 0.0 or arr.max() > 255.0:
            raise ArtifactError("palette_out_of_range", "color value outside [0, 255]")
        uniq = np.unique(arr, axis=0)
        if uniq.shape[0] != arr.shape[0]:
            raise ArtifactError("palette_duplicate_color", "palette rows must be pairwise distinct")
        object.__setattr__(self, "colors", _freeze(arr.copy()))

    @property
    def num_classes(self) -> int:
        return self.colors.shape[0]


@dataclass(frozen=True)
class InversePalette:
    """3 x K weight matrix mapping an RGB pixel to per-class scores."""

    weights: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.weights, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != 3:
            raise ArtifactError("bad_inverse_shape", f"expected (3, K), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ArtifactError("nonfinite_inverse", "NaN or Inf weight")
        object.__setattr__(self, "weights", _freeze(arr.copy()))

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class LatentGrid:
    """Grid of discrete token ids, one per image cell."""

    tokens: np.ndarray
    vocab: int

    def __post_init__(self):
        arr = np.asarray(self.tokens)
        if arr.ndim != 2:
            raise ArtifactError("bad_grid_shape", f"expected 2-d tokens, got {arr.shape}")
        if self.vocab < 1:
            raise ArtifactError("bad_vocab", "vocabulary size must be positive")
        if arr.size and (arr.min() < 0 or arr.max() >= self.vocab):
            raise ArtifactError("token_out_of_range", f"token ids must lie in [0, {self.vocab})")
        object.__setattr__(self, "tokens", _freeze(arr.astype(np.int32, copy=True)))

    @property
    def grid_h(self) -> int:
        return self.tokens.shape[0]

    @property
    def grid_w(self) -> int:
        return self.tokens.shape[1]
