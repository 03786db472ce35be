"""Deterministic synthetic scenes: paired (image, label map) samples.

Scenes are a class-0 background with randomly placed rectangles, disks,
and triangles painted back to front.  The image renders each class in its
own base color plus Gaussian noise; base colors are drawn independently of
any maskige palette so image appearance cannot leak palette information.
An optional fraction of pixels is marked unlabeled by unioning random
disks, mimicking contiguous annotation gaps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ArtifactError, LabelMap, derive_seed, make_rng

SHAPE_KINDS = ("rectangle", "disk", "triangle")


@dataclass(frozen=True)
class SceneSpec:
    width: int = 64
    height: int = 64
    num_classes: int = 8
    shapes_min: int = 3
    shapes_max: int = 6
    shape_kinds: tuple[str, ...] = SHAPE_KINDS
    noise_sigma: float = 10.0
    unlabeled_fraction: float = 0.0
    base_colors: tuple[tuple[int, int, int], ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ArtifactError("invalid_spec", "nonpositive dimension")
        if self.num_classes < 2:
            raise ArtifactError("invalid_spec", "need at least two classes")
        if not (0.0 <= self.unlabeled_fraction < 1.0):
            raise ArtifactError("invalid_spec", "unlabeled fraction must lie in [0, 1)")
        if self.shapes_min < 0 or self.shapes_max < self.shapes_min:
            raise ArtifactError("invalid_spec", "bad shape count range")
        if any(kind not in SHAPE_KINDS for kind in self.shape_kinds):
            raise ArtifactError("invalid_spec", f"shape kinds must be among {SHAPE_KINDS}")
        if self.noise_sigma < 0:
            raise ArtifactError("invalid_spec", "noise sigma must be >= 0")


def class_base_colors(num_classes: int, seed: int, min_separation: float = 80.0) -> np.ndarray:
    """Well-separated random RGB base colors, one per class."""
    rng = make_rng(derive_seed(seed, "base-colors"))
    colors = [rng.integers(0, 256, size=3).astype(np.float64)]
    attempts = 0
    while len(colors) < num_classes:
        cand = rng.integers(0, 256, size=3).astype(np.float64)
        if all(np.linalg.norm(cand - c) >= min_separation for c in colors):
            colors.append(cand)
        attempts += 1
        if attempts > 20000:
            raise ArtifactError("invalid_spec", "cannot place base colors this far apart")
    return np.stack(colors)


def _paint_rectangle(labels: np.ndarray, cls: int, rng: np.random.Generator) -> None:
    h, w = labels.shape
    rw = int(rng.integers(max(2, w // 8), max(3, w // 2)))
    rh = int(rng.integers(max(2, h // 8), max(3, h // 2)))
    x0 = int(rng.integers(0, max(1, w - rw)))
    y0 = int(rng.integers(0, max(1, h - rh)))
    labels[y0 : y0 + rh, x0 : x0 + rw] = cls


def _paint_disk(labels: np.ndarray, cls: int, rng: np.random.Generator) -> None:
    h, w = labels.shape
    r = int(rng.integers(max(2, min(h, w) // 10), max(3, min(h, w) // 4)))
    cx = int(rng.integers(0, w))
    cy = int(rng.integers(0, h))
    yy, xx = np.ogrid[:h, :w]
    labels[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = cls


def _paint_triangle(labels: np.ndarray, cls: int, rng: np.random.Generator) -> None:
    h, w = labels.shape
    for _ in range(20):
        pts = np.stack([rng.uniform(0, w, size=3), rng.uniform(0, h, size=3)], axis=1)
        area = 0.5 * abs(
            (pts[1, 0] - pts[0, 0]) * (pts[2, 1] - pts[0, 1])
            - (pts[2, 0] - pts[0, 0]) * (pts[1, 1] - pts[0, 1])
        )
        if area >= (h * w) / 40.0:
            break
    yy, xx = np.mgrid[:h, :w]
    px = xx + 0.5
    py = yy + 0.5
    inside = np.ones_like(px, dtype=bool)
    sign = None
    for i in range(3):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % 3]
        cross = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        if sign is None:
            # orientation of the triangle fixes which side counts as inside
            x2, y2 = pts[(i + 2) % 3]
            sign = 1.0 if (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0) >= 0 else -1.0
        inside &= sign * cross >= 0
    labels[inside] = cls


_PAINTERS = {"rectangle": _paint_rectangle, "disk": _paint_disk, "triangle": _paint_triangle}


def _unlabeled_mask(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.height, spec.width
    mask = np.zeros((h, w), dtype=bool)
    target = int(round(spec.unlabeled_fraction * h * w))
    yy, xx = np.ogrid[:h, :w]
    while mask.sum() < target:
        deficit = target - int(mask.sum())
        r_fit = max(1, int(math.sqrt(deficit / math.pi)))
        r = int(min(rng.integers(2, max(3, min(h, w) // 8)), r_fit + 1))
        cx = int(rng.integers(0, w))
        cy = int(rng.integers(0, h))
        mask |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    return mask


def generate(spec: SceneSpec, n: int, rng: np.random.Generator) -> list[tuple[np.ndarray, LabelMap]]:
    """n deterministic (uint8 image, LabelMap) pairs.

    Each sample uses its own child generator derived up front, so the set is
    reproducible regardless of how the caller consumes it.
    """
    if n < 0:
        raise ArtifactError("invalid_spec", "negative sample count")
    if spec.base_colors is not None:
        base = np.asarray(spec.base_colors, dtype=np.float64)
        if base.shape != (spec.num_classes, 3):
            raise ArtifactError("invalid_spec", "base colors must be one RGB row per class")
    else:
        base = class_base_colors(spec.num_classes, spec.seed)
    child_seeds = rng.integers(0, 2**63 - 1, size=n)
    samples = []
    for i in range(n):
        srng = make_rng(int(child_seeds[i]))
        labels = np.zeros((spec.height, spec.width), dtype=np.int32)
        n_shapes = int(srng.integers(spec.shapes_min, spec.shapes_max + 1))
        for _ in range(n_shapes):
            cls = int(srng.integers(1, spec.num_classes))
            kind = spec.shape_kinds[int(srng.integers(0, len(spec.shape_kinds)))]
            _PAINTERS[kind](labels, cls, srng)
        image = base[labels]
        if spec.noise_sigma > 0:
            image = image + srng.normal(0.0, spec.noise_sigma, size=image.shape)
        image = np.clip(np.rint(image), 0, 255).astype(np.uint8)
        if spec.unlabeled_fraction > 0:
            labels = labels.copy()
            labels[_unlabeled_mask(spec, srng)] = spec.num_classes
        samples.append((image, LabelMap(labels, spec.num_classes)))
    return samples
