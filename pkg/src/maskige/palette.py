"""Palette construction under the maximal-distance principle.

A palette assigns each class a color so that classes stay distinguishable
after a lossy reconstruction of the color image.  The spread-out design
builds one arithmetic sequence per RGB channel, takes their Cartesian
product, keeps the first K colors, adds bounded per-entry jitter, and
optionally reassigns chosen classes to the emptiest corner of color space.
Random palettes exist as the degraded baseline.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .core import ArtifactError, Palette

GRAY = np.array([128.0, 128.0, 128.0])
REFINE_LATTICE_STEP = 15


@dataclass(frozen=True)
class PaletteSpec:
    """Parameters of the spread-out palette construction.

    ``intervals`` and ``starts`` define the per-channel arithmetic
    sequences; ``jitter_bound`` is the largest additive factor applied per
    channel; ``refine_classes`` are reassigned greedily after construction,
    keeping at least ``gray_exclusion_radius`` away from mid-gray.
    """

    num_classes: int
    intervals: tuple[int, int, int]
    starts: tuple[int, int, int] = (0, 1, 2)
    jitter_bound: float = 15.0
    seed: int = 0
    refine_classes: tuple[int, ...] = ()
    gray_exclusion_radius: float = 60.0

    def __post_init__(self):
        if self.num_classes < 1:
            raise ArtifactError("invalid_palette_spec", "need at least one class")
        if any(k < 1 for k in self.intervals):
            raise ArtifactError("invalid_palette_spec", "intervals must be positive integers")
        if self.jitter_bound < 0:
            raise ArtifactError("invalid_palette_spec", "jitter bound must be >= 0")


def auto_intervals(num_classes: int, starts: tuple[int, int, int] = (0, 1, 2)) -> tuple[int, int, int]:
    """Channel intervals that spread the first ``num_classes`` product colors
    as widely as possible over [0, 255]^3.

    Picks the smallest per-channel sequence lengths whose product covers K,
    then stretches each sequence across its full channel range.
    """
    n = max(2, math.ceil(num_classes ** (1.0 / 3.0)))
    counts = [n, n, n]
    for ch in range(3):
        while counts[ch] > 1:
            trial = counts.copy()
            trial[ch] -= 1
            if trial[0] * trial[1] * trial[2] >= num_classes:
                counts = trial
            else:
                break
    ks = []
    for ch in range(3):
        span = 255 - starts[ch]
        ks.append(max(1, span // max(1, counts[ch] - 1)))
    return (ks[0], ks[1], ks[2])


def default_spec(num_classes: int, seed: int = 0) -> PaletteSpec:
    starts = (0, 1, 2)
    return PaletteSpec(
        num_classes=num_classes,
        intervals=auto_intervals(num_classes, starts),
        starts=starts,
        seed=seed,
    )


def _channel_sequence(start: int, interval: int) -> np.ndarray:
    # arithmetic sequence a_i = start + (i-1) * interval, kept within [0, 255]
    if start < 0 or start > 255:
        raise ArtifactError("invalid_palette_spec", "start outside [0, 255]")
    return np.arange(start, 256, interval, dtype=np.float64)


def _base_colors(spec: PaletteSpec) -> np.ndarray:
    seqs = [_channel_sequence(s, k) for s, k in zip(spec.starts, spec.intervals)]
    total = seqs[0].size * seqs[1].size * seqs[2].size
    if total < spec.num_classes:
        raise ArtifactError(
            "palette_overflow",
            f"only {total} colors fit in [0,255]^3 for {spec.num_classes} classes",
        )
    # Cartesian product in lexicographic order, R slowest; keep the first K.
    idx = np.arange(spec.num_classes)
    ng, nb = seqs[1].size, seqs[2].size
    r = seqs[0][idx // (ng * nb)]
    g = seqs[1][(idx // nb) % ng]
    b = seqs[2][idx % nb]
    return np.stack([r, g, b], axis=1)


def generate_max_distance(spec: PaletteSpec, rng: np.random.Generator) -> Palette:
    """Build the spread-out palette: sequences, product, truncation, jitter,
    then per-class refinement."""
    base = _base_colors(spec)
    colors = base.copy()
    if spec.jitter_bound > 0:
        jitter = rng.uniform(0.0, spec.jitter_bound, size=colors.shape)
        colors = np.clip(base + jitter, 0.0, 255.0)
        # jitter may merge two rows; redraw the duplicates' jitter only
        for _ in range(100):
            dup = _duplicate_rows(colors)
            if not dup.size:
                break
            redraw = rng.uniform(0.0, spec.jitter_bound, size=(dup.size, 3))
            colors[dup] = np.clip(base[dup] + redraw, 0.0, 255.0)
        else:
            raise ArtifactError("palette_collision", "could not separate palette rows after jitter")
    palette = Palette(colors)
    if spec.refine_classes:
        palette = refine(palette, list(spec.refine_classes), spec.gray_exclusion_radius)
    return palette


def _duplicate_rows(colors: np.ndarray) -> np.ndarray:
    _, inverse, counts = np.unique(colors, axis=0, return_inverse=True, return_counts=True)
    dup_groups = np.nonzero(counts > 1)[0]
    out = []
    for grp in dup_groups:
        rows = np.nonzero(inverse == grp)[0]
        out.extend(rows[1:])  # keep the first occurrence
    return np.array(sorted(out), dtype=np.int64)


def generate_random(num_classes: int, rng: np.random.Generator) -> Palette:
    """K colors drawn uniformly from the integer lattice, resampling collisions."""
    if num_classes < 1:
        raise ArtifactError("invalid_palette_spec", "need at least one class")
    colors = rng.integers(0, 256, size=(num_classes, 3)).astype(np.float64)
    while True:
        dup = _duplicate_rows(colors)
        if not dup.size:
            break
        colors[dup] = rng.integers(0, 256, size=(dup.size, 3)).astype(np.float64)
    return Palette(colors)


def _refine_candidates(radius: float) -> np.ndarray:
    axis = np.arange(0, 256, REFINE_LATTICE_STEP, dtype=np.float64)
    rr, gg, bb = np.meshgrid(axis, axis, axis, indexing="ij")
    lattice = np.stack([rr.ravel(), gg.ravel(), bb.ravel()], axis=1)
    keep = np.linalg.norm(lattice - GRAY, axis=1) >= radius
    return lattice[keep]


def refine(palette: Palette, class_ids: list[int], gray_exclusion_radius: float = 60.0) -> Palette:
    """Greedy farthest-point reassignment of the listed classes.

    Each class in turn gets the lattice color with the largest minimum
    distance to every other palette color, restricted to colors at least
    ``gray_exclusion_radius`` away from mid-gray.  A class keeps its current
    color when that color already beats the best candidate and itself
    satisfies the gray exclusion.
    """
    if not class_ids:
        return palette
    k = palette.num_classes
    for cid in class_ids:
        if cid < 0 or cid >= k:
            raise ArtifactError("invalid_class_id", f"class {cid} outside [0, {k})")
    candidates = _refine_candidates(gray_exclusion_radius)
    if candidates.size == 0:
        raise ArtifactError(
            "infeasible_refinement",
            f"no lattice color is {gray_exclusion_radius} away from gray",
        )
    colors = palette.colors.copy()
    for cid in class_ids:
        others = np.delete(colors, cid, axis=0)
        if others.size == 0:
            continue
        dists = np.linalg.norm(candidates[:, None, :] - others[None, :, :], axis=2)
        min_dist = dists.min(axis=1)
        best = int(np.argmax(min_dist))
        current_min = float(np.linalg.norm(others - colors[cid], axis=1).min())
        current_ok = float(np.linalg.norm(colors[cid] - GRAY)) >= gray_exclusion_radius
        if current_ok and current_min >= min_dist[best]:
            continue
        colors[cid] = candidates[best]
    return Palette(colors)


def min_pairwise_distance(palette: Palette) -> float:
    """Minimum Euclidean distance over all unordered color pairs."""
    k = palette.num_classes
    if k < 2:
        raise ArtifactError("degenerate_palette", "need at least two colors")
    diffs = palette.colors[:, None, :] - palette.colors[None, :, :]
    d = np.linalg.norm(diffs, axis=2)
    d[np.diag_indices(k)] = np.inf
    return float(d.min())


def save_palette_csv(palette: Palette, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "r", "g", "b"])
        for i, (r, g, b) in enumerate(palette.colors):
            writer.writerow([i, f"{r:.6f}", f"{g:.6f}", f"{b:.6f}"])


def load_palette_csv(path) -> Palette:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["class", "r", "g", "b"]:
            raise ArtifactError("palette_csv_format", f"unexpected header {header}")
        rows = []
        for row in reader:
            if len(row) != 4:
                raise ArtifactError("palette_csv_format", f"bad row {row}")
            rows.append((int(row[0]), float(row[1]), float(row[2]), float(row[3])))
    rows.sort(key=lambda r: r[0])
    if [r[0] for r in rows] != list(range(len(rows))):
        raise ArtifactError("palette_csv_format", "class ids must be 0..K-1")
    return Palette(np.array([r[1:] for r in rows], dtype=np.float64))
