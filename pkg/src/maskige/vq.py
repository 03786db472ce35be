"""Discrete latent stage: a patch tokenizer over a k-means codebook.

Images are cut into non-overlapping p x p patches, normalized to [0,1], and
each patch is replaced by the id of its nearest codeword.  The codebook is
fit with k-means++ initialization and Lloyd iterations.  Quantization is
hard; the straight-through rule passes gradients through unchanged, and a
softmax-weighted soft path exists for gradient checking.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ArtifactError, LatentGrid, Maskige


@dataclass(frozen=True)
class Codebook:
    """V codewords, each a flattened p x p RGB patch in [0,1]."""

    patch: int
    codewords: np.ndarray  # (V, 3*p*p)

    def __post_init__(self):
        if self.patch < 1:
            raise ArtifactError("bad_patch", "patch size must be positive")
        arr = np.asarray(self.codewords, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3 * self.patch * self.patch or arr.shape[0] < 1:
            raise ArtifactError("bad_codebook_shape", f"expected (V, {3 * self.patch**2}), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ArtifactError("nonfinite_codebook", "NaN or Inf codeword")
        object.__setattr__(self, "codewords", arr.copy())

    @property
    def vocab(self) -> int:
        return self.codewords.shape[0]


@dataclass(frozen=True)
class QuantizeReport:
    """Sum of squared assignment distances after each k-means iteration."""

    objective: tuple[float, ...]
    iterations: int


def patches_from_values(values01: np.ndarray, patch: int) -> np.ndarray:
    """(n_patches, 3*p*p) rows in raster order; patch content row-major (y, x, channel)."""
    h, w = values01.shape[0], values01.shape[1]
    if h % patch or w % patch:
        raise ArtifactError("dimension_not_divisible", f"{h}x{w} image with patch {patch}")
    gh, gw = h // patch, w // patch
    blocks = values01.reshape(gh, patch, gw, patch, 3).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(gh * gw, 3 * patch * patch)


def values_from_patches(rows: np.ndarray, grid_h: int, grid_w: int, patch: int) -> np.ndarray:
    blocks = rows.reshape(grid_h, grid_w, patch, patch, 3).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(grid_h * patch, grid_w * patch, 3)


def _nearest(rows: np.ndarray, codewords: np.ndarray, chunk: int = 8192, exact_ties: bool = True):
    """Indices and squared distances of each row's nearest codeword (ties: lowest id).

    Uses the expanded dot-product form for speed; rows whose two closest
    codewords land within fp noise of each other are recomputed with exact
    differences so the lowest-id tie rule holds bit-for-bit.
    """
    n = rows.shape[0]
    idx = np.empty(n, dtype=np.int64)
    d2 = np.empty(n, dtype=np.float64)
    cw_sq = (codewords**2).sum(axis=1)
    for lo in range(0, n, chunk):
        part = rows[lo : lo + chunk]
        dist = (part**2).sum(axis=1)[:, None] - 2.0 * part @ codewords.T + cw_sq[None, :]
        np.maximum(dist, 0.0, out=dist)
        part_idx = np.argmin(dist, axis=1)
        part_d2 = dist[np.arange(part.shape[0]), part_idx]
        if exact_ties and codewords.shape[0] > 1:
            two = np.partition(dist, 1, axis=1)[:, :2]
            amb = np.nonzero(two[:, 1] - two[:, 0] < 1e-6)[0]
            for sub in range(0, amb.size, 512):
                rows_amb = part[amb[sub : sub + 512]]
                exact = ((rows_amb[:, None, :] - codewords[None, :, :]) ** 2).sum(axis=2)
                sel = np.argmin(exact, axis=1)
                part_idx[amb[sub : sub + 512]] = sel
                part_d2[amb[sub : sub + 512]] = exact[np.arange(sel.size), sel]
        idx[lo : lo + chunk] = part_idx
        d2[lo : lo + chunk] = part_d2
    return idx, d2


def _kmeans_pp_init(rows: np.ndarray, vocab: int, rng: np.random.Generator) -> np.ndarray:
    n = rows.shape[0]
    centers = np.empty((vocab, rows.shape[1]))
    first = int(rng.integers(n))
    centers[0] = rows[first]
    d2 = ((rows - centers[0]) ** 2).sum(axis=1)
    for j in range(1, vocab):
        total = d2.sum()
        if total <= 0.0:
            raise ArtifactError("insufficient_patches", "fewer distinct patches than codewords")
        probs = np.cumsum(d2 / total)
        pick = int(np.searchsorted(probs, rng.random(), side="right"))
        pick = min(pick, n - 1)
        centers[j] = rows[pick]
        d2 = np.minimum(d2, ((rows - centers[j]) ** 2).sum(axis=1))
    return centers


def fit_codebook(
    maskiges: list[Maskige],
    patch: int,
    vocab: int,
    max_iters: int = 100,
    tol: float = 1e-6,
    rng: np.random.Generator | None = None,
    sample_limit: int | None = None,
) -> tuple[Codebook, QuantizeReport]:
    """k-means over normalized patches of the given images.

    Stops when the relative objective improvement drops below ``tol`` or
    after ``max_iters`` update rounds.  Empty clusters are re-seeded to the
    patch farthest from its assigned centroid.  ``sample_limit`` caps the
    number of patches used for fitting (deterministic subsample).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if not maskiges:
        raise ArtifactError("insufficient_patches", "no images supplied")
    rows = np.concatenate([patches_from_values(m.values / 255.0, patch) for m in maskiges], axis=0)
    if sample_limit is not None and rows.shape[0] > sample_limit:
        pick = rng.choice(rows.shape[0], size=sample_limit, replace=False)
        rows = rows[pick]
    if rows.shape[0] < vocab:
        raise ArtifactError("insufficient_patches", f"{rows.shape[0]} patches for {vocab} codewords")
    distinct = np.unique(rows, axis=0)
    if distinct.shape[0] < vocab:
        raise ArtifactError(
            "insufficient_patches",
            f"only {distinct.shape[0]} distinct patches for {vocab} codewords",
        )

    centers = _kmeans_pp_init(rows, vocab, rng)
    objective: list[float] = []
    prev_centers = centers
    for _ in range(max_iters):
        assign, d2 = _nearest(rows, centers)
        obj = float(d2.sum())
        if objective and obj >= objective[-1]:
            centers = prev_centers  # keep the state that produced the last recorded objective
            break
        objective.append(obj)
        if len(objective) >= 2 and (objective[-2] - objective[-1]) < tol * objective[-2]:
            break
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, rows)
        counts = np.bincount(assign, minlength=vocab).astype(np.float64)
        new_centers = centers.copy()
        filled = counts > 0
        new_centers[filled] = sums[filled] / counts[filled, None]
        empties = np.nonzero(~filled)[0]
        if empties.size:
            # re-seed each empty cluster to the patch farthest from its centroid;
            # zero out all copies of the chosen patch so two empties cannot collide
            d2_work = d2.copy()
            for e in empties:
                far = int(np.argmax(d2_work))
                new_centers[e] = rows[far]
                d2_work[(rows == rows[far]).all(axis=1)] = 0.0
        prev_centers = centers
        centers = new_centers
    else:
        # ran out of update rounds: the final update was never evaluated, drop it
        centers = prev_centers

    return Codebook(patch, centers), QuantizeReport(tuple(objective), len(objective))


def tokenize(
    maskige: Maskige,
    cb: Codebook,
    gumbel_scale: float = 0.0,
    rng: np.random.Generator | None = None,
) -> LatentGrid:
    """Per-patch nearest codeword id; grid dims = image dims / patch.

    A positive ``gumbel_scale`` perturbs the negative squared distances with
    scaled Gumbel noise before the argmax, giving the stochastic variant of
    hard assignment.
    """
    rows = patches_from_values(maskige.values / 255.0, cb.patch)
    gh = maskige.height // cb.patch
    gw = maskige.width // cb.patch
    if gumbel_scale > 0.0:
        if rng is None:
            raise ArtifactError("missing_rng", "gumbel-perturbed tokenize needs a generator")
        cw_sq = (cb.codewords**2).sum(axis=1)
        d2 = (rows**2).sum(axis=1)[:, None] - 2.0 * rows @ cb.codewords.T + cw_sq[None, :]
        noise = rng.gumbel(0.0, 1.0, size=d2.shape)
        idx = np.argmax(-d2 + gumbel_scale * noise, axis=1)
    else:
        idx, _ = _nearest(rows, cb.codewords)
    return LatentGrid(idx.reshape(gh, gw), cb.vocab)


def detokenize(grid: LatentGrid, cb: Codebook) -> Maskige:
    """Tile each cell with its codeword patch, rescaled to [0, 255]."""
    if grid.vocab != cb.vocab or (grid.tokens.size and grid.tokens.max() >= cb.vocab):
        raise ArtifactError("token_out_of_range", "grid tokens do not fit this codebook")
    rows = cb.codewords[grid.tokens.reshape(-1)]
    values = values_from_patches(rows, grid.grid_h, grid.grid_w, cb.patch)
    return Maskige(values * 255.0)


def straight_through_roundtrip(
    maskige: Maskige,
    cb: Codebook,
    gumbel_scale: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Maskige:
    """Quantize-and-decode with the straight-through gradient contract.

    Forward value is detokenize(tokenize(m)).  Backward contract: the
    gradient of any downstream loss with respect to the input equals the
    gradient with respect to the returned image, passed through unchanged
    (see ``straight_through_grad``).
    """
    return detokenize(tokenize(maskige, cb, gumbel_scale=gumbel_scale, rng=rng), cb)


def straight_through_grad(upstream: np.ndarray) -> np.ndarray:
    """The straight-through backward rule: gradients pass through unchanged."""
    return upstream


def soft_roundtrip(maskige: Maskige, cb: Codebook, temperature: float = 0.1):
    """Softmax-weighted quantization with an exact vector-Jacobian product.

    Each patch becomes the softmax(-d^2 / temperature) mixture of codewords.
    Returns the soft image and a ``vjp`` closure mapping an upstream
    gradient (same shape as the image) to the gradient w.r.t. the input.
    """
    if temperature <= 0.0:
        raise ArtifactError("bad_temperature", "temperature must be positive")
    xn = patches_from_values(maskige.values / 255.0, cb.patch)
    gh = maskige.height // cb.patch
    gw = maskige.width // cb.patch
    d2 = ((xn[:, None, :] - cb.codewords[None, :, :]) ** 2).sum(axis=2)
    logits = -d2 / temperature
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    q = probs @ cb.codewords
    out = Maskige(values_from_patches(q, gh, gw, cb.patch) * 255.0)

    def vjp(upstream: np.ndarray) -> np.ndarray:
        g = patches_from_values(np.asarray(upstream, dtype=np.float64), cb.patch)
        a = g @ cb.codewords.T          # (n, V): upstream projected on codewords
        w = a * probs
        w_tot = w.sum(axis=1, keepdims=True)
        grad_n = (2.0 / temperature) * (w @ cb.codewords - w_tot * q)
        return values_from_patches(grad_n, gh, gw, cb.patch)

    return out, vjp
