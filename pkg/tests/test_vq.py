import numpy as np
import pytest

from maskige.codec import encode
from maskige.core import ArtifactError, LabelMap, LatentGrid, Maskige, make_rng
from maskige.palette import generate_random
from maskige.vq import (
    Codebook,
    detokenize,
    fit_codebook,
    patches_from_values,
    soft_roundtrip,
    straight_through_grad,
    straight_through_roundtrip,
    tokenize,
)


def flat_color_maskige(colors, grid, patch):
    """Image whose patches are flat tiles of the listed colors, row-major."""
    gh, gw = grid
    tiles = np.array(colors, dtype=float)[np.arange(gh * gw) % len(colors)]
    vals = tiles.reshape(gh, gw, 1, 1, 3).repeat(patch, 2).repeat(patch, 3)
    return Maskige(vals.transpose(0, 2, 1, 3, 4).reshape(gh * patch, gw * patch, 3))


def test_fit_exact_vocabulary_reaches_zero_objective():
    colors = [(0, 0, 0), (255, 0, 0), (0, 255, 0), (0, 0, 255)]
    m = flat_color_maskige(colors, (4, 4), 2)
    cb, report = fit_codebook([m], 2, 4, rng=make_rng(0))
    assert report.objective[-1] <= 1e-9
    got = {tuple(np.round(c * 255).astype(int)) for c in cb.codewords.reshape(4, 2, 2, 3)[:, 0, 0]}
    want = {tuple(np.tile(c, 1)) for c in colors}
    assert {g for g in got} == {tuple(int(v) for v in c) for c in colors}


def test_fit_single_codeword_is_mean_patch():
    rng = make_rng(1)
    m = Maskige(rng.uniform(0, 255, size=(8, 8, 3)))
    cb, report = fit_codebook([m], 4, 1, rng=rng)
    rows = patches_from_values(m.values / 255.0, 4)
    assert np.allclose(cb.codewords[0], rows.mean(axis=0), atol=1e-12)
    variance = ((rows - rows.mean(axis=0)) ** 2).sum()
    assert report.objective[-1] == pytest.approx(variance, rel=1e-9)


def test_fit_objective_non_increasing_and_local_optimum():
    rng = make_rng(2)
    m = Maskige(rng.uniform(0, 255, size=(16, 24, 3)))  # 24 patches of dim 48
    cb, report = fit_codebook([m], 4, 5, rng=rng)
    objs = np.array(report.objective)
    assert (np.diff(objs) <= 0).all()
    # with converged centroids, no single patch prefers another centroid
    rows = patches_from_values(m.values / 255.0, 4)
    d2 = ((rows[:, None, :] - cb.codewords[None, :, :]) ** 2).sum(axis=2)
    assign = np.argmin(d2, axis=1)
    assert d2[np.arange(rows.shape[0]), assign].sum() <= report.objective[-1] + 1e-9
    for i in range(rows.shape[0]):
        for v in range(5):
            assert d2[i, assign[i]] <= d2[i, v] + 1e-12


def test_fit_errors():
    rng = make_rng(0)
    m = Maskige(rng.uniform(0, 255, size=(8, 8, 3)))
    with pytest.raises(ArtifactError, match="insufficient_patches"):
        fit_codebook([m], 4, 5, rng=rng)  # only 4 patches
    with pytest.raises(ArtifactError, match="dimension_not_divisible"):
        fit_codebook([Maskige(rng.uniform(0, 255, size=(9, 9, 3)))], 4, 2, rng=rng)
    flat = flat_color_maskige([(10, 10, 10)], (4, 4), 2)
    with pytest.raises(ArtifactError, match="insufficient_patches"):
        fit_codebook([flat], 2, 4, rng=rng)  # 16 patches but only one distinct


def test_codewords_distinct_after_fit():
    rng = make_rng(3)
    pal = generate_random(6, rng)
    maps = [LabelMap(rng.integers(0, 6, size=(16, 16)), 6) for _ in range(10)]
    cb, _ = fit_codebook([encode(m, pal) for m in maps], 4, 32, rng=rng)
    uniq = np.unique(np.round(cb.codewords, 12), axis=0)
    assert uniq.shape[0] == cb.vocab


def test_tokenize_assembled_from_codewords():
    rng = make_rng(4)
    cb = Codebook(2, rng.uniform(0, 1, size=(6, 12)))
    grid = LatentGrid(rng.integers(0, 6, size=(3, 5)), 6)
    m = detokenize(grid, cb)
    assert np.array_equal(tokenize(m, cb).tokens, grid.tokens)


def test_tokenize_detokenize_idempotent():
    rng = make_rng(5)
    cb = Codebook(4, rng.uniform(0, 1, size=(9, 48)))
    grid = LatentGrid(rng.integers(0, 9, size=(4, 4)), 9)
    assert np.array_equal(tokenize(detokenize(grid, cb), cb).tokens, grid.tokens)


def test_tokenize_stable_under_small_perturbation():
    rng = make_rng(6)
    cb = Codebook(2, rng.uniform(0, 1, size=(8, 12)))
    gaps = []
    for i in range(8):
        d = ((cb.codewords[i] - np.delete(cb.codewords, i, axis=0)) ** 2).sum(axis=1)
        gaps.append(np.sqrt(d.min()))
    half_gap = min(gaps) / 2.0
    grid = LatentGrid(rng.integers(0, 8, size=(3, 3)), 8)
    m = detokenize(grid, cb)
    for _ in range(20):
        noise = rng.normal(size=m.values.shape)
        # perturb each patch by strictly less than half the codeword gap
        flat = noise.reshape(9, -1)
        flat /= np.linalg.norm(flat, axis=1, keepdims=True)
        flat *= 0.9 * half_gap * 255.0 * rng.uniform(0, 1)
        noisy = Maskige(m.values + noise.reshape(m.values.shape))
        assert np.array_equal(tokenize(noisy, cb).tokens, grid.tokens)


def test_tokenize_tie_breaks_to_lowest_id():
    cb = Codebook(1, np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]))
    midpoint = Maskige(np.full((1, 1, 3), 127.5))
    assert tokenize(midpoint, cb).tokens[0, 0] == 0


def test_detokenize_tiles_and_range_check():
    cb = Codebook(2, np.array([[0.1] * 12, [0.9] * 12]))
    grid = LatentGrid(np.zeros((2, 2), dtype=int), 2)
    m = detokenize(grid, cb)
    assert np.allclose(m.values, 0.1 * 255.0)
    with pytest.raises(ArtifactError, match="token_out_of_range"):
        detokenize(LatentGrid(np.zeros((2, 2), dtype=int), 3), cb)


def test_roundtrip_error_equals_patch_quantization_error():
    rng = make_rng(7)
    cb = Codebook(2, rng.uniform(0, 1, size=(5, 12)))
    m = Maskige(rng.uniform(0, 255, size=(6, 6, 3)))
    q = straight_through_roundtrip(m, cb)
    rows = patches_from_values(m.values / 255.0, 2)
    d2 = ((rows[:, None, :] - cb.codewords[None, :, :]) ** 2).sum(axis=2)
    expected = d2.min(axis=1).sum() * 255.0**2
    assert ((q.values - m.values) ** 2).sum() == pytest.approx(expected, rel=1e-9)


def test_straight_through_contract_and_projection():
    rng = make_rng(8)
    cb = Codebook(2, rng.uniform(0, 1, size=(7, 12)))
    m = Maskige(rng.uniform(0, 255, size=(8, 8, 3)))
    q = straight_through_roundtrip(m, cb)
    upstream = rng.normal(size=q.values.shape)
    assert np.array_equal(straight_through_grad(upstream), upstream)
    q2 = straight_through_roundtrip(q, cb)
    assert np.array_equal(q2.values, q.values)


def test_straight_through_exact_on_codewords():
    rng = make_rng(9)
    cb = Codebook(2, rng.uniform(0, 1, size=(4, 12)))
    grid = LatentGrid(rng.integers(0, 4, size=(2, 2)), 4)
    m = detokenize(grid, cb)
    q = straight_through_roundtrip(m, cb)
    assert np.array_equal(q.values, m.values)


def test_gumbel_tokenize_needs_rng_and_changes_assignments():
    rng = make_rng(10)
    cb = Codebook(2, rng.uniform(0, 1, size=(16, 12)))
    m = Maskige(rng.uniform(0, 255, size=(8, 8, 3)))
    with pytest.raises(ArtifactError, match="missing_rng"):
        tokenize(m, cb, gumbel_scale=1.0)
    hard = tokenize(m, cb).tokens
    noisy = tokenize(m, cb, gumbel_scale=50.0, rng=make_rng(0)).tokens
    assert not np.array_equal(hard, noisy)
    again = tokenize(m, cb, gumbel_scale=50.0, rng=make_rng(0)).tokens
    assert np.array_equal(noisy, again)


def test_soft_roundtrip_gradient_matches_finite_differences():
    rng = make_rng(11)
    for trial in range(20):
        cb = Codebook(2, rng.uniform(0, 1, size=(5, 12)))
        base = rng.uniform(50, 200, size=(8, 8, 3))
        weights = rng.normal(size=(8, 8, 3))

        def loss(values):
            out, _ = soft_roundtrip(Maskige(values), cb, temperature=0.3)
            return float((weights * out.values).sum())

        _, vjp = soft_roundtrip(Maskige(base), cb, temperature=0.3)
        analytic = vjp(weights)
        step = 1e-5
        numeric = np.zeros_like(base)
        it = np.nditer(base, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            pert = base.copy()
            pert[idx] += step
            hi = loss(pert)
            pert[idx] -= 2 * step
            lo = loss(pert)
            numeric[idx] = (hi - lo) / (2 * step)
        denom = max(np.abs(numeric).max(), 1e-8)
        assert np.abs(analytic - numeric).max() / denom <= 1e-4


def test_reconstruction_bound_on_constant_label_images():
    # when each palette color's nearest codeword sits closer than half the
    # palette's min pairwise distance, flat maps survive the full roundtrip
    from maskige.codec import decode_nearest
    from maskige.core import LabelMap
    from maskige.palette import generate_max_distance, min_pairwise_distance
    from maskige.stage1 import tuned_palette_spec
    from maskige.core import derive_seed

    k = 6
    pal = generate_max_distance(tuned_palette_spec(k, seed=1), make_rng(derive_seed(1, "palette")))
    maps = [LabelMap(np.full((8, 8), c), k) for c in range(k)]
    cb, _ = fit_codebook([encode(m, pal) for m in maps], 4, k, rng=make_rng(0))
    half_min = min_pairwise_distance(pal) / 255.0 / 2.0
    for c in range(k):
        flat_patch = np.tile(pal.colors[c] / 255.0, 16)
        gap = np.sqrt(((cb.codewords - flat_patch) ** 2).sum(axis=1).min())
        assert gap < half_min  # premise of the bound
    for m in maps:
        q = straight_through_roundtrip(encode(m, pal), cb)
        assert np.array_equal(decode_nearest(q, pal).labels, m.labels)
