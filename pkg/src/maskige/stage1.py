"""Latent posterior learning: palette, inverse, and codebook per variant.

Variant naming is two letters: the first says whether the class-to-color
transform is Free (hand built) or Trained, the second the same for the
color-to-class inverse.  FF-R is FF with a random palette instead of the
spread-out one.

  FF    spread-out palette + closed-form inverse (no gradient steps)
  FF-R  random palette + closed-form inverse (no gradient steps)
  FT    spread-out palette + window classifier trained on noisy images
  TF    palette trained by cascaded bound descent, inverse recomputed in
        closed form after every step
  TT    palette and window classifier trained jointly through the
        straight-through quantizer

Every variant fits the token codebook on the color-encoded training split
and reports reconstruction quality on the held-out split only.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import codec, fileio, metrics, palette as palette_mod, sgd, vq
from .core import (
    ArtifactError,
    InversePalette,
    LabelMap,
    Maskige,
    Palette,
    derive_seed,
    make_rng,
    one_hot,
)

VARIANTS = ("FF", "FF-R", "FT", "TF", "TT")


@dataclass(frozen=True)
class VqConfig:
    patch: int = 4
    vocab: int = 512
    max_iters: int = 100
    tol: float = 1e-6
    sample_limit: int = 16384


@dataclass(frozen=True)
class FtConfig:
    window: int = 5
    epochs: int = 8
    lr: float = 2.0
    noise_sigma: float = 25.0
    sample_count: int = 24
    batch: int = 256
    max_pixels: int = 120_000


@dataclass(frozen=True)
class TfConfig:
    steps: int = 100
    lr: float = 1e-3
    gumbel_scale: float = 0.0
    bound_ratio: float = 1.0
    batch: int = 8


@dataclass(frozen=True)
class Stage1Config:
    variant: str
    palette_spec: palette_mod.PaletteSpec
    vq: VqConfig = VqConfig()
    ft: FtConfig | None = None
    tf: TfConfig | None = None
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ArtifactError("variant_config_mismatch", f"unknown variant {self.variant!r}")
        if self.variant in ("FT", "TT") and self.ft is None:
            raise ArtifactError("variant_config_mismatch", f"{self.variant} needs the ft sub-config")
        if self.variant in ("TF", "TT") and self.tf is None:
            raise ArtifactError("variant_config_mismatch", f"{self.variant} needs the tf sub-config")


def linear_decode_failures(pal: Palette) -> list[int] | None:
    """Classes whose own color loses the closed-form score argmax.

    The linear inverse is origin-anchored, so colors near the color cloud's
    low-leverage region decode to a different class even from a perfect
    reconstruction.  Returns None when the normal equations are singular.
    """
    try:
        gamma = codec.least_squares_inverse(pal).weights
    except ArtifactError:
        return None
    scores = pal.colors @ gamma
    winners = np.argmax(scores, axis=1)
    return [int(i) for i in np.nonzero(winners != np.arange(pal.num_classes))[0]]


def tuned_palette_spec(
    num_classes: int, seed: int = 0, jitter_bound: float = 15.0, rounds: int = 6
) -> palette_mod.PaletteSpec:
    """Spread-out palette spec whose palette survives its own linear decode.

    Builds the palette with the same derived generator ``run_stage1`` will
    use, finds the classes that fail the score-argmax diagnostic, and marks
    them for refinement; repeated until the diagnostic passes or stops
    improving.  The refinement list is baked into the returned spec, so
    regeneration is exact.
    """
    starts = (0, 1, 2)
    spec = palette_mod.PaletteSpec(
        num_classes,
        palette_mod.auto_intervals(num_classes, starts),
        starts=starts,
        jitter_bound=jitter_bound,
        seed=derive_seed(seed, "palette"),
    )
    if num_classes < 3:
        return spec
    refine: list[int] = []
    best = (num_classes + 1, spec)
    for _ in range(rounds):
        pal = palette_mod.generate_max_distance(spec, make_rng(derive_seed(seed, "palette")))
        fails = linear_decode_failures(pal)
        if fails is None:
            # singular truncation plane; moving the first class off it restores rank
            fails = [0]
        else:
            if len(fails) < best[0]:
                best = (len(fails), spec)
            if not fails:
                return spec
        refine = refine + fails
        spec = replace(spec, refine_classes=tuple(refine))
    return best[1]


def default_stage1_config(variant: str, num_classes: int, seed: int = 0) -> Stage1Config:
    spec = tuned_palette_spec(num_classes, seed=seed)
    ft = FtConfig() if variant in ("FT", "TT") else None
    tf = TfConfig() if variant in ("TF", "TT") else None
    return Stage1Config(variant=variant, palette_spec=spec, ft=ft, tf=tf, seed=seed)


@dataclass
class Stage1Artifacts:
    variant: str
    palette: Palette
    codebook: vq.Codebook
    inverse: InversePalette | None = None
    window_model: codec.WindowInverseModel | None = None
    report: dict = field(default_factory=dict)

    def decode(self, maskige: Maskige) -> LabelMap:
        if self.window_model is not None:
            return codec.apply_window_inverse(self.window_model, maskige)
        if self.inverse is None:
            raise ArtifactError("variant_config_mismatch", "artifacts carry no inverse")
        return codec.decode_linear(maskige, self.inverse)


def reconstruct(map: LabelMap, artifacts: Stage1Artifacts) -> LabelMap:
    """Round the map through colors and tokens, then decode it back."""
    x = codec.encode(map, artifacts.palette)
    grid = vq.tokenize(x, artifacts.codebook)
    return artifacts.decode(vq.detokenize(grid, artifacts.codebook))


def _check_split(maps: list[LabelMap], num_classes: int, name: str) -> None:
    if not maps:
        raise ArtifactError("empty_split", f"{name} split is empty")
    for m in maps:
        if m.num_classes != num_classes:
            raise ArtifactError("class_count_mismatch", f"{name} split disagrees on K")
        if not m.fully_labeled():
            raise ArtifactError("unlabeled_pixel_present", f"compose {name} labels first")


def noisy_training_samples(
    maps: list[LabelMap],
    pal: Palette,
    rng: np.random.Generator,
    noise_sigma: float = 25.0,
    codebook: vq.Codebook | None = None,
) -> list[tuple[Maskige, LabelMap]]:
    """Noisy (image, labels) pairs for inverse training.

    Each map contributes a Gaussian-noised encoding and, when a codebook is
    given, the same noisy image pushed through a quantize/decode roundtrip,
    so the classifier sees both noise styles it must undo.
    """
    samples = []
    for m in maps:
        x = codec.encode(m, pal)
        noisy = Maskige(x.values + rng.normal(0.0, noise_sigma, size=x.values.shape))
        samples.append((noisy, m))
        if codebook is not None:
            samples.append((vq.straight_through_roundtrip(noisy, codebook), m))
    return samples


def _ls_inverse_array(beta: np.ndarray) -> np.ndarray:
    """Closed-form inverse of a raw color matrix (may sit outside [0,255])."""
    gram = beta.T @ beta
    rhs = beta.T.copy()
    gamma = codec._solve3(gram, rhs)
    for _ in range(2):
        gamma = gamma + codec._solve3(gram, rhs - gram @ gamma)
    return gamma


def _bound_loss_and_grad(
    beta: np.ndarray,
    gamma: np.ndarray,
    batch: list[LabelMap],
    cb: vq.Codebook,
    gumbel_scale: float,
    rng: np.random.Generator | None,
    bound_ratio: float,
):
    """Squared upper bound on the decode residual, and its gradient in beta.

    The bound is (ratio * A + B)^2 with A the quantizer reconstruction
    error scaled by the inverse's norm and B the linear roundtrip residual.
    The quantized image is held constant under differentiation, so the
    A-term gradient pulls the encoding toward the nearest codewords.
    """
    gamma_norm = float(np.linalg.norm(gamma))
    sq_a = 0.0
    sq_b = 0.0
    diffs = []
    scores_minus = []
    labels_flat = []
    for m in batch:
        x = Maskige(beta[m.labels])
        q = vq.straight_through_roundtrip(x, cb, gumbel_scale=gumbel_scale, rng=rng)
        d = x.values - q.values
        sq_a += float((d**2).sum())
        s = x.values @ gamma - one_hot(m)
        sq_b += float((s**2).sum())
        diffs.append(d)
        scores_minus.append(s)
        labels_flat.append(m.labels.reshape(-1))
    a = np.sqrt(sq_a) * gamma_norm
    b = np.sqrt(sq_b)
    loss = (bound_ratio * a + b) ** 2
    grad = np.zeros_like(beta)
    for d, s, lab in zip(diffs, scores_minus, labels_flat):
        dx = np.zeros(d.reshape(-1, 3).shape)
        if a > 0:
            dx += bound_ratio * gamma_norm**2 * d.reshape(-1, 3) / a
        if b > 0:
            dx += (s.reshape(-1, s.shape[-1]) @ gamma.T) / b
        np.add.at(grad, lab, dx)
    grad *= 2.0 * (bound_ratio * a + b)
    return loss, grad


def cascaded_step(
    beta: np.ndarray,
    batch: list[LabelMap],
    cb: vq.Codebook,
    lr: float,
    gumbel_scale: float = 0.0,
    rng: np.random.Generator | None = None,
    bound_ratio: float = 1.0,
) -> tuple[np.ndarray, np.ndarray, float]:
    """One minibatch descent step on the decode-residual bound.

    Returns the updated color matrix, its freshly recomputed closed-form
    inverse, and the bound value of the updated pair on the same batch.
    If the update lands on a singular normal-equation matrix the step is
    retried with a halved learning rate, up to 10 times.
    """
    try:
        gamma = _ls_inverse_array(beta)
    except ArtifactError as err:
        raise ArtifactError("persistent_singularity", "color matrix singular before the step") from err
    _, grad = _bound_loss_and_grad(beta, gamma, batch, cb, gumbel_scale, rng, bound_ratio)
    step_lr = lr
    for _ in range(10):
        beta_next = beta - step_lr * grad
        try:
            gamma_next = _ls_inverse_array(beta_next)
        except ArtifactError:
            step_lr *= 0.5
            continue
        loss_next, _ = _bound_loss_and_grad(
            beta_next, gamma_next, batch, cb, gumbel_scale, rng, bound_ratio
        )
        return beta_next, gamma_next, float(loss_next)
    raise ArtifactError("persistent_singularity", "no nonsingular step after 10 halvings")


def _pack_palette(beta: np.ndarray) -> Palette:
    """Clip a trained color matrix into a valid palette, nudging duplicates apart."""
    colors = np.clip(beta, 0.0, 255.0)
    for attempt in range(1, 64):
        dup = palette_mod._duplicate_rows(colors)
        if not dup.size:
            break
        shift = 0.001 * attempt * (1 + np.arange(dup.size))[:, None]
        colors[dup] = np.clip(colors[dup] + shift, 0.0, 255.0)
        colors[dup] = np.where(colors[dup] >= 255.0, colors[dup] - 2 * shift, colors[dup])
    return Palette(colors)


def _tt_joint_step(
    beta: np.ndarray,
    weights: np.ndarray,
    window: int,
    batch: list[LabelMap],
    cb: vq.Codebook,
    lr: float,
    gumbel_scale: float,
    rng: np.random.Generator | None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Joint descent on per-pixel cross-entropy through the quantizer."""
    pad = window // 2
    grad_beta = np.zeros_like(beta)
    grad_w = np.zeros_like(weights)
    total_loss = 0.0
    total_pix = 0
    for m in batch:
        h, w_img = m.height, m.width
        x = Maskige(beta[m.labels])
        q = vq.straight_through_roundtrip(x, cb, gumbel_scale=gumbel_scale, rng=rng)
        feats = codec.window_features(q.values / 255.0, window)
        probs = sgd.softmax(feats @ weights)
        lab = m.labels.reshape(-1)
        n = lab.size
        total_loss += float(-np.log(np.maximum(probs[np.arange(n), lab], 1e-300)).sum())
        total_pix += n
        dscores = probs
        dscores[np.arange(n), lab] -= 1.0
        grad_w += feats.T @ dscores
        dfeat = (dscores @ weights.T)[:, :-1] / 255.0
        dwin = dfeat.reshape(h, w_img, window, window, 3)
        gpad = np.zeros((h + 2 * pad, w_img + 2 * pad, 3))
        for dy in range(window):
            for dx in range(window):
                gpad[dy : dy + h, dx : dx + w_img] += dwin[:, :, dy, dx]
        # clamp-to-edge padding folds its gradient back onto the border pixels
        if pad:
            gpad[pad] += gpad[:pad].sum(axis=0)
            gpad[pad + h - 1] += gpad[pad + h :].sum(axis=0)
            core = gpad[pad : pad + h]
            core[:, pad] += core[:, :pad].sum(axis=1)
            core[:, pad + w_img - 1] += core[:, pad + w_img :].sum(axis=1)
            dq = core[:, pad : pad + w_img]
        else:
            dq = gpad
        # straight-through: gradient w.r.t. the encoding equals gradient w.r.t. q
        np.add.at(grad_beta, lab, dq.reshape(-1, 3))
    grad_w /= total_pix
    grad_beta /= total_pix
    return beta - lr * grad_beta, weights - lr * grad_w, total_loss / total_pix


def _closed_form_inverse(pal: Palette) -> InversePalette:
    # a single-class palette cannot support the rank-3 solve; a zero inverse
    # scores the only class everywhere, which is the correct degenerate decode
    if pal.num_classes == 1:
        return InversePalette(np.zeros((3, 1)))
    return codec.least_squares_inverse(pal)


def _fit_codebook_for(maps: list[LabelMap], pal_colors: np.ndarray, cfg: VqConfig, rng) -> tuple[vq.Codebook, vq.QuantizeReport]:
    maskiges = [Maskige(pal_colors[m.labels]) for m in maps]
    return vq.fit_codebook(
        maskiges,
        cfg.patch,
        cfg.vocab,
        max_iters=cfg.max_iters,
        tol=cfg.tol,
        rng=rng,
        sample_limit=cfg.sample_limit,
    )


def run_stage1(train: list[LabelMap], heldout: list[LabelMap], cfg: Stage1Config) -> Stage1Artifacts:
    k = cfg.palette_spec.num_classes
    _check_split(train, k, "train")
    _check_split(heldout, k, "heldout")
    rng_pal = make_rng(derive_seed(cfg.seed, "palette"))
    rng_vq = make_rng(derive_seed(cfg.seed, "vq"))
    rng_ft = make_rng(derive_seed(cfg.seed, "ft"))
    rng_tf = make_rng(derive_seed(cfg.seed, "tf"))
    gradient_steps = 0
    inverse = None
    window_model = None
    loss_curve: list[float] = []

    if cfg.variant == "FF-R":
        pal = palette_mod.generate_random(k, rng_pal)
    else:
        # for TF/TT this hand-built palette only anchors the frozen quantizer
        pal = palette_mod.generate_max_distance(cfg.palette_spec, rng_pal)

    if cfg.variant in ("FF", "FF-R"):
        codebook, qreport = _fit_codebook_for(train, pal.colors, cfg.vq, rng_vq)
        inverse = _closed_form_inverse(pal)
    elif cfg.variant == "FT":
        codebook, qreport = _fit_codebook_for(train, pal.colors, cfg.vq, rng_vq)
        pick = rng_ft.choice(len(train), size=min(cfg.ft.sample_count, len(train)), replace=False)
        samples = noisy_training_samples(
            [train[i] for i in pick], pal, rng_ft, cfg.ft.noise_sigma, codebook
        )
        window_model, fit = codec.train_window_inverse(
            samples, cfg.ft.window, cfg.ft.epochs, cfg.ft.lr, rng_ft,
            batch=cfg.ft.batch, max_pixels=cfg.ft.max_pixels,
        )
        gradient_steps += fit.gradient_steps
        loss_curve = [fit.initial_loss] + fit.epoch_losses
    else:  # TF, TT: train the color matrix from scratch through a frozen quantizer
        codebook_prov, _ = _fit_codebook_for(train, pal.colors, cfg.vq, rng_vq)
        beta = palette_mod.generate_random(k, rng_tf).colors
        weights = np.zeros((3 * cfg.ft.window**2 + 1, k)) if cfg.variant == "TT" else None
        for _ in range(cfg.tf.steps if k > 1 else 0):
            idx = rng_tf.choice(len(train), size=min(cfg.tf.batch, len(train)), replace=False)
            batch = [train[i] for i in idx]
            if cfg.variant == "TF":
                beta, _, loss = cascaded_step(
                    beta, batch, codebook_prov,
                    cfg.tf.lr, cfg.tf.gumbel_scale, rng_tf, cfg.tf.bound_ratio,
                )
            else:
                beta, weights, loss = _tt_joint_step(
                    beta, weights, cfg.ft.window, batch,
                    codebook_prov, cfg.tf.lr, cfg.tf.gumbel_scale, rng_tf,
                )
            loss_curve.append(loss)
            gradient_steps += 1
        pal = _pack_palette(beta)
        codebook, qreport = _fit_codebook_for(train, pal.colors, cfg.vq, rng_vq)
        if cfg.variant == "TF":
            inverse = _closed_form_inverse(pal)
        else:
            window_model = codec.WindowInverseModel(cfg.ft.window, weights)

    artifacts = Stage1Artifacts(cfg.variant, pal, codebook, inverse, window_model)
    conf = np.zeros((k, k), dtype=np.int64)
    for m in heldout:
        conf += metrics.confusion(reconstruct(m, artifacts), m)
    artifacts.report = {
        "variant": cfg.variant,
        "seed": cfg.seed,
        "miou": metrics.miou(conf),
        "macc": metrics.macc(conf),
        "gradient_steps": gradient_steps,
        "kmeans_iterations": qreport.iterations,
        "kmeans_objective_final": qreport.objective[-1] if qreport.objective else None,
        "loss_curve": loss_curve,
    }
    return artifacts


def save_artifacts(artifacts: Stage1Artifacts, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    palette_mod.save_palette_csv(artifacts.palette, out / "palette.csv")
    fileio.save_codebook(artifacts.codebook, out / "codebook.bin")
    if artifacts.inverse is not None:
        fileio.save_inverse(artifacts.inverse, out / "inverse.bin")
    if artifacts.window_model is not None:
        fileio.save_window_model(artifacts.window_model, out / "winv.bin")
    fileio.write_json(artifacts.report, out / "report.json")


def load_artifacts(artifact_dir) -> Stage1Artifacts:
    root = Path(artifact_dir)
    with open(root / "report.json") as fh:
        report = json.load(fh)
    pal = palette_mod.load_palette_csv(root / "palette.csv")
    codebook = fileio.load_codebook(root / "codebook.bin")
    inverse = fileio.load_inverse(root / "inverse.bin") if (root / "inverse.bin").exists() else None
    window_model = (
        fileio.load_window_model(root / "winv.bin") if (root / "winv.bin").exists() else None
    )
    return Stage1Artifacts(report["variant"], pal, codebook, inverse, window_model, report)
