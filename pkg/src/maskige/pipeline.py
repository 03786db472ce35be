"""Generative inference and end-to-end experiment orchestration.

Inference is single-shot: every cell's token is the argmax of the
predictor's distribution, the token grid is decoded to a color image, and
the stage-1 inverse turns that image into labels.  ``evaluate_run`` wires
data generation, optional unlabeled-pixel handling, both training stages,
inference, and metrics into one deterministic report.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import fileio, metrics, stage1 as stage1_mod, stage2 as stage2_mod, synthdata, vq
from .core import ArtifactError, LabelMap, Maskige, derive_seed, make_rng
from .stage1 import Stage1Artifacts, Stage1Config, FtConfig, TfConfig, VqConfig
from .stage2 import ComposedLabels, TokenPredictor


def infer(
    image: np.ndarray,
    predictor: TokenPredictor,
    artifacts: Stage1Artifacts,
) -> tuple[LabelMap, Maskige]:
    """Predict tokens, decode them to a color image, then to labels."""
    if image.shape[0] % predictor.patch or image.shape[1] % predictor.patch:
        raise ArtifactError("dimension_not_divisible", "image dims must be divisible by patch")
    grid = predictor.predict_tokens(image)
    maskige = vq.detokenize(grid, artifacts.codebook)
    return artifacts.decode(maskige), maskige


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a full run needs; mirrors the plain-text config schema."""

    seed: int = 0
    width: int = 64
    height: int = 64
    num_classes: int = 8
    train_scenes: int = 500
    test_scenes: int = 100
    shapes_min: int = 3
    shapes_max: int = 6
    noise_sigma: float = 10.0
    unlabeled_fraction: float = 0.2
    variant: str = "FT"
    patch: int = 4
    vocab: int = 512
    kmeans_iters: int = 100
    kmeans_tol: float = 1e-6
    kmeans_sample: int = 16384
    palette_jitter: float = 15.0
    ft_window: int = 5
    ft_epochs: int = 8
    ft_lr: float = 2.0
    ft_noise: float = 25.0
    ft_samples: int = 24
    tf_steps: int = 100
    tf_lr: float = 1e-3
    tf_batch: int = 8
    gumbel_scale: float = 0.0
    aux_enabled: bool = True
    aux_window: int = 5
    aux_epochs: int = 6
    aux_lr: float = 2.0
    predictor_epochs: int = 25
    predictor_lr: float = 0.5
    predictor_hidden: int = 64  # 0 = linear, -1 = automatic fallback
    compare_variants: tuple[str, ...] = ()
    compare_seeds: tuple[int, ...] = ()


def scene_spec(cfg: ExperimentConfig) -> synthdata.SceneSpec:
    return synthdata.SceneSpec(
        width=cfg.width,
        height=cfg.height,
        num_classes=cfg.num_classes,
        shapes_min=cfg.shapes_min,
        shapes_max=cfg.shapes_max,
        noise_sigma=cfg.noise_sigma,
        unlabeled_fraction=cfg.unlabeled_fraction,
        seed=derive_seed(cfg.seed, "data"),
    )


def stage1_config(cfg: ExperimentConfig, num_classes: int | None = None) -> Stage1Config:
    k = cfg.num_classes if num_classes is None else num_classes
    s1_seed = derive_seed(cfg.seed, "stage1")
    spec = stage1_mod.tuned_palette_spec(k, seed=s1_seed, jitter_bound=cfg.palette_jitter)
    ft = (
        FtConfig(cfg.ft_window, cfg.ft_epochs, cfg.ft_lr, cfg.ft_noise, cfg.ft_samples)
        if cfg.variant in ("FT", "TT")
        else None
    )
    tf = (
        TfConfig(cfg.tf_steps, cfg.tf_lr, cfg.gumbel_scale, 1.0, cfg.tf_batch)
        if cfg.variant in ("TF", "TT")
        else None
    )
    return Stage1Config(
        variant=cfg.variant,
        palette_spec=spec,
        vq=VqConfig(cfg.patch, cfg.vocab, cfg.kmeans_iters, cfg.kmeans_tol, cfg.kmeans_sample),
        ft=ft,
        tf=tf,
        seed=s1_seed,
    )


def widen_unlabeled_to_class(map: LabelMap) -> LabelMap:
    """Treat unlabeled pixels as an extra junk class (K becomes K+1)."""
    return LabelMap(map.labels, map.num_classes + 1)


def widen_keep_unlabeled(map: LabelMap) -> LabelMap:
    """Re-house a map in a K+1-class id space, keeping unlabeled unlabeled."""
    labels = map.labels.copy()
    labels[labels == map.num_classes] = map.num_classes + 1
    return LabelMap(labels, map.num_classes + 1)


def _identity_composed(maps: list[LabelMap]) -> list[ComposedLabels]:
    return [
        ComposedLabels(m, np.zeros(m.labels.shape, dtype=bool))
        for m in maps
    ]


def evaluate_run(cfg: ExperimentConfig, out_dir=None) -> tuple[dict, dict]:
    """Run data -> stage 1 -> stage 2 -> inference -> metrics.

    Returns (report, timings).  The report is fully deterministic for a
    given config; wall-clock timings are kept apart so reports from equal
    seeds compare byte-identical.
    """
    if cfg.test_scenes < 1 or cfg.train_scenes < 1:
        raise ArtifactError("empty_split", "need at least one train and one test scene")
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    spec = scene_spec(cfg)
    data_rng = make_rng(derive_seed(cfg.seed, "samples"))
    samples = synthdata.generate(spec, cfg.train_scenes + cfg.test_scenes, data_rng)
    train = samples[: cfg.train_scenes]
    test = samples[cfg.train_scenes :]
    timings["data_s"] = time.perf_counter() - t0

    report = run_on_samples(cfg, train, test, out_dir=out_dir, timings=timings)

    if cfg.compare_variants:
        report["stage1_sweep"] = stage1_sweep(
            cfg, [lab for _, lab in train], [lab for _, lab in test]
        )

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        fileio.write_json(report, out / "report.json")
        fileio.write_json({k: round(v, 3) for k, v in timings.items()}, out / "timings.json")
    return report, timings


def run_on_samples(
    cfg: ExperimentConfig,
    train: list[tuple[np.ndarray, LabelMap]],
    test: list[tuple[np.ndarray, LabelMap]],
    out_dir=None,
    timings: dict | None = None,
) -> dict:
    if timings is None:
        timings = {}
    if not train or not test:
        raise ArtifactError("empty_split", "need at least one train and one test scene")
    train_images = [img for img, _ in train]
    train_labels = [lab for _, lab in train]
    test_images = [img for img, _ in test]
    test_labels = [lab for _, lab in test]
    k = cfg.num_classes
    has_unlabeled = any(not m.fully_labeled() for m in train_labels + test_labels)

    aux_head = None
    aux_report = None
    t0 = time.perf_counter()
    if has_unlabeled and cfg.aux_enabled:
        aux_rng = make_rng(derive_seed(cfg.seed, "aux"))
        aux_head, aux_fit = stage2_mod.train_auxiliary(
            train_images, train_labels, cfg.aux_window, cfg.aux_epochs, cfg.aux_lr, aux_rng
        )
        aux_report = {
            "initial_loss": aux_fit.initial_loss,
            "final_loss": aux_fit.final_loss,
            "gradient_steps": aux_fit.gradient_steps,
        }
        composed_train = [
            stage2_mod.compose_labels(m, aux_head.predict(img))
            for img, m in zip(train_images, train_labels)
        ]
        composed_test = [
            stage2_mod.compose_labels(m, aux_head.predict(img))
            for img, m in zip(test_images, test_labels)
        ]
        eval_gt = test_labels
        stage1_k = k
    elif has_unlabeled:
        # junk-class handling: unlabeled pixels become their own class
        composed_train = _identity_composed([widen_unlabeled_to_class(m) for m in train_labels])
        composed_test = _identity_composed([widen_unlabeled_to_class(m) for m in test_labels])
        eval_gt = [widen_keep_unlabeled(m) for m in test_labels]
        stage1_k = k + 1
    else:
        composed_train = _identity_composed(train_labels)
        composed_test = _identity_composed(test_labels)
        eval_gt = test_labels
        stage1_k = k
    timings["aux_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    s1cfg = stage1_config(cfg, num_classes=stage1_k)
    artifacts = stage1_mod.run_stage1(
        [c.labels for c in composed_train], [c.labels for c in composed_test], s1cfg
    )
    timings["stage1_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    pred_rng = make_rng(derive_seed(cfg.seed, "predictor"))
    hidden = "auto" if cfg.predictor_hidden < 0 else cfg.predictor_hidden
    predictor, pred_fit = stage2_mod.train_token_predictor(
        train_images,
        composed_train,
        artifacts,
        epochs=cfg.predictor_epochs,
        lr=cfg.predictor_lr,
        rng=pred_rng,
        hidden=hidden,
    )
    timings["stage2_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    conf = np.zeros((stage1_k, stage1_k), dtype=np.int64)
    token_hits = 0
    token_total = 0
    predictions = []
    for image, gt, comp in zip(test_images, eval_gt, composed_test):
        pred_labels, maskige = infer(image, predictor, artifacts)
        predictions.append((pred_labels, maskige))
        conf += metrics.confusion(pred_labels, gt)
        target = stage2_mod.token_targets(comp, artifacts)
        pred_tokens = predictor.predict_tokens(image)
        token_hits += int((pred_tokens.tokens == target.tokens).sum())
        token_total += target.tokens.size
    timings["infer_s"] = time.perf_counter() - t0

    iou = metrics.per_class_iou(conf)
    report = {
        "seed": cfg.seed,
        "variant": cfg.variant,
        "num_classes": k,
        "train_scenes": len(train),
        "test_scenes": len(test),
        "unlabeled_handling": (
            "auxiliary" if (has_unlabeled and cfg.aux_enabled) else "junk_class" if has_unlabeled else "none"
        ),
        "miou": metrics.miou(conf),
        "macc": metrics.macc(conf),
        "per_class_iou": [None if np.isnan(v) else float(v) for v in iou],
        "token_accuracy": token_hits / token_total,
        "iou_mean_over": "classes present in ground truth",
        "stage1": artifacts.report,
        "predictor": {
            "hidden": predictor.hidden,
            "initial_loss": pred_fit.initial_loss,
            "final_loss": pred_fit.final_loss,
            "gradient_steps": pred_fit.gradient_steps,
        },
        "auxiliary": aux_report,
    }

    if out_dir is not None:
        out = Path(out_dir)
        stage1_mod.save_artifacts(artifacts, out / "stage1")
        stage2_save_dir = out / "stage2"
        stage2_save_dir.mkdir(parents=True, exist_ok=True)
        save_predictor(predictor, stage2_save_dir / "predictor.bin")
        if aux_head is not None:
            save_auxiliary(aux_head, stage2_save_dir / "aux.bin")
        pred_dir = out / "predictions"
        pred_dir.mkdir(parents=True, exist_ok=True)
        for i, (pred_labels, maskige) in enumerate(predictions):
            fileio.save_labels_png(pred_labels, pred_dir / f"{i:05d}_labels.png")
            fileio.save_maskige_png(maskige, pred_dir / f"{i:05d}_maskige.png")
    return report


def stage1_sweep(cfg: ExperimentConfig, train_labels, test_labels) -> dict:
    """Reconstruction quality per variant over the comparison seeds."""
    if any(not m.fully_labeled() for m in train_labels + test_labels):
        raise ArtifactError("unlabeled_pixel_present", "sweeps need fully labeled maps")
    seeds = cfg.compare_seeds or (cfg.seed,)
    sweep: dict = {}
    for variant in cfg.compare_variants:
        mious = []
        steps = []
        for seed in seeds:
            sub = ExperimentConfig(
                **{
                    **{f.name: getattr(cfg, f.name) for f in fields(cfg)},
                    "variant": variant,
                    "seed": seed,
                    "compare_variants": (),
                }
            )
            s1cfg = stage1_config(sub)
            artifacts = stage1_mod.run_stage1(train_labels, test_labels, s1cfg)
            mious.append(artifacts.report["miou"])
            steps.append(artifacts.report["gradient_steps"])
        sweep[variant] = {
            "seeds": list(seeds),
            "mious": mious,
            "median_miou": float(np.median(mious)),
            "gradient_steps": steps,
        }
    return sweep


def save_predictor(predictor: TokenPredictor, path) -> None:
    n_feat = predictor.w1.shape[0]
    arrays = [predictor.w1] if predictor.w2 is None else [predictor.w1, predictor.w2]
    fileio._write_payload(
        path, b"GSSP", [predictor.patch, predictor.vocab, n_feat, predictor.hidden], arrays
    )


def load_predictor(path) -> TokenPredictor:
    with open(path, "rb") as fh:
        p, v, n_feat, hidden = fileio._read_header(fh, b"GSSP", 4)
        if hidden == 0:
            w1 = fileio._read_f64(fh, n_feat * v).reshape(n_feat, v)
            return TokenPredictor(p, v, w1)
        w1 = fileio._read_f64(fh, n_feat * hidden).reshape(n_feat, hidden)
        w2 = fileio._read_f64(fh, (hidden + 1) * v).reshape(hidden + 1, v)
        return TokenPredictor(p, v, w1, w2)


def save_auxiliary(head: stage2_mod.AuxiliaryHead, path) -> None:
    fileio._write_payload(path, b"GSSA", [head.num_classes, head.window], [head.weights])


def load_auxiliary(path) -> stage2_mod.AuxiliaryHead:
    with open(path, "rb") as fh:
        k, w = fileio._read_header(fh, b"GSSA", 2)
        n_feat = 3 * w * w + 1
        return stage2_mod.AuxiliaryHead(w, fileio._read_f64(fh, n_feat * k).reshape(n_feat, k))
