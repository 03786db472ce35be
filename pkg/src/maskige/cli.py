"""Command-line front end for reproducible experiments.

Configuration comes from an optional plain-text file of ``key = value``
lines (``#`` starts a comment) whose keys match the experiment config
fields; command-line flags override file values.  All randomness flows
from one root seed through named per-component derivations.

Exit codes: 0 ok, 1 runtime failure, 2 configuration failure.  Failures
print a single machine-parsable ``error_code: message`` line to stderr.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import fileio, palette as palette_mod, pipeline, stage1 as stage1_mod, stage2 as stage2_mod, synthdata
from .core import ArtifactError, derive_seed, make_rng
from .pipeline import ExperimentConfig


class ConfigError(Exception):
    def __init__(self, message: str):
        super().__init__(f"config_parse: {message}")


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(name: str, raw: str):
    if name not in _FIELDS:
        raise ConfigError(f"unknown key {name!r}")
    ftype = _FIELDS[name].type
    raw = raw.strip()
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        if ftype == "bool":
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
        if ftype.startswith("tuple[str"):
            return tuple(s.strip() for s in raw.split(",") if s.strip())
        if ftype.startswith("tuple[int"):
            return tuple(int(s) for s in raw.split(",") if s.strip())
        return raw
    except ValueError as err:
        raise ConfigError(f"bad value for {name}: {raw!r}") from err


def load_config(path: str | None, overrides: list[str]) -> ExperimentConfig:
    values: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"no such config file: {path}")
        for lineno, line in enumerate(p.read_text().splitlines(), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, raw = stripped.split("=", 1)
            values[key.strip()] = _coerce(key.strip(), raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        values[key.strip()] = _coerce(key.strip(), raw)
    return ExperimentConfig(**values)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="plain-text key = value config file")
    parser.add_argument("--seed", type=int, help="root seed override")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any config key (repeatable)",
    )


def _config_from_args(args) -> ExperimentConfig:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return load_config(args.config, overrides)


def cmd_gen_data(args) -> int:
    cfg = _config_from_args(args)
    spec = pipeline.scene_spec(cfg)
    rng = make_rng(derive_seed(cfg.seed, "samples"))
    samples = synthdata.generate(spec, cfg.train_scenes + cfg.test_scenes, rng)
    meta = {
        "width": cfg.width,
        "height": cfg.height,
        "num_classes": cfg.num_classes,
        "unlabeled_fraction": cfg.unlabeled_fraction,
        "noise_sigma": cfg.noise_sigma,
        "seed": cfg.seed,
    }
    out = Path(args.out)
    fileio.save_dataset(samples[: cfg.train_scenes], out / "train", {**meta, "split": "train"})
    fileio.save_dataset(samples[cfg.train_scenes :], out / "test", {**meta, "split": "test"})
    print(f"wrote {cfg.train_scenes} train and {cfg.test_scenes} test scenes to {out}")
    return 0


def cmd_palette(args) -> int:
    intervals = (
        (args.interval, args.interval, args.interval)
        if args.interval is not None
        else palette_mod.auto_intervals(args.classes, tuple(args.starts))
    )
    spec = palette_mod.PaletteSpec(
        num_classes=args.classes,
        intervals=intervals,
        starts=tuple(args.starts),
        jitter_bound=args.jitter,
        seed=args.seed,
        refine_classes=tuple(args.refine or ()),
        gray_exclusion_radius=args.rho,
    )
    pal = palette_mod.generate_max_distance(spec, make_rng(derive_seed(args.seed, "palette")))
    palette_mod.save_palette_csv(pal, args.out)
    mind = palette_mod.min_pairwise_distance(pal) if args.classes > 1 else float("nan")
    print(f"wrote {args.classes} colors to {args.out}; min pairwise distance {mind:.3f}")
    return 0


def _load_split(data_dir, split: str):
    manifest, samples = fileio.load_dataset(Path(data_dir) / split)
    return manifest, samples


def cmd_stage1(args) -> int:
    cfg = _config_from_args(args)
    _, train = _load_split(args.data, "train")
    _, test = _load_split(args.data, "test")
    train_labels = [lab for _, lab in train]
    test_labels = [lab for _, lab in test]
    aux_head = None
    if any(not m.fully_labeled() for m in train_labels + test_labels):
        aux_rng = make_rng(derive_seed(cfg.seed, "aux"))
        aux_head, _ = stage2_mod.train_auxiliary(
            [img for img, _ in train], train_labels,
            cfg.aux_window, cfg.aux_epochs, cfg.aux_lr, aux_rng,
        )
        train_labels = [
            stage2_mod.compose_labels(m, aux_head.predict(img)).labels
            for (img, _), m in zip(train, train_labels)
        ]
        test_labels = [
            stage2_mod.compose_labels(m, aux_head.predict(img)).labels
            for (img, _), m in zip(test, test_labels)
        ]
    artifacts = stage1_mod.run_stage1(train_labels, test_labels, pipeline.stage1_config(cfg))
    stage1_mod.save_artifacts(artifacts, args.out)
    if aux_head is not None:
        pipeline.save_auxiliary(aux_head, Path(args.out) / "aux.bin")
    print(f"stage1 {cfg.variant}: heldout miou {artifacts.report['miou']:.4f} -> {args.out}")
    return 0


def _composed_split(samples, aux_head):
    out = []
    for img, lab in samples:
        if lab.fully_labeled():
            out.append(stage2_mod.ComposedLabels(lab, np.zeros(lab.labels.shape, dtype=bool)))
        elif aux_head is not None:
            out.append(stage2_mod.compose_labels(lab, aux_head.predict(img)))
        else:
            raise ArtifactError("unlabeled_pixel_present", "dataset has unlabeled pixels but no aux head")
    return out


def cmd_stage2(args) -> int:
    cfg = _config_from_args(args)
    _, train = _load_split(args.data, "train")
    artifacts = stage1_mod.load_artifacts(args.stage1)
    aux_path = Path(args.stage1) / "aux.bin"
    aux_head = pipeline.load_auxiliary(aux_path) if aux_path.exists() else None
    composed = _composed_split(train, aux_head)
    rng = make_rng(derive_seed(cfg.seed, "predictor"))
    hidden = "auto" if cfg.predictor_hidden < 0 else cfg.predictor_hidden
    predictor, fit = stage2_mod.train_token_predictor(
        [img for img, _ in train], composed, artifacts,
        epochs=cfg.predictor_epochs, lr=cfg.predictor_lr, rng=rng, hidden=hidden,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.save_predictor(predictor, out / "predictor.bin")
    fileio.write_json(
        {
            "hidden": predictor.hidden,
            "initial_loss": fit.initial_loss,
            "final_loss": fit.final_loss,
            "gradient_steps": fit.gradient_steps,
        },
        out / "report.json",
    )
    print(f"stage2: final training loss {fit.final_loss:.4f} -> {args.out}")
    return 0


def cmd_infer(args) -> int:
    _, test = _load_split(args.data, "test")
    artifacts = stage1_mod.load_artifacts(args.stage1)
    predictor = pipeline.load_predictor(Path(args.stage2) / "predictor.bin")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, (image, _) in enumerate(test):
        labels, maskige = pipeline.infer(image, predictor, artifacts)
        fileio.save_labels_png(labels, out / f"{i:05d}_labels.png")
        fileio.save_maskige_png(maskige, out / f"{i:05d}_maskige.png")
    print(f"wrote predictions for {len(test)} images to {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    report, _ = pipeline.evaluate_run(cfg, out_dir=args.out)
    print(f"miou {report['miou']:.4f}  macc {report['macc']:.4f}  token_accuracy {report['token_accuracy']:.4f}")
    return 0


def cmd_repro(args) -> int:
    cfg = _config_from_args(args)
    report, timings = pipeline.evaluate_run(cfg, out_dir=args.out)
    total = sum(timings.values())
    print(
        f"repro done in {total:.1f}s: miou {report['miou']:.4f}, "
        f"token_accuracy {report['token_accuracy']:.4f} -> {args.out}/report.json"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maskige", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset directory")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("palette", help="emit a palette CSV plus diagnostics")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--interval", type=int, help="shared channel interval (default: auto)")
    p.add_argument("--starts", type=int, nargs=3, default=[0, 0, 0])
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--refine", type=int, nargs="*")
    p.add_argument("--rho", type=float, default=60.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_palette)

    p = sub.add_parser("stage1", help="fit palette, inverse, and codebook")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stage1)

    p = sub.add_parser("stage2", help="train the image-to-token predictor")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--stage1", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stage2)

    p = sub.add_parser("infer", help="write predicted label and maskige PNGs")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--stage1", required=True)
    p.add_argument("--stage2", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="full pipeline run with a report")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("repro", help="end-to-end run with the default config")
    _add_common(p)
    p.add_argument("--out", default="acceptance")
    p.set_defaults(func=cmd_repro)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as err:
        print(str(err), file=sys.stderr)
        return 2
    except ArtifactError as err:
        print(str(err), file=sys.stderr)
        return 1
    except OSError as err:
        print(f"io_error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
