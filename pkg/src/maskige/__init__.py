"""Segmentation masks as color images, tokens, and back.

A label map is colored through a K x 3 palette, quantized into discrete
codebook tokens, and recovered by linear or learned inverses; a token
predictor conditioned on the input image closes the loop into a generative
segmenter.  Everything is deterministic given a seed.
"""
from .core import (
    ArtifactError,
    InversePalette,
    LabelMap,
    LatentGrid,
    Maskige,
    Palette,
    derive_seed,
    make_rng,
    one_hot,
    validate,
)
from .palette import (
    PaletteSpec,
    auto_intervals,
    default_spec,
    generate_max_distance,
    generate_random,
    min_pairwise_distance,
    refine,
)
from .codec import (
    WindowInverseModel,
    apply_window_inverse,
    decode_linear,
    decode_nearest,
    encode,
    least_squares_inverse,
    train_window_inverse,
)
from .vq import (
    Codebook,
    QuantizeReport,
    detokenize,
    fit_codebook,
    soft_roundtrip,
    straight_through_grad,
    straight_through_roundtrip,
    tokenize,
)
from .stage1 import (
    Stage1Artifacts,
    Stage1Config,
    cascaded_step,
    default_stage1_config,
    reconstruct,
    run_stage1,
)
from .stage2 import (
    AuxiliaryHead,
    ComposedLabels,
    TokenPredictor,
    compose_labels,
    discriminative_baseline,
    train_auxiliary,
    train_token_predictor,
)
from .pipeline import ExperimentConfig, evaluate_run, infer
from .metrics import confusion, macc, miou, per_class_iou
from .synthdata import SceneSpec, generate

__all__ = [
    "ArtifactError",
    "AuxiliaryHead",
    "Codebook",
    "ComposedLabels",
    "ExperimentConfig",
    "InversePalette",
    "LabelMap",
    "LatentGrid",
    "Maskige",
    "Palette",
    "PaletteSpec",
    "QuantizeReport",
    "SceneSpec",
    "Stage1Artifacts",
    "Stage1Config",
    "TokenPredictor",
    "WindowInverseModel",
    "apply_window_inverse",
    "auto_intervals",
    "cascaded_step",
    "compose_labels",
    "confusion",
    "decode_linear",
    "decode_nearest",
    "default_spec",
    "default_stage1_config",
    "derive_seed",
    "detokenize",
    "discriminative_baseline",
    "encode",
    "evaluate_run",
    "fit_codebook",
    "generate",
    "generate_max_distance",
    "generate_random",
    "infer",
    "least_squares_inverse",
    "macc",
    "make_rng",
    "min_pairwise_distance",
    "miou",
    "one_hot",
    "per_class_iou",
    "reconstruct",
    "refine",
    "run_stage1",
    "soft_roundtrip",
    "straight_through_grad",
    "straight_through_roundtrip",
    "tokenize",
    "train_auxiliary",
    "train_token_predictor",
    "train_window_inverse",
    "validate",
]
