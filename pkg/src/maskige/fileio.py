"""File formats: PNG images, palette CSV, dataset directories, binary models.

Binary layouts are little-endian: a 4-byte magic, u32 header fields, then
float64 payload in row-major order.

  GSSI  inverse palette   u32 K,            f64[3*K]
  GSSW  window inverse    u32 K, u32 w,     f64[(3*w*w+1)*K]
  GSSC  codebook          u32 p, u32 V,     f64[V*3*p*p]
  GSSP  token predictor   u32 p, u32 V, u32 f, u32 h,
                          h == 0: f64[f*V]; else f64[f*h] then f64[(h+1)*V]
  GSSA  auxiliary head    u32 K, u32 w,     f64[(3*w*w+1)*K]

Label PNGs are 8-bit grayscale with pixel value equal to the class id; the
value 255 is reserved for the unlabeled sentinel.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .core import ArtifactError, InversePalette, LabelMap, Maskige, require_valid
from .codec import WindowInverseModel
from .vq import Codebook

UNLABELED_PNG = 255


def save_image_png(image: np.ndarray, path) -> None:
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_image_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def save_maskige_png(maskige: Maskige, path) -> None:
    save_image_png(maskige.values, path)


def save_labels_png(map: LabelMap, path) -> None:
    require_valid(map)  # uint8 narrowing would silently wrap invalid ids
    if map.num_classes > UNLABELED_PNG:
        raise ArtifactError("too_many_classes", "label PNG supports at most 255 classes")
    arr = map.labels.astype(np.uint8)
    arr[map.labels == map.num_classes] = UNLABELED_PNG
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def load_labels_png(path, num_classes: int) -> LabelMap:
    arr = np.asarray(Image.open(path).convert("L")).astype(np.int32)
    arr[arr == UNLABELED_PNG] = num_classes
    return LabelMap(arr, num_classes)


def _write_payload(path, magic: bytes, header: list[int], arrays: list[np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<" + "I" * len(header), *header))
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_header(fh, magic: bytes, n_fields: int) -> tuple[int, ...]:
    got = fh.read(4)
    if got != magic:
        raise ArtifactError("bad_magic", f"expected {magic!r}, found {got!r}")
    return struct.unpack("<" + "I" * n_fields, fh.read(4 * n_fields))


def _read_f64(fh, count: int) -> np.ndarray:
    data = fh.read(8 * count)
    if len(data) != 8 * count:
        raise ArtifactError("truncated_file", "binary payload shorter than header promises")
    return np.frombuffer(data, dtype="<f8").copy()


def save_inverse(inv: InversePalette, path) -> None:
    _write_payload(path, b"GSSI", [inv.num_classes], [inv.weights])


def load_inverse(path) -> InversePalette:
    with open(path, "rb") as fh:
        (k,) = _read_header(fh, b"GSSI", 1)
        return InversePalette(_read_f64(fh, 3 * k).reshape(3, k))


def save_window_model(model: WindowInverseModel, path) -> None:
    _write_payload(path, b"GSSW", [model.num_classes, model.window], [model.weights])


def load_window_model(path) -> WindowInverseModel:
    with open(path, "rb") as fh:
        k, w = _read_header(fh, b"GSSW", 2)
        n_feat = 3 * w * w + 1
        return WindowInverseModel(w, _read_f64(fh, n_feat * k).reshape(n_feat, k))


def save_codebook(cb: Codebook, path) -> None:
    _write_payload(path, b"GSSC", [cb.patch, cb.vocab], [cb.codewords])


def load_codebook(path) -> Codebook:
    with open(path, "rb") as fh:
        p, v = _read_header(fh, b"GSSC", 2)
        return Codebook(p, _read_f64(fh, v * 3 * p * p).reshape(v, 3 * p * p))


def save_dataset(samples, out_dir, spec_meta: dict) -> None:
    """Write images/, labels/ PNG pairs plus manifest.json."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    pairs = []
    for i, (image, labels) in enumerate(samples):
        img_rel = f"images/{i:05d}.png"
        lab_rel = f"labels/{i:05d}.png"
        save_image_png(image, out / img_rel)
        save_labels_png(labels, out / lab_rel)
        pairs.append({"image": img_rel, "labels": lab_rel})
    manifest = dict(spec_meta)
    manifest["pairs"] = pairs
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(root) -> tuple[dict, list[tuple[np.ndarray, LabelMap]]]:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise ArtifactError("missing_manifest", f"no manifest.json under {root}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    num_classes = int(manifest["num_classes"])
    samples = []
    for pair in manifest["pairs"]:
        image = load_image_png(root / pair["image"])
        labels = load_labels_png(root / pair["labels"], num_classes)
        samples.append((image, labels))
    return manifest, samples


def write_json(obj: dict, path) -> None:
    """Deterministic JSON: sorted keys, fixed separators, trailing newline."""
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
