"""Dataset manifest, PNG/PGM sample I/O, and image exports.

Label files are 8-bit single-channel images whose pixel value is the class
index, with 255 reserved as the ignore marker. The manifest is JSON with keys
`classes`, `palette`, and `pairs` (relative image/label path pairs).
"""

import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from latticeseg.errors import DimensionError, ParseError
from latticeseg.loss import IGNORE_LABEL

IGNORE_COLOR = (255, 0, 255)


@dataclass
class LabeledSample:
    image: np.ndarray  # (H, W, 1|3) floats in [0, 1]
    labels: np.ndarray  # (H, W) uint8, class index or IGNORE_LABEL
    sample_id: str


@dataclass
class DatasetManifest:
    classes: list  # class names, index = label value
    palette: list  # per class (r, g, b)
    pairs: list  # (image_relpath, label_relpath)
    root: str = "."

    def __post_init__(self):
        if len(self.palette) != len(self.classes):
            raise ParseError(
                f"palette has {len(self.palette)} entries for {len(self.classes)} classes"
            )
        colors = [tuple(c) for c in self.palette]
        if len(set(colors)) != len(colors):
            raise ParseError("palette colors must be unique per class")

    @property
    def class_count(self):
        return len(self.classes)


def load_manifest(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise FileNotFoundError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from None
    for key in ("classes", "palette", "pairs"):
        if key not in data:
            raise ParseError(f"{path}: missing manifest key {key!r}")
    return DatasetManifest(
        classes=list(data["classes"]),
        palette=[tuple(c) for c in data["palette"]],
        pairs=[tuple(p) for p in data["pairs"]],
        root=os.path.dirname(os.path.abspath(path)),
    )


def save_manifest(manifest, path):
    data = {
        "classes": list(manifest.classes),
        "palette": [list(c) for c in manifest.palette],
        "pairs": [list(p) for p in manifest.pairs],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def load_image(path):
    """Decode a PNG/PGM image to (H, W, 1|3) floats in [0, 1]."""
    with Image.open(path) as img:
        if img.mode == "L":
            arr = np.asarray(img, dtype=np.float64)[:, :, None]
        elif img.mode == "RGB":
            arr = np.asarray(img, dtype=np.float64)
        else:
            converted = img.convert("RGB")
            arr = np.asarray(converted, dtype=np.float64)
    return arr / 255.0


def load_labels(path, class_count):
    with Image.open(path) as img:
        if img.mode != "L":
            raise ParseError(f"{path}: label file must be 8-bit single-channel, got mode {img.mode}")
        labels = np.asarray(img, dtype=np.uint8)
    bad = (labels >= class_count) & (labels != IGNORE_LABEL)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise ValueError(
            f"{path}: label value {labels[r, c]} at ({r}, {c}) outside [0, {class_count})"
        )
    return labels


def load_dataset(manifest_path):
    """Returns (manifest, samples) with every sample validated."""
    manifest = load_manifest(manifest_path)
    samples = []
    for image_rel, label_rel in manifest.pairs:
        image_path = os.path.join(manifest.root, image_rel)
        label_path = os.path.join(manifest.root, label_rel)
        image = load_image(image_path)
        labels = load_labels(label_path, manifest.class_count)
        if image.shape[:2] != labels.shape:
            raise DimensionError(
                f"{image_rel}: image {image.shape[:2]} vs labels {labels.shape}"
            )
        samples.append(LabeledSample(image, labels, os.path.splitext(os.path.basename(image_rel))[0]))
    return manifest, samples


def save_image(path, image):
    """Write a [0, 1] float map as an 8-bit PNG/PGM (by extension)."""
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path)


def save_labels(path, labels):
    Image.fromarray(np.asarray(labels, dtype=np.uint8), mode="L").save(path)


def save_color_labels(path, labels, palette):
    """Palette-colored label export; ignore pixels render as IGNORE_COLOR."""
    colors = [tuple(c) for c in palette]
    if IGNORE_COLOR in colors and (labels == IGNORE_LABEL).any():
        raise ValueError(f"palette uses the reserved ignore color {IGNORE_COLOR}")
    h, w = labels.shape
    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    for idx, color in enumerate(colors):
        rgb[labels == idx] = color
    rgb[labels == IGNORE_LABEL] = IGNORE_COLOR
    Image.fromarray(rgb).save(path)


def decode_color_labels(path, palette):
    """Invert save_color_labels through the palette."""
    with Image.open(path) as img:
        rgb = np.asarray(img.convert("RGB"))
    lookup = {tuple(c): idx for idx, c in enumerate(palette)}
    lookup[IGNORE_COLOR] = IGNORE_LABEL
    h, w, _ = rgb.shape
    labels = np.empty((h, w), dtype=np.uint8)
    for r in range(h):
        for c in range(w):
            key = tuple(int(v) for v in rgb[r, c])
            if key not in lookup:
                raise ValueError(f"{path}: color {key} at ({r}, {c}) not in palette")
            labels[r, c] = lookup[key]
    return labels


def save_weight_map(path, weights):
    """Export a [0, 1] weight map as an 8-bit grayscale image, linear scaling."""
    save_image(path, np.asarray(weights)[:, :, None] if np.asarray(weights).ndim == 2 else weights)


def write_dataset(samples, manifest, out_dir):
    """Lay a dataset out on disk and write its manifest; returns the manifest path."""
    images_dir = os.path.join(out_dir, "images")
    labels_dir = os.path.join(out_dir, "labels")
    os.makedirs(images_dir, exist_ok=True)
    os.makedirs(labels_dir, exist_ok=True)
    pairs = []
    for s in samples:
        image_rel = os.path.join("images", f"{s.sample_id}.png")
        label_rel = os.path.join("labels", f"{s.sample_id}.png")
        save_image(os.path.join(out_dir, image_rel), s.image)
        save_labels(os.path.join(out_dir, label_rel), s.labels)
        pairs.append((image_rel, label_rel))
    manifest = DatasetManifest(manifest.classes, manifest.palette, pairs, out_dir)
    path = os.path.join(out_dir, "manifest.json")
    save_manifest(manifest, path)
    return path
