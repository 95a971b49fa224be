"""Synthetic datasets exercising context beyond local appearance.

`longrange`: the texture inside a central region is exactly identical across
the two region classes (samples come in matched pairs differing only in the
corner cue patch), so only a model that carries the cue across the image can
label the region. `multiscale`: blobs of identical appearance at three size
octaves, so different pyramid levels carry the discriminative signal.
"""

import numpy as np

from latticeseg.data import DatasetManifest, LabeledSample
from latticeseg.errors import DimensionError

CUE_SIZE = 3

LONGRANGE_CLASSES = ["background", "region-bright-cue", "region-dark-cue"]
LONGRANGE_PALETTE = [(40, 40, 40), (220, 60, 60), (60, 90, 220)]

MULTISCALE_CLASSES = ["background", "blob-small", "blob-medium", "blob-large"]
MULTISCALE_PALETTE = [(40, 40, 40), (230, 200, 60), (90, 200, 90), (170, 90, 220)]


def _quantize(image):
    # Snap to the 8-bit grid so save -> load round-trips bit-exactly.
    return np.rint(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


def _region_box(size, corner):
    # Region sits off-center, diagonally opposite the cue corner, far enough
    # that no region pixel's backbone receptive field reaches the cue.
    side = size // 4
    shift = size // 8
    dr = shift if corner in (0, 1) else -shift  # corners: 0 TL, 1 TR, 2 BL, 3 BR
    dc = shift if corner in (0, 2) else -shift
    r0 = size // 2 - side // 2 + dr
    c0 = size // 2 - side // 2 + dc
    return r0, c0, side


def _cue_box(size, corner):
    r0 = 0 if corner in (0, 1) else size - CUE_SIZE
    c0 = 0 if corner in (0, 2) else size - CUE_SIZE
    return r0, c0


def generate_longrange(count, size, rng):
    """Matched-pair construction: each layout is emitted once per region class."""
    samples = []
    layouts = (count + 1) // 2
    for i in range(layouts):
        background = rng.uniform(0.45, 0.55, size=(size, size))
        corner = int(rng.integers(4))
        r0, c0, side = _region_box(size, corner)
        # Region texture lives in two bands disjoint from the background
        # band, so region membership is locally decidable while the region
        # class still depends only on the far-away cue.
        magnitude = rng.uniform(0.62, 0.85, size=(side, side))
        flip = rng.uniform(size=(side, side)) < 0.5
        texture = np.where(flip, 1.0 - magnitude, magnitude)
        cr, cc = _cue_box(size, corner)
        for cls, cue_value in ((1, 1.0), (2, 0.0)):
            if len(samples) == count:
                break
            image = background.copy()
            image[r0 : r0 + side, c0 : c0 + side] = texture
            image[cr : cr + CUE_SIZE, cc : cc + CUE_SIZE] = cue_value
            labels = np.zeros((size, size), dtype=np.uint8)
            labels[r0 : r0 + side, c0 : c0 + side] = cls
            samples.append(
                LabeledSample(
                    _quantize(image)[:, :, None], labels, f"longrange_{2 * i + cls - 1:04d}"
                )
            )
    manifest = DatasetManifest(list(LONGRANGE_CLASSES), list(LONGRANGE_PALETTE), [])
    return samples, manifest


def _disk_mask(size, row, col, radius):
    ys, xs = np.mgrid[0:size, 0:size]
    return (ys - row) ** 2 + (xs - col) ** 2 <= radius**2


def generate_multiscale(count, size, rng):
    """Blobs at three size octaves, identical local appearance, class = octave."""
    radii = (size / 24.0, size / 12.0, size / 6.0)
    blob_counts = (4, 2, 1)
    samples = []
    for i in range(count):
        image = rng.uniform(0.10, 0.20, size=(size, size))
        labels = np.zeros((size, size), dtype=np.uint8)
        occupied = np.zeros((size, size), dtype=bool)
        for octave in (2, 1, 0):  # place large blobs first
            radius = radii[octave]
            for _ in range(blob_counts[octave]):
                for _attempt in range(40):
                    row = float(rng.uniform(radius + 1, size - radius - 1))
                    col = float(rng.uniform(radius + 1, size - radius - 1))
                    mask = _disk_mask(size, row, col, radius)
                    grown = _disk_mask(size, row, col, radius + 2)
                    if not (grown & occupied).any():
                        image[mask] = rng.uniform(0.78, 0.88)
                        labels[mask] = octave + 1
                        occupied |= grown
                        break
        image += rng.uniform(-0.03, 0.03, size=(size, size))
        samples.append(LabeledSample(_quantize(image)[:, :, None], labels, f"multiscale_{i:04d}"))
    manifest = DatasetManifest(list(MULTISCALE_CLASSES), list(MULTISCALE_PALETTE), [])
    return samples, manifest


def generate_synthetic(kind, count, size, seed):
    """Deterministic synthetic dataset; returns (samples, manifest)."""
    if size < 24 or size % 8:
        raise DimensionError(f"size must be >= 24 and divisible by 8, got {size}")
    if count < 1:
        raise DimensionError(f"count must be positive, got {count}")
    rng = np.random.default_rng(seed)
    if kind == "longrange":
        return generate_longrange(count, size, rng)
    if kind == "multiscale":
        return generate_multiscale(count, size, rng)
    raise ValueError(f"unknown synthetic kind {kind!r}")
