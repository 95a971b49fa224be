"""Context vectors injected into the recurrence.

Two kinds: a per-level global vector g (per-channel maxima over a 3x3 block
partition of the level's input map) and an image-level topic vector t (an
oriented band-pass energy descriptor of the raw image, held constant during
training).
"""

import math
from dataclasses import dataclass

import numpy as np

from latticeseg.errors import DimensionError, ParseError, StateError
from latticeseg.tensor import conv2d

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass
class GlobalFeatureRecord:
    """Block geometry and argmax locations for exact backward routing."""

    shape: tuple  # (H, W, C) of the source map
    row_edges: list
    col_edges: list
    argmax: np.ndarray  # (9, C, 2) winning (row, col) per block and channel
    consumed: bool = False


def _block_edges(n):
    # Near-equal thirds by rounding cumulative boundaries; sizes differ by <= 1.
    return [int(round(i * n / 3)) for i in range(4)]


def global_feature(fmap):
    """Concatenated per-channel maxima over the 3x3 block partition (g_1..g_9 row-major)."""
    if fmap.ndim != 3:
        raise DimensionError(f"expected (H, W, C) map, got shape {fmap.shape}")
    h, w, c = fmap.shape
    if h < 3 or w < 3:
        raise DimensionError(f"global feature needs at least a 3x3 map, got {h}x{w}")
    row_edges = _block_edges(h)
    col_edges = _block_edges(w)
    g = np.empty(9 * c, dtype=fmap.dtype)
    argmax = np.empty((9, c, 2), dtype=np.intp)
    for bi in range(9):
        r0, r1 = row_edges[bi // 3], row_edges[bi // 3 + 1]
        c0, c1 = col_edges[bi % 3], col_edges[bi % 3 + 1]
        block = fmap[r0:r1, c0:c1]
        flat = block.reshape(-1, c)
        winners = flat.argmax(axis=0)
        g[bi * c : (bi + 1) * c] = flat[winners, np.arange(c)]
        argmax[bi, :, 0] = r0 + winners // (c1 - c0)
        argmax[bi, :, 1] = c0 + winners % (c1 - c0)
    return g, GlobalFeatureRecord((h, w, c), row_edges, col_edges, argmax)


def global_feature_backward(record, d_g):
    """Scatter d_g entries to the recorded argmax cells; zero elsewhere."""
    if record.consumed:
        raise StateError("global-feature record already consumed")
    record.consumed = True
    h, w, c = record.shape
    if d_g.shape != (9 * c,):
        raise DimensionError(f"d_g length {d_g.shape} != (9 * {c},)")
    d_map = np.zeros((h, w, c), dtype=d_g.dtype)
    channels = np.arange(c)
    for bi in range(9):
        rows = record.argmax[bi, :, 0]
        cols = record.argmax[bi, :, 1]
        np.add.at(d_map, (rows, cols, channels), d_g[bi * c : (bi + 1) * c])
    return d_map


@dataclass(frozen=True)
class TopicConfig:
    """Oriented band-pass bank geometry for the topic descriptor."""

    sigmas: tuple = (1.0, 2.0)
    orientations: int = 4
    grid: int = 4

    @property
    def dim(self):
        return len(self.sigmas) * self.orientations * self.grid * self.grid


def _oriented_kernel(sigma, theta):
    # Odd-symmetric derivative of a Gaussian along direction theta: zero
    # response to constants, peak response to edges perpendicular to theta.
    radius = int(math.ceil(3.0 * sigma))
    ys, xs = np.mgrid[-radius : radius + 1, -radius : radius + 1].astype(np.float64)
    u = xs * math.cos(theta) + ys * math.sin(theta)
    k = -(u / sigma**2) * np.exp(-(xs**2 + ys**2) / (2.0 * sigma**2))
    return k / np.abs(k).sum()


def topic_bank(config):
    """The filter bank as a list of 2-D kernels, scale-major then orientation."""
    bank = []
    for sigma in config.sigmas:
        for j in range(config.orientations):
            theta = math.pi * j / config.orientations
            bank.append(_oriented_kernel(sigma, theta))
    return bank


def topic_feature(image, config=TopicConfig()):
    """Holistic image descriptor: grid-averaged band-pass energies, length config.dim.

    The image is converted to grayscale, centered to zero mean (anchored at
    the first pixel so constant images map to an exactly-zero array), filtered
    with each bank kernel, and the squared responses are averaged over a
    grid x grid partition. Entries are normalized by the image's mean
    band-pass energy, making the descriptor contrast-invariant and O(1).
    """
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise DimensionError(f"topic feature needs a 1- or 3-channel map, got {image.shape}")
    h, w, c = image.shape
    if c == 3:
        gray = image.astype(np.float64) @ np.asarray(LUMA_WEIGHTS)
    else:
        gray = image[:, :, 0].astype(np.float64)
    gray = gray - gray[0, 0]
    gray -= gray.mean()

    grid = config.grid
    row_edges = [int(round(i * h / grid)) for i in range(grid + 1)]
    col_edges = [int(round(i * w / grid)) for i in range(grid + 1)]
    gray3 = gray[:, :, None]
    zero_bias = np.zeros(1, dtype=np.float64)
    t = np.empty(config.dim, dtype=np.float64)
    pos = 0
    total_energy = 0.0
    for kernel in topic_bank(config):
        resp = conv2d(gray3, kernel[:, :, None, None], zero_bias)[:, :, 0]
        energy = resp * resp
        total_energy += float(energy.mean())
        for gi in range(grid):
            for gj in range(grid):
                cell = energy[row_edges[gi] : row_edges[gi + 1], col_edges[gj] : col_edges[gj + 1]]
                t[pos] = cell.mean() if cell.size else 0.0
                pos += 1
    t /= total_energy / len(topic_bank(config)) + 1e-12
    return t


def load_topic_feature(path, expected_dim=None):
    """Read a plain-text topic vector (one scalar per line, UTF-8, no header)."""
    values = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                values.append(float(stripped))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: not a number: {stripped!r}") from None
    t = np.asarray(values, dtype=np.float64)
    if expected_dim is not None and t.shape != (expected_dim,):
        raise DimensionError(f"{path}: topic vector has length {t.size}, expected {expected_dim}")
    return t


def save_topic_feature(path, t):
    """Write a topic vector in the plain-text format load_topic_feature reads."""
    with open(path, "w", encoding="utf-8") as fh:
        for value in np.asarray(t).ravel():
            fh.write(f"{float(value)!r}\n")
