"""Averaged cross entropy over valid pixels, with the fused-softmax gradient."""

from dataclasses import dataclass

import numpy as np

from latticeseg.errors import DegenerateInputError, DimensionError

IGNORE_LABEL = 255
PROB_FLOOR = 1e-12


@dataclass
class LossReport:
    loss: float
    d_logits: np.ndarray  # gradient on the pre-softmax fused map
    pixel_count: int
    class_count: int


def cross_entropy(probs, labels, ignore=IGNORE_LABEL):
    """Mean negative log-probability of the true class over non-ignored pixels.

    `probs` must already be channel-normalized; the returned gradient is taken
    with respect to the logits feeding that softmax: (probs - onehot) / N at
    valid pixels, zero at ignored ones.
    """
    h, w, c = probs.shape
    if labels.shape != (h, w):
        raise DimensionError(f"labels shape {labels.shape} != map spatial dims ({h}, {w})")
    valid = labels != ignore
    n = int(valid.sum())
    if n == 0:
        raise DegenerateInputError("no valid pixels (all ignored)")
    if labels[valid].min() < 0 or labels[valid].max() >= c:
        raise DimensionError(f"label values outside [0, {c})")
    rows, cols = np.nonzero(valid)
    true_p = probs[rows, cols, labels[rows, cols]]
    loss = float(-np.log(np.maximum(true_p, PROB_FLOOR)).sum() / n)
    d_logits = probs.copy()
    d_logits[rows, cols, labels[rows, cols]] -= 1.0
    d_logits /= n
    d_logits[~valid] = 0.0
    # Where the clamp is active the computed loss is locally flat in that
    # pixel's logits; zeroing keeps the gradient exact for the loss as coded.
    clamped = true_p < PROB_FLOOR
    if clamped.any():
        d_logits[rows[clamped], cols[clamped]] = 0.0
    return LossReport(loss, d_logits, n, c)
