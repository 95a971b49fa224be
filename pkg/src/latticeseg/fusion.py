"""Merging the per-level class-score maps into one map.

Three modes: a learned attention model (two convolutions producing one score
map per level, softmax-normalized into per-position weights), plus average
and max pooling across levels as baselines. All modes consume level maps
already brought to a common resolution.
"""

from dataclasses import dataclass

import numpy as np

from latticeseg.errors import DimensionError, StateError
from latticeseg.tensor import conv2d, conv2d_backward, relu, relu_backward, softmax_channels


@dataclass
class AttentionParams:
    """Two-layer score head: 3x3 conv over the concatenated levels, then 1x1 conv to Q maps."""

    conv1_kernels: np.ndarray  # (3, 3, Q * C, filters)
    conv1_bias: np.ndarray  # (filters,)
    conv2_kernels: np.ndarray  # (1, 1, filters, Q)
    conv2_bias: np.ndarray  # (Q,)

    @property
    def level_count(self):
        return self.conv2_kernels.shape[3]

    def zeros_like(self):
        return AttentionParams(
            np.zeros_like(self.conv1_kernels),
            np.zeros_like(self.conv1_bias),
            np.zeros_like(self.conv2_kernels),
            np.zeros_like(self.conv2_bias),
        )

    def named_arrays(self):
        yield "conv1_kernels", self.conv1_kernels
        yield "conv1_bias", self.conv1_bias
        yield "conv2_kernels", self.conv2_kernels
        yield "conv2_bias", self.conv2_bias


@dataclass
class FusionOutput:
    fused: np.ndarray  # (H, W, C)
    weights: np.ndarray  # (H, W, Q); uniform for average mode, one-hot for max
    scores: np.ndarray  # (H, W, Q) attention score maps, or None for baselines
    mode: str


@dataclass
class AttentionCache:
    levels: list
    concat: np.ndarray
    act1: np.ndarray  # post-relu output of the first convolution
    weights: np.ndarray
    consumed: bool = False


def _check_levels(levels):
    if not levels:
        raise DimensionError("fusion needs at least one level map")
    shape = levels[0].shape
    for q, lvl in enumerate(levels):
        if lvl.ndim != 3 or lvl.shape != shape:
            raise DimensionError(f"level {q} shape {lvl.shape} != level 0 shape {shape}")
    return shape


def _weighted_sum(levels, weights):
    # Shared accumulation kernel so average mode is bit-identical to
    # attention with uniform weights.
    z = weights[:, :, 0:1] * levels[0]
    for q in range(1, len(levels)):
        z += weights[:, :, q : q + 1] * levels[q]
    return z


def fuse_attention(levels, params):
    """Attention-weighted sum of level maps. Returns (FusionOutput, cache)."""
    _check_levels(levels)
    q = len(levels)
    if params.level_count != q:
        raise DimensionError(f"attention head built for {params.level_count} levels, got {q}")
    concat = np.concatenate(levels, axis=2)
    act1 = relu(conv2d(concat, params.conv1_kernels, params.conv1_bias))
    scores = conv2d(act1, params.conv2_kernels, params.conv2_bias)
    weights = softmax_channels(scores)
    fused = _weighted_sum(levels, weights)
    out = FusionOutput(fused, weights, scores, "attention")
    return out, AttentionCache(levels, concat, act1, weights)


def fuse_attention_backward(cache, params, d_fused):
    """Gradients through the weighted sum, softmax, and both convolutions.

    Returns (d_levels, AttentionParams-shaped gradients). Each level receives
    both the direct weighted path and the path through the concatenated
    attention input.
    """
    if cache.consumed:
        raise StateError("attention cache already consumed")
    cache.consumed = True
    levels, weights = cache.levels, cache.weights
    q = len(levels)
    if d_fused.shape != levels[0].shape:
        raise DimensionError(f"d_fused shape {d_fused.shape} != level shape {levels[0].shape}")

    d_levels = [weights[:, :, i : i + 1] * d_fused for i in range(q)]
    d_weights = np.stack([np.sum(d_fused * levels[i], axis=2) for i in range(q)], axis=2)
    # Softmax backward per position over the level axis.
    inner = np.sum(weights * d_weights, axis=2, keepdims=True)
    d_scores = weights * (d_weights - inner)

    d_act1, d_k2, d_b2 = conv2d_backward(cache.act1, params.conv2_kernels, d_scores)
    d_pre1 = relu_backward(cache.act1, d_act1)
    d_concat, d_k1, d_b1 = conv2d_backward(cache.concat, params.conv1_kernels, d_pre1)
    c = levels[0].shape[2]
    for i in range(q):
        d_levels[i] += d_concat[:, :, i * c : (i + 1) * c]
    return d_levels, AttentionParams(d_k1, d_b1, d_k2, d_b2)


def fuse_average(levels):
    """Uniform-weight fusion; shares the accumulation path with attention."""
    h, w, _ = _check_levels(levels)
    q = len(levels)
    weights = np.full((h, w, q), 1.0 / q, dtype=levels[0].dtype)
    return FusionOutput(_weighted_sum(levels, weights), weights, None, "average")


def fuse_max(levels):
    """Per-cell, per-channel max across levels; argmax recorded for backward.

    Ties resolve to the lowest level index.
    """
    h, w, c = _check_levels(levels)
    stack = np.stack(levels, axis=0)  # (Q, H, W, C)
    record = stack.argmax(axis=0)  # (H, W, C)
    fused = np.take_along_axis(stack, record[None], axis=0)[0]
    weights = np.zeros((h, w, len(levels)), dtype=levels[0].dtype)
    # Weight maps report, per level, the fraction of that cell's channels it won.
    for i in range(len(levels)):
        weights[:, :, i] = (record == i).mean(axis=2)
    return FusionOutput(fused, weights, None, "max"), record


def fuse_baseline_backward(mode, d_fused, level_count, record=None):
    """Backward for the two baselines: split evenly (average) or route to argmax (max)."""
    if mode == "average":
        scale = 1.0 / level_count
        return [scale * d_fused for _ in range(level_count)]
    if mode == "max":
        if record is None:
            raise StateError("max-mode backward needs the argmax record")
        if record.shape != d_fused.shape:
            raise DimensionError(f"record shape {record.shape} != d_fused {d_fused.shape}")
        return [d_fused * (record == i) for i in range(level_count)]
    raise ValueError(f"unknown baseline mode {mode!r}")
