"""Small trainable convolutional front end with multiple tap levels.

A stack of (3x3 conv, relu, 2x2 maxpool) stages; selected stage outputs are
tapped as the multi-resolution feature maps feeding the per-level recurrent
layers. Tap q sits after stage q's pool, so its stride is 2**q.
"""

from dataclasses import dataclass

import numpy as np

from latticeseg.errors import DimensionError, StateError
from latticeseg.tensor import conv2d, conv2d_backward, maxpool2d, maxpool2d_backward, relu, relu_backward


@dataclass(frozen=True)
class BackboneConfig:
    filters: tuple = (8, 16, 32)
    taps: tuple = (1, 2, 3)  # 1-based stage indices whose pooled output is tapped

    def __post_init__(self):
        if not self.filters:
            raise DimensionError("backbone needs at least one stage")
        if not self.taps or list(self.taps) != sorted(set(self.taps)):
            raise DimensionError(f"tap indices must be strictly increasing, got {self.taps}")
        if self.taps[0] < 1 or self.taps[-1] > len(self.filters):
            raise DimensionError(f"tap indices {self.taps} out of range for {len(self.filters)} stages")

    @property
    def level_count(self):
        return len(self.taps)

    def tap_channels(self):
        return tuple(self.filters[t - 1] for t in self.taps)

    def tap_strides(self):
        return tuple(2**t for t in self.taps)


@dataclass
class BackboneParams:
    kernels: list  # per stage, (3, 3, c_in, c_out)
    biases: list  # per stage, (c_out,)

    def named_arrays(self):
        for s, (k, b) in enumerate(zip(self.kernels, self.biases)):
            yield f"stage{s}/kernels", k
            yield f"stage{s}/bias", b

    def zeros_like(self):
        return BackboneParams(
            [np.zeros_like(k) for k in self.kernels],
            [np.zeros_like(b) for b in self.biases],
        )


@dataclass
class BackboneCache:
    stage_inputs: list
    stage_preact: list
    pool_argmax: list
    consumed: bool = False


def backbone_forward(image, params, config):
    """Run all stages; returns (tapped maps, cache)."""
    h, w, _ = image.shape
    divisor = 2 ** config.taps[-1]
    if h % divisor or w % divisor:
        pad_h = (divisor - h % divisor) % divisor
        pad_w = (divisor - w % divisor) % divisor
        raise DimensionError(
            f"image {h}x{w} not divisible by {divisor}; pad by ({pad_h}, {pad_w}) first"
        )
    x = image
    taps = []
    cache = BackboneCache([], [], [])
    for stage in range(len(config.filters)):
        pre = conv2d(x, params.kernels[stage], params.biases[stage])
        pooled, argmax = maxpool2d(relu(pre))
        cache.stage_inputs.append(x)
        cache.stage_preact.append(pre)
        cache.pool_argmax.append(argmax)
        x = pooled
        if stage + 1 in config.taps:
            taps.append(pooled)
    return taps, cache


def backbone_backward(cache, params, config, d_taps):
    """Exact reverse pass; gradients from several taps into shared stages sum.

    Returns (BackboneParams-shaped gradients, d_image).
    """
    if cache.consumed:
        raise StateError("backbone cache already consumed")
    cache.consumed = True
    if len(d_taps) != len(config.taps):
        raise DimensionError(f"expected {len(config.taps)} tap gradients, got {len(d_taps)}")
    grads = BackboneParams([None] * len(params.kernels), [None] * len(params.biases))
    tap_of_stage = {t - 1: i for i, t in enumerate(config.taps)}
    d_x = None
    for stage in reversed(range(len(config.filters))):
        d_pooled = d_x
        if stage in tap_of_stage:
            d_tap = d_taps[tap_of_stage[stage]]
            d_pooled = d_tap if d_pooled is None else d_pooled + d_tap
        if d_pooled is None:
            # Stage beyond the last tap never executes in forward's tap set;
            # defensive zero keeps shapes consistent.
            d_pooled = np.zeros_like(cache.pool_argmax[stage], dtype=cache.stage_preact[stage].dtype)
        d_act = maxpool2d_backward(cache.pool_argmax[stage], d_pooled)
        d_pre = relu_backward(cache.stage_preact[stage], d_act)
        d_x, d_k, d_b = conv2d_backward(cache.stage_inputs[stage], params.kernels[stage], d_pre)
        grads.kernels[stage] = d_k
        grads.biases[stage] = d_b
    return grads, d_x
