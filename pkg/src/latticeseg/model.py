"""End-to-end model assembly: backbone, per-level recurrent context, fusion.

The pipeline is: backbone taps -> per-level (global feature, recurrent layer)
with a shared topic vector -> bilinear upsampling of every level's class
scores to image resolution -> fusion -> softmax -> loss.
"""

from dataclasses import dataclass

import numpy as np

from latticeseg import serial
from latticeseg.backbone import BackboneParams, backbone_backward, backbone_forward
from latticeseg.context import global_feature, global_feature_backward, topic_feature
from latticeseg.errors import DimensionError
from latticeseg.fusion import (
    AttentionParams,
    fuse_attention,
    fuse_attention_backward,
    fuse_average,
    fuse_baseline_backward,
    fuse_max,
)
from latticeseg.graph import build_dag_plans
from latticeseg.loss import IGNORE_LABEL, cross_entropy
from latticeseg.recurrent import CrnnParams, crnn_backward, crnn_forward
from latticeseg.tensor import bilinear_upsample, bilinear_upsample_backward, dtype_for, softmax_channels


@dataclass
class ModelParams:
    backbone: BackboneParams
    levels: list  # one CrnnParams per tap
    attention: AttentionParams = None

    def named_arrays(self):
        """Every trainable array exactly once, in a fixed order."""
        for name, arr in self.backbone.named_arrays():
            yield f"backbone/{name}", arr
        for q, level in enumerate(self.levels):
            for name, arr in level.named_arrays():
                yield f"level{q}/{name}", arr
        if self.attention is not None:
            for name, arr in self.attention.named_arrays():
                yield f"attention/{name}", arr

    def array_dict(self):
        return dict(self.named_arrays())


def _glorot(rng, shape, fan_in, fan_out, dtype):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_params(config, seed=None):
    """Glorot-uniform weights, zero biases, from a seeded generator."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    dtype = dtype_for(config.precision)
    bb = config.backbone

    kernels, biases = [], []
    c_in = config.image_channels
    for c_out in bb.filters:
        kernels.append(_glorot(rng, (3, 3, c_in, c_out), 9 * c_in, 9 * c_out, dtype))
        biases.append(np.zeros(c_out, dtype=dtype))
        c_in = c_out
    backbone = BackboneParams(kernels, biases)

    levels = []
    topic_dim = config.topic.dim
    for tap_channels, hidden in zip(bb.tap_channels(), config.level_hidden_dims()):
        global_dim = 9 * tap_channels
        # The recurrence sums up to three weighted predecessors per vertex
        # over long lattice paths; plain Glorot gives a per-hop gain above 1
        # and the hidden states blow up geometrically. The damping factor
        # keeps the propagation stable at any lattice size.
        rec = _glorot(rng, (4, 3, hidden, hidden), hidden, hidden, dtype)
        rec *= config.recurrent_init_scale
        levels.append(
            CrnnParams(
                w_in=_glorot(rng, (4, hidden, tap_channels), tap_channels, hidden, dtype),
                w_rec=rec,
                w_out=_glorot(rng, (4, config.class_count, hidden), hidden, config.class_count, dtype),
                b_h=np.zeros((4, hidden), dtype=dtype),
                w_global=_glorot(rng, (hidden, global_dim), global_dim, hidden, dtype),
                w_topic=_glorot(rng, (hidden, topic_dim), topic_dim, hidden, dtype),
                b_y=np.zeros(config.class_count, dtype=dtype),
            )
        )

    attention = None
    if config.fusion == "attention":
        q = bb.level_count
        cat = q * config.class_count
        f = config.attention_filters
        attention = AttentionParams(
            conv1_kernels=_glorot(rng, (3, 3, cat, f), 9 * cat, 9 * f, dtype),
            conv1_bias=np.zeros(f, dtype=dtype),
            conv2_kernels=_glorot(rng, (1, 1, f, q), f, q, dtype),
            conv2_bias=np.zeros(q, dtype=dtype),
        )
    return ModelParams(backbone, levels, attention)


@dataclass
class ModelCache:
    image_shape: tuple
    bb_cache: object
    level_records: list  # per level: (GlobalFeatureRecord, CrnnCache, (h, w))
    fusion_cache: object  # AttentionCache, max argmax record, or None
    mode: str


@dataclass
class ForwardResult:
    probs: np.ndarray
    report: object  # LossReport or None
    cache: ModelCache
    fusion: object  # FusionOutput


def forward_full(image, params, config, labels=None, topic=None, ignore=IGNORE_LABEL):
    """Full pipeline on one sample. `topic` may be precomputed (it is a constant input)."""
    if image.ndim != 3 or image.shape[2] != config.image_channels:
        raise DimensionError(
            f"image shape {image.shape} incompatible with {config.image_channels} channels"
        )
    h, w = image.shape[:2]
    for t in config.taps:
        th, tw = h >> t, w >> t
        if th < 3 or tw < 3:
            raise DimensionError(
                f"tap {t} map would be {th}x{tw}; every tapped map needs dims >= 3"
            )
    if topic is None:
        topic = topic_feature(image, config.topic)
    topic = topic.astype(image.dtype, copy=False)

    taps, bb_cache = backbone_forward(image, params.backbone, config.backbone)
    level_records = []
    upsampled = []
    for q, tap in enumerate(taps):
        g, g_record = global_feature(tap)
        plans = build_dag_plans(*tap.shape[:2])
        logits, crnn_cache = crnn_forward(tap, plans, params.levels[q], g, topic)
        level_records.append((g_record, crnn_cache, tap.shape[:2]))
        upsampled.append(bilinear_upsample(logits, h, w))

    if config.fusion == "attention":
        fusion_out, fusion_cache = fuse_attention(upsampled, params.attention)
    elif config.fusion == "average":
        fusion_out, fusion_cache = fuse_average(upsampled), None
    else:
        fusion_out, fusion_cache = fuse_max(upsampled)

    probs = softmax_channels(fusion_out.fused)
    report = cross_entropy(probs, labels, ignore) if labels is not None else None
    cache = ModelCache((h, w), bb_cache, level_records, fusion_cache, config.fusion)
    return ForwardResult(probs, report, cache, fusion_out)


def backward_full(cache, params, config, d_fused):
    """Gradients for every parameter family plus the input image.

    `d_fused` is the cotangent on the fused pre-softmax map (the loss report's
    d_logits). The topic vector is a constant input: no gradient flows from it
    back to the image.
    """
    grads = {}
    q_count = len(cache.level_records)
    if cache.mode == "attention":
        d_levels, att_grads = fuse_attention_backward(cache.fusion_cache, params.attention, d_fused)
        for name, arr in att_grads.named_arrays():
            grads[f"attention/{name}"] = arr
    else:
        d_levels = fuse_baseline_backward(cache.mode, d_fused, q_count, cache.fusion_cache)

    d_taps = []
    for q, (g_record, crnn_cache, (lh, lw)) in enumerate(cache.level_records):
        d_logits = bilinear_upsample_backward(d_levels[q], lh, lw)
        plans = build_dag_plans(lh, lw)
        back = crnn_backward(crnn_cache, plans, params.levels[q], d_logits)
        for name, arr in back.grads.named_arrays():
            grads[f"level{q}/{name}"] = arr
        d_tap = back.d_x + global_feature_backward(g_record, back.d_g)
        d_taps.append(d_tap)

    bb_grads, d_image = backbone_backward(cache.bb_cache, params.backbone, config.backbone, d_taps)
    for name, arr in bb_grads.named_arrays():
        grads[f"backbone/{name}"] = arr
    return grads, d_image


def predict_labels(probs):
    """Per-pixel argmax over class probabilities; ties break to the lowest index."""
    return probs.argmax(axis=2)


def save_model(path, params):
    serial.save_arrays(path, params.named_arrays())


def load_model(path, config):
    """Instantiate parameters for `config` and fill them from a checkpoint."""
    arrays = serial.load_arrays(path)
    params = init_params(config)
    expected = params.array_dict()
    if set(arrays) != set(expected):
        missing = sorted(set(expected) - set(arrays))
        surplus = sorted(set(arrays) - set(expected))
        raise DimensionError(f"checkpoint mismatch: missing {missing}, surplus {surplus}")
    for name, arr in expected.items():
        stored = arrays[name]
        if stored.shape != arr.shape:
            raise DimensionError(f"{name}: checkpoint shape {stored.shape} != {arr.shape}")
        arr[...] = stored.astype(arr.dtype, copy=False)
    return params
