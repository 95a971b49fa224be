"""Momentum SGD with the staged exponential schedule, the training loop,
and the finite-difference gradient checker."""

import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np

from latticeseg.context import topic_feature
from latticeseg.errors import TrainingError
from latticeseg.metrics import confusion_matrix, report_from_confusion
from latticeseg.model import backward_full, forward_full, save_model
from latticeseg.tensor import dtype_for

LOG_HEADER = ("epoch", "loss", "pixel_acc", "class_acc", "lr")


@dataclass
class OptimizerState:
    base_lr: float = 1e-3
    momentum: float = 0.9
    decay: float = 0.9
    constant_epochs: int = 10
    clip_norm: float = None
    epoch: int = 1
    velocity: dict = field(default_factory=dict)

    @classmethod
    def from_config(cls, config):
        return cls(
            base_lr=config.learning_rate,
            momentum=config.momentum,
            decay=config.lr_decay,
            constant_epochs=config.lr_constant_epochs,
            clip_norm=config.clip_norm,
        )

    def learning_rate(self):
        """Constant for the first `constant_epochs`, then x decay per epoch."""
        if self.epoch <= self.constant_epochs:
            return self.base_lr
        return self.base_lr * self.decay ** (self.epoch - self.constant_epochs)


def sgd_step(params, grads, state):
    """v <- momentum * v - lr * grad; w <- w + v. Updates parameters in place.

    Only names present in `grads` are touched, so callers can freeze parameter
    families by dropping their entries.
    """
    arrays = params.array_dict()
    scale = 1.0
    if state.clip_norm is not None:
        total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if total > state.clip_norm:
            scale = state.clip_norm / total
    lr = state.learning_rate()
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise TrainingError(f"non-finite gradient for parameter {name}")
        w = arrays[name]
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity.setdefault(name, np.zeros_like(w))
        v *= state.momentum
        v -= (lr * scale) * grad
        w += v
    return params, state


@dataclass
class TrainResult:
    params: object
    log: list  # one dict per epoch with LOG_HEADER keys
    elapsed: float


def train(samples, config, params=None, out_dir=None, epochs=None, freeze=(), progress=None):
    """Epochs of shuffled single-sample SGD updates.

    `freeze` is a tuple of name substrings; matching parameter arrays are
    zeroed before training and never updated. Accuracy columns are measured on
    the fly from each sample's pre-update prediction.
    """
    if not samples:
        raise TrainingError("empty dataset")
    from latticeseg.model import init_params  # local to avoid import noise in hot path

    if params is None:
        params = init_params(config)
    for name, arr in params.named_arrays():
        if any(tag in name for tag in freeze):
            arr[...] = 0.0
    state = OptimizerState.from_config(config)
    rng = np.random.default_rng(config.seed)
    dtype = dtype_for(config.precision)

    prepared = []
    for s in samples:
        image = s.image.astype(dtype, copy=False)
        prepared.append((image, s.labels, topic_feature(image, config.topic).astype(dtype)))

    writer = None
    log_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_fh = open(os.path.join(out_dir, "log.csv"), "w", newline="", encoding="utf-8")
        writer = csv.writer(log_fh)
        writer.writerow(LOG_HEADER)

    rows = []
    started = time.perf_counter()
    total_epochs = config.epochs if epochs is None else epochs
    try:
        for epoch in range(1, total_epochs + 1):
            state.epoch = epoch
            lr = state.learning_rate()
            order = rng.permutation(len(prepared))
            losses = []
            confusion = np.zeros((config.class_count, config.class_count), dtype=np.int64)
            for idx in order:
                image, labels, topic = prepared[idx]
                result = forward_full(image, params, config, labels=labels, topic=topic)
                grads, _ = backward_full(result.cache, params, config, result.report.d_logits)
                for tag in freeze:
                    for name in list(grads):
                        if tag in name:
                            del grads[name]
                sgd_step(params, grads, state)
                losses.append(result.report.loss)
                pred = result.probs.argmax(axis=2)
                confusion += confusion_matrix(pred, labels, config.class_count)
            metrics = report_from_confusion(confusion)
            row = {
                "epoch": epoch,
                "loss": float(np.mean(losses)),
                "pixel_acc": metrics.pixel_accuracy,
                "class_acc": metrics.class_accuracy,
                "lr": lr,
            }
            rows.append(row)
            if writer is not None:
                writer.writerow([row[k] for k in LOG_HEADER])
                log_fh.flush()
            if progress is not None:
                progress(row)
    finally:
        if log_fh is not None:
            log_fh.close()
    if out_dir is not None:
        save_model(os.path.join(out_dir, "params.bin"), params)
    return TrainResult(params, rows, time.perf_counter() - started)


@dataclass
class GradCheckReport:
    per_family: dict  # name -> max relative error over probed coordinates
    step: float

    @property
    def max_error(self):
        return max(self.per_family.values())

    def format_table(self):
        width = max(len(n) for n in self.per_family)
        lines = [f"{name:<{width}}  {err:.3e}" for name, err in self.per_family.items()]
        lines.append(f"{'max':<{width}}  {self.max_error:.3e}")
        return "\n".join(lines)


def _relative_error(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def grad_check(params, image, labels, config, per_family=8, step=1e-5, seed=0, families=None,
               include_input=True):
    """Central-difference check of every parameter family and the input image.

    Probes `per_family` random coordinates per array (all of them when the
    array is smaller); the topic vector is precomputed and held fixed, since
    it is a constant input by contract.
    """
    rng = np.random.default_rng(seed)
    topic = topic_feature(image, config.topic)

    def loss_of():
        return forward_full(image, params, config, labels=labels, topic=topic).report.loss

    result = forward_full(image, params, config, labels=labels, topic=topic)
    grads, d_image = backward_full(result.cache, params, config, result.report.d_logits)

    targets = dict(params.named_arrays())
    if families is not None:
        targets = {k: v for k, v in targets.items() if any(tag in k for tag in families)}
    probes = list(targets.items())
    if include_input:
        probes.append(("input/image", image))

    report = {}
    for name, arr in probes:
        analytic = d_image if name == "input/image" else grads[name]
        flat = arr.reshape(-1)
        aflat = analytic.reshape(-1)
        if per_family is None or flat.size <= per_family:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=per_family, replace=False)
        worst = 0.0
        for i in coords:
            saved = flat[i]
            flat[i] = saved + step
            up = loss_of()
            flat[i] = saved - step
            down = loss_of()
            flat[i] = saved
            numeric = (up - down) / (2.0 * step)
            worst = max(worst, _relative_error(float(aflat[i]), numeric))
        report[name] = worst
    return GradCheckReport(report, step)
