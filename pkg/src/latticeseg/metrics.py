"""Evaluation: confusion matrix, pixel accuracy, class accuracy."""

from dataclasses import dataclass

import numpy as np

from latticeseg.errors import DegenerateInputError
from latticeseg.loss import IGNORE_LABEL


@dataclass
class MetricsReport:
    pixel_accuracy: float
    class_accuracy: float  # unweighted mean over classes present in ground truth
    per_class: np.ndarray  # accuracy per class, nan when absent from ground truth
    confusion: np.ndarray  # (C, C), rows = ground truth, cols = prediction


def confusion_matrix(pred, labels, class_count, ignore=IGNORE_LABEL):
    """Counts over non-ignored pixels; row sums equal per-class ground-truth counts."""
    valid = labels != ignore
    gt = labels[valid].astype(np.int64)
    pr = pred[valid].astype(np.int64)
    m = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(m, (gt, pr), 1)
    return m


def report_from_confusion(confusion):
    row_sums = confusion.sum(axis=1)
    total = int(row_sums.sum())
    if total == 0:
        raise DegenerateInputError("confusion matrix is empty (no valid pixels)")
    correct = int(np.trace(confusion))
    present = row_sums > 0
    per_class = np.full(confusion.shape[0], np.nan)
    per_class[present] = np.diag(confusion)[present] / row_sums[present]
    return MetricsReport(
        pixel_accuracy=correct / total,
        class_accuracy=float(per_class[present].mean()),
        per_class=per_class,
        confusion=confusion,
    )


def evaluate(params, config, samples):
    """Metrics over a sample set; ignored pixels are excluded everywhere."""
    if not samples:
        raise DegenerateInputError("empty sample set")
    from latticeseg.model import forward_full, predict_labels

    confusion = np.zeros((config.class_count, config.class_count), dtype=np.int64)
    for s in samples:
        result = forward_full(s.image, params, config)
        confusion += confusion_matrix(predict_labels(result.probs), s.labels, config.class_count)
    return report_from_confusion(confusion)
