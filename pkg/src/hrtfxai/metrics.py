"""Classification metrics and the cross-dataset evaluation matrix.

Macro averages are unweighted means over the evaluated label space.  By
default that is all nine sectors; a dataset whose geometry lacks some
sector (no lateral measurements, say) can pass its own label space so
structurally absent classes do not drag the macro average to zero.
Exports record which convention was used.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .coords import N_CLASSES, ElevationClass

__all__ = [
    "ClassMetrics",
    "ConfusionMatrix",
    "CrossMatrix",
    "ADJACENCY",
    "class_metrics",
    "confusion_matrix",
    "cross_f1_matrix",
    "cross_summary",
    "write_matrix_csv",
    "read_matrix_csv",
]

# Neighbour sectors for the adjacent-error statistic: the medial chain is
# circular in polar order; each lateral sector borders the other lateral
# and the medial sectors of its own hemisphere (level sectors excluded).
ADJACENCY = {
    ElevationClass.FRONT_DOWN: {ElevationClass.BACK_DOWN, ElevationClass.FRONT_LEVEL,
                                ElevationClass.LATERAL_DOWN},
    ElevationClass.FRONT_LEVEL: {ElevationClass.FRONT_DOWN, ElevationClass.FRONT_UP},
    ElevationClass.FRONT_UP: {ElevationClass.FRONT_LEVEL, ElevationClass.UP,
                              ElevationClass.LATERAL_UP},
    ElevationClass.UP: {ElevationClass.FRONT_UP, ElevationClass.BACK_UP,
                        ElevationClass.LATERAL_UP},
    ElevationClass.BACK_UP: {ElevationClass.UP, ElevationClass.BACK_LEVEL,
                             ElevationClass.LATERAL_UP},
    ElevationClass.BACK_LEVEL: {ElevationClass.BACK_UP, ElevationClass.BACK_DOWN},
    ElevationClass.BACK_DOWN: {ElevationClass.BACK_LEVEL, ElevationClass.FRONT_DOWN,
                               ElevationClass.LATERAL_DOWN},
    ElevationClass.LATERAL_UP: {ElevationClass.LATERAL_DOWN, ElevationClass.FRONT_UP,
                                ElevationClass.UP, ElevationClass.BACK_UP},
    ElevationClass.LATERAL_DOWN: {ElevationClass.LATERAL_UP, ElevationClass.FRONT_DOWN,
                                  ElevationClass.BACK_DOWN},
}


@dataclass
class ClassMetrics:
    precision: np.ndarray  # [9]
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    label_space: np.ndarray  # bool [9], classes included in the macro mean
    macro_precision: float
    macro_recall: float
    macro_f1: float

    def to_dict(self):
        return {
            "per_class": {
                ElevationClass(i).name: {
                    "precision": float(self.precision[i]),
                    "recall": float(self.recall[i]),
                    "f1": float(self.f1[i]),
                    "support": int(self.support[i]),
                    "in_label_space": bool(self.label_space[i]),
                }
                for i in range(N_CLASSES)
            },
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
        }


def _check_labels(preds, labels):
    preds = np.asarray(preds, dtype=int)
    labels = np.asarray(labels, dtype=int)
    if preds.size == 0:
        raise ValueError("empty prediction set")
    if preds.shape != labels.shape:
        raise ValueError("prediction/label length mismatch")
    if labels.min() < 0 or labels.max() >= N_CLASSES:
        raise ValueError("labels outside 0..8")
    return preds, labels


def class_metrics(preds, labels, label_space=None) -> ClassMetrics:
    """One-vs-rest precision/recall/F1 per class plus macro averages.

    Empty classes inside the label space contribute zeros to the macro
    mean; F1 is 0 when precision and recall are both 0.
    """
    preds, labels = _check_labels(preds, labels)
    if label_space is None:
        space = np.ones(N_CLASSES, dtype=bool)
    else:
        space = np.zeros(N_CLASSES, dtype=bool)
        space[np.asarray(list(label_space), dtype=int)] = True

    precision = np.zeros(N_CLASSES)
    recall = np.zeros(N_CLASSES)
    f1 = np.zeros(N_CLASSES)
    support = np.zeros(N_CLASSES, dtype=int)
    for c in range(N_CLASSES):
        tp = np.sum((preds == c) & (labels == c))
        fp = np.sum((preds == c) & (labels != c))
        fn = np.sum((preds != c) & (labels == c))
        support[c] = tp + fn
        precision[c] = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall[c] = tp / (tp + fn) if tp + fn > 0 else 0.0
        if precision[c] + recall[c] > 0:
            f1[c] = 2 * precision[c] * recall[c] / (precision[c] + recall[c])
    return ClassMetrics(
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        label_space=space,
        macro_precision=float(precision[space].mean()),
        macro_recall=float(recall[space].mean()),
        macro_f1=float(f1[space].mean()),
    )


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [9, 9] rows true, columns predicted
    normalized: np.ndarray  # rows sum to 1 (or 0 for empty classes)
    adjacent_error_fraction: float  # errors landing in a neighbour sector

    def to_dict(self):
        return {
            "counts": self.counts.tolist(),
            "normalized": self.normalized.tolist(),
            "adjacent_error_fraction": self.adjacent_error_fraction,
        }


def confusion_matrix(preds, labels) -> ConfusionMatrix:
    preds, labels = _check_labels(preds, labels)
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=int)
    np.add.at(counts, (labels, preds), 1)
    row_sums = counts.sum(axis=1, keepdims=True)
    normalized = np.divide(
        counts, row_sums, out=np.zeros_like(counts, dtype=float),
        where=row_sums > 0,
    )
    errors = preds != labels
    n_errors = int(errors.sum())
    if n_errors:
        adjacent = sum(
            ElevationClass(int(p)) in ADJACENCY[ElevationClass(int(t))]
            for p, t in zip(preds[errors], labels[errors])
        )
        adj_frac = adjacent / n_errors
    else:
        adj_frac = 0.0
    return ConfusionMatrix(counts, normalized, float(adj_frac))


@dataclass
class CrossMatrix:
    model_names: list
    dataset_names: list
    f1: np.ndarray  # [n_models, n_datasets]

    def to_dict(self):
        return {
            "model_names": self.model_names,
            "dataset_names": self.dataset_names,
            "f1": self.f1.tolist(),
        }


def cross_f1_matrix(models, test_sets, label_spaces=None) -> CrossMatrix:
    """Macro-F1 of every model on every test set.

    ``models`` is a list of (name, CnnModel); ``test_sets`` a list of
    (name, mags [n, 2, B], labels); cell (i, j) evaluates model i on set
    j.  With matching orders the diagonal is in-domain performance.
    """
    from .model import softmax  # local import avoids cycle at module load

    matrix = np.zeros((len(models), len(test_sets)))
    for j, (_, mags, labels) in enumerate(test_sets):
        space = label_spaces[j] if label_spaces is not None else None
        mags = np.asarray(mags, dtype=float)
        for i, (_, model) in enumerate(models):
            logits, _ = model.forward_batch(mags)
            preds = np.argmax(softmax(logits), axis=1)
            matrix[i, j] = class_metrics(preds, labels, space).macro_f1
    return CrossMatrix(
        [name for name, _ in models],
        [name for name, *_ in test_sets],
        matrix,
    )


def cross_summary(matrix: np.ndarray) -> dict:
    """In-domain mean plus off-diagonal best/median/average/worst.

    Per-row off-diagonal max/median/mean/min are averaged over rows.  For
    a 1x1 matrix the off-diagonal statistics are reported as None.
    """
    matrix = np.asarray(matrix, dtype=float)
    summary = {"in_domain_mean": float(np.mean(np.diag(matrix)))}
    if matrix.shape[0] < 2 or matrix.shape[1] < 2:
        summary.update(best=None, median=None, average=None, worst=None)
        return summary
    best, median, average, worst = [], [], [], []
    for i in range(matrix.shape[0]):
        off = np.delete(matrix[i], i) if i < matrix.shape[1] else matrix[i]
        best.append(off.max())
        median.append(np.median(off))
        average.append(off.mean())
        worst.append(off.min())
    summary.update(
        best=float(np.mean(best)),
        median=float(np.mean(median)),
        average=float(np.mean(average)),
        worst=float(np.mean(worst)),
    )
    return summary


def write_matrix_csv(cross: CrossMatrix, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["model"] + list(cross.dataset_names))
        for name, row in zip(cross.model_names, cross.f1):
            writer.writerow([name] + [format(v, ".17g") for v in row])


def read_matrix_csv(path) -> CrossMatrix:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        names, rows = [], []
        for rec in reader:
            names.append(rec[0])
            rows.append([float(x) for x in rec[1:]])
    return CrossMatrix(names, header[1:], np.array(rows))
