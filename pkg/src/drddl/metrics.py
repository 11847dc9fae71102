"""Confusion matrix, overall/average accuracy and Cohen's kappa."""

import csv
import io

import numpy as np

from .errors import DegenerateInput


def confusion(true, pred, C):
    """``C x C`` counts; entry ``(i, j)`` is true class ``i+1`` predicted as ``j+1``."""
    true = np.asarray(true, dtype=np.int64).ravel()
    pred = np.asarray(pred, dtype=np.int64).ravel()
    if true.shape != pred.shape:
        raise DegenerateInput(f"{true.size} true labels but {pred.size} predictions")
    if C < 1:
        raise DegenerateInput(f"need at least one class, got C={C}")
    cm = np.zeros((C, C), dtype=np.int64)
    if true.size == 0:
        return cm
    for name, v in (("true", true), ("predicted", pred)):
        if v.min() < 1 or v.max() > C:
            raise DegenerateInput(f"{name} labels must lie in 1..{C}, "
                                  f"found {v.min()}..{v.max()}")
    np.add.at(cm, (true - 1, pred - 1), 1)
    return cm


def _total(cm):
    cm = np.asarray(cm)
    total = int(cm.sum())
    if total <= 0:
        raise DegenerateInput("confusion matrix is empty")
    return cm, total


def oa(cm):
    cm, total = _total(cm)
    return float(np.trace(cm)) / total


def aa(cm):
    """Mean per-class recall over the classes that occur in the ground truth."""
    cm, _ = _total(cm)
    rows = cm.sum(axis=1)
    present = rows > 0
    return float(np.mean(np.diag(cm)[present] / rows[present]))


def kappa(cm):
    cm, total = _total(cm)
    p_o = float(np.trace(cm)) / total
    p_e = float(np.sum(cm.sum(axis=1).astype(np.float64) * cm.sum(axis=0))) / total ** 2
    if p_e == 1.0:
        if p_o == 1.0:
            return 1.0
        raise DegenerateInput("kappa undefined: expected agreement is 1")
    return (p_o - p_e) / (1.0 - p_e)


def per_class_recall(cm):
    cm = np.asarray(cm)
    rows = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(rows > 0, np.diag(cm) / np.maximum(rows, 1), np.nan)


def report_text(cm):
    return f"OA {oa(cm):.6f}\nAA {aa(cm):.6f}\nkappa {kappa(cm):.6f}\nsamples {int(np.sum(cm))}\n"


def report_csv(cm):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    w.writerow(["OA", repr(oa(cm))])
    w.writerow(["AA", repr(aa(cm))])
    w.writerow(["kappa", repr(kappa(cm))])
    w.writerow(["samples", int(np.sum(cm))])
    for c, r in enumerate(per_class_recall(cm), start=1):
        w.writerow([f"recall_{c}", "" if np.isnan(r) else repr(float(r))])
    return buf.getvalue()


def confusion_csv(cm):
    cm = np.asarray(cm)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\pred"] + [str(j) for j in range(1, cm.shape[1] + 1)])
    for i, row in enumerate(cm, start=1):
        w.writerow([str(i)] + [str(int(v)) for v in row])
    return buf.getvalue()
