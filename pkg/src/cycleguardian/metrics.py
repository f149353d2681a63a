"""Scoring: the specificity/sensitivity pair and their mean, per-class
one-vs-rest statistics, abnormal-vs-normal confusion extracts, and pure
report writers (same predictions -> byte-identical artifacts)."""

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np

CLASS_ORDER = ("normal", "crackle", "wheeze", "both")


@dataclass
class ConfusionMatrix:
    """counts[i, j] = cycles of true class i predicted as class j."""

    counts: np.ndarray
    labels: tuple = CLASS_ORDER

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise ValueError("negative confusion counts")
        if self.counts.shape[0] != len(self.labels):
            raise ValueError("label count does not match matrix size")

    @classmethod
    def from_predictions(cls, true_idx, pred_idx, labels=CLASS_ORDER):
        c = len(labels)
        counts = np.zeros((c, c), dtype=np.int64)
        np.add.at(counts, (np.asarray(true_idx), np.asarray(pred_idx)), 1)
        return cls(counts=counts, labels=tuple(labels))

    @property
    def total(self):
        return int(self.counts.sum())


def icbhi_score(cm: ConfusionMatrix):
    """Sp = correct normals / all normals; Se = correctly classed abnormals
    over all abnormals; Score = (Sp + Se) / 2. Empty sides come back NaN."""
    c = cm.counts
    n_normal = c[0].sum()
    n_abnormal = c[1:].sum()
    if n_normal == 0:
        warnings.warn("no normal cycles; specificity undefined")
        sp = float("nan")
    else:
        sp = float(c[0, 0] / n_normal)
    if n_abnormal == 0:
        warnings.warn("no abnormal cycles; sensitivity undefined")
        se = float("nan")
    else:
        se = float(np.trace(c[1:, 1:]) / n_abnormal)
    return sp, se, (sp + se) / 2.0


def per_class_stats(cm: ConfusionMatrix):
    """One-vs-rest precision/recall/F1 per class; zero denominators yield 0
    and set a flag instead of NaN."""
    out = {}
    c = cm.counts
    for i, lab in enumerate(cm.labels):
        tp = int(c[i, i])
        fp = int(c[:, i].sum() - tp)
        fn = int(c[i, :].sum() - tp)
        flags = []
        if tp + fp == 0:
            precision = 0.0
            flags.append("no_predictions")
        else:
            precision = tp / (tp + fp)
        if tp + fn == 0:
            recall = 0.0
            flags.append("no_instances")
        else:
            recall = tp / (tp + fn)
        f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
        out[lab] = {"precision": precision, "recall": recall, "f1": f1, "flags": flags}
    return out


def pairwise_vs_normal(cm: ConfusionMatrix):
    """Restriction to {class X, normal}: TP = X->X, FP = normal->X,
    FN = X->normal, for each abnormal class X."""
    c = cm.counts
    out = {}
    for i, lab in enumerate(cm.labels):
        if i == 0:
            continue
        out[lab] = {"tp": int(c[i, i]), "fp": int(c[0, i]), "fn": int(c[i, 0])}
    return out


def build_report(cm: ConfusionMatrix):
    sp, se, score = icbhi_score(cm)
    return {
        "sp": sp,
        "se": se,
        "score": score,
        "total": cm.total,
        "labels": list(cm.labels),
        "confusion": cm.counts.tolist(),
        "per_class": per_class_stats(cm),
        "pairwise_vs_normal": pairwise_vs_normal(cm),
    }


def confusion_text(cm: ConfusionMatrix):
    width = max(max(len(l) for l in cm.labels), len(str(cm.counts.max())) if cm.total else 1) + 2
    lines = ["".rjust(width) + "".join(l.rjust(width) for l in cm.labels) + "  (pred)"]
    for i, lab in enumerate(cm.labels):
        lines.append(lab.rjust(width) + "".join(str(v).rjust(width) for v in cm.counts[i]))
    return "\n".join(lines) + "\n"


def write_report(out_dir, cm: ConfusionMatrix):
    """report.json, confusion.csv, confusion.txt under out_dir."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w") as f:
        json.dump(build_report(cm), f, indent=2, sort_keys=True, allow_nan=True)
        f.write("\n")
    with open(out / "confusion.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["true\\pred"] + list(cm.labels))
        for i, lab in enumerate(cm.labels):
            w.writerow([lab] + cm.counts[i].tolist())
    with open(out / "confusion.txt", "w") as f:
        f.write(confusion_text(cm))
    return out / "report.json"


PRED_HEADER = ("id", "true", "pred", "p_normal", "p_crackle", "p_wheeze", "p_both")


def write_predictions(path, rows, labels=CLASS_ORDER):
    """rows: iterable of (cycle_id, true_label, pred_label, probs vector)."""
    header = ("id", "true", "pred") + tuple(f"p_{l}" for l in labels)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for cid, true_lab, pred_lab, probs in rows:
            w.writerow([cid, true_lab, pred_lab] + [f"{p:.6f}" for p in probs])


def read_predictions(path):
    """Returns (rows, labels) where rows are dicts and labels come from the
    probability column names."""
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        if header[:3] != ["id", "true", "pred"]:
            raise ValueError(f"{path}: unexpected predictions header {header}")
        labels = tuple(h[2:] for h in header[3:])
        rows = []
        for rec in r:
            rows.append(
                {
                    "id": rec[0],
                    "true": rec[1],
                    "pred": rec[2],
                    "probs": [float(x) for x in rec[3:]],
                }
            )
    return rows, labels


def confusion_from_predictions(path):
    rows, labels = read_predictions(path)
    idx = {lab: i for i, lab in enumerate(labels)}
    true_i = [idx[r["true"]] for r in rows]
    pred_i = [idx[r["pred"]] for r in rows]
    return ConfusionMatrix.from_predictions(true_i, pred_i, labels)
