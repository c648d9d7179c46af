"""Support-weighted classification scores and representation-geometry diagnostics."""
from __future__ import annotations

from dataclasses import dataclass, field
import io
import json

import numpy as np


@dataclass
class EvalReport:
    weighted_f1: float
    weighted_recall: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    confusion: list[list[int]]
    zero_division: int = 0

    def to_dict(self) -> dict:
        return {
            "weighted_f1": self.weighted_f1,
            "weighted_recall": self.weighted_recall,
            "per_class": [
                {"class": k, "precision": p, "recall": r, "f1": f, "support": s}
                for k, (p, r, f, s) in enumerate(zip(self.precision, self.recall, self.f1, self.support))
            ],
            "confusion": self.confusion,
            "zero_division": self.zero_division,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def confusion_csv(self) -> str:
        k = len(self.confusion)
        buf = io.StringIO()
        buf.write("true\\pred," + ",".join(str(j) for j in range(k)) + "\n")
        for i, row in enumerate(self.confusion):
            buf.write(f"{i}," + ",".join(str(v) for v in row) + "\n")
        return buf.getvalue()


def confusion_matrix(y_true, y_pred, num_classes: int | None = None) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    k = num_classes or int(max(y_true.max(), y_pred.max())) + 1
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def weighted_f1(y_true, y_pred, num_classes: int | None = None) -> EvalReport:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred differ in length")
    if y_true.size == 0:
        raise ValueError("cannot score an empty prediction set")
    if y_true.min() < 0 or y_pred.min() < 0:
        raise ValueError("labels must be non-negative")
    cm = confusion_matrix(y_true, y_pred, num_classes)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    zero_div = 0
    prec = np.zeros(len(tp))
    rec = np.zeros(len(tp))
    f1 = np.zeros(len(tp))
    for k in range(len(tp)):
        if predicted[k]:
            prec[k] = tp[k] / predicted[k]
        if support[k]:
            rec[k] = tp[k] / support[k]
        if prec[k] + rec[k] > 0:
            f1[k] = 2 * prec[k] * rec[k] / (prec[k] + rec[k])
        elif support[k]:
            zero_div += 1
    w = support / support.sum()
    return EvalReport(
        weighted_f1=float(w @ f1),
        weighted_recall=float(w @ rec),
        precision=prec.tolist(),
        recall=rec.tolist(),
        f1=f1.tolist(),
        support=support.tolist(),
        confusion=cm.tolist(),
        zero_division=zero_div,
    )


@dataclass
class GeometryReport:
    mean_intra: float
    mean_inter: float
    margin: float
    pair_matrix: list[list[float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mean_intra": self.mean_intra,
            "mean_inter": self.mean_inter,
            "margin": self.margin,
            "pair_matrix": [[None if np.isnan(v) else v for v in row] for row in self.pair_matrix],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def geometry(c, y, eps: float = 1e-8) -> GeometryReport:
    """Mean cosine similarity over same-class and cross-class pairs (i < j).

    ``pair_matrix[a][b]`` averages the pairs with one member in class ``a``
    and the other in class ``b``; NaN where no such pair exists.
    """
    c = np.asarray(c, dtype=np.float64)
    y = np.asarray(y)
    if len(y) < 2 or len(np.unique(y)) < 2:
        raise ValueError("geometry needs at least two points from two classes")
    unit = c / np.maximum(np.linalg.norm(c, axis=1, keepdims=True), eps)
    sims = np.clip(unit @ unit.T, -1.0, 1.0)
    iu, ju = np.triu_indices(len(y), k=1)
    pair_sims = sims[iu, ju]
    same = y[iu] == y[ju]
    intra = float(pair_sims[same].mean()) if same.any() else float("nan")
    inter = float(pair_sims[~same].mean())
    classes = np.unique(y)
    mat = np.full((len(classes), len(classes)), np.nan)
    for a_i, a in enumerate(classes):
        for b_i, b in enumerate(classes):
            sel = ((y[iu] == a) & (y[ju] == b)) | ((y[iu] == b) & (y[ju] == a))
            if sel.any():
                mat[a_i, b_i] = pair_sims[sel].mean()
    return GeometryReport(intra, inter, intra - inter, mat.tolist())
