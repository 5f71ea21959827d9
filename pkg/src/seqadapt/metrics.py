"""Classification metrics over k x k confusion matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    pass


def confusion_matrix(true_labels, predicted_labels, n_classes: int) -> np.ndarray:
    """Count matrix with entry [i][j] = true class i predicted as j."""
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape:
        raise MetricError(f"label arrays differ: {t.shape} vs {p.shape}")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def _validated(cm) -> np.ndarray:
    cm = np.asarray(cm, dtype=np.int64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise MetricError(f"confusion matrix must be square, got {cm.shape}")
    if (cm < 0).any():
        raise MetricError("confusion matrix has negative counts")
    if cm.sum() == 0:
        raise MetricError("empty confusion matrix")
    return cm


def accuracy(cm) -> float:
    cm = _validated(cm)
    return float(np.trace(cm)) / float(cm.sum())


def macro_f1(cm) -> float:
    """Unweighted mean of per-class F1; any zero denominator contributes 0."""
    cm = _validated(cm)
    f1s = []
    for c in range(cm.shape[0]):
        tp = cm[c, c]
        pred = cm[:, c].sum()
        actual = cm[c, :].sum()
        precision = tp / pred if pred > 0 else 0.0
        recall = tp / actual if actual > 0 else 0.0
        if precision + recall > 0:
            f1s.append(2.0 * precision * recall / (precision + recall))
        else:
            f1s.append(0.0)
    return float(np.mean(f1s))


def cohens_kappa(cm) -> float:
    """Chance-corrected agreement (p_o - p_e) / (1 - p_e)."""
    cm = _validated(cm)
    total = int(cm.sum())
    rows = cm.sum(axis=1)
    cols = cm.sum(axis=0)
    pe_num = int(np.dot(rows, cols))   # exact integer arithmetic
    if pe_num == total * total:
        raise MetricError("kappa undefined: expected agreement is 1 "
                          "(all mass in a single cell)")
    p_o = float(np.trace(cm)) / total
    p_e = pe_num / float(total * total)
    return (p_o - p_e) / (1.0 - p_e)


@dataclass
class MetricsRecord:
    accuracy: float
    macro_f1: float
    kappa: float
    n: int

    def as_dict(self) -> dict[str, float]:
        return {"accuracy": self.accuracy, "macro_f1": self.macro_f1,
                "kappa": self.kappa, "n": self.n}


def compute_all(cm) -> MetricsRecord:
    cm = _validated(cm)
    return MetricsRecord(accuracy=accuracy(cm), macro_f1=macro_f1(cm),
                         kappa=cohens_kappa(cm), n=int(cm.sum()))


def format_report(record: MetricsRecord) -> str:
    lines = [f"{k}={v!r}" for k, v in record.as_dict().items()]
    return "\n".join(lines) + "\n"


def csv_row(record: MetricsRecord) -> str:
    d = record.as_dict()
    return ",".join(repr(d[k]) for k in ("accuracy", "macro_f1", "kappa", "n"))
