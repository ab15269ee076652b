"""
Evaluation metrics for multi-class posteriors.

Per-class one-vs-rest panel (AUC, partial AUC above 80% sensitivity, average
precision, accuracy, sensitivity, specificity, Dice, PPV, NPV) with macro
means, macro-F1 for model selection, and expected calibration error with
reliability bins.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import average_precision_score, confusion_matrix, roc_auc_score, roc_curve

from .errors import DimensionError, LabelError, UndefinedMetricError

logger = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-6
ECE_BINS = 15

# Sensitivity band of the partial AUC and the band areas of a perfect and a chance classifier
SENS_FLOOR = 0.8
BAND_AREA_MAX = 1.0 - SENS_FLOOR
BAND_AREA_CHANCE = 0.5 * (1.0 - SENS_FLOOR) ** 2

# Row names of the metric panel, in table order, and the MetricsReport field behind each
PANEL_ROWS = (
    ("AUC", "auc"),
    ("AUC, Sens > 80%", "auc_sens80"),
    ("Average Precision", "average_precision"),
    ("Accuracy", "accuracy"),
    ("Sensitivity", "sensitivity"),
    ("Specificity", "specificity"),
    ("Dice Coefficient", "dice"),
    ("PPV", "ppv"),
    ("NPV", "npv"),
)
COUNT_METRICS = ("accuracy", "sensitivity", "specificity", "dice", "ppv", "npv")
RANK_METRICS = ("auc", "auc_sens80", "auc_sens80_raw", "average_precision")


@dataclass
class PredictionSet:
    """True labels, posteriors (n, N) and argmax predictions"""
    y_true: np.ndarray
    posteriors: np.ndarray
    y_pred: Optional[np.ndarray] = None

    def __post_init__(self):
        self.y_true = np.asarray(self.y_true, dtype=np.int64).reshape(-1)
        self.posteriors = np.asarray(self.posteriors, dtype=np.float64)
        if self.posteriors.ndim != 2 or self.posteriors.shape[0] == 0:
            raise DimensionError(f"posteriors must be a non-empty (n, N) array, got shape {self.posteriors.shape}")
        if self.posteriors.shape[0] != self.y_true.shape[0]:
            raise DimensionError(f"{self.y_true.shape[0]} labels for {self.posteriors.shape[0]} posteriors")
        if np.any(self.posteriors < -SIMPLEX_TOL) or np.any(
                np.abs(self.posteriors.sum(axis=1) - 1.0) > SIMPLEX_TOL):
            raise DimensionError("posteriors are not on the probability simplex")
        if np.any(self.y_true < 0) or np.any(self.y_true >= self.n_classes):
            raise LabelError(f"labels must lie in [0, {self.n_classes})")
        if self.y_pred is None:
            self.y_pred = np.argmax(self.posteriors, axis=1)
        else:
            self.y_pred = np.asarray(self.y_pred, dtype=np.int64).reshape(-1)

    @property
    def n_classes(self) -> int:
        return self.posteriors.shape[1]

    def __len__(self) -> int:
        return self.y_true.shape[0]


class ConfusionCounts(NamedTuple):
    tp: int
    fp: int
    fn: int
    tn: int


@dataclass
class ClassMetrics:
    accuracy: float
    sensitivity: float
    specificity: float
    dice: float
    ppv: float
    npv: float
    # Metrics whose denominator was zero; reported as 0
    degenerate: Tuple[str, ...] = ()


@dataclass
class ReliabilityBin:
    lower: float
    upper: float
    count: int
    confidence: float
    accuracy: float


def confusion_counts(preds: PredictionSet, cls: int) -> ConfusionCounts:
    """One-vs-rest counts for class `cls` from the argmax predictions"""
    matrix = confusion_matrix(preds.y_true, preds.y_pred, labels=list(range(preds.n_classes)))
    return _counts_from_matrix(matrix, cls)


def _counts_from_matrix(matrix: np.ndarray, cls: int) -> ConfusionCounts:
    tp = int(matrix[cls, cls])
    fn = int(matrix[cls, :].sum()) - tp
    fp = int(matrix[:, cls].sum()) - tp
    tn = int(matrix.sum()) - tp - fn - fp
    return ConfusionCounts(tp, fp, fn, tn)


def _ratio(numerator: int, denominator: int) -> Optional[float]:
    return None if denominator == 0 else numerator / denominator


def per_class_metrics(counts: ConfusionCounts) -> ClassMetrics:
    """Count-based metrics; a 0/0 cell reports 0 and is listed in `degenerate`"""
    tp, fp, fn, tn = counts
    total = tp + fp + fn + tn
    if total < 1:
        raise DimensionError("per_class_metrics needs at least one sample")
    values = {
        "accuracy": _ratio(tp + tn, total),
        "sensitivity": _ratio(tp, tp + fn),
        "specificity": _ratio(tn, tn + fp),
        "dice": _ratio(2 * tp, 2 * tp + fp + fn),
        "ppv": _ratio(tp, tp + fp),
        "npv": _ratio(tn, tn + fn),
    }
    degenerate = tuple(name for name, value in values.items() if value is None)
    return ClassMetrics(**{k: (0.0 if v is None else v) for k, v in values.items()}, degenerate=degenerate)


def _binary_inputs(scores, labels) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(bool)
    if scores.shape != labels.shape:
        raise DimensionError(f"{scores.shape[0]} scores for {labels.shape[0]} labels")
    return scores, labels


def _require_both_classes(labels: np.ndarray, what: str) -> None:
    positives = int(labels.sum())
    if positives == 0 or positives == labels.shape[0]:
        raise UndefinedMetricError(f"{what} is undefined when only one class is present")


def roc_auc_ovr(scores, labels) -> float:
    """Mann–Whitney AUC: P(score_pos > score_neg) + 0.5·P(tie)"""
    scores, labels = _binary_inputs(scores, labels)
    _require_both_classes(labels, "AUC")
    return float(roc_auc_score(labels, scores))


def partial_auc_band_area(scores, labels) -> float:
    """∫ (1 − FPR) dTPR over TPR ∈ [0.8, 1] along the empirical ROC polyline"""
    scores, labels = _binary_inputs(scores, labels)
    _require_both_classes(labels, "partial AUC")
    fpr, tpr, _ = roc_curve(labels, scores, drop_intermediate=False)
    fpr = np.concatenate([[0.0], fpr])
    tpr = np.concatenate([[0.0], tpr])

    area = 0.0
    for i in range(len(tpr) - 1):
        t0, t1 = tpr[i], tpr[i + 1]
        if t1 <= t0 or t1 <= SENS_FLOOR:
            continue
        lo = max(t0, SENS_FLOOR)
        slope = (fpr[i + 1] - fpr[i]) / (t1 - t0)
        f_lo = fpr[i] + slope * (lo - t0)
        area += (t1 - lo) * (1.0 - 0.5 * (f_lo + fpr[i + 1]))
    return area


def partial_auc_sens80(scores, labels) -> float:
    """
    Partial AUC over the 80–100% sensitivity band, standardized so that a
    perfect ranking scores 1 and a chance ranking 0.5; clamped to [0, 1].
    """
    area = partial_auc_band_area(scores, labels)
    standardized = 0.5 * (1.0 + (area - BAND_AREA_CHANCE) / (BAND_AREA_MAX - BAND_AREA_CHANCE))
    return float(min(1.0, max(0.0, standardized)))


def average_precision(scores, labels) -> float:
    """Σ_k (R_k − R_{k−1})·P_k over descending distinct-score thresholds"""
    scores, labels = _binary_inputs(scores, labels)
    if not labels.any():
        raise UndefinedMetricError("average precision is undefined without positive samples")
    return float(average_precision_score(labels, scores))


def macro_f1(preds: PredictionSet) -> float:
    """Mean per-class Dice (F1); a class absent from truth and predictions scores 0"""
    matrix = confusion_matrix(preds.y_true, preds.y_pred, labels=list(range(preds.n_classes)))
    dice = [per_class_metrics(_counts_from_matrix(matrix, c)).dice for c in range(preds.n_classes)]
    return float(np.mean(dice))


def ece(preds: PredictionSet, bins: int = ECE_BINS) -> Tuple[float, List[ReliabilityBin]]:
    """
    Expected calibration error over equal-width confidence bins.

    Bin b covers (b/bins, (b+1)/bins]. Every bin is returned; empty bins carry
    count 0 and do not contribute.
    """
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    confidence = preds.posteriors.max(axis=1)
    correct = (preds.y_pred == preds.y_true).astype(np.float64)
    index = np.clip(np.ceil(confidence * bins).astype(np.int64) - 1, 0, bins - 1)

    n = len(preds)
    total = 0.0
    reliability = []
    for b in range(bins):
        members = index == b
        count = int(members.sum())
        conf_b = float(confidence[members].mean()) if count else 0.0
        acc_b = float(correct[members].mean()) if count else 0.0
        if count:
            total += (count / n) * abs(acc_b - conf_b)
        reliability.append(ReliabilityBin(b / bins, (b + 1) / bins, count, conf_b, acc_b))
    return float(total), reliability


@dataclass
class MetricsReport:
    """Per-class panel, macro means, calibration and the headline summaries"""
    class_names: List[str]
    per_class: Dict[str, List[Optional[float]]] = field(default_factory=dict)
    macro: Dict[str, Optional[float]] = field(default_factory=dict)
    overall_accuracy: float = 0.0
    macro_f1: float = 0.0
    macro_ppv: float = 0.0
    macro_ap: Optional[float] = None
    ece: float = 0.0
    reliability: List[ReliabilityBin] = field(default_factory=list)
    degenerate: Dict[str, List[str]] = field(default_factory=dict)
    undefined: Dict[str, List[str]] = field(default_factory=dict)
    n_samples: int = 0

    def panel(self) -> Dict[str, Dict[str, Optional[float]]]:
        """Rows keyed by table name; each maps 'Mean' and every class name to a value"""
        rows = {}
        for row_name, key in PANEL_ROWS:
            row = {"Mean": self.macro.get(key)}
            row.update(zip(self.class_names, self.per_class.get(key, [])))
            rows[row_name] = row
        return rows


def _mean_defined(values: Sequence[Optional[float]]) -> Optional[float]:
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else None


def evaluate_predictions(preds: PredictionSet, class_names: Optional[Sequence[str]] = None,
                         bins: int = ECE_BINS) -> MetricsReport:
    """Compute the full panel for a prediction set"""
    n_classes = preds.n_classes
    names = list(class_names) if class_names is not None else [f"class_{k}" for k in range(n_classes)]
    if len(names) != n_classes:
        raise DimensionError(f"{len(names)} class names for {n_classes} classes")

    report = MetricsReport(class_names=names, n_samples=len(preds))
    columns: Dict[str, List[Optional[float]]] = {key: [] for key in COUNT_METRICS + RANK_METRICS}
    matrix = confusion_matrix(preds.y_true, preds.y_pred, labels=list(range(n_classes)))

    for k, name in enumerate(names):
        counts = per_class_metrics(_counts_from_matrix(matrix, k))
        for key in COUNT_METRICS:
            columns[key].append(getattr(counts, key))
        if counts.degenerate:
            report.degenerate[name] = list(counts.degenerate)

        scores = preds.posteriors[:, k]
        labels = preds.y_true == k
        for key, fn in (("auc", roc_auc_ovr), ("auc_sens80", partial_auc_sens80),
                        ("auc_sens80_raw", lambda s, l: partial_auc_band_area(s, l) / BAND_AREA_MAX),
                        ("average_precision", average_precision)):
            try:
                columns[key].append(float(fn(scores, labels)))
            except UndefinedMetricError:
                columns[key].append(None)
                report.undefined.setdefault(name, []).append(key)

    for name, keys in report.undefined.items():
        logger.warning(f"Class {name}: {', '.join(keys)} undefined (single class present); skipped in macro mean")
    if report.degenerate:
        logger.warning(f"Zero-denominator metric cells reported as 0: {report.degenerate}")

    report.per_class = columns
    report.macro = {key: _mean_defined(values) for key, values in columns.items()}
    report.overall_accuracy = float(np.mean(preds.y_pred == preds.y_true))
    report.macro_f1 = float(np.mean(columns["dice"]))
    report.macro_ppv = float(np.mean(columns["ppv"]))
    report.macro_ap = report.macro["average_precision"]
    report.ece, report.reliability = ece(preds, bins)
    return report
