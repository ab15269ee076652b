import numpy as np
import pytest

from jiadf.errors import DimensionError, UndefinedMetricError
from jiadf.metrics import (
    ConfusionCounts,
    PANEL_ROWS,
    PredictionSet,
    average_precision,
    confusion_counts,
    ece,
    evaluate_predictions,
    macro_f1,
    partial_auc_band_area,
    partial_auc_sens80,
    per_class_metrics,
    roc_auc_ovr,
)


def _pairwise_auc(scores, labels):
    pos = scores[labels]
    neg = scores[~labels]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def _band_area_oracle(scores, labels, grid=200_000):
    """Integrate 1 − FPR(TPR) over TPR ∈ [0.8, 1] on a midpoint grid along the ROC polyline"""
    thresholds = np.unique(scores)[::-1]
    n_pos, n_neg = labels.sum(), (~labels).sum()
    points = [(0.0, 0.0)]
    for t in thresholds:
        points.append((np.sum(scores[~labels] >= t) / n_neg, np.sum(scores[labels] >= t) / n_pos))
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    t_mid = 0.8 + (np.arange(grid) + 0.5) * (0.2 / grid)
    # last point below t and first point at or above it
    i = np.searchsorted(tpr, t_mid, side="left") - 1
    frac = (t_mid - tpr[i]) / (tpr[i + 1] - tpr[i])
    values = 1.0 - (fpr[i] + frac * (fpr[i + 1] - fpr[i]))
    return values.mean() * 0.2


def _ap_oracle(scores, labels):
    total = 0.0
    prev_recall = 0.0
    for t in np.unique(scores)[::-1]:
        selected = scores >= t
        recall = np.sum(selected & labels) / labels.sum()
        precision = np.sum(selected & labels) / selected.sum()
        total += (recall - prev_recall) * precision
        prev_recall = recall
    return total


def test_confusion_counts_oracle():
    preds = PredictionSet(y_true=[0, 0, 1, 1, 2, 2, 2],
                          posteriors=np.eye(3)[[0, 1, 1, 2, 2, 0, 2]])
    assert confusion_counts(preds, 0) == ConfusionCounts(tp=1, fp=1, fn=1, tn=4)
    assert confusion_counts(preds, 2) == ConfusionCounts(tp=2, fp=1, fn=1, tn=3)
    for k in range(3):
        assert sum(confusion_counts(preds, k)) == 7


def test_per_class_metric_values():
    m = per_class_metrics(ConfusionCounts(tp=2, fp=1, fn=2, tn=5))
    assert m.accuracy == pytest.approx(0.7)
    assert m.sensitivity == pytest.approx(0.5)
    assert m.specificity == pytest.approx(5 / 6)
    assert m.ppv == pytest.approx(2 / 3)
    assert m.npv == pytest.approx(5 / 7)
    assert m.dice == pytest.approx(4 / 7)
    # Dice is the harmonic mean of PPV and sensitivity
    assert m.dice == pytest.approx(2 * m.ppv * m.sensitivity / (m.ppv + m.sensitivity))
    assert m.degenerate == ()


def test_zero_denominators_are_flagged():
    m = per_class_metrics(ConfusionCounts(tp=0, fp=0, fn=0, tn=10))
    assert m.sensitivity == 0.0 and m.ppv == 0.0 and m.dice == 0.0
    assert set(m.degenerate) == {"sensitivity", "ppv", "dice"}
    assert m.specificity == 1.0


def test_auc_reference_cases():
    labels = np.array([1, 1, 0, 0], dtype=bool)
    assert roc_auc_ovr([0.9, 0.8, 0.2, 0.1], labels) == 1.0
    assert roc_auc_ovr([0.5, 0.5, 0.5, 0.5], labels) == 0.5
    assert roc_auc_ovr([0.1, 0.2, 0.8, 0.9], labels) == 0.0


def test_auc_matches_pairwise_count(rng):
    scores = np.round(rng.random(60), 1)
    labels = rng.random(60) < 0.4
    auc = roc_auc_ovr(scores, labels)
    assert auc == pytest.approx(_pairwise_auc(scores, labels), abs=1e-12)
    # strictly increasing transform keeps the ranking
    assert roc_auc_ovr(np.exp(3 * scores), labels) == pytest.approx(auc, abs=1e-12)
    assert roc_auc_ovr(-scores, labels) == pytest.approx(1.0 - auc, abs=1e-12)


def test_auc_single_class_is_undefined():
    with pytest.raises(UndefinedMetricError):
        roc_auc_ovr([0.1, 0.2], [True, True])


def test_partial_auc_reference_cases():
    labels = np.array([1, 1, 1, 0, 0, 0], dtype=bool)
    assert partial_auc_sens80([0.9, 0.8, 0.7, 0.3, 0.2, 0.1], labels) == pytest.approx(1.0, abs=1e-12)
    assert partial_auc_band_area([0.9, 0.8, 0.7, 0.3, 0.2, 0.1], labels) == pytest.approx(0.2, abs=1e-12)
    assert partial_auc_sens80([0.5] * 6, labels) == pytest.approx(0.5, abs=1e-12)
    # worst ranking: zero band area, standardized below chance
    assert partial_auc_band_area([0.1, 0.2, 0.3, 0.7, 0.8, 0.9], labels) == pytest.approx(0.0, abs=1e-12)
    assert partial_auc_sens80([0.1, 0.2, 0.3, 0.7, 0.8, 0.9], labels) == pytest.approx(4.0 / 9.0, abs=1e-12)


def test_partial_auc_matches_grid_oracle(rng):
    scores = np.round(rng.random(80), 2)
    labels = rng.random(80) < 0.5
    assert partial_auc_band_area(scores, labels) == pytest.approx(_band_area_oracle(scores, labels), abs=1e-6)


def test_average_precision_cases(rng):
    labels = np.array([1, 0, 1, 0, 0], dtype=bool)
    assert average_precision([0.9, 0.1, 0.8, 0.2, 0.3], labels) == pytest.approx(1.0)
    # constant scores: precision is the positive rate
    assert average_precision([0.4] * 5, labels) == pytest.approx(0.4)

    scores = np.round(rng.random(50), 1)
    labels = rng.random(50) < 0.3
    assert average_precision(scores, labels) == pytest.approx(_ap_oracle(scores, labels), abs=1e-12)


def test_macro_f1():
    # one class perfectly recovered, the other two swapped
    preds = PredictionSet(y_true=[0, 1, 2], posteriors=np.eye(3)[[0, 2, 1]])
    assert macro_f1(preds) == pytest.approx(1.0 / 3.0)


def test_ece_cases():
    perfect = PredictionSet(y_true=[0, 1], posteriors=[[1.0, 0.0], [0.0, 1.0]])
    value, bins = ece(perfect)
    assert value == 0.0
    assert len(bins) == 15
    assert bins[-1].count == 2 and bins[-1].upper == 1.0

    overconfident = PredictionSet(y_true=[1, 1], posteriors=[[0.9, 0.1], [0.9, 0.1]])
    assert ece(overconfident)[0] == pytest.approx(0.9)


def test_ece_matches_binned_oracle(rng):
    logits = rng.normal(0.0, 2.0, (200, 4))
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    y = rng.integers(0, 4, 200)
    preds = PredictionSet(y_true=y, posteriors=p)
    value, bins = ece(preds)

    conf = p.max(axis=1)
    correct = p.argmax(axis=1) == y
    expected = 0.0
    for b in range(15):
        members = (conf > b / 15) & (conf <= (b + 1) / 15)
        if members.any():
            expected += members.mean() * abs(correct[members].mean() - conf[members].mean())
        assert bins[b].count == members.sum()
    assert value == pytest.approx(expected, abs=1e-12)


def test_prediction_set_validation():
    with pytest.raises(DimensionError):
        PredictionSet(y_true=[0], posteriors=[[0.7, 0.7]])
    with pytest.raises(DimensionError):
        PredictionSet(y_true=[0, 1], posteriors=[[0.5, 0.5]])


def test_panel_layout_and_ranges(rng):
    logits = rng.normal(0.0, 1.5, (120, 3))
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    y = rng.integers(0, 3, 120)
    report = evaluate_predictions(PredictionSet(y_true=y, posteriors=p), ["a", "b", "c"])

    panel = report.panel()
    assert list(panel) == [name for name, _ in PANEL_ROWS]
    for row in panel.values():
        assert list(row) == ["Mean", "a", "b", "c"]
        assert all(0.0 <= v <= 1.0 for v in row.values())
    for k in range(3):
        dice, ppv, sens = (report.per_class[key][k] for key in ("dice", "ppv", "sensitivity"))
        if ppv + sens > 0:
            assert dice == pytest.approx(2 * ppv * sens / (ppv + sens))
    assert report.macro_f1 == pytest.approx(np.mean(report.per_class["dice"]))
    assert report.n_samples == 120
    print("✓ Metric panel complete")


def test_absent_class_is_skipped_in_macro_auc(caplog):
    p = np.array([[0.8, 0.1, 0.1], [0.3, 0.6, 0.1], [0.6, 0.3, 0.1], [0.2, 0.7, 0.1]])
    report = evaluate_predictions(PredictionSet(y_true=[0, 1, 0, 1], posteriors=p))
    assert report.per_class["auc"][2] is None
    assert "auc" in report.undefined["class_2"]
    assert report.macro["auc"] == pytest.approx(1.0)
    assert "undefined" in caplog.text
