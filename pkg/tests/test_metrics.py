import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowsentry.metrics import (
    BinaryCounts,
    ConfusionMatrix,
    classification_report,
    confusion_matrix,
    format_report,
    macro_auc,
    metric_suite,
    one_vs_rest,
    report_json,
    roc_auc,
    roc_csv,
    roc_curves,
    roc_svg,
)
from flowsentry.schema import LABELS
from oracles import direct_counts, pair_auc


# -- confusion matrix ---------------------------------------------------------


def test_all_correct_is_diagonal():
    labels = ["A", "B", "C"]
    cm = confusion_matrix(["A", "B", "C", "C"], ["A", "B", "C", "C"], labels)
    assert np.array_equal(cm.counts, np.diag([1, 1, 2]))
    assert np.trace(cm.counts) == 4


def test_three_sample_matrix():
    cm = confusion_matrix(["A", "A", "B"], ["A", "B", "B"], ["A", "B"])
    assert cm.counts.tolist() == [[1, 1], [0, 1]]
    assert one_vs_rest(cm, "A") == BinaryCounts(P=1, Q=1, R=0, S=1)


def test_single_sample():
    cm = confusion_matrix([3], [5])
    assert cm.total == 1 and cm.counts[3, 5] == 1


def test_confusion_errors():
    with pytest.raises(ValueError, match="length"):
        confusion_matrix([0, 1], [0])
    with pytest.raises(ValueError, match="unknown"):
        confusion_matrix(["WebDDoS"], ["BENIGN"])
    with pytest.raises(ValueError):
        confusion_matrix([], [])
    with pytest.raises(ValueError):
        confusion_matrix([13], [0])


def test_diagonal_has_no_errors():
    cm = ConfusionMatrix(np.diag(np.arange(1, 14)))
    for label in LABELS:
        bc = one_vs_rest(cm, label)
        assert bc.R == 0 and bc.S == 0


# -- metric suite -------------------------------------------------------------


def test_metric_spot_values():
    m = metric_suite(BinaryCounts(P=8, Q=9, R=1, S=2))
    assert m.accuracy == pytest.approx(0.85, abs=1e-12)
    assert m.recall == pytest.approx(0.8, abs=1e-12)
    assert m.precision == pytest.approx(8 / 9, abs=1e-12)
    assert m.f1 == pytest.approx(float(Fraction(16, 19)), abs=1e-12)
    assert round(m.precision, 6) == 0.888889 and round(m.f1, 6) == 0.842105
    assert m.undefined == frozenset()


def test_perfect_classifier():
    m = metric_suite(BinaryCounts(P=10, Q=0, R=0, S=0))
    assert (m.accuracy, m.recall, m.precision, m.f1) == (1.0, 1.0, 1.0, 1.0)


def test_zero_denominator_is_flagged():
    m = metric_suite(BinaryCounts(P=0, Q=5, R=0, S=3))
    assert m.precision == 0.0 and not m.is_defined("precision")
    assert m.recall == 0.0 and m.is_defined("recall")
    assert not m.is_defined("f1")
    m = metric_suite(BinaryCounts(P=0, Q=5, R=2, S=3))
    assert m.is_defined("precision") and "f1" in m.undefined


def test_metric_suite_needs_samples():
    with pytest.raises(ValueError):
        metric_suite(BinaryCounts(0, 0, 0, 0))


@given(st.lists(st.tuples(st.integers(0, 12), st.integers(0, 12)), min_size=1, max_size=300))
@settings(max_examples=200, deadline=None)
def test_partition_identity_and_oracle(pairs):
    actual = [a for a, _ in pairs]
    predicted = [p for _, p in pairs]
    cm = confusion_matrix(actual, predicted)
    for label in range(13):
        bc = one_vs_rest(cm, label)
        assert bc.P + bc.Q + bc.R + bc.S == len(pairs)
        assert (bc.P, bc.Q, bc.R, bc.S) == direct_counts(actual, predicted, label)


# -- report ---------------------------------------------------------------------


def test_diagonal_report():
    cm = ConfusionMatrix(np.diag([5] * 13))
    rep = classification_report(cm)
    assert rep.accuracy == 1.0
    assert all((r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0) for r in rep.rows)
    assert [r.label for r in rep.rows] == list(LABELS)


def test_report_two_decimal_rendering():
    # precision 0.99 / recall 1.00 / f1 1.00 after two-decimal rounding
    counts = np.zeros((13, 13), dtype=int)
    counts[9, 9] = 990
    counts[0, 9] = 8
    counts[0, 0] = 500
    rep = classification_report(ConfusionMatrix(counts))
    row = rep.row("Portmap")
    assert f"{row.precision:.2f} {row.recall:.2f} {row.f1:.2f}" == "0.99 1.00 1.00"
    assert "Portmap" in format_report(rep)


def test_overall_accuracy_vs_binary_accuracy():
    rng = np.random.default_rng(0)
    two = ConfusionMatrix(rng.integers(0, 20, size=(2, 2)), ["A", "B"])
    rep = classification_report(two)
    for label in ("A", "B"):
        assert metric_suite(one_vs_rest(two, label)).accuracy == pytest.approx(rep.accuracy, abs=1e-15)
    three = ConfusionMatrix([[5, 2, 1], [3, 6, 2], [0, 4, 7]], ["A", "B", "C"])
    rep3 = classification_report(three)
    assert rep3.accuracy == pytest.approx(18 / 30)
    per_label = [metric_suite(one_vs_rest(three, l)).accuracy for l in "ABC"]
    assert all(abs(a - rep3.accuracy) > 1e-3 for a in per_label)


def test_macro_skips_undefined():
    counts = np.zeros((3, 3), dtype=int)
    counts[0, 0], counts[1, 0] = 4, 4
    rep = classification_report(ConfusionMatrix(counts, ["A", "B", "C"]))
    assert rep.row("C").undefined == {"precision", "recall", "f1"}
    assert rep.macro["precision"] == pytest.approx(0.5)  # A: 0.5, B: 0 defined
    assert "0.00*" in format_report(rep)


def test_report_permutation_symmetry():
    rng = np.random.default_rng(5)
    counts = rng.integers(0, 30, size=(13, 13))
    perm = rng.permutation(13)
    labels = list(LABELS)
    rep = classification_report(ConfusionMatrix(counts, labels))
    rep_p = classification_report(
        ConfusionMatrix(counts[np.ix_(perm, perm)], [labels[i] for i in perm])
    )
    for i, row in enumerate(rep_p.rows):
        assert row == rep.rows[perm[i]]
    assert rep.accuracy == rep_p.accuracy


def test_report_json_round_trips():
    rep = classification_report(ConfusionMatrix(np.diag([2] * 13)))
    data = json.loads(report_json(rep, {"macro": 1.0}))
    assert data["accuracy"] == 1.0 and data["labels"]["Syn"]["support"] == 2


# -- ROC ------------------------------------------------------------------------


def test_perfect_scorer():
    curve = roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0], 1)
    assert curve.auc == 1.0
    assert (curve.fpr[0], curve.tpr[0]) == (0.0, 0.0)
    assert (curve.fpr[-1], curve.tpr[-1]) == (1.0, 1.0)


def test_constant_scorer():
    curve = roc_auc([0.3] * 6, [1, 0, 1, 0, 0, 1], 1)
    assert curve.fpr.tolist() == [0.0, 1.0] and curve.tpr.tolist() == [0.0, 1.0]
    assert curve.auc == 0.5


def test_hand_example():
    curve = roc_auc([0.9, 0.4, 0.6, 0.2], ["+", "-", "+", "-"], "+")
    assert curve.auc == 1.0 == pair_auc([0.9, 0.4, 0.6, 0.2], [True, False, True, False])


def test_roc_needs_both_classes():
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [1, 1], 1)


@given(
    st.lists(st.tuples(st.integers(0, 20), st.booleans()), min_size=2, max_size=200).filter(
        lambda xs: 0 < sum(p for _, p in xs) < len(xs)
    )
)
@settings(max_examples=200, deadline=None)
def test_auc_equals_pair_statistic(rows):
    scores = [s / 7 for s, _ in rows]
    positive = [p for _, p in rows]
    curve = roc_auc(scores, positive, True)
    assert abs(curve.auc - pair_auc(scores, positive)) <= 1e-12
    assert (np.diff(curve.fpr) >= 0).all() and (np.diff(curve.tpr) >= 0).all()


def test_roc_outputs():
    scores = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]])
    curves = roc_curves(scores, [0, 1, 1], [0, 1])
    assert set(curves) == {0, 1}
    assert 0 <= macro_auc(curves) <= 1
    text = roc_csv(curves[0])
    assert text.startswith("fpr,tpr\n0.0,0.0\n") and text.endswith("1.0,1.0\n")
    svg = roc_svg({"BENIGN": curves[0], "Syn": curves[1]})
    assert svg.count("<polyline") == 2


def test_roc_curves_skip_absent_classes():
    curves = roc_curves(np.ones((3, 3)), [0, 0, 1], [0, 1, 2])
    assert set(curves) == {0, 1}
