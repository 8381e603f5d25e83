import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from alarmdet.metrics import (ClassResult, MetricCounts, ToleranceConfig, confusion_matrix, frame_metrics,
                              match_periods, pb_err, period_metrics)


def test_frame_metrics_perfect():
    y = np.array([0, 1, 1, 0, 1], bool)
    mr, far, c = frame_metrics(y, y)
    assert mr == 0 and far == 0
    assert (c.n_a, c.n_na) == (3, 2)


def test_frame_metrics_all_negative():
    ref = np.zeros(100, bool)
    ref[:10] = True
    mr, far, _ = frame_metrics(np.zeros(100, bool), ref)
    assert mr == 1.0 and far == 0.0


def test_frame_metrics_counts():
    ref = np.zeros(100, bool)
    ref[:10] = True
    pred = ref.copy()
    pred[:2] = False
    pred[20:29] = True
    mr, far, c = frame_metrics(pred, ref)
    assert mr == pytest.approx(0.2)
    assert far == pytest.approx(0.1)
    assert c.n_m + int(np.sum(pred & ref)) == c.n_a
    assert c.n_fa + int(np.sum(~pred & ~ref)) == c.n_na


def test_frame_metrics_undefined_and_mismatch():
    mr, far, _ = frame_metrics(np.zeros(5, bool), np.zeros(5, bool))
    assert mr is None and far == 0
    with pytest.raises(ValueError):
        frame_metrics(np.zeros(4, bool), np.zeros(5, bool))


def test_pb_err_formula():
    assert pb_err(2, 1, 1) == pytest.approx(1 - 4 / 6)
    assert pb_err(0, 0, 0) is None
    assert pb_err(5, 0, 0) == 0.0


def test_period_tolerance_boundary():
    period = 1.0
    ok = period_metrics([10.48], [10.0], period, 0.49)[1]
    assert (ok.n_c, ok.n_fa_p, ok.n_m_p) == (1, 0, 0)
    bad = period_metrics([10.50], [10.0], period, 0.49)[1]
    assert (bad.n_c, bad.n_fa_p, bad.n_m_p) == (0, 1, 1)


def test_matching_is_one_to_one():
    # two detections near one reference: only one is credited
    e, c = period_metrics([1.0, 1.1], [1.05], 1.0)
    assert (c.n_c, c.n_fa_p, c.n_m_p) == (1, 1, 0)
    # nearest pair wins when a detection could serve two references
    pairs = match_periods([2.0], [1.6, 2.1], 0.45)
    assert pairs == [(1, 0)]


def test_tolerance_config_bounds():
    with pytest.raises(ValueError):
        ToleranceConfig(0.5)
    with pytest.raises(ValueError):
        ToleranceConfig(0.0)


onsets = st.lists(st.floats(0, 50, allow_nan=False), max_size=12)


@settings(max_examples=200, deadline=None)
@given(onsets, onsets, st.floats(0.3, 3.0))
def test_pb_err_equals_one_minus_f1(det, ref, period):
    det, ref = sorted(det), sorted(ref)
    e, c = period_metrics(det, ref, period)
    if not det and not ref:
        assert e is None
        return
    precision = c.n_c / len(det) if det else 0.0
    recall = c.n_c / len(ref) if ref else 0.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    assert e == pytest.approx(1 - f1, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(onsets, onsets, st.floats(0.3, 3.0), st.floats(-20, 20))
def test_period_metrics_shift_invariant(det, ref, period, shift):
    # shifts by a multiple of 1/8 are exact in binary floating point
    shift = round(shift * 8) / 8
    a = period_metrics(sorted(det), sorted(ref), period)[1]
    b = period_metrics([d + shift for d in sorted(det)], [r + shift for r in sorted(ref)], period)[1]
    assert a == b


@settings(max_examples=200, deadline=None)
@given(onsets, onsets, st.floats(0.3, 3.0), st.floats(0.01, 0.49), st.floats(0.01, 0.49))
def test_shrinking_tolerance_never_adds_matches(det, ref, period, t1, t2):
    lo, hi = sorted((t1, t2))
    n_lo = period_metrics(sorted(det), sorted(ref), period, lo)[1].n_c
    n_hi = period_metrics(sorted(det), sorted(ref), period, hi)[1].n_c
    assert n_lo <= n_hi


def test_counts_add_then_ratio():
    a = MetricCounts(n_m=1, n_a=10, n_fa=0, n_na=10)
    b = MetricCounts(n_m=3, n_a=10, n_fa=2, n_na=30)
    s = a + b
    assert s.mr == pytest.approx(0.2)
    assert s.far == pytest.approx(2 / 40)


def test_confusion_identity_and_zero_column():
    refs = {"a": [(1.0, 1.3, 1.0), (2.0, 2.3, 1.0)], "b": [(5.0, 5.2, 0.8)]}
    det = {"a": np.array([1.0, 2.0]), "b": np.array([])}
    rows, cols, m = confusion_matrix(refs, det)
    assert rows == cols == ["a", "b"]
    assert m[0, 0] == 100.0 and m[1, 1] == 0.0
    assert np.all(m[:, 1] == 0)


def test_confusion_double_detection_rows_exceed_100():
    refs = {"a": [(1.0, 1.3, 1.0)], "b": [(5.0, 5.2, 0.8)]}
    det = {"a": np.array([1.0]), "b": np.array([1.02])}
    m = confusion_matrix(refs, det)[2]
    assert m[0].sum() == pytest.approx(200.0)


def test_confusion_overlap_exclusion():
    refs = {"a": [(1.0, 1.3, 1.0)], "b": [(1.1, 1.4, 1.0)]}
    det = {"a": np.array([1.0]), "b": np.array([1.0, 1.1])}
    m_ex = confusion_matrix(refs, det, exclude_overlaps=True)[2]
    m_in = confusion_matrix(refs, det, exclude_overlaps=False)[2]
    assert m_ex[0, 1] == 0.0 and m_in[0, 1] == 100.0


def test_class_result_eer():
    r = ClassResult()
    assert r.eer() is None
    r.eer_scores.append(np.array([0.1, 0.2, 0.8, 0.9]))
    r.eer_labels.append(np.array([0, 0, 1, 1], bool))
    assert r.eer() == 0.0
