import numpy as np
import pytest

from alarmdet.audio import AudioBuffer, Annotation, frame_labels_from_annotations, frame_signal
from alarmdet.evaluation import FoldError, check_sessions, run_cv
from alarmdet.registry import default_registry
from alarmdet.synth import AnnotatedScenario
from alarmdet.temporal import DetectionResult

REG = default_registry()
SR = REG.sample_rate
A1 = REG["a1"].versions[0]


def scenario(sid, session, onsets):
    anns = [Annotation("a1", 0, t, t + A1.signal_s) for t in onsets]
    return AnnotatedScenario(AudioBuffer(np.zeros(10 * SR), SR), anns, float("inf"), 0, sid, session)


class ReplaySystem:
    """Stands in for a trained detector: returns fixed a1 onsets per scenario."""

    name = "nonmodel"
    scheme = "none"
    oracle = False

    def __init__(self, detections):
        self.detections = detections

    def fit(self, scenarios):
        return self

    def score(self, sc):
        return {cid: None for cid in REG.class_ids}

    def detect(self, sc, thresholds=None, scheme=None, scores=None):
        n = frame_signal(sc.audio).shape[0]
        out = {}
        for cid in REG.class_ids:
            on = np.array(self.detections.get(sc.scenario_id, []) if cid == "a1" else [])
            out[cid] = DetectionResult(cid, np.zeros(n, bool), on)
        return out


SESSIONS = [[scenario("s0", 0, [1.0, 2.2])], [scenario("s1", 1, [3.0])]]
DETECTIONS = {"s0": [1.05, 5.0], "s1": [3.0, 3.1]}


def test_fold_counts_are_pooled_before_ratios():
    rep = run_cv(SESSIONS, lambda: ReplaySystem(DETECTIONS), REG, folds=2)
    c = rep.results["none"]["a1"].counts
    # s0: one hit, one false alarm, one miss; s1: one hit, one duplicate false alarm
    assert (c.n_c, c.n_fa_p, c.n_m_p) == (2, 2, 1)
    assert rep.value("none", "a1", "pb_err") == pytest.approx(3 / 7)
    # the mean of per-fold rates would be (2/4 + 1/3) / 2
    assert rep.value("none", "a1", "pb_err") != pytest.approx((0.5 + 1 / 3) / 2)
    n_a = sum(int(frame_labels_from_annotations(s[0].annotations, "a1", frame_signal(s[0].audio).shape[0]).sum())
              for s in SESSIONS)
    assert c.n_a == n_a and c.n_m == n_a
    assert rep.value("none", "a1", "mr") == 1.0
    assert rep.value("none", "a3", "pb_err") is None


def test_confusion_counts_hand_check():
    rep = run_cv(SESSIONS, lambda: ReplaySystem(DETECTIONS), REG, folds=2)
    hits, totals = rep.confusion_counts["none"]
    i = REG.class_ids.index("a1")
    # tolerance is 5% of 1.2 s: 1.05 hits 1.0, 3.0 hits 3.0, 2.2 has no detection
    assert hits[i, i] == 2 and totals[i] == 3
    assert rep.confusion["none"][2][i, i] == pytest.approx(200 / 3)


def test_identical_sessions_scale_counts():
    one = run_cv(SESSIONS, lambda: ReplaySystem(DETECTIONS), REG, folds=2).results["none"]["a1"].counts
    four = run_cv(SESSIONS * 2, lambda: ReplaySystem(DETECTIONS), REG, folds=4).results["none"]["a1"].counts
    assert (four.n_c, four.n_fa_p, four.n_m_p, four.n_a) == (2 * one.n_c, 2 * one.n_fa_p, 2 * one.n_m_p, 2 * one.n_a)


def test_fold_errors():
    with pytest.raises(FoldError):
        check_sessions(SESSIONS, folds=10)
    with pytest.raises(FoldError):
        check_sessions([SESSIONS[0]], folds=1)
    with pytest.raises(FoldError):
        check_sessions([SESSIONS[0], []], folds=2)
    with pytest.raises(ValueError):
        run_cv(SESSIONS, lambda: ReplaySystem(DETECTIONS), REG, folds=2, threshold_mode="bogus")


def test_report_outputs_are_stable():
    a = run_cv(SESSIONS, lambda: ReplaySystem(DETECTIONS), REG, folds=2)
    b = run_cv(SESSIONS, lambda: ReplaySystem(DETECTIONS), REG, folds=2)
    assert a.to_csv() == b.to_csv() and a.to_text() == b.to_text()
    assert a.to_csv().splitlines()[0].startswith("system,variant,class_id")
    assert "a1" in a.confusion_csv("none")
