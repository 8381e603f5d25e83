"""Cross-validation over recording sessions and the metrics report."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .audio import frame_labels_from_annotations, frame_signal
from .metrics import CONFUSION_TOL, PBERR_TOL, ClassResult, confusion_matrix, frame_metrics, period_metrics
from .registry import Registry
from .synth import AnnotatedScenario
from .systems import reference_periods
from .temporal import eer_threshold

N_FOLDS = 10
THRESHOLD_MODES = ("test_eer", "train_eer")


class FoldError(ValueError):
    pass


@dataclass
class MetricsReport:
    """Per-variant, per-class results with counts pooled over all folds."""

    system: str
    classes: list[str]
    results: dict[str, dict[str, ClassResult]] = field(default_factory=dict)  # variant -> class -> result
    confusion: dict[str, tuple[list[str], list[str], np.ndarray]] = field(default_factory=dict)
    confusion_counts: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def rows(self) -> list[dict]:
        out = []
        for variant, per_class in self.results.items():
            scores = {"mr": [], "far": [], "eer": [], "pb_err": []}
            for cid in self.classes:
                r = per_class[cid]
                row = {"system": self.system, "variant": variant, "class_id": cid, "mr": r.counts.mr,
                       "far": r.counts.far, "eer": r.eer(), "pb_err": r.counts.pb_err}
                for k in scores:
                    if row[k] is not None:
                        scores[k].append(row[k])
                row.update({k: getattr(r.counts, k) for k in ("n_m", "n_a", "n_fa", "n_na", "n_c", "n_fa_p", "n_m_p")})
                out.append(row)
            avg = {"system": self.system, "variant": variant, "class_id": "mean"}
            avg.update({k: (float(np.mean(v)) if v else None) for k, v in scores.items()})
            out.append(avg)
        return out

    def mean(self, variant: str, metric: str) -> float | None:
        for row in self.rows():
            if row["variant"] == variant and row["class_id"] == "mean":
                return row[metric]
        raise KeyError(variant)

    def value(self, variant: str, class_id: str, metric: str) -> float | None:
        for row in self.rows():
            if row["variant"] == variant and row["class_id"] == class_id:
                return row[metric]
        raise KeyError((variant, class_id))

    def to_csv(self) -> str:
        cols = ["system", "variant", "class_id", "mr", "far", "eer", "pb_err",
                "n_m", "n_a", "n_fa", "n_na", "n_c", "n_fa_p", "n_m_p"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in self.rows():
            w.writerow([_fmt(row.get(c)) for c in cols])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"system: {self.system}"] + [f"note: {n}" for n in self.notes]
        header = f"{'variant':<8} {'class':<6} {'MR%':>7} {'FAR%':>7} {'EER%':>7} {'PB-ERR%':>8}"
        lines += ["", header, "-" * len(header)]
        for row in self.rows():
            lines.append(f"{row['variant']:<8} {row['class_id']:<6} " + " ".join(
                f"{_pct(row[k]):>{n}}" for k, n in (("mr", 7), ("far", 7), ("eer", 7), ("pb_err", 8))))
        for variant, (rows, cols, m) in self.confusion.items():
            lines += ["", f"confusion ({variant}), % of reference periods detected by each detector:",
                      "ref\\det " + " ".join(f"{c:>6}" for c in cols)]
            for r, vals in zip(rows, m):
                lines.append(f"{r:<7} " + " ".join(f"{v:6.1f}" for v in vals))
        return "\n".join(lines) + "\n"

    def confusion_csv(self, variant: str) -> str:
        rows, cols, m = self.confusion[variant]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["reference_class"] + cols)
        for r, vals in zip(rows, m):
            w.writerow([r] + [f"{v:.4f}" for v in vals])
        return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _pct(v) -> str:
    return "-" if v is None else f"{100 * v:.2f}"


def check_sessions(sessions: Sequence[Sequence[AnnotatedScenario]], folds: int = N_FOLDS) -> None:
    if len(sessions) != folds:
        raise FoldError(f"cross-validation expects {folds} session groups, got {len(sessions)} "
                        f"(use a folds override for smaller runs)")
    if folds < 2:
        raise FoldError("cross-validation needs at least two sessions")
    for i, s in enumerate(sessions):
        if not s:
            raise FoldError(f"session {i} has no scenarios")


def class_references(scenario: AnnotatedScenario, registry: Registry) -> dict[str, list[tuple[float, float, float]]]:
    out = {}
    for spec in registry.classes:
        out[spec.class_id] = [(a.start_s, a.start_s + spec.versions[a.version_id].period_s,
                               spec.versions[a.version_id].period_s) for a in scenario.for_class(spec.class_id)]
    return out


def run_cv(sessions: Sequence[Sequence[AnnotatedScenario]], system_factory: Callable[[], object],
           registry: Registry, schemes: Sequence[str] | None = None, folds: int = N_FOLDS,
           threshold_mode: str = "test_eer", pbe_tol: float = PBERR_TOL,
           confusion_tol: float = CONFUSION_TOL, progress: Callable[[str], None] | None = None) -> MetricsReport:
    """Leave-one-session-out evaluation with counts pooled over folds.

    ``system_factory()`` builds an untrained system; it is fitted on the
    other sessions for every fold. Frame-level systems get their frame
    threshold from the EER of the test fold's scores (``test_eer``) or keep
    the one learned in training (``train_eer``).
    """
    check_sessions(sessions, folds)
    if threshold_mode not in THRESHOLD_MODES:
        raise ValueError(f"threshold_mode must be one of {THRESHOLD_MODES}")
    class_ids = registry.class_ids
    report = None
    conf_hits: dict[str, np.ndarray] = {}
    conf_tot: dict[str, np.ndarray] = {}
    for f in range(folds):
        train = [sc for i, s in enumerate(sessions) if i != f for sc in s]
        test = list(sessions[f])
        system = system_factory()
        if report is None:
            report = MetricsReport(system.name, list(class_ids))
            variants = list(schemes) if schemes else [system.scheme]
            report.results = {v: {c: ClassResult() for c in class_ids} for v in variants}
            if getattr(system, "oracle", False):
                report.notes.append("oracle thresholds: U taken from each test scenario's own labels")
            if system.name != "nonmodel":
                report.notes.append(f"frame threshold: {threshold_mode}")
        if progress:
            progress(f"fold {f + 1}/{folds}: training {system.name} on {len(train)} scenarios")
        system.fit(train)
        scores = [system.score(sc) for sc in test]
        labels = [{cid: frame_labels_from_annotations(sc.annotations, cid, _len(s[cid], sc))
                   for cid in class_ids} for sc, s in zip(test, scores)]
        thresholds = None
        if system.name != "nonmodel":
            for cid in class_ids:
                for variant in report.results:
                    report.results[variant][cid].eer_scores.extend(s[cid] for s in scores)
                    report.results[variant][cid].eer_labels.extend(lb[cid] for lb in labels)
            if threshold_mode == "test_eer":
                thresholds = {}
                for cid in class_ids:
                    s = np.concatenate([x[cid] for x in scores])
                    y = np.concatenate([x[cid] for x in labels])
                    thresholds[cid] = (eer_threshold(s, y)[0] if y.any() and not y.all()
                                       else system.classes[cid].frame_threshold)
        for variant in report.results:
            for sc, s, lb in zip(test, scores, labels):
                results = system.detect(sc, thresholds, variant if system.name != "nonmodel" else None, s)
                for cid in class_ids:
                    spec = registry[cid]
                    r = results[cid]
                    counts = frame_metrics(r.frame_labels, lb[cid])[2]
                    ref, per = reference_periods(sc, spec)
                    counts = counts + period_metrics(r.period_onsets, ref, per, pbe_tol)[1]
                    report.results[variant][cid].counts = report.results[variant][cid].counts + counts
                refs = class_references(sc, registry)
                _, _, hits = confusion_counts(refs, {cid: results[cid].period_onsets for cid in class_ids},
                                              confusion_tol)
                conf_hits[variant] = conf_hits.get(variant, 0) + hits
                conf_tot[variant] = conf_tot.get(variant, 0) + np.array([len(refs[c]) for c in class_ids])
    for variant in report.results:
        tot = conf_tot[variant]
        pct = np.where(tot[:, None] > 0, 100.0 * conf_hits[variant] / np.maximum(tot, 1)[:, None], 0.0)
        report.confusion[variant] = (list(class_ids), list(class_ids), pct)
        report.confusion_counts[variant] = (conf_hits[variant], tot)
    return report


def _len(score, scenario) -> int:
    if score is not None:
        return score.shape[0]
    return frame_signal(scenario.audio).shape[0]


def confusion_counts(references, detections, tol_fraction: float = CONFUSION_TOL, exclude_overlaps: bool = True):
    """Hit counts behind :func:`confusion_matrix` (reference periods of each row matched by each detector)."""
    rows, cols, pct = confusion_matrix(references, detections, tol_fraction, exclude_overlaps)
    totals = np.array([len(references[r]) for r in rows])
    return rows, cols, np.rint(pct * totals[:, None] / 100.0).astype(int)
