"""Frame-level MR/FAR, period-based error rate and the cross-class confusion matrix."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

PBERR_TOL = 0.49
CONFUSION_TOL = 0.05


@dataclass(frozen=True)
class ToleranceConfig:
    t_tol_fraction: float = PBERR_TOL

    def __post_init__(self):
        if not 0 < self.t_tol_fraction < 0.5:
            raise ValueError("t_tol_fraction must lie in (0, 0.5)")


@dataclass
class MetricCounts:
    n_m: int = 0
    n_a: int = 0
    n_fa: int = 0
    n_na: int = 0
    n_c: int = 0
    n_fa_p: int = 0
    n_m_p: int = 0

    def __add__(self, other: "MetricCounts") -> "MetricCounts":
        return MetricCounts(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    @property
    def mr(self) -> float | None:
        return self.n_m / self.n_a if self.n_a else None

    @property
    def far(self) -> float | None:
        return self.n_fa / self.n_na if self.n_na else None

    @property
    def pb_err(self) -> float | None:
        return pb_err(self.n_c, self.n_fa_p, self.n_m_p)


def pb_err(n_c: int, n_fa: int, n_m: int) -> float | None:
    """1 - F1 over matched periods; undefined when nothing was expected or detected."""
    denom = 2 * n_c + n_fa + n_m
    return 1.0 - 2.0 * n_c / denom if denom else None


def frame_metrics(predicted, reference) -> tuple[float | None, float | None, MetricCounts]:
    p = np.asarray(predicted, dtype=bool)
    r = np.asarray(reference, dtype=bool)
    if p.shape != r.shape:
        raise ValueError(f"label tracks differ in length: {p.shape} vs {r.shape}")
    c = MetricCounts(n_m=int(np.sum(r & ~p)), n_a=int(r.sum()), n_fa=int(np.sum(~r & p)), n_na=int((~r).sum()))
    return c.mr, c.far, c


def match_periods(detected, reference, tol_s) -> list[tuple[int, int]]:
    """One-to-one greedy matching, globally nearest pairs first.

    ``tol_s`` is a scalar or one tolerance per reference onset; a detection
    exactly ``tol_s`` away still matches.
    """
    d = np.asarray(detected, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    tol = np.broadcast_to(np.asarray(tol_s, dtype=np.float64), r.shape)
    pairs = []
    for ri in range(r.shape[0]):
        dist = np.abs(d - r[ri])
        for di in np.flatnonzero(dist <= tol[ri] + 1e-12):
            pairs.append((dist[di], ri, int(di)))
    pairs.sort()
    used_r, used_d, out = set(), set(), []
    for _, ri, di in pairs:
        if ri in used_r or di in used_d:
            continue
        used_r.add(ri)
        used_d.add(di)
        out.append((ri, di))
    return out


def period_metrics(detected, reference, period_s, tol: ToleranceConfig | float = PBERR_TOL) -> tuple[float | None, MetricCounts]:
    """Period-based error rate with T_tol = fraction x period (scalar or per reference)."""
    frac = tol.t_tol_fraction if isinstance(tol, ToleranceConfig) else float(tol)
    r = np.asarray(reference, dtype=np.float64)
    tol_s = frac * np.broadcast_to(np.asarray(period_s, dtype=np.float64), r.shape)
    matches = match_periods(detected, r, tol_s)
    n_c = len(matches)
    c = MetricCounts(n_c=n_c, n_fa_p=len(detected) - n_c, n_m_p=r.shape[0] - n_c)
    return c.pb_err, c


def confusion_matrix(references: dict[str, list[tuple[float, float, float]]],
                     detections: dict[str, np.ndarray], tol_fraction: float = CONFUSION_TOL,
                     exclude_overlaps: bool = True) -> tuple[list[str], list[str], np.ndarray]:
    """Percentage of each actual class's periods that each detector fires on.

    ``references[c]`` lists ``(onset_s, end_s, period_s)`` per reference period
    of class ``c``; ``detections[i]`` are detector ``i``'s onsets. Cell (r, i)
    counts reference periods of ``r`` with a detector-``i`` onset within
    ``tol_fraction * period``. With ``exclude_overlaps``, a period of ``r``
    that overlaps in time with a period of class ``i`` (i != r) is not counted
    for column ``i``, since a detection there is legitimately class ``i``'s.
    Rows are normalised by the row's total period count, so they need not sum
    to 100.
    """
    rows = list(references)
    cols = list(detections)
    m = np.zeros((len(rows), len(cols)))
    for ri, rc in enumerate(rows):
        refs = references[rc]
        if not refs:
            continue
        for ci, dc in enumerate(cols):
            det = np.asarray(detections[dc], dtype=np.float64)
            hits = 0
            for onset, end, period in refs:
                if exclude_overlaps and dc != rc and dc in references and any(
                        o2 < end and onset < e2 for o2, e2, _ in references[dc]):
                    continue
                if det.size and np.min(np.abs(det - onset)) <= tol_fraction * period + 1e-12:
                    hits += 1
            m[ri, ci] = 100.0 * hits / len(refs)
    return rows, cols, m


@dataclass
class ClassResult:
    counts: MetricCounts = field(default_factory=MetricCounts)
    eer_scores: list = field(default_factory=list)
    eer_labels: list = field(default_factory=list)

    def eer(self) -> float | None:
        from .temporal import eer_threshold

        if not self.eer_scores:
            return None
        s = np.concatenate(self.eer_scores)
        y = np.concatenate(self.eer_labels)
        if y.all() or not y.any():
            return None
        return eer_threshold(s, y)[1]
