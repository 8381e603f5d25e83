"""Frame/period decision machinery shared by every detection system."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

MIN_SPACING = 0.75


@dataclass(frozen=True)
class PosteriorTrack:
    """Per-frame log-posteriors of the alarm (``log_pa``) and non-alarm class."""

    log_pa: np.ndarray
    log_pna: np.ndarray
    hop_s: float

    @classmethod
    def from_loglik(cls, ll_alarm, ll_non_alarm, hop_s: float) -> "PosteriorTrack":
        """Normalise two class log-likelihoods to log-posteriors summing to one."""
        a = np.asarray(ll_alarm, dtype=np.float64)
        b = np.asarray(ll_non_alarm, dtype=np.float64)
        norm = np.logaddexp(a, b)
        return cls(a - norm, b - norm, hop_s)

    def __len__(self):
        return self.log_pa.shape[0]

    @property
    def contrast(self) -> np.ndarray:
        return self.log_pa - self.log_pna


@dataclass(frozen=True)
class PeriodProbabilityTrack:
    values: np.ndarray
    l_sig: int
    l_sil: int


@dataclass
class DetectionResult:
    class_id: str
    frame_labels: np.ndarray
    period_onsets: np.ndarray
    heights: np.ndarray | None = None
    scores: np.ndarray | None = field(default=None, repr=False)


def period_probability(track: PosteriorTrack | np.ndarray, l_sig: int, l_sil: int) -> PeriodProbabilityTrack:
    """Aggregate frame contrasts over one signal interval (+) and the following silence (-).

    Cumulative sums give every start frame in O(T); output has
    ``T - (l_sig + l_sil) + 1`` entries (empty when the track is too short).
    """
    d = track.contrast if isinstance(track, PosteriorTrack) else np.asarray(track, dtype=np.float64)
    span = l_sig + l_sil
    if l_sig < 1 or l_sil < 0 or d.shape[0] < span:
        return PeriodProbabilityTrack(np.zeros(0), l_sig, l_sil)
    c = np.concatenate([[0.0], np.cumsum(d)])
    t = np.arange(d.shape[0] - span + 1)
    sig = c[t + l_sig] - c[t]
    sil = c[t + span] - c[t + l_sig]
    return PeriodProbabilityTrack(sig - sil, l_sig, l_sil)


def enforce_spacing(positions, heights, min_distance: float) -> np.ndarray:
    """Greedy minimum-distance rule: tallest first, drop anything closer than ``min_distance``.

    Returns the kept indices into ``positions`` in ascending position order.
    Ties in height keep the earlier position.
    """
    positions = np.asarray(positions, dtype=np.float64)
    heights = np.asarray(heights, dtype=np.float64)
    order = np.lexsort((positions, -heights))
    kept_pos: list[float] = []
    kept: list[int] = []
    for i in order:
        p = positions[i]
        k = bisect.bisect_left(kept_pos, p)
        if k > 0 and p - kept_pos[k - 1] < min_distance:
            continue
        if k < len(kept_pos) and kept_pos[k] - p < min_distance:
            continue
        kept_pos.insert(k, p)
        kept.append(int(i))
    kept.sort(key=lambda j: (positions[j], j))
    return np.array(kept, dtype=int)


def local_maxima(x: np.ndarray) -> np.ndarray:
    """Indices of strict local maxima; on a plateau the first sample wins.

    Array ends count as maxima when their neighbour is lower; a constant
    array has none.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        return np.zeros(0, dtype=int)
    starts = np.concatenate([[0], np.flatnonzero(np.diff(x) != 0) + 1])
    v = x[starts]
    if v.shape[0] == 1:
        return np.zeros(0, dtype=int)
    left = np.concatenate([[True], v[1:] > v[:-1]])
    right = np.concatenate([v[:-1] > v[1:], [True]])
    return starts[left & right]


def pick_periods(pp: PeriodProbabilityTrack | np.ndarray, threshold: float, period_frames: float) -> tuple[np.ndarray, np.ndarray]:
    """Frames of local maxima above ``threshold`` separated by >= 0.75 period.

    Returns ``(frames, heights)``.
    """
    v = pp.values if isinstance(pp, PeriodProbabilityTrack) else np.asarray(pp, dtype=np.float64)
    idx = local_maxima(v)
    idx = idx[v[idx] > threshold]
    keep = enforce_spacing(idx, v[idx], MIN_SPACING * period_frames)
    return idx[keep], v[idx[keep]]


def majority_smooth(labels, window: int) -> np.ndarray:
    """Centred sliding majority vote; even windows grow by one, edges use truncated windows.

    A tie inside a truncated edge window keeps the original label.
    """
    x = np.asarray(labels, dtype=bool)
    if window < 1:
        raise ValueError("window must be >= 1")
    if window % 2 == 0:
        window += 1
    h = window // 2
    n = x.shape[0]
    c = np.concatenate([[0], np.cumsum(x)])
    lo = np.clip(np.arange(n) - h, 0, n)
    hi = np.clip(np.arange(n) + h + 1, 0, n)
    votes = c[hi] - c[lo]
    size = hi - lo
    out = votes * 2 > size
    tie = votes * 2 == size
    out[tie] = x[tie]
    return out


def runs(labels) -> list[tuple[int, int]]:
    """Maximal runs of True as half-open ``(start, end)`` frame intervals."""
    x = np.asarray(labels, dtype=bool).astype(np.int8)
    d = np.diff(np.concatenate([[0], x, [0]]))
    return list(zip(np.flatnonzero(d == 1).tolist(), np.flatnonzero(d == -1).tolist()))


def frames_to_periods(labels, hop_s: float, period_s: float | None = None, offset_s: float = 0.0) -> np.ndarray:
    """Onset times of alarm runs; with ``period_s`` later onsets closer than 0.75 period are dropped."""
    starts = [s for s, _ in runs(labels)]
    onsets = np.array(starts, dtype=np.float64) * hop_s + offset_s
    if period_s is None or onsets.size == 0:
        return onsets
    kept = [onsets[0]]
    for t in onsets[1:]:
        if t - kept[-1] >= MIN_SPACING * period_s - 1e-12:
            kept.append(t)
    return np.array(kept)


def periods_to_frames(onset_frames, l_sig_frames: int, track_len: int) -> np.ndarray:
    """Mark ``l_sig_frames`` frames as alarm from each onset frame, clipped to the track."""
    out = np.zeros(track_len, dtype=bool)
    for f in np.asarray(onset_frames, dtype=int):
        lo, hi = max(f, 0), min(f + l_sig_frames, track_len)
        if hi > lo:
            out[lo:hi] = True
    return out


def combine_schemes(frame_labels, onset_frames, l_sig_frames: int) -> tuple[np.ndarray, np.ndarray]:
    """Keep a run of alarm frames only if some period onset lies within it or +/- L_sig/2 of it.

    Returns ``(labels, confirmed_onset_frames)``; the labels never gain alarm frames.
    """
    labels = np.asarray(frame_labels, dtype=bool)
    onsets = np.asarray(onset_frames, dtype=np.float64)
    tol = l_sig_frames / 2.0
    out = np.zeros_like(labels)
    confirmed = np.zeros(onsets.shape[0], dtype=bool)
    for s, e in runs(labels):
        hit = (onsets >= s - tol) & (onsets <= e - 1 + tol)
        if hit.any():
            out[s:e] = True
            confirmed |= hit
    return out, np.asarray(onset_frames)[confirmed]


def eer_threshold(scores, labels) -> tuple[float, float]:
    """Threshold minimising |MR - FAR| over midpoints of sorted unique scores.

    Frames scoring above the threshold are alarm. Candidates also include one
    point below and one above the score range; ties in |MR - FAR| go to the
    smaller (MR + FAR). Returns ``(threshold, (MR + FAR) / 2)``.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_a, n_na = int(y.sum()), int((~y).sum())
    if n_a == 0 or n_na == 0:
        raise ValueError("EER needs both alarm and non-alarm frames")
    u = np.unique(s)
    cands = np.concatenate([[u[0] - 1.0], (u[:-1] + u[1:]) / 2, [u[-1] + 1.0]])
    pos = np.sort(s[y])
    neg = np.sort(s[~y])
    mr = np.searchsorted(pos, cands, side="right") / n_a
    far = (n_na - np.searchsorted(neg, cands, side="right")) / n_na
    gap = np.abs(mr - far)
    best = np.flatnonzero(gap == gap.min())
    i = best[np.argmin((mr + far)[best])]
    return float(cands[i]), float((mr[i] + far[i]) / 2)
