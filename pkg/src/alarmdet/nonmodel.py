"""Matched-filter / morphological-envelope alarm detector.

Per class: energy overload protection (band filter + compressor), a bank of
matched filters (one per version), rectification and morphological closing,
envelope smoothing, thresholding and period picking.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import signal as sps

from .audio import AudioBuffer, Annotation
from .compressor import CompressorConfig, compress, compressed_level, level_db, percentile_threshold
from .morphology import closing
from .registry import AlarmClassSpec
from .synth import band_filter
from .temporal import MIN_SPACING, enforce_spacing

REF_HALF_WIDTH = 20.0
REF_TAPER_HZ = 10.0
QUOTIENT_DB = 20.0
MODE_BINS = 1000
MODE_FLOOR = 1e-3
DECIMATION = 24
TIE_RTOL = 1e-2


@dataclass(frozen=True, eq=False)
class ReferenceSignal:
    samples: np.ndarray
    class_id: str
    version_id: int
    relevant_freqs: tuple[float, ...]
    sample_rate: int = 24000

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.size == 0 or not np.sum(x ** 2) > 0:
            raise ValueError("reference signal must have positive energy")
        if not self.relevant_freqs:
            raise ValueError("reference signal needs at least one relevant frequency")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "relevant_freqs", tuple(float(f) for f in self.relevant_freqs))

    def __len__(self):
        return self.samples.shape[0]


@dataclass(frozen=True)
class StructuringElement:
    size: int

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("structuring element size must be >= 1")

    @classmethod
    def for_f0(cls, f0: float, sample_rate: int) -> "StructuringElement":
        """One fundamental period, in samples."""
        return cls(max(int(round(sample_rate / f0)), 1))


@dataclass(frozen=True, eq=False)
class EnvelopeTrack:
    values: np.ndarray
    mode_value: float


@dataclass(frozen=True)
class DecisionThreshold:
    u: float
    estimation_mode: str = "cv"

    def __post_init__(self):
        if self.u < 0:
            raise ValueError("decision threshold must be >= 0")
        if self.estimation_mode not in ("oracle", "cv"):
            raise ValueError(f"unknown estimation mode {self.estimation_mode!r}")


def _frame_psds(x: np.ndarray, sample_rate: int, frame_s: float, nfft: int) -> np.ndarray:
    n = int(round(frame_s * sample_rate))
    if x.shape[0] <= n:
        frames = [x]
    else:
        hop = n // 2
        frames = [x[i: i + n] for i in range(0, x.shape[0] - n + 1, hop)]
    out = []
    for f in frames:
        w = np.hanning(f.shape[0])
        out.append(np.abs(np.fft.rfft(f * w, n=nfft)) ** 2)
    return np.array(out)


def estimate_relevant_freqs(noisy_ref: AudioBuffer | Sequence[AudioBuffer], quotient_db: float = QUOTIENT_DB,
                            frame_s: float = 0.2, merge_hz: float = REF_HALF_WIDTH) -> list[float]:
    """PSD local maxima within ``quotient_db`` of the strongest one.

    PSDs are taken on 200 ms half-overlapped Hann frames and normalised by the
    maximum over all frames, so a tone that sounds in only part of the
    reference still counts. Several references of one version are averaged
    frame by frame. Peaks closer than ``merge_hz`` to a stronger peak merge
    into it.
    """
    refs = [noisy_ref] if isinstance(noisy_ref, AudioBuffer) else list(noisy_ref)
    sr = refs[0].sample_rate
    longest = max(len(r) for r in refs)
    nfft = 1 << int(np.ceil(np.log2(max(8 * min(longest, int(frame_s * sr)), 2))))
    psds = [_frame_psds(r.samples, sr, frame_s, nfft) for r in refs]
    n_fr = min(p.shape[0] for p in psds)
    psd = np.mean([p[:n_fr] for p in psds], axis=0)
    psd[:, 0] = 0
    psd /= psd.max()
    floor = 10 ** (-quotient_db / 10)
    freqs = np.fft.rfftfreq(nfft, 1.0 / sr)
    cand_f, cand_p = [], []
    for row in psd:
        pk, _ = sps.find_peaks(row, height=floor)
        cand_f.extend(freqs[pk])
        cand_p.extend(row[pk])
    cand_f = np.array(cand_f)
    cand_p = np.array(cand_p)
    kept: list[float] = []
    for i in np.argsort(-cand_p):
        if all(abs(cand_f[i] - k) > merge_hz for k in kept):
            kept.append(float(cand_f[i]))
    return sorted(kept)


def clean_reference(noisy_ref: AudioBuffer, relevant_freqs: Sequence[float], class_id: str = "",
                    version_id: int = 0, half_width: float = REF_HALF_WIDTH) -> ReferenceSignal:
    """Keep only +/- ``half_width`` Hz around each relevant frequency."""
    if not relevant_freqs:
        raise ValueError("relevant_freqs must be non-empty")
    x = band_filter(noisy_ref.samples, relevant_freqs, noisy_ref.sample_rate, half_width, REF_TAPER_HZ)
    return ReferenceSignal(x, class_id, version_id, tuple(relevant_freqs), noisy_ref.sample_rate)


_BAND_CACHE: OrderedDict = OrderedDict()
_BAND_CACHE_SIZE = 96


def band_and_level(samples: np.ndarray, relevant_freqs: Sequence[float], sample_rate: int,
                   half_width: float = REF_HALF_WIDTH, ratio: float = 10.0) -> tuple[np.ndarray, np.ndarray]:
    """Band-filtered signal and its compressor level, memoised.

    Cross-validation filters the same scenario with the same frequencies in
    every fold, and only the compressor threshold changes between folds.
    """
    samples = np.ascontiguousarray(samples, dtype=np.float64)
    key = (hashlib.sha1(samples.view(np.uint8)).digest(), tuple(relevant_freqs), sample_rate, half_width, ratio)
    hit = _BAND_CACHE.get(key)
    if hit is None:
        x = band_filter(samples, relevant_freqs, sample_rate, half_width, REF_TAPER_HZ)
        hit = (x, level_db(x, CompressorConfig(0.0, ratio), sample_rate))
        for a in hit:
            a.flags.writeable = False
        _BAND_CACHE[key] = hit
        if len(_BAND_CACHE) > _BAND_CACHE_SIZE:
            _BAND_CACHE.popitem(last=False)
    else:
        _BAND_CACHE.move_to_end(key)
    return hit


def apply_compression(x: np.ndarray, level: np.ndarray, cfg: CompressorConfig) -> np.ndarray:
    """Compress ``x`` given its already measured level."""
    return x * 10 ** ((compressed_level(level, cfg.threshold_db, cfg.ratio) - level) / 20)


def eop(x, cfg: CompressorConfig, relevant_freqs: Sequence[float], sample_rate: int,
        half_width: float = REF_HALF_WIDTH) -> np.ndarray:
    """Energy overload protection: the reference-cleaning band filter, then compression."""
    samples = x.samples if isinstance(x, AudioBuffer) else np.asarray(x, dtype=np.float64)
    default = CompressorConfig(0.0, cfg.ratio)
    if (cfg.attack_ms, cfg.sustain_ms, cfg.release_ms) != (default.attack_ms, default.sustain_ms, default.release_ms):
        return compress(band_filter(samples, relevant_freqs, sample_rate, half_width, REF_TAPER_HZ), cfg, sample_rate)
    filtered, level = band_and_level(samples, relevant_freqs, sample_rate, half_width, cfg.ratio)
    return apply_compression(filtered, level, cfg)


def matched_filter(x, ref: ReferenceSignal | np.ndarray) -> np.ndarray:
    """Energy-normalised cross-correlation, ``c[n]`` for ``n`` in ``[0, N - L]``."""
    s = x.samples if isinstance(x, AudioBuffer) else np.asarray(x, dtype=np.float64)
    a = ref.samples if isinstance(ref, ReferenceSignal) else np.asarray(ref, dtype=np.float64)
    if s.shape[0] < a.shape[0]:
        raise ValueError(f"input ({s.shape[0]} samples) shorter than reference ({a.shape[0]})")
    return sps.oaconvolve(s, a[::-1], mode="valid") / np.dot(a, a)


def mode_value(x, bins: int = MODE_BINS, floor: float = 0.0) -> float:
    """Mode of ``x`` from a histogram over ``[0, max(x)]``.

    The modal bin is located first and then refined to the median of the
    samples that fall in it, so the estimate does not move with the bin
    width when most samples sit at one value (e.g. exact zeros).
    """
    x = np.asarray(x, dtype=np.float64)
    top = float(x.max()) if x.size else 0.0
    if top <= 0:
        return max(floor, 0.0)
    counts, edges = np.histogram(x, bins=bins, range=(0.0, top))
    i = int(np.argmax(counts))
    lo, hi = edges[i], edges[i + 1]
    inside = x[(x >= lo) & ((x < hi) if i < bins - 1 else (x <= hi))]
    return max(float(np.median(inside)), floor)


def morph_envelope(c, se: StructuringElement, mode_floor: float = MODE_FLOOR) -> EnvelopeTrack:
    """Full-wave rectification followed by a flat closing."""
    e = closing(np.abs(np.asarray(c, dtype=np.float64)), se.size)
    return EnvelopeTrack(e, mode_value(e, floor=mode_floor))


def block_max(x, factor: int) -> np.ndarray:
    """Max over consecutive blocks of ``factor`` samples (the last partial block included)."""
    x = np.asarray(x, dtype=np.float64)
    if factor <= 1:
        return x
    pad = (-x.shape[0]) % factor
    if pad:
        x = np.concatenate([x, np.full(pad, -np.inf)])
    return x.reshape(-1, factor).max(axis=1)


def smoothing_filter(ref: ReferenceSignal, se: StructuringElement, decimation: int = 1) -> np.ndarray:
    """Envelope-stage response to the reference itself, peak-normalised.

    With ``decimation`` > 1 the response is block-max decimated about its
    centre so it stays symmetric on the coarse grid.
    """
    a = ref.samples
    padded = np.concatenate([np.zeros(len(a) - 1), a, np.zeros(len(a) - 1)])
    h = morph_envelope(matched_filter(padded, a), se).values
    if decimation > 1:
        centre = len(a) - 1
        half = centre // decimation
        right = block_max(h[centre:], decimation)[: half + 1]
        h = np.concatenate([right[:0:-1], right])
    return h / h.max()


def decision_curve(e: EnvelopeTrack | np.ndarray, h: np.ndarray | None, normalize: bool = True,
                   mode_floor: float = MODE_FLOOR) -> np.ndarray:
    """Smooth the envelope with ``h`` and divide by the mode of the result."""
    v = e.values if isinstance(e, EnvelopeTrack) else np.asarray(e, dtype=np.float64)
    gain = 1.0
    if h is not None and len(h) > 1:
        v = np.maximum(sps.oaconvolve(v, h, mode="same"), 0)
        gain = float(np.sum(h))
    if normalize:
        # floor is in matched-filter units; smoothing scales them by sum(h)
        v = v / mode_value(v, floor=mode_floor * gain)
    return v


def decide(e: EnvelopeTrack | np.ndarray, h: np.ndarray | None, u: DecisionThreshold | float, period_s: float,
           sample_rate: float = 24000, normalize: bool = True,
           mode_floor: float = MODE_FLOOR, tie_rtol: float = TIE_RTOL) -> tuple[np.ndarray, np.ndarray]:
    """Onset times (s) and heights of envelope peaks above ``u``, >= 0.75 period apart.

    Values up to ``u * (1 + tie_rtol)`` are zeroed: a peak at the threshold
    (the highest non-alarm peak, for oracle thresholds) is rejected, and so
    are repeats of that peak that differ from it only by sampling jitter.
    """
    v = decision_curve(e, h, normalize, mode_floor)
    thr = u.u if isinstance(u, DecisionThreshold) else float(u)
    v = np.where(v <= thr * (1 + tie_rtol), 0.0, v)
    pk, _ = sps.find_peaks(v)
    pk = pk[v[pk] > 0]
    keep = enforce_spacing(pk, v[pk], MIN_SPACING * period_s * sample_rate)
    return pk[keep] / sample_rate, v[pk[keep]]


def alarm_zone_mask(n: int, annotations: Sequence[Annotation], class_id: str, l_sig_s: float,
                    sample_rate: float) -> np.ndarray:
    """Samples where the smoothed response to a true alarm of the class can peak."""
    mask = np.zeros(n, dtype=bool)
    for a in annotations:
        if a.class_id != class_id:
            continue
        lo = int((a.start_s - 2 * l_sig_s) * sample_rate)
        hi = int((a.start_s + 2 * l_sig_s) * sample_rate) + 1
        mask[max(lo, 0): max(min(hi, n), 0)] = True
    return mask


def oracle_threshold(curve: np.ndarray, zone: np.ndarray) -> float:
    """Highest peak outside the alarm zones (0 when there is none)."""
    pk, _ = sps.find_peaks(curve)
    pk = pk[~zone[pk]]
    return float(curve[pk].max()) if pk.size else 0.0


def estimate_threshold_u(oracle_values: Sequence[float], mode: str = "cv") -> DecisionThreshold:
    """Oracle: the scenario's own non-alarm maximum. CV: mid-range of the training thresholds."""
    vals = [float(v) for v in oracle_values]
    if not vals:
        return DecisionThreshold(0.0, mode)
    if mode == "oracle":
        return DecisionThreshold(max(vals), mode)
    return DecisionThreshold(0.5 * (min(vals) + max(vals)), mode)


@dataclass
class VersionBank:
    """Everything one matched filter of the bank needs at run time."""

    reference: ReferenceSignal
    se: StructuringElement
    h: np.ndarray
    period_s: float
    l_sig_s: float
    u: DecisionThreshold = field(default_factory=lambda: DecisionThreshold(0.0))
    training_thresholds: list = field(default_factory=list)


@dataclass
class ClassDetector:
    """Binary detector for one alarm class: EOP followed by a matched-filter bank."""

    class_id: str
    versions: list[VersionBank]
    relevant_freqs: tuple[float, ...]
    compressor: CompressorConfig | None
    sample_rate: int = 24000
    mode_floor: float = MODE_FLOOR
    decimation: int = DECIMATION

    @property
    def curve_rate(self) -> float:
        return self.sample_rate / self.decimation

    @property
    def min_period_s(self) -> float:
        return min(v.period_s for v in self.versions)

    def preprocess(self, audio: AudioBuffer) -> np.ndarray:
        if self.compressor is None:
            return audio.samples
        return eop(audio, self.compressor, self.relevant_freqs, self.sample_rate)

    def curves(self, audio: AudioBuffer, preprocessed: np.ndarray | None = None) -> list[np.ndarray]:
        """Normalised decision curve per version at ``curve_rate``; index k = window start k*decimation."""
        x = self.preprocess(audio) if preprocessed is None else preprocessed
        out = []
        for vb in self.versions:
            if x.shape[0] < len(vb.reference):
                out.append(np.zeros(0))
                continue
            env = closing(np.abs(matched_filter(x, vb.reference)), vb.se.size)
            out.append(decision_curve(block_max(env, self.decimation), vb.h, True, self.mode_floor))
        return out

    def detect(self, audio: AudioBuffer, thresholds: Sequence[float] | None = None):
        """Merged onsets across the bank: ``(onsets_s, heights, version_index)``."""
        curves = self.curves(audio)
        times, heights, which = [], [], []
        for vi, (vb, v) in enumerate(zip(self.versions, curves)):
            if v.size == 0:
                continue
            u = vb.u.u if thresholds is None else thresholds[vi]
            t, hgt = decide(v, None, u, vb.period_s, self.curve_rate, normalize=False)
            times.extend(t)
            heights.extend(hgt)
            which.extend([vi] * len(t))
        times = np.array(times)
        heights = np.array(heights)
        which = np.array(which, dtype=int)
        keep = enforce_spacing(times, heights, MIN_SPACING * self.min_period_s)
        return times[keep], heights[keep], which[keep]

    def oracle_thresholds(self, audio: AudioBuffer, annotations: Sequence[Annotation],
                          preprocessed: np.ndarray | None = None) -> list[float]:
        curves = self.curves(audio, preprocessed)
        out = []
        for vb, v in zip(self.versions, curves):
            if v.size == 0:
                out.append(0.0)
                continue
            zone = alarm_zone_mask(v.shape[0], annotations, self.class_id, vb.l_sig_s, self.curve_rate)
            out.append(oracle_threshold(v, zone))
        return out


def _segment(audio: AudioBuffer, a: Annotation) -> AudioBuffer:
    sr = audio.sample_rate
    return AudioBuffer(audio.samples[int(round(a.start_s * sr)): int(round(a.end_s * sr))], sr)


def _overlaps_other(a: Annotation, annotations: Sequence[Annotation]) -> bool:
    return any(b is not a and b.start_s < a.end_s and a.start_s < b.end_s for b in annotations)


def build_class_detector(spec: AlarmClassSpec, scenarios, use_eop: bool = True, max_refs: int = 20,
                         mode_floor: float = MODE_FLOOR, ratio: float = 10.0,
                         decimation: int = DECIMATION) -> ClassDetector:
    """Estimate references, compressor threshold and per-version thresholds from training scenarios."""
    sr = scenarios[0].audio.sample_rate
    chosen_refs = []
    all_freqs: list[float] = []
    for vid, version in enumerate(spec.versions):
        samples = []
        chosen = None
        for sc in scenarios:
            for a in sc.annotations:
                if a.class_id == spec.class_id and a.version_id == vid:
                    seg = _segment(sc.audio, a)
                    samples.append(seg)
                    if chosen is None and not _overlaps_other(a, sc.annotations):
                        chosen = seg
        if not samples:
            continue
        freqs = estimate_relevant_freqs(samples[:max_refs])
        chosen_refs.append((vid, version, clean_reference(chosen or samples[0], freqs, spec.class_id, vid)))
        all_freqs.extend(freqs)
    if not chosen_refs:
        raise ValueError(f"no training samples of class {spec.class_id}")
    merged = sorted(set(all_freqs))
    comp = None
    pre = [None] * len(scenarios)
    if use_eop:
        bands = [band_and_level(sc.audio.samples, merged, sr, REF_HALF_WIDTH, ratio) for sc in scenarios]
        comp = CompressorConfig(percentile_threshold(np.concatenate([lev for _, lev in bands])), ratio)
        pre = [apply_compression(x, lev, comp) for x, lev in bands]
    banks = []
    for vid, version, ref in chosen_refs:
        if comp is not None:
            # the reference goes through the same compressor as the input, otherwise the
            # compressor's onset emphasis skews the correlation peak by several ms
            x = apply_compression(ref.samples, level_db(ref.samples, comp, sr), comp)
            ref = ReferenceSignal(x, ref.class_id, ref.version_id, ref.relevant_freqs, sr)
        se = StructuringElement.for_f0(version.f0, sr)
        banks.append(VersionBank(ref, se, smoothing_filter(ref, se, decimation), version.period_s, version.signal_s))
    det = ClassDetector(spec.class_id, banks, tuple(merged), comp, sr, mode_floor, decimation)
    per_scenario = [det.oracle_thresholds(sc.audio, sc.annotations, p) for sc, p in zip(scenarios, pre)]
    for vi, vb in enumerate(det.versions):
        vb.training_thresholds = [row[vi] for row in per_scenario]
        vb.u = estimate_threshold_u(vb.training_thresholds, "cv")
    return det
