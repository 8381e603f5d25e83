"""The detection systems behind one interface.

``fit(train_scenarios)`` learns every class detector; ``score(scenario)``
returns per-class frame scores (``None`` for the matched-filter system,
which works on samples); ``detect(scenario, thresholds, scheme)`` returns a
:class:`DetectionResult` per class. Frame scores are log-posterior
contrasts ``log P_A - log P_NA`` so that every frame-level system can feed
the same temporal post-processing.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .audio import (DEFAULT_SR, FRAME_LEN, HOP, AudioBuffer, frame_labels_from_annotations, frame_signal,
                    log_spectra)
from .metrics import MetricCounts, period_metrics
from .nn.engine import Network, TrainConfig, balance_training_set, build_network, train, ARCH_CONTEXT
from .nn.inputs import build_class_specific_input, build_generic_input, stack_context
from .nonmodel import (MODE_FLOOR, ClassDetector, DecisionThreshold, StructuringElement, VersionBank,
                       ReferenceSignal, build_class_detector)
from .compressor import CompressorConfig
from .registry import AlarmClassSpec, Registry
from .sinusoid import (SinusoidModels, GaussClassModel, assemble_frame_feature, fine_spectra,
                       fit_gauss_class_models, score_spectrum, train_sinusoid_models)
from .synth import AnnotatedScenario
from .temporal import (MIN_SPACING, DetectionResult, combine_schemes, eer_threshold, enforce_spacing,
                       frames_to_periods, local_maxima, majority_smooth, period_probability, periods_to_frames)

SYSTEMS = ("nonmodel", "nn-generic", "nn-class", "combined")
SCHEMES = ("none", "S", "TM", "S&TM")
TM_SWEEP_POINTS = 101
_POST_EPS = 1e-12


def audio_key(audio: AudioBuffer) -> str:
    return hashlib.sha1(np.ascontiguousarray(audio.samples).view(np.uint8)).hexdigest()


def frame_offset_s(sample_rate: int = DEFAULT_SR) -> float:
    """Time of a frame's anchor relative to its first sample."""
    return (FRAME_LEN - HOP) / 2 / sample_rate


@dataclass(frozen=True)
class ClassTiming:
    """Per-version signal/silence lengths in frames, and periods in seconds."""
    l_sig: tuple[int, ...]
    l_sil: tuple[int, ...]
    period_s: tuple[float, ...]

    @classmethod
    def from_spec(cls, spec: AlarmClassSpec, hop_s: float) -> ClassTiming:
        return cls(tuple(max(int(round(v.signal_s / hop_s)), 1) for v in spec.versions),
                   tuple(max(int(round(v.silence_s / hop_s)), 0) for v in spec.versions),
                   tuple(v.period_s for v in spec.versions))

    @property
    def smooth_window(self) -> int:
        return max(min(min(a, b) for a, b in zip(self.l_sig, self.l_sil)), 1)

    @property
    def min_period_s(self) -> float:
        return min(self.period_s)


def _tm_peaks(contrast: np.ndarray, timing: ClassTiming) -> list[tuple[np.ndarray, np.ndarray]]:
    """Local maxima of P_period (frames, heights) for each version."""
    out = []
    for ls, lq in zip(timing.l_sig, timing.l_sil):
        pp = period_probability(contrast, ls, lq).values
        pk = local_maxima(pp)
        out.append((pk, pp[pk]))
    return out


def _tm_select(peaks, timing: ClassTiming, threshold: float, hop_s: float):
    frames, heights, which = [], [], []
    for vi, ((pk, hv), per) in enumerate(zip(peaks, timing.period_s)):
        sel = hv > threshold
        keep = enforce_spacing(pk[sel], hv[sel], MIN_SPACING * per / hop_s)
        frames.extend(pk[sel][keep])
        heights.extend(hv[sel][keep])
        which.extend([vi] * int(keep.size))
    frames = np.array(frames, dtype=int)
    heights = np.array(heights, dtype=np.float64)
    which = np.array(which, dtype=int)
    keep = enforce_spacing(frames, heights, MIN_SPACING * timing.min_period_s / hop_s)
    return frames[keep], heights[keep], which[keep]


def tm_onsets(contrast: np.ndarray, timing: ClassTiming, threshold: float, hop_s: float):
    """Period-probability picking per version, merged with the 0.75-period spacing rule.

    Returns ``(onset_frames, heights, version_index)`` in time order.
    """
    return _tm_select(_tm_peaks(contrast, timing), timing, threshold, hop_s)


def apply_scheme(class_id: str, contrast: np.ndarray, frame_thr: float, tm_thr: float, timing: ClassTiming,
                 scheme: str, hop_s: float, offset_s: float) -> DetectionResult:
    """Frame decisions plus one of the post-processing schemes (none, S, TM, S&TM)."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown post-processing scheme {scheme!r}")
    labels = contrast > frame_thr
    if scheme in ("S", "S&TM"):
        labels = majority_smooth(labels, timing.smooth_window)
    if scheme in ("none", "S"):
        onsets = frames_to_periods(labels, hop_s, timing.min_period_s, offset_s)
        return DetectionResult(class_id, labels, onsets, scores=contrast)
    frames, heights, which = tm_onsets(contrast, timing, tm_thr, hop_s)
    if scheme == "TM":
        out = np.zeros(contrast.shape[0], dtype=bool)
        for f, vi in zip(frames, which):
            out |= periods_to_frames([f], timing.l_sig[vi], contrast.shape[0])
        return DetectionResult(class_id, out, frames * hop_s + offset_s, heights, contrast)
    # S&TM: the L_sig tolerance uses the shortest signal interval of the class
    combined, kept = combine_schemes(labels, frames, min(timing.l_sig))
    mask = np.isin(frames, kept)
    return DetectionResult(class_id, combined, frames[mask] * hop_s + offset_s, heights[mask], contrast)


def best_tm_threshold(contrasts: Sequence[np.ndarray], references: Sequence[tuple[np.ndarray, np.ndarray]],
                      timing: ClassTiming, hop_s: float, offset_s: float,
                      n_points: int = TM_SWEEP_POINTS) -> float:
    """Threshold on P_period with the best pooled period-level F1 over a sweep of training peaks.

    ``references`` holds ``(onsets_s, periods_s)`` per scenario. Ties go to
    the middle of the best-scoring range.
    """
    per_scenario = [_tm_peaks(c, timing) for c in contrasts]
    heights = [hv for peaks in per_scenario for _, hv in peaks if hv.size]
    if not heights:
        return 0.0
    heights = np.concatenate(heights)
    cands = np.linspace(heights.min(), heights.max(), n_points)
    # selection keeps peaks strictly above the threshold, so the lowest point must sit just under the minimum
    cands[0] = np.nextafter(cands[0], -np.inf)
    errs = np.empty(n_points)
    for i, thr in enumerate(cands):
        total = MetricCounts()
        for peaks, (ref, per) in zip(per_scenario, references):
            frames, _, _ = _tm_select(peaks, timing, thr, hop_s)
            total = total + period_metrics(frames * hop_s + offset_s, ref, per)[1]
        e = total.pb_err
        errs[i] = 1.0 if e is None else e
    best = np.flatnonzero(errs == errs.min())
    return float(cands[best[best.size // 2]])


def reference_periods(scenario: AnnotatedScenario, spec: AlarmClassSpec) -> tuple[np.ndarray, np.ndarray]:
    anns = scenario.for_class(spec.class_id)
    return (np.array([a.start_s for a in anns]),
            np.array([spec.versions[a.version_id].period_s for a in anns]))


def posterior_contrast(ll_a: np.ndarray, ll_na: np.ndarray) -> np.ndarray:
    """``log P_A - log P_NA`` from class log-likelihoods, equal priors, posteriors floored like the networks'.

    Without the floor a single noise frame can score thousands below zero,
    and the period aggregation ends up dominated by such outliers.
    """
    d = np.asarray(ll_a, dtype=np.float64) - np.asarray(ll_na, dtype=np.float64)
    log_pa = np.maximum(-np.logaddexp(0.0, -d), np.log(_POST_EPS))
    log_pna = np.maximum(-np.logaddexp(0.0, d), np.log(_POST_EPS))
    return log_pa - log_pna


def _n_frames(audio: AudioBuffer) -> int:
    return frame_signal(audio).shape[0]


# frame-level systems -------------------------------------------------------

@dataclass
class FrameClassModel:
    """Learned state of one class in a frame-level system."""
    frame_threshold: float = 0.0
    tm_threshold: float = 0.0


class FrameSystem:
    """Shared machinery of the neural-network and combined systems."""

    name = "frame"

    def __init__(self, registry: Registry, scheme: str = "none", seed: int = 0):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown post-processing scheme {scheme!r}")
        self.registry = registry
        self.scheme = scheme
        self.seed = seed
        self.hop_s = HOP / registry.sample_rate
        self.offset_s = frame_offset_s(registry.sample_rate)
        self.timing = {c.class_id: ClassTiming.from_spec(c, self.hop_s) for c in registry.classes}
        self.classes: dict[str, FrameClassModel] = {}
        self._cache: dict = {}

    def _fit_class(self, spec: AlarmClassSpec, scenarios) -> None:
        raise NotImplementedError

    def _contrast(self, spec: AlarmClassSpec, scenario: AnnotatedScenario) -> np.ndarray:
        raise NotImplementedError

    def fit(self, scenarios: Sequence[AnnotatedScenario]) -> FrameSystem:
        for spec in self.registry.classes:
            self._fit_class(spec, scenarios)
            contrasts = [self._contrast(spec, sc) for sc in scenarios]
            labels = [frame_labels_from_annotations(sc.annotations, spec.class_id, c.shape[0])
                      for sc, c in zip(scenarios, contrasts)]
            m = self.classes[spec.class_id]
            s, y = np.concatenate(contrasts), np.concatenate(labels)
            m.frame_threshold = eer_threshold(s, y)[0] if y.any() and not y.all() else 0.0
            m.tm_threshold = best_tm_threshold(contrasts, [reference_periods(sc, spec) for sc in scenarios],
                                               self.timing[spec.class_id], self.hop_s, self.offset_s)
        self._cache.clear()
        return self

    def score(self, scenario: AnnotatedScenario) -> dict[str, np.ndarray]:
        return {spec.class_id: self._contrast(spec, scenario) for spec in self.registry.classes}

    def detect(self, scenario: AnnotatedScenario, thresholds: dict[str, float] | None = None,
               scheme: str | None = None, scores: dict[str, np.ndarray] | None = None) -> dict[str, DetectionResult]:
        scheme = scheme or self.scheme
        scores = scores or self.score(scenario)
        out = {}
        for cid, contrast in scores.items():
            m = self.classes[cid]
            thr = m.frame_threshold if thresholds is None else thresholds[cid]
            out[cid] = apply_scheme(cid, contrast, thr, m.tm_threshold, self.timing[cid], scheme,
                                    self.hop_s, self.offset_s)
        return out

    def _log_spectra(self, scenario: AnnotatedScenario) -> np.ndarray:
        key = ("logspec", audio_key(scenario.audio))
        if key not in self._cache:
            self._cache[key] = log_spectra(frame_signal(scenario.audio))
        return self._cache[key]


class NNSystem(FrameSystem):
    """Binary network per class on generic (pooled) or class-specific spectral input."""

    def __init__(self, registry: Registry, input_kind: str = "generic", variant: str = "msmp60",
                 arch: str = "tw", context: int = 5, hidden: int = 8, train_cfg: TrainConfig | None = None,
                 scheme: str = "none", seed: int = 0):
        super().__init__(registry, scheme, seed)
        if input_kind not in ("generic", "class"):
            raise ValueError(f"unknown input kind {input_kind!r}")
        if arch not in ARCH_CONTEXT:
            raise ValueError(f"unknown architecture {arch!r}")
        self.name = f"nn-{input_kind}"
        self.input_kind = input_kind
        self.variant = variant
        self.arch = arch
        self.context = context
        self.hidden = hidden
        self.train_cfg = train_cfg or TrainConfig(seed=seed)
        self.nets: dict[str, Network] = {}

    def features(self, spec: AlarmClassSpec, scenario: AnnotatedScenario) -> np.ndarray:
        key = ("nnfeat", self.input_kind, self.variant, spec.class_id if self.input_kind == "class" else "",
               audio_key(scenario.audio))
        if key not in self._cache:
            s = self._log_spectra(scenario)
            if self.input_kind == "generic":
                x = build_generic_input(s, self.variant, self.registry.sample_rate)
            else:
                x = build_class_specific_input(s, spec, sample_rate=self.registry.sample_rate)
            self._cache[key] = stack_context(x, self.context) if ARCH_CONTEXT[self.arch] else x
        return self._cache[key]

    def _fit_class(self, spec, scenarios):
        xs, ys = [], []
        for sc in scenarios:
            x = self.features(spec, sc)
            xs.append(x)
            ys.append(frame_labels_from_annotations(sc.annotations, spec.class_id, x.shape[0]))
        x, y = balance_training_set(np.concatenate(xs), np.concatenate(ys), self.seed)
        per_frame = x.shape[1] // self.context if ARCH_CONTEXT[self.arch] else x.shape[1]
        net = build_network(self.arch, per_frame, self.context, self.hidden, seed=self.seed)
        train(net, x, y, self.train_cfg)
        self.nets[spec.class_id] = net
        self.classes[spec.class_id] = FrameClassModel()

    def _contrast(self, spec, scenario):
        p = self.nets[spec.class_id].forward(self.features(spec, scenario))
        return np.log(np.maximum(p[:, 1], _POST_EPS)) - np.log(np.maximum(p[:, 0], _POST_EPS))

    def to_dict(self) -> dict:
        return {"system": self.name, "variant": self.variant, "arch": self.arch, "context": self.context,
                "hidden": self.hidden, "scheme": self.scheme, "seed": self.seed,
                "classes": {cid: {"net": self.nets[cid].to_dict(), "frame_threshold": m.frame_threshold,
                                  "tm_threshold": m.tm_threshold} for cid, m in self.classes.items()}}

    @classmethod
    def from_dict(cls, d: dict, registry: Registry) -> NNSystem:
        sys_ = cls(registry, d["system"].split("-", 1)[1], d["variant"], d["arch"], d["context"], d["hidden"],
                   scheme=d["scheme"], seed=d["seed"])
        for cid, c in d["classes"].items():
            sys_.nets[cid] = Network.from_dict(c["net"])
            sys_.classes[cid] = FrameClassModel(c["frame_threshold"], c["tm_threshold"])
        return sys_


class CombinedSystem(FrameSystem):
    """Sinusoid-likelihood features at class frequencies, Gaussian class models, temporal post-processing."""

    name = "combined"

    def __init__(self, registry: Registry, scheme: str = "S&TM", seed: int = 0,
                 sinusoid_models: SinusoidModels | None = None, n_train_peaks: int = 10000):
        super().__init__(registry, scheme, seed)
        self.sinusoid_models = sinusoid_models
        self.n_train_peaks = n_train_peaks
        self.gauss: dict[str, GaussClassModel] = {}

    def features(self, spec: AlarmClassSpec, scenario: AnnotatedScenario) -> np.ndarray:
        key = ("sinfeat", audio_key(scenario.audio))
        if key not in self._cache:
            spectra = fine_spectra(scenario.audio, self.registry.sample_rate)
            ll_sin, ll_noise = score_spectrum(spectra, self.sinusoid_models, self.seed)
            self._cache[key] = {c.class_id: assemble_frame_feature(ll_sin, ll_noise, spectra.mags,
                                                                   c.specific_frequencies, spectra.bin_hz)
                                for c in self.registry.classes}
        return self._cache[key][spec.class_id]

    def fit(self, scenarios):
        if self.sinusoid_models is None:
            self.sinusoid_models = train_sinusoid_models(self.n_train_peaks, seed=self.seed)
        return super().fit(scenarios)

    def _fit_class(self, spec, scenarios):
        xs, ys = [], []
        for sc in scenarios:
            x = self.features(spec, sc)
            xs.append(x)
            ys.append(frame_labels_from_annotations(sc.annotations, spec.class_id, x.shape[0]))
        self.gauss[spec.class_id] = fit_gauss_class_models(np.concatenate(xs), np.concatenate(ys))
        self.classes[spec.class_id] = FrameClassModel()

    def _contrast(self, spec, scenario):
        ll_a, ll_na = self.gauss[spec.class_id].score(self.features(spec, scenario))
        return posterior_contrast(ll_a, ll_na)

    def to_dict(self) -> dict:
        return {"system": self.name, "scheme": self.scheme, "seed": self.seed,
                "sinusoid_models": self.sinusoid_models.to_dict(),
                "classes": {cid: {"gauss": self.gauss[cid].to_dict(), "frame_threshold": m.frame_threshold,
                                  "tm_threshold": m.tm_threshold} for cid, m in self.classes.items()}}

    @classmethod
    def from_dict(cls, d: dict, registry: Registry) -> CombinedSystem:
        sys_ = cls(registry, d["scheme"], d["seed"], SinusoidModels.from_dict(d["sinusoid_models"]))
        for cid, c in d["classes"].items():
            sys_.gauss[cid] = GaussClassModel.from_dict(c["gauss"])
            sys_.classes[cid] = FrameClassModel(c["frame_threshold"], c["tm_threshold"])
        return sys_


# matched-filter system -------------------------------------------------------

class NonModelSystem:
    """Matched-filter bank per class; thresholds from training sessions or, with ``oracle``, from test labels."""

    name = "nonmodel"
    scheme = "none"

    def __init__(self, registry: Registry, use_eop: bool = True, oracle: bool = False,
                 mode_floor: float = MODE_FLOOR, seed: int = 0):
        self.registry = registry
        self.use_eop = use_eop
        self.oracle = oracle
        self.mode_floor = mode_floor
        self.seed = seed
        self.hop_s = HOP / registry.sample_rate
        self.offset_s = frame_offset_s(registry.sample_rate)
        self.detectors: dict[str, ClassDetector] = {}

    def fit(self, scenarios) -> NonModelSystem:
        for spec in self.registry.classes:
            self.detectors[spec.class_id] = build_class_detector(spec, scenarios, self.use_eop,
                                                                 mode_floor=self.mode_floor)
        return self

    def score(self, scenario) -> dict[str, None]:
        return {cid: None for cid in self.detectors}

    def detect(self, scenario: AnnotatedScenario, thresholds=None, scheme: str | None = None,
               scores=None) -> dict[str, DetectionResult]:
        n = _n_frames(scenario.audio)
        out = {}
        for cid, det in self.detectors.items():
            thr = det.oracle_thresholds(scenario.audio, scenario.annotations) if self.oracle else None
            onsets, heights, which = det.detect(scenario.audio, thr)
            spec = self.registry[cid]
            labels = np.zeros(n, dtype=bool)
            for t, vi in zip(onsets, which):
                version = spec.versions[det.versions[vi].reference.version_id]
                f0 = int(round((t - self.offset_s) / self.hop_s))
                labels |= periods_to_frames([f0], max(int(round(version.signal_s / self.hop_s)), 1), n)
            out[cid] = DetectionResult(cid, labels, onsets, heights)
        return out

    def to_dict(self, ref_writer=None) -> dict:
        """``ref_writer(name, ReferenceSignal) -> str`` stores reference audio and returns its path."""
        classes = {}
        for cid, det in self.detectors.items():
            banks = []
            for vb in det.versions:
                ref = vb.reference
                name = f"{cid}_v{ref.version_id}"
                banks.append({"reference": ref_writer(name, ref) if ref_writer else ref.samples.tolist(),
                              "version_id": ref.version_id, "se_size": vb.se.size, "h": vb.h.tolist(),
                              "period_s": vb.period_s, "l_sig_s": vb.l_sig_s, "u": vb.u.u,
                              "training_thresholds": list(vb.training_thresholds)})
            classes[cid] = {"relevant_freqs": list(det.relevant_freqs),
                            "compressor": None if det.compressor is None else {
                                "threshold_db": det.compressor.threshold_db, "ratio": det.compressor.ratio},
                            "decimation": det.decimation, "mode_floor": det.mode_floor, "banks": banks}
        return {"system": self.name, "use_eop": self.use_eop, "oracle": self.oracle, "seed": self.seed,
                "classes": classes}

    @classmethod
    def from_dict(cls, d: dict, registry: Registry, ref_reader=None) -> NonModelSystem:
        sys_ = cls(registry, d["use_eop"], d["oracle"], seed=d["seed"])
        sr = registry.sample_rate
        for cid, c in d["classes"].items():
            banks = []
            for b in c["banks"]:
                samples = ref_reader(b["reference"]) if ref_reader else np.asarray(b["reference"])
                ref = ReferenceSignal(samples, cid, b["version_id"], tuple(c["relevant_freqs"]), sr)
                vb = VersionBank(ref, StructuringElement(b["se_size"]), np.asarray(b["h"]), b["period_s"],
                                 b["l_sig_s"], DecisionThreshold(b["u"], "cv"), list(b["training_thresholds"]))
                banks.append(vb)
            comp = c["compressor"]
            comp = None if comp is None else CompressorConfig(comp["threshold_db"], comp["ratio"])
            sys_.detectors[cid] = ClassDetector(cid, banks, tuple(c["relevant_freqs"]), comp, sr,
                                                c["mode_floor"], c["decimation"])
        return sys_


def make_system(name: str, registry: Registry, scheme: str | None = None, seed: int = 0, oracle: bool = False,
                sinusoid_models: SinusoidModels | None = None, **kw):
    """Factory for the four systems with their default variants."""
    if name == "nonmodel":
        if scheme not in (None, "none"):
            raise ValueError("the nonmodel system has no frame post-processing schemes")
        return NonModelSystem(registry, oracle=oracle, seed=seed, **kw)
    if oracle:
        raise ValueError("--oracle applies to the nonmodel system only")
    if name == "nn-generic":
        kw.setdefault("variant", "msmp60")
        kw.setdefault("arch", "tw")
        return NNSystem(registry, "generic", scheme=scheme or "none", seed=seed, **kw)
    if name == "nn-class":
        kw.setdefault("arch", "tw_fc")
        return NNSystem(registry, "class", scheme=scheme or "none", seed=seed, **kw)
    if name == "combined":
        return CombinedSystem(registry, scheme or "S&TM", seed, sinusoid_models, **kw)
    raise ValueError(f"unknown system {name!r}; expected one of {SYSTEMS}")


def system_from_dict(d: dict, registry: Registry, ref_reader=None):
    name = d.get("system")
    if name == "nonmodel":
        return NonModelSystem.from_dict(d, registry, ref_reader)
    if name in ("nn-generic", "nn-class"):
        return NNSystem.from_dict(d, registry)
    if name == "combined":
        return CombinedSystem.from_dict(d, registry)
    raise ValueError(f"unknown system {name!r} in model file")
