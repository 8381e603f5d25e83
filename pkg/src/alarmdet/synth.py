"""Synthetic ground-truthed alarm scenarios: rendering, noise mixing, glitches."""

from __future__ import annotations

import csv
import hashlib
import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import fft as sp_fft
from scipy import signal as sps

from .audio import Annotation, AudioBuffer, read_wav
from .registry import AlarmClassSpec, AlarmVersionSpec, Registry

RAMP_S = 0.005
PEAK = 0.5
BAND_HALF_WIDTH = 50.0
NOISE_RMS = 0.05
NOISE_KINDS = ("white", "pink", "babble", "wav")


class SynthError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AnnotatedScenario:
    audio: AudioBuffer
    annotations: tuple[Annotation, ...]
    snr_db: float
    seed: int
    scenario_id: str = ""
    session: int = 0

    def __post_init__(self):
        object.__setattr__(self, "annotations", tuple(self.annotations))
        dur = self.audio.duration
        for a in self.annotations:
            if a.end_s > dur + 1.0 / self.audio.sample_rate:
                raise SynthError(f"annotation {a} ends after the audio ({dur:.3f} s)")

    def for_class(self, class_id: str) -> list[Annotation]:
        return [a for a in self.annotations if a.class_id == class_id]


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "white"
    rms: float = NOISE_RMS
    wav_path: str | None = None

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise SynthError(f"noise kind must be one of {NOISE_KINDS}, got {self.kind!r}")
        if self.kind == "wav" and not self.wav_path:
            raise SynthError("noise kind 'wav' needs wav_path")


def _period_waveform(spec: AlarmVersionSpec, sample_rate: int) -> tuple[np.ndarray, int]:
    """One alarm period (tones then silence) and the signal-interval length in samples."""
    parts = []
    ramp_n = max(int(round(RAMP_S * sample_rate)), 1)
    ramp = 0.5 - 0.5 * np.cos(np.pi * (np.arange(ramp_n) + 0.5) / ramp_n)
    for tone in spec.tones:
        if max(tone.frequencies) >= sample_rate / 2:
            raise SynthError(f"tone frequency {max(tone.frequencies)} Hz is not below Nyquist")
        n = int(round(tone.duration_s * sample_rate))
        t = np.arange(n) / sample_rate
        x = np.zeros(n)
        for f, a in zip(tone.frequencies, tone.relative_amplitudes):
            x += a * np.sin(2 * np.pi * f * t)
        r = min(ramp_n, n // 2)
        x[:r] *= ramp[:r]
        x[n - r:] *= ramp[:r][::-1]
        parts.append(x)
    sig = np.concatenate(parts)
    sig *= PEAK / np.max(np.abs(sig))
    n_sil = int(round(spec.silence_s * sample_rate))
    return np.concatenate([sig, np.zeros(n_sil)]), sig.shape[0]


def render_alarm(spec: AlarmVersionSpec, n_periods: int, sample_rate: int = 24000) -> AudioBuffer:
    """Render ``n_periods`` repetitions of [tones, silence] with 5 ms raised-cosine ramps."""
    if n_periods < 1:
        raise SynthError("n_periods must be >= 1")
    period, _ = _period_waveform(spec, sample_rate)
    return AudioBuffer(np.tile(period, n_periods), sample_rate)


def band_mask(freqs: Sequence[float], n: int, sample_rate: int, half_width: float) -> np.ndarray:
    """Boolean rfft-bin mask selecting +/- half_width Hz around each frequency."""
    bins = np.fft.rfftfreq(n, 1.0 / sample_rate)
    mask = np.zeros(bins.shape, dtype=bool)
    for f in freqs:
        mask |= np.abs(bins - f) <= half_width
    return mask


def band_gain(freqs: Sequence[float], n: int, sample_rate: int, half_width: float, taper_hz: float) -> np.ndarray:
    """Per-bin gain: 1 within +/- half_width Hz, raised-cosine roll-off over ``taper_hz`` beyond."""
    n_bins = n // 2 + 1
    df = sample_rate / n
    gain = np.zeros(n_bins)
    reach = half_width + max(taper_hz, 0.0)
    for f in freqs:
        lo = max(int(np.floor((f - reach) / df)), 0)
        hi = min(int(np.ceil((f + reach) / df)) + 1, n_bins)
        d = np.abs(np.arange(lo, hi) * df - f) - half_width
        g = np.where(d <= 0, 1.0, 0.0)
        if taper_hz > 0:
            edge = (d > 0) & (d < taper_hz)
            g[edge] = 0.5 * (1 + np.cos(np.pi * d[edge] / taper_hz))
        np.maximum(gain[lo:hi], g, out=gain[lo:hi])
    return gain


_RFFT_CACHE: "OrderedDict[tuple, np.ndarray]" = OrderedDict()
_RFFT_CACHE_SIZE = 24


def _cached_rfft(x: np.ndarray, n: int) -> np.ndarray:
    """rfft of ``x`` padded to ``n``; recent long inputs are memoised because every
    class detector filters the same recordings."""
    if x.shape[0] < 1 << 16:
        return sp_fft.rfft(x, n=n)
    key = (hashlib.sha1(np.ascontiguousarray(x).view(np.uint8)).digest(), n)
    hit = _RFFT_CACHE.get(key)
    if hit is None:
        hit = sp_fft.rfft(x, n=n)
        _RFFT_CACHE[key] = hit
        if len(_RFFT_CACHE) > _RFFT_CACHE_SIZE:
            _RFFT_CACHE.popitem(last=False)
    else:
        _RFFT_CACHE.move_to_end(key)
    return hit.copy()


def band_filter(x: np.ndarray, freqs: Sequence[float], sample_rate: int, half_width: float,
                taper_hz: float = 0.0) -> np.ndarray:
    """Zero-phase FFT-domain band selection (zero-padded to a fast transform length).

    With ``taper_hz == 0`` the pass bands have brick-wall edges; a taper
    shortens the filter's ringing so distant events do not leak into each other.
    """
    x = np.asarray(x, dtype=np.float64)
    n = sp_fft.next_fast_len(x.shape[0], real=True)
    spec = _cached_rfft(x, n)
    if taper_hz > 0:
        spec *= band_gain(freqs, n, sample_rate, half_width, taper_hz)
    else:
        spec[~band_mask(freqs, n, sample_rate, half_width)] = 0
    return sp_fft.irfft(spec, n=n)[: x.shape[0]]


def make_noise(spec: NoiseSpec, n: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-free noise of ``n`` samples normalised to ``spec.rms``."""
    if spec.kind == "white":
        x = rng.standard_normal(n)
    elif spec.kind == "pink":
        w = np.fft.rfft(rng.standard_normal(n))
        f = np.fft.rfftfreq(n, 1.0 / sample_rate)
        f[0] = f[1] if n > 1 else 1.0
        x = np.fft.irfft(w / np.sqrt(f), n=n)
    elif spec.kind == "babble":
        # speech-band noise with a syllabic-rate envelope
        sos = sps.butter(4, [300, 3400], btype="bandpass", fs=sample_rate, output="sos")
        x = sps.sosfilt(sos, rng.standard_normal(n))
        t = np.arange(n) / sample_rate
        env = np.ones(n)
        for _ in range(4):
            env += 0.5 * np.sin(2 * np.pi * rng.uniform(2, 6) * t + rng.uniform(0, 2 * np.pi))
        x *= np.clip(env, 0.1, None)
    else:
        src = read_wav(spec.wav_path, expected_rate=sample_rate).samples
        if src.size == 0:
            raise SynthError(f"noise file {spec.wav_path} is empty")
        start = int(rng.integers(0, src.size))
        x = np.resize(np.roll(src, -start), n)
    rms = np.sqrt(np.mean(x ** 2)) if n else 0.0
    return x * (spec.rms / rms) if rms > 0 else x


@dataclass
class ScenarioComponents:
    alarms: list[np.ndarray]
    noise: np.ndarray
    annotations: list[Annotation]
    active: list[np.ndarray] = field(default_factory=list)


def synth_components(classes, duration_s: float, noise: NoiseSpec | str = "white", snr_db: float = math.inf,
                     seed: int = 0, sample_rate: int = 24000) -> ScenarioComponents:
    """Render, scale and annotate every alarm stream plus the noise bed, unmixed.

    ``classes`` holds ``(spec, version_id, onset_s)`` or ``(spec, version_id,
    onset_s, n_periods)`` entries. Streams repeat until the audio ends unless
    ``n_periods`` is given. Each alarm is scaled so that its power over its
    signal intervals, divided by the noise power inside +/-50 Hz of its
    components over the same samples, equals ``snr_db``.
    """
    if isinstance(noise, str):
        noise = NoiseSpec(noise)
    if not np.isfinite(snr_db) and not (np.isinf(snr_db) and snr_db > 0):
        raise SynthError(f"snr_db must be finite or +inf, got {snr_db}")
    n = int(round(duration_s * sample_rate))
    rng = np.random.default_rng(seed)
    noise_x = make_noise(noise, n, sample_rate, rng) if np.isfinite(snr_db) else np.zeros(n)

    alarms, active_masks, annotations = [], [], []
    for entry in classes:
        spec, version_id, onset_s = entry[:3]
        n_periods = entry[3] if len(entry) > 3 else None
        if not isinstance(spec, AlarmClassSpec):
            raise SynthError("class entries must carry an AlarmClassSpec")
        if not 0 <= version_id < len(spec.versions):
            raise SynthError(f"{spec.class_id}: no version {version_id}")
        version = spec.versions[version_id]
        period, sig_n = _period_waveform(version, sample_rate)
        start = int(round(onset_s * sample_rate))
        if onset_s < 0 or start + sig_n > n:
            raise SynthError(f"{spec.class_id}: onset {onset_s} s leaves no room for a signal interval")
        fit = (n - start - sig_n) // period.shape[0] + 1
        count = fit if n_periods is None else min(int(n_periods), fit)
        stream = np.zeros(n)
        active = np.zeros(n, dtype=bool)
        for p in range(count):
            s0 = start + p * period.shape[0]
            seg = period[: min(period.shape[0], n - s0)]
            stream[s0: s0 + seg.shape[0]] = seg
            active[s0: s0 + sig_n] = True
            annotations.append(Annotation(spec.class_id, version_id, s0 / sample_rate, (s0 + sig_n) / sample_rate))
        if np.isfinite(snr_db):
            band_noise = band_filter(noise_x, version.frequencies, sample_rate, BAND_HALF_WIDTH)
            p_noise = np.mean(band_noise[active] ** 2)
            p_alarm = np.mean(stream[active] ** 2)
            stream *= np.sqrt(10 ** (snr_db / 10) * p_noise / p_alarm)
        alarms.append(stream)
        active_masks.append(active)

    if np.isfinite(snr_db):
        peak = np.max(np.abs(noise_x + sum(alarms, np.zeros(n))))
        if peak > 0.99:
            g = 0.99 / peak
            noise_x = noise_x * g
            alarms = [a * g for a in alarms]
    annotations.sort(key=lambda a: (a.start_s, a.class_id))
    return ScenarioComponents(alarms, noise_x, annotations, active_masks)


def synth_scenario(classes, duration_s: float, noise: NoiseSpec | str = "white", snr_db: float = math.inf,
                   seed: int = 0, sample_rate: int = 24000, scenario_id: str = "",
                   session: int = 0) -> AnnotatedScenario:
    """Mix alarm streams into a noise bed; deterministic given ``seed``."""
    comp = synth_components(classes, duration_s, noise, snr_db, seed, sample_rate)
    mix = comp.noise.copy()
    for a in comp.alarms:
        mix += a
    return AnnotatedScenario(AudioBuffer(mix, sample_rate), tuple(comp.annotations), float(snr_db), seed,
                             scenario_id, session)


def inject_glitches(scenario: AnnotatedScenario, rate_per_s: float, amplitude: float, seed: int) -> AnnotatedScenario:
    """Add 2-20 ms knock-like transients at Poisson-distributed times."""
    if rate_per_s < 0:
        raise SynthError("rate_per_s must be >= 0")
    if rate_per_s == 0 or amplitude == 0:
        return scenario
    sr = scenario.audio.sample_rate
    x = scenario.audio.samples.copy()
    rng = np.random.default_rng(seed)
    count = rng.poisson(rate_per_s * scenario.audio.duration)
    for t0 in np.sort(rng.uniform(0, scenario.audio.duration, count)):
        n = int(round(rng.uniform(0.002, 0.020) * sr))
        burst = rng.standard_normal(n) * np.exp(-np.arange(n) / (0.3 * n))
        burst *= amplitude / np.max(np.abs(burst))
        s0 = int(t0 * sr)
        seg = burst[: x.shape[0] - s0]
        x[s0: s0 + seg.shape[0]] += seg
    return replace(scenario, audio=AudioBuffer(x, sr))


def make_benchmark(registry: Registry, n_sessions: int = 10, snr_db: float = math.inf, seed: int = 0,
                   periods_per_stream: int = 2, noise: NoiseSpec | str = "white",
                   scenarios_per_session: int = 1, overlap_prob: float = 0.0,
                   all_versions: bool = True, gap_s: tuple[float, float] = (0.5, 1.0)) -> list[list[AnnotatedScenario]]:
    """Sessions of scenarios in which every registry class plays short alarm streams.

    With ``all_versions`` each scenario holds one stream per class version,
    so every session has the same alarm inventory; otherwise multi-version
    classes alternate versions across sessions. Streams are laid out in a
    random order separated by random gaps; with probability ``overlap_prob``
    a stream instead starts while the previous one is still sounding.
    """
    sr = registry.sample_rate
    rng = np.random.default_rng(seed)
    sessions = []
    for s in range(n_sessions):
        scenarios = []
        for k in range(scenarios_per_session):
            streams = []
            for spec in registry.classes:
                vids = range(len(spec.versions)) if all_versions else [(s + k) % len(spec.versions)]
                streams.extend((spec, vid) for vid in vids)
            t = 0.5 + rng.uniform(0, 0.5)
            entries = []
            prev = None
            for i in rng.permutation(len(streams)):
                spec, vid = streams[i]
                version = spec.versions[vid]
                if prev is not None and prev[0] is spec:
                    # a device does not restart right after stopping
                    t += prev[1].period_s
                prev = (spec, version)
                entries.append((spec, vid, round(t, 4), periods_per_stream))
                span = (periods_per_stream - 1) * version.period_s + version.signal_s
                if rng.uniform() < overlap_prob:
                    t += span * rng.uniform(0.4, 0.9)
                else:
                    t += span + rng.uniform(*gap_s)
            duration = t + 1.0
            sid = f"s{s:02d}_{k:02d}"
            scenarios.append(synth_scenario(entries, duration, noise, snr_db, int(rng.integers(2 ** 31)), sr,
                                            sid, s))
        sessions.append(scenarios)
    return sessions


MANIFEST_FIELDS = ["scenario_id", "session", "wav", "annotations", "snr_db", "seed"]


def write_manifest(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in MANIFEST_FIELDS})


def read_manifest(path) -> list[dict]:
    base = Path(path).parent
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for key in ("wav", "annotations"):
            p = Path(r[key])
            r[key] = str(p if p.is_absolute() else base / p)
        r["session"] = int(r.get("session") or 0)
        r["snr_db"] = float(r["snr_db"])
        r["seed"] = int(r["seed"])
    return rows
