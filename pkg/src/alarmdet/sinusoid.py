"""Sinusoid-vs-noise peak scoring, class-specific frame features and class models.

Spectral peaks of a zero-padded (4096-point) rectangular-window spectrum
are described by seven magnitudes around the peak, normalised by the peak,
and by a phase-continuity measure: the wrapped difference between the
observed frame-to-frame phase advance at the peak bin and the advance of a
stationary sinusoid at the (parabolically interpolated) peak frequency.
Two GMMs, one trained on peaks of synthetic tones and one on noise peaks,
score every peak.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .audio import DEFAULT_SR, FRAME_LEN, HOP, LOG_EPS, frame_signal
from .gmm import VAR_FLOOR, GmmModel, fit_gmm
from .nn.inputs import hz_to_mel, mel_supports, mel_to_hz

N_FFT = 4096
SHAPE_M = 3
INTERVAL_HZ = 20.0
FILL_OFFSET = 10.0
TRAIN_SNRS = (0.0, 5.0, 10.0, 20.0, math.inf)
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PeakFeature:
    peak_bin: int
    shape: np.ndarray
    phase_dev: float


@dataclass(frozen=True)
class FineSpectra:
    """Linear magnitudes and phases on the fine grid, shape ``(n_frames, n_fft // 2)``."""
    mags: np.ndarray
    phases: np.ndarray
    sample_rate: int = DEFAULT_SR
    n_fft: int = N_FFT
    hop: int = HOP

    @property
    def bin_hz(self) -> float:
        return self.sample_rate / self.n_fft


def fine_spectra(audio, sample_rate: int = DEFAULT_SR, frame_len: int = FRAME_LEN, hop: int = HOP,
                 n_fft: int = N_FFT) -> FineSpectra:
    frames = frame_signal(audio, frame_len, hop)
    spec = np.fft.rfft(frames, n=n_fft, axis=1)[:, : n_fft // 2]
    return FineSpectra(np.abs(spec), np.angle(spec), sample_rate, n_fft, hop)


def _wrap(x):
    return (x + np.pi) % (2 * np.pi) - np.pi


def peak_mask(mags: np.ndarray, m: int = SHAPE_M) -> np.ndarray:
    """Local maxima (strictly above the left neighbour, not below the right) away from the edges."""
    mags = np.atleast_2d(mags)
    mask = np.zeros(mags.shape, dtype=bool)
    c = mags[:, m:-m]
    mask[:, m:-m] = (c > mags[:, m - 1:-m - 1]) & (c >= mags[:, m + 1: mags.shape[1] - m + 1]) & (c > 0)
    return mask


def peak_feature_matrix(spectra: FineSpectra, m: int = SHAPE_M):
    """All peaks of a track: ``(frame_idx, bin_idx, shape (n, 2m+1), phase_dev (n,))``.

    The first frame has no predecessor, so its phase deviations are 0.
    """
    mags, phases = spectra.mags, spectra.phases
    t_idx, k_idx = np.nonzero(peak_mask(mags, m))
    offsets = np.arange(-m, m + 1)
    shape = mags[t_idx[:, None], k_idx[:, None] + offsets]
    peak = shape[:, m].copy()
    shape = shape / peak[:, None]
    with np.errstate(divide="ignore"):
        la, lb, lc = (np.log(mags[t_idx, k_idx + o] + LOG_EPS) for o in (-1, 0, 1))
    den = la - 2 * lb + lc
    delta = np.where(np.abs(den) > 1e-12, 0.5 * (la - lc) / np.where(den == 0, 1, den), 0.0)
    f_hat = (k_idx + np.clip(delta, -0.5, 0.5)) * spectra.bin_hz
    predicted = 2 * np.pi * f_hat * spectra.hop / spectra.sample_rate
    observed = phases[t_idx, k_idx] - phases[np.maximum(t_idx - 1, 0), k_idx]
    dev = np.where(t_idx > 0, _wrap(observed - predicted), 0.0)
    return t_idx, k_idx, shape, dev


def extract_peak_features(mags, phases, prev_phases=None, sample_rate: int = DEFAULT_SR, hop: int = HOP,
                          n_fft: int = N_FFT) -> list[PeakFeature]:
    """Peak features of one fine-grid frame (``prev_phases=None`` for a first frame)."""
    mags = np.asarray(mags, dtype=np.float64)[None]
    prev = np.zeros_like(mags) if prev_phases is None else np.asarray(prev_phases, dtype=np.float64)[None]
    spectra = FineSpectra(np.concatenate([mags, mags]), np.concatenate([prev, np.asarray(phases)[None]]),
                          sample_rate, n_fft, hop)
    t, k, shape, dev = peak_feature_matrix(spectra)
    sel = t == 1
    devs = dev[sel] if prev_phases is not None else np.zeros(int(sel.sum()))
    return [PeakFeature(int(b), s, float(d)) for b, s, d in zip(k[sel], shape[sel], devs)]


def gmm_input(shape: np.ndarray, dev: np.ndarray, m: int = SHAPE_M) -> np.ndarray:
    """Shape values without the (constant) centre, plus the phase deviation."""
    shape = np.atleast_2d(shape)
    return np.column_stack([np.delete(shape, m, axis=1), np.atleast_1d(dev)])


@dataclass
class SinusoidModels:
    sin: GmmModel
    noise: GmmModel

    def to_dict(self) -> dict:
        return {"format_version": MODEL_FORMAT_VERSION, "sin": self.sin.to_dict(), "noise": self.noise.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> SinusoidModels:
        if d.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported sinusoid model version {d.get('format_version')!r}")
        return cls(GmmModel.from_dict(d["sin"]), GmmModel.from_dict(d["noise"]))


def synthetic_peak_sets(n_per_class: int = 10000, snrs: Sequence[float] = TRAIN_SNRS, seed: int = 0,
                        sample_rate: int = DEFAULT_SR, tones_per_signal: int = 8,
                        fmin: float = 150.0, fmax: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """GMM inputs for tone peaks and for white-noise peaks.

    Each two-frame signal holds several stationary tones at random
    frequencies; a tone's SNR is its power over the white-noise power inside
    +/- 50 Hz, cycling through ``snrs``. The peak nearest each tone (within two
    fine bins) in the second frame is a sinusoid example.
    """
    rng = np.random.default_rng(seed)
    fmax = sample_rate / 2 - 500 if fmax is None else fmax
    n_samp = FRAME_LEN + HOP
    t = np.arange(n_samp) / sample_rate
    bin_hz = sample_rate / N_FFT
    band_frac = 100.0 / (sample_rate / 2)
    sin_feats = []
    count = 0
    sig_i = 0
    while count < n_per_class:
        freqs = np.sort(rng.uniform(fmin, fmax, tones_per_signal))
        freqs = freqs[np.concatenate([[True], np.diff(freqs) > 200])]
        snr = snrs[sig_i % len(snrs)]
        sig_i += 1
        amp = 0.1
        x = np.sum(amp * np.cos(2 * np.pi * freqs[:, None] * t + rng.uniform(0, 2 * np.pi, (freqs.size, 1))),
                   axis=0)
        if math.isfinite(snr):
            sigma = math.sqrt(amp ** 2 / 2 / (10 ** (snr / 10)) / band_frac)
            x = x + sigma * rng.standard_normal(n_samp)
        spectra = fine_spectra(x, sample_rate)
        ti, ki, shape, dev = peak_feature_matrix(spectra)
        sel = np.flatnonzero(ti == 1)
        for f in freqs:
            if sel.size == 0:
                break
            j = sel[np.argmin(np.abs(ki[sel] * bin_hz - f))]
            if abs(ki[j] * bin_hz - f) <= 2 * bin_hz:
                sin_feats.append(gmm_input(shape[j], dev[j])[0])
                count += 1
    noise_feats = []
    count = 0
    while count < n_per_class:
        x = rng.standard_normal(n_samp)
        ti, ki, shape, dev = peak_feature_matrix(fine_spectra(x, sample_rate))
        sel = ti == 1
        noise_feats.append(gmm_input(shape[sel], dev[sel]))
        count += int(sel.sum())
    return np.array(sin_feats[:n_per_class]), np.concatenate(noise_feats)[:n_per_class]


def train_sinusoid_models(n_per_class: int = 10000, snrs: Sequence[float] = TRAIN_SNRS, seed: int = 0,
                          n_components: int = 32, max_iter: int = 50, tol: float = 1e-4,
                          sample_rate: int = DEFAULT_SR) -> SinusoidModels:
    sin_x, noise_x = synthetic_peak_sets(n_per_class, snrs, seed, sample_rate)
    return SinusoidModels(fit_gmm(sin_x, n_components, seed, max_iter, tol),
                          fit_gmm(noise_x, n_components, seed + 1, max_iter, tol))


def score_spectrum(spectra: FineSpectra, models: SinusoidModels, seed: int = 0):
    """Per-bin ``(ll_sin, ll_noise)`` for every frame, shape ``(n_frames, n_bins)`` each.

    Peak bins carry GMM log-likelihoods. Every other bin gets a value drawn
    uniformly from ``[fl - 1, fl]``, with ``fl`` the frame's lowest peak
    log-likelihood minus 10 (separately per model).
    """
    t_idx, k_idx, shape, dev = peak_feature_matrix(spectra)
    feats = gmm_input(shape, dev) if t_idx.size else np.zeros((0, 2 * SHAPE_M + 1))
    rng = np.random.default_rng(seed)
    n_t, n_k = spectra.mags.shape
    out = []
    for model in (models.sin, models.noise):
        ll = model.loglik(feats) if t_idx.size else np.zeros(0)
        floor = np.full(n_t, np.inf)
        np.minimum.at(floor, t_idx, ll)
        floor = np.where(np.isfinite(floor), floor, 0.0) - FILL_OFFSET
        grid = floor[:, None] - rng.uniform(0.0, 1.0, (n_t, n_k))
        grid[t_idx, k_idx] = ll
        out.append(grid)
    return out[0], out[1]


def interval_bins(freqs: Sequence[float], n_bins: int, bin_hz: float, half_width: float = INTERVAL_HZ):
    """Fine-grid bins within +/- ``half_width`` Hz of each frequency."""
    grid = np.arange(n_bins) * bin_hz
    out = []
    for f in freqs:
        if f + half_width >= n_bins * bin_hz or f - half_width < 0:
            raise ValueError(f"interval around {f} Hz exceeds the spectrum")
        out.append(np.flatnonzero(np.abs(grid - f) <= half_width))
    return out


def assemble_frame_feature(ll_sin, ll_noise, mags, freqs: Sequence[float], bin_hz: float,
                           half_width: float = INTERVAL_HZ) -> np.ndarray:
    """Per frame and frequency interval: (ll_sin, ll_noise, magnitude) at the best sinusoid point.

    Output shape ``(n_frames, 3 * len(freqs))`` laid out as consecutive
    triples; magnitudes in each frame are normalised to sum to one.
    """
    ll_sin, ll_noise, mags = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (ll_sin, ll_noise, mags))
    n_t = ll_sin.shape[0]
    rows = np.arange(n_t)
    cols = []
    for bins in interval_bins(freqs, ll_sin.shape[1], bin_hz, half_width):
        best = bins[np.argmax(ll_sin[:, bins], axis=1)]
        cols.append((ll_sin[rows, best], ll_noise[rows, best], mags[rows, best]))
    feat = np.empty((n_t, 3 * len(cols)))
    mag = np.column_stack([c[2] for c in cols])
    total = mag.sum(axis=1, keepdims=True)
    mag = np.where(total > 0, mag / np.where(total > 0, total, 1), 1.0 / len(cols))
    for j, (s, n, _) in enumerate(cols):
        feat[:, 3 * j] = s
        feat[:, 3 * j + 1] = n
        feat[:, 3 * j + 2] = mag[:, j]
    return feat


def ff_lfbe_baseline(log_mags, n_filters: int = 20, sample_rate: int = DEFAULT_SR) -> np.ndarray:
    """Frequency-filtered log filter-bank energies (z - 1/z) and their time deltas, ``(n_frames, 36)``."""
    log_mags = np.atleast_2d(np.asarray(log_mags, dtype=np.float64))
    power = np.exp(2 * log_mags)
    n_bins = power.shape[1]
    bin_hz = sample_rate / (2 * n_bins)
    centres_hz = np.arange(n_bins) * bin_hz
    energies = np.empty((power.shape[0], n_filters))
    supports = mel_supports(n_bins, n_filters, sample_rate)
    edges = mel_to_hz(np.linspace(0, hz_to_mel(sample_rate / 2), n_filters + 2))
    for m, idx in enumerate(supports):
        f = centres_hz[idx]
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        w = np.where(f <= mid, (f - lo) / (mid - lo), (hi - f) / (hi - mid))
        w = np.clip(w, 0, None)
        if w.sum() == 0:
            w = np.ones_like(w)
        energies[:, m] = power[:, idx] @ (w / w.sum())
    log_e = np.log(energies + LOG_EPS)
    ff = log_e[:, 2:] - log_e[:, :-2]
    padded = np.concatenate([ff[:1], ff, ff[-1:]])
    delta = padded[2:] - padded[:-2]
    return np.hstack([ff, delta])


@dataclass
class GaussClassModel:
    mean_a: np.ndarray
    var_a: np.ndarray
    mean_na: np.ndarray
    var_na: np.ndarray

    @staticmethod
    def _logpdf(x, mean, var):
        return -0.5 * np.sum(np.log(2 * np.pi * var) + (x - mean) ** 2 / var, axis=-1)

    def score(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Log-likelihoods under the alarm and non-alarm models."""
        x = np.asarray(x, dtype=np.float64)
        return self._logpdf(x, self.mean_a, self.var_a), self._logpdf(x, self.mean_na, self.var_na)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("mean_a", "var_a", "mean_na", "var_na")}

    @classmethod
    def from_dict(cls, d: dict) -> GaussClassModel:
        return cls(*(np.asarray(d[k], float) for k in ("mean_a", "var_a", "mean_na", "var_na")))


def fit_gauss_class_models(features, labels, var_floor: float = VAR_FLOOR) -> GaussClassModel:
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels).astype(bool)
    a, na = x[labels], x[~labels]
    if a.shape[0] < 2 or na.shape[0] < 2:
        raise ValueError("each class needs at least two samples")
    return GaussClassModel(a.mean(axis=0), np.maximum(a.var(axis=0), var_floor),
                           na.mean(axis=0), np.maximum(na.var(axis=0), var_floor))
