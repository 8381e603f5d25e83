"""Network input construction from log-magnitude spectra."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..audio import DEFAULT_SR, FRAME_LEN, SpectralFrame
from ..registry import AlarmClassSpec

GENERIC_VARIANTS = ("fc_1024", "ump256", "msmp60")
UMP_WIDTH = 4
N_MEL = 60
HALO_BINS = 2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_supports(n_bins: int = FRAME_LEN // 2, n_filters: int = N_MEL, sample_rate: int = DEFAULT_SR,
                 fmin: float = 0.0, fmax: float | None = None) -> list[np.ndarray]:
    """Bin indices under each triangular mel filter (edge to edge, never empty)."""
    fmax = sample_rate / 2 if fmax is None else fmax
    bin_hz = sample_rate / (2 * n_bins)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_filters + 2))
    freqs = np.arange(n_bins) * bin_hz
    out = []
    for m in range(n_filters):
        idx = np.flatnonzero((freqs > edges[m]) & (freqs < edges[m + 2]))
        if idx.size == 0:
            idx = np.array([min(int(round(edges[m + 1] / bin_hz)), n_bins - 1)])
        out.append(idx)
    return out


def pad_supports(supports: Sequence[np.ndarray]) -> np.ndarray:
    """Rectangular index matrix for max pooling; short rows repeat their first index."""
    width = max(len(s) for s in supports)
    return np.array([np.concatenate([s, np.full(width - len(s), s[0])]) for s in supports], dtype=np.intp)


def _as_matrix(frames) -> np.ndarray:
    if isinstance(frames, SpectralFrame):
        return frames.log_magnitudes[None, :]
    if isinstance(frames, (list, tuple)) and frames and isinstance(frames[0], SpectralFrame):
        return np.stack([f.log_magnitudes for f in frames])
    return np.atleast_2d(np.asarray(frames, dtype=np.float64))


def build_generic_input(frames, variant: str = "msmp60", sample_rate: int = DEFAULT_SR) -> np.ndarray:
    """Per-frame generic input, shape ``(n_frames, dim)``."""
    s = _as_matrix(frames)
    if variant == "fc_1024":
        return s.copy()
    if variant == "ump256":
        if s.shape[1] % UMP_WIDTH:
            raise ValueError(f"{s.shape[1]} bins do not split into groups of {UMP_WIDTH}")
        return s.reshape(s.shape[0], -1, UMP_WIDTH).max(axis=2)
    if variant == "msmp60":
        idx = pad_supports(mel_supports(s.shape[1], N_MEL, sample_rate))
        return s[:, idx].max(axis=2)
    raise ValueError(f"unknown generic variant {variant!r}; expected one of {GENERIC_VARIANTS}")


def class_specific_bins(freqs: Sequence[float], n_bins: int = FRAME_LEN // 2, sample_rate: int = DEFAULT_SR,
                        halo: int = HALO_BINS) -> np.ndarray:
    """Bins ``centre - halo .. centre + halo`` for each distinct centre bin, in frequency order."""
    bin_hz = sample_rate / (2 * n_bins)
    centres = []
    for f in freqs:
        if not 0 < f < sample_rate / 2:
            raise ValueError(f"frequency {f} Hz is outside (0, {sample_rate / 2}) Hz")
        c = int(round(f / bin_hz))
        if c - halo < 0 or c + halo >= n_bins:
            raise ValueError(f"frequency {f} Hz with halo {halo} falls outside the spectrum")
        centres.append(c)
    centres = sorted(set(centres))
    return np.array([c + k for c in centres for k in range(-halo, halo + 1)], dtype=np.intp)


def build_class_specific_input(frames, spec: AlarmClassSpec | Sequence[float], halo_bins: int = HALO_BINS,
                               sample_rate: int = DEFAULT_SR) -> np.ndarray:
    """Log magnitudes around every specific frequency of the class (all versions pooled)."""
    s = _as_matrix(frames)
    freqs = spec.specific_frequencies if isinstance(spec, AlarmClassSpec) else list(spec)
    return s[:, class_specific_bins(freqs, s.shape[1], sample_rate, halo_bins)]


def stack_context(x, context: int = 5) -> np.ndarray:
    """Centred ``context``-frame stacks flattened feature-major; edge frames are replicated."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if context < 1 or context % 2 == 0:
        raise ValueError("context must be a positive odd number of frames")
    half = context // 2
    padded = np.concatenate([np.repeat(x[:1], half, axis=0), x, np.repeat(x[-1:], half, axis=0)])
    # windows[t, f, k] = x[t + k - half, f]
    windows = np.lib.stride_tricks.sliding_window_view(padded, context, axis=0)
    return windows.reshape(x.shape[0], -1).copy()
