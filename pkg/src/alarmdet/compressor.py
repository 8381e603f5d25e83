"""Downward dynamic-range compressor with an attack/sustain/release level detector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

LEVEL_FLOOR_DB = -120.0


@dataclass(frozen=True)
class CompressorConfig:
    threshold_db: float
    ratio: float = 10.0
    attack_ms: float = 5.0
    sustain_ms: float = 10.0
    release_ms: float = 50.0

    def __post_init__(self):
        if self.ratio < 1:
            raise ValueError("compression ratio must be >= 1")
        if min(self.attack_ms, self.sustain_ms, self.release_ms) <= 0:
            raise ValueError("attack/sustain/release times must be positive")


def level_window(cfg: CompressorConfig, sample_rate: int) -> tuple[np.ndarray, int]:
    """Unit-sum smoothing window and the index of the current sample within it.

    Index order is future-to-past: a linear look-ahead ramp (attack), a flat
    sustain, then a linear release decay.
    """
    a = max(int(round(cfg.attack_ms * 1e-3 * sample_rate)), 1)
    s = max(int(round(cfg.sustain_ms * 1e-3 * sample_rate)), 1)
    r = max(int(round(cfg.release_ms * 1e-3 * sample_rate)), 1)
    ramp_up = np.arange(1, a + 1) / (a + 1)
    decay = np.arange(r, 0, -1) / (r + 1)
    w = np.concatenate([ramp_up, np.ones(s), decay])
    return w / w.sum(), a


def level_db(x, cfg: CompressorConfig, sample_rate: int) -> np.ndarray:
    """Rectified, window-smoothed signal level in dB (floored at -120 dB)."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    w, centre = level_window(cfg, sample_rate)
    # out[n] = sum_j w[j] * |x|[n + centre - j]: ramp looks ahead, decay looks back
    full = sps.oaconvolve(x, w, mode="full")
    lev = full[centre: centre + x.shape[0]]
    with np.errstate(divide="ignore"):
        db = 20 * np.log10(np.maximum(lev, 0))
    return np.maximum(db, LEVEL_FLOOR_DB)


def compressed_level(level, threshold_db: float, ratio: float) -> np.ndarray:
    """Static curve: unchanged below T, T + (L - T)/R above."""
    level = np.asarray(level, dtype=np.float64)
    return np.where(level > threshold_db, threshold_db + (level - threshold_db) / ratio, level)


def compress(x, cfg: CompressorConfig, sample_rate: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    lev = level_db(x, cfg, sample_rate)
    gain_db = compressed_level(lev, cfg.threshold_db, cfg.ratio) - lev
    return x * 10 ** (gain_db / 20)


def percentile_threshold(levels_db, q: float = 90.0) -> float:
    """Nearest-rank percentile of level samples, ignoring digital silence at the floor."""
    lev = np.asarray(levels_db, dtype=np.float64).ravel()
    lev = lev[lev > LEVEL_FLOOR_DB]
    if lev.size == 0:
        return LEVEL_FLOOR_DB
    return float(np.percentile(lev, q, method="inverted_cdf"))
