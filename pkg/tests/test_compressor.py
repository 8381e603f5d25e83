import numpy as np
import pytest

from alarmdet.compressor import (LEVEL_FLOOR_DB, CompressorConfig, compress, compressed_level, level_db,
                                 level_window, percentile_threshold)


def test_static_curve():
    lev = np.array([-60.0, -20.0, -10.0, 0.0])
    out = compressed_level(lev, -20.0, 10.0)
    assert out.tolist() == pytest.approx([-60.0, -20.0, -19.0, -18.0])


def test_config_validation():
    with pytest.raises(ValueError):
        CompressorConfig(-20.0, ratio=0.5)
    with pytest.raises(ValueError):
        CompressorConfig(-20.0, attack_ms=0)


def test_window_unit_sum_and_shape():
    w, centre = level_window(CompressorConfig(0.0), 24000)
    assert w.sum() == pytest.approx(1.0)
    assert centre == 120
    assert np.argmax(w) >= centre


def test_level_of_constant_tone():
    sr = 24000
    t = np.arange(sr) / sr
    x = 0.5 * np.sin(2 * np.pi * 1000 * t)
    lev = level_db(x, CompressorConfig(0.0), sr)
    # rectified sine mean is 2A/pi
    assert np.median(lev) == pytest.approx(20 * np.log10(0.5 * 2 / np.pi), abs=0.1)
    assert level_db(np.zeros(100), CompressorConfig(0.0), sr).min() == LEVEL_FLOOR_DB


def test_compress_reduces_only_loud_parts():
    sr = 24000
    t = np.arange(sr) / sr
    x = np.sin(2 * np.pi * 500 * t) * np.where(t < 0.5, 0.01, 1.0)
    y = compress(x, CompressorConfig(-20.0, 10.0), sr)
    quiet, loud = slice(2000, 10000), slice(14000, 22000)
    assert np.allclose(y[quiet], x[quiet])
    gain = np.max(np.abs(y[loud])) / np.max(np.abs(x[loud]))
    # roughly -20 + (-3.9 + 20)/10 dB from -3.9 dB
    assert 20 * np.log10(gain) == pytest.approx(-(20 - 3.92) * 0.9, abs=0.3)


def test_percentile_threshold_ignores_floor():
    lev = np.concatenate([np.full(50, LEVEL_FLOOR_DB), np.arange(1, 11, dtype=float)])
    assert percentile_threshold(lev) == 9.0
    assert percentile_threshold(np.full(3, LEVEL_FLOOR_DB)) == LEVEL_FLOOR_DB
