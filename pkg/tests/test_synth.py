import math

import numpy as np
import pytest

from alarmdet.registry import default_registry
from alarmdet.synth import (SynthError, band_filter, band_mask, inject_glitches, make_benchmark, read_manifest,
                            render_alarm, synth_components, synth_scenario, write_manifest)


def test_render_alarm_layout():
    v = default_registry()["a3"].versions[0]
    buf = render_alarm(v, 3)
    sr = buf.sample_rate
    assert len(buf) == 3 * int(round(v.signal_s * sr)) + 3 * int(round(v.silence_s * sr))
    sig = int(round(v.signal_s * sr))
    per = len(buf) // 3
    assert np.all(buf.samples[sig:per] == 0)
    assert abs(buf.samples[0]) < 1e-3  # ramped onset
    with pytest.raises(SynthError):
        render_alarm(v, 0)


def test_band_filter_keeps_only_bands():
    sr = 24000
    t = np.arange(sr) / sr
    x = np.sin(2 * np.pi * 1000 * t) + np.sin(2 * np.pi * 3000 * t)
    y = band_filter(x, [1000], sr, 20.0)
    assert np.allclose(y[2000:-2000], np.sin(2 * np.pi * 1000 * t)[2000:-2000], atol=1e-6)
    tapered = band_filter(x, [1000], sr, 20.0, taper_hz=10.0)
    assert np.allclose(tapered[2000:-2000], y[2000:-2000], atol=1e-6)
    m = band_mask([1000], sr, sr, 20.0)
    assert m.sum() == 41


def test_snr_is_met():
    spec = default_registry()["a3"]
    comp = synth_components([(spec, 0, 0.5, 3)], 6.0, "white", 10.0, seed=3)
    sr = 24000
    active = comp.active[0]
    band_noise = band_filter(comp.noise, spec.versions[0].frequencies, sr, 50.0)
    snr = 10 * np.log10(np.mean(comp.alarms[0][active] ** 2) / np.mean(band_noise[active] ** 2))
    assert snr == pytest.approx(10.0, abs=1e-6)


def test_scenario_annotations_and_determinism():
    reg = default_registry()
    entries = [(reg["a1"], 0, 0.5, 2), (reg["a7"], 1, 4.0)]
    a = synth_scenario(entries, 8.0, "pink", 5.0, seed=11)
    b = synth_scenario(entries, 8.0, "pink", 5.0, seed=11)
    assert np.array_equal(a.audio.samples, b.audio.samples)
    assert len(a.for_class("a1")) == 2
    per = reg["a7"].versions[1].period_s
    assert len(a.for_class("a7")) == int((8.0 - 4.0 - reg["a7"].versions[1].signal_s) // per) + 1
    for ann in a.for_class("a1"):
        assert ann.end_s - ann.start_s == pytest.approx(reg["a1"].versions[0].signal_s, abs=1e-4)
    with pytest.raises(SynthError):
        synth_scenario([(reg["a1"], 0, 7.9)], 8.0)
    with pytest.raises(SynthError):
        synth_scenario([(reg["a1"], 5, 0.5)], 8.0)


def test_noise_kinds_and_errors():
    reg = default_registry()
    for kind in ("white", "pink", "babble"):
        sc = synth_scenario([(reg["a16"], 0, 0.2, 1)], 2.0, kind, 0.0, seed=1)
        assert np.all(np.isfinite(sc.audio.samples))
        assert np.max(np.abs(sc.audio.samples)) <= 0.99 + 1e-12
    with pytest.raises(SynthError):
        synth_scenario([(reg["a16"], 0, 0.2)], 2.0, "purple")
    with pytest.raises(SynthError):
        synth_scenario([(reg["a16"], 0, 0.2)], 2.0, "white", math.nan)


def test_benchmark_inventory():
    reg = default_registry()
    sessions = make_benchmark(reg, n_sessions=10, seed=2)
    assert len(sessions) == 10
    for cid in reg.class_ids:
        n = sum(len(sc.for_class(cid)) for s in sessions for sc in s)
        assert n >= 20
    for s in sessions:
        for sc in s:
            ann = sorted(sc.annotations, key=lambda a: a.start_s)
            # no overlaps by default
            assert all(x.end_s <= y.start_s for x, y in zip(ann, ann[1:]))
    again = make_benchmark(reg, n_sessions=10, seed=2)
    assert all(np.array_equal(a[0].audio.samples, b[0].audio.samples) for a, b in zip(sessions, again))


def test_benchmark_overlaps():
    reg = default_registry()
    sc = make_benchmark(reg, n_sessions=1, seed=0, overlap_prob=1.0)[0][0]
    ann = sorted(sc.annotations, key=lambda a: a.start_s)
    assert any(x.end_s > y.start_s and x.class_id != y.class_id for x, y in zip(ann, ann[1:]))


def test_glitches():
    reg = default_registry()
    sc = synth_scenario([(reg["a16"], 0, 0.2, 1)], 2.0, seed=1)
    g = inject_glitches(sc, 5.0, 0.8, seed=2)
    assert not np.array_equal(g.audio.samples, sc.audio.samples)
    assert g.annotations == sc.annotations
    assert inject_glitches(sc, 0.0, 0.8, 2) is sc


def test_manifest_round_trip(tmp_path):
    rows = [{"scenario_id": "s00_00", "session": 0, "wav": "s00_00.wav", "annotations": "s00_00.csv",
             "snr_db": math.inf, "seed": 5}]
    write_manifest(tmp_path / "m.csv", rows)
    back = read_manifest(tmp_path / "m.csv")
    assert back[0]["wav"] == str(tmp_path / "s00_00.wav")
    assert back[0]["snr_db"] == math.inf and back[0]["seed"] == 5
