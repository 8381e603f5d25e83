import numpy as np
import pytest
from scipy.io import wavfile

from alarmdet.audio import (FRAME_LEN, HOP, LOG_EPS, Annotation, AudioBuffer, AudioFormatError,
                            UnsupportedAudioError, frame_labels_from_annotations, frame_signal, frame_times,
                            log_spectra, log_spectrum, n_frames, read_annotations, read_wav, time_to_frame,
                            write_annotations, write_wav)


def test_wav_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.5, 0.5, 2400)
    write_wav(tmp_path / "a.wav", AudioBuffer(x, 24000))
    y = read_wav(tmp_path / "a.wav")
    assert y.sample_rate == 24000
    assert np.max(np.abs(y.samples - x)) <= 1 / 32768


def test_wav_float_and_stereo(tmp_path):
    x = np.stack([np.full(100, 0.25), np.full(100, 0.75)], axis=1).astype(np.float32)
    wavfile.write(tmp_path / "s.wav", 24000, x)
    assert np.allclose(read_wav(tmp_path / "s.wav").samples, 0.5)


def test_wav_rejections(tmp_path):
    wavfile.write(tmp_path / "r.wav", 16000, np.zeros(10, np.int16))
    with pytest.raises(AudioFormatError):
        read_wav(tmp_path / "r.wav")
    wavfile.write(tmp_path / "i.wav", 24000, np.zeros(10, np.int32))
    with pytest.raises(UnsupportedAudioError):
        read_wav(tmp_path / "i.wav")
    (tmp_path / "junk.wav").write_bytes(b"not a wav file at all")
    with pytest.raises(AudioFormatError):
        read_wav(tmp_path / "junk.wav")


def test_annotation_round_trip(tmp_path):
    ann = [Annotation("a1", 0, 0.5, 0.8), Annotation("a3", 1, 1.25, 1.7)]
    write_annotations(tmp_path / "a.csv", ann)
    assert read_annotations(tmp_path / "a.csv") == ann
    with pytest.raises(ValueError):
        Annotation("a1", 0, 1.0, 0.5)


def test_framing():
    assert n_frames(FRAME_LEN - 1) == 0
    assert n_frames(FRAME_LEN) == 1
    assert n_frames(FRAME_LEN + 3 * HOP + 5) == 4
    x = np.arange(FRAME_LEN + 2 * HOP, dtype=float)
    f = frame_signal(x)
    assert f.shape == (3, FRAME_LEN)
    assert f[2, 0] == 2 * HOP
    assert frame_signal(np.zeros(10)).shape == (0, FRAME_LEN)


def test_frame_time_round_trip():
    t = frame_times(5)
    assert t[0] == pytest.approx((FRAME_LEN - HOP) / 2 / 24000)
    assert [time_to_frame(v) for v in t] == list(range(5))


def test_log_spectrum_of_bin_centred_tone():
    sr = 24000
    k = 100
    x = np.cos(2 * np.pi * k * sr / FRAME_LEN * np.arange(FRAME_LEN) / sr)
    s = log_spectrum(x)
    assert s.log_magnitudes.shape == (FRAME_LEN // 2,)
    assert int(np.argmax(s.log_magnitudes)) == k
    assert s.log_magnitudes[k] == pytest.approx(np.log(FRAME_LEN / 2), abs=1e-6)
    assert log_spectra(np.zeros((2, 16))).min() == pytest.approx(np.log(LOG_EPS))


def test_frame_labels_half_overlap_rule():
    # frame t covers [t*hop, t*hop + frame_len)
    ann = [Annotation("a", 0, 1024 / 24000, (1024 + 1024) / 24000)]
    y = frame_labels_from_annotations(ann, "a", 4)
    # frame 0: 1024 of 2048 covered (exactly half) -> alarm; frame 1: 1024 covered -> alarm
    assert y.tolist() == [True, True, False, False]
    ann = [Annotation("a", 0, 1024 / 24000, 2047 / 24000)]
    assert not frame_labels_from_annotations(ann, "a", 4).any()
    assert not frame_labels_from_annotations(ann, "b", 4).any()
