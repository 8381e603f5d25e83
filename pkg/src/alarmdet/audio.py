"""Audio containers, WAV/CSV I/O, framing and the log-spectrum front-end."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.io import wavfile

DEFAULT_SR = 24000
FRAME_LEN = 2048
HOP = 1024
LOG_EPS = 1e-10


class AudioFormatError(ValueError):
    """Malformed WAV header or unexpected sample rate."""


class UnsupportedAudioError(ValueError):
    """WAV encoding other than 16-bit PCM or 32-bit float."""


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SR

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("AudioBuffer holds mono audio only")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(x)):
            raise ValueError("AudioBuffer samples must be finite")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class SpectralFrame:
    log_magnitudes: np.ndarray
    frame_index: int
    bin_hz: float
    phases: np.ndarray | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Annotation:
    class_id: str
    version_id: int
    start_s: float
    end_s: float

    def __post_init__(self):
        if self.version_id < 0:
            raise ValueError("version_id must be >= 0")
        if not 0 <= self.start_s < self.end_s:
            raise ValueError(f"bad annotation interval [{self.start_s}, {self.end_s}]")


def read_wav(path, expected_rate: int | None = DEFAULT_SR) -> AudioBuffer:
    """Read a 16-bit PCM or 32-bit float WAV file as a mono buffer in [-1, 1].

    Stereo input is averaged to mono. When ``expected_rate`` is set, files at
    any other rate are rejected; resampling is not supported.
    """
    try:
        sr, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise
    except ValueError as exc:
        msg = str(exc)
        if "Unsupported bit depth" in msg or "format tag" in msg.lower():
            raise UnsupportedAudioError(f"{path}: {msg}") from exc
        raise AudioFormatError(f"{path}: {msg}") from exc
    except EOFError as exc:
        raise AudioFormatError(f"{path}: truncated file") from exc

    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise UnsupportedAudioError(f"{path}: unsupported sample type {data.dtype}")
    if x.ndim == 2:
        if x.shape[1] > 2:
            raise UnsupportedAudioError(f"{path}: {x.shape[1]} channels")
        x = x.mean(axis=1)
    if expected_rate is not None and sr != expected_rate:
        raise AudioFormatError(f"{path}: sample rate {sr} Hz, expected {expected_rate} Hz")
    return AudioBuffer(x, sr)


def write_wav(path, buf: AudioBuffer) -> None:
    """Write a buffer as 16-bit PCM mono, clipping to full scale."""
    x = np.clip(np.round(buf.samples * 32768.0), -32768, 32767).astype(np.int16)
    wavfile.write(str(path), buf.sample_rate, x)


def read_annotations(path) -> list[Annotation]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"class_id", "version_id", "start_s", "end_s"} - set(reader.fieldnames or [])
        if missing:
            raise AudioFormatError(f"{path}: annotation header lacks {sorted(missing)}")
        return [
            Annotation(row["class_id"], int(row["version_id"]), float(row["start_s"]), float(row["end_s"]))
            for row in reader
        ]


def write_annotations(path, annotations: Iterable[Annotation]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["class_id", "version_id", "start_s", "end_s"])
        for a in annotations:
            w.writerow([a.class_id, a.version_id, repr(float(a.start_s)), repr(float(a.end_s))])


def n_frames(n_samples: int, frame_len: int = FRAME_LEN, hop: int = HOP) -> int:
    if n_samples < frame_len:
        return 0
    return (n_samples - frame_len) // hop + 1


def frame_signal(buf: AudioBuffer | np.ndarray, frame_len: int = FRAME_LEN, hop: int = HOP) -> np.ndarray:
    """Split into fully contained frames at offsets 0, hop, 2*hop, ...

    Returns an ``(n_frames, frame_len)`` read-only view.
    """
    if frame_len <= 0 or not 0 < hop <= frame_len:
        raise ValueError(f"invalid framing frame_len={frame_len} hop={hop}")
    x = buf.samples if isinstance(buf, AudioBuffer) else np.asarray(buf, dtype=np.float64)
    count = n_frames(len(x), frame_len, hop)
    if count == 0:
        return np.empty((0, frame_len))
    windows = np.lib.stride_tricks.sliding_window_view(x, frame_len)
    return windows[: (count - 1) * hop + 1 : hop]


def frame_times(count: int, sample_rate: int = DEFAULT_SR, frame_len: int = FRAME_LEN, hop: int = HOP) -> np.ndarray:
    """Anchor time of each frame: the centre of its overlap-free middle hop.

    For half-overlapped frames this is ``t*hop + (frame_len - hop)/2``, which
    places the first frame flagged by the 50%-overlap labelling rule within
    half a hop of the true event onset.
    """
    return (np.arange(count) * hop + (frame_len - hop) / 2) / sample_rate


def time_to_frame(t_s: float, sample_rate: int = DEFAULT_SR, frame_len: int = FRAME_LEN, hop: int = HOP) -> int:
    return int(round((t_s * sample_rate - (frame_len - hop) / 2) / hop))


def log_spectrum(frame: np.ndarray, zero_pad: int = 0, sample_rate: int = DEFAULT_SR,
                 frame_index: int = 0, with_phase: bool = False) -> SpectralFrame:
    """Rectangular-window log magnitude spectrum, first half of the bins."""
    frames = log_spectra(np.asarray(frame)[None, :], zero_pad, with_phase)
    mags, phases = frames if with_phase else (frames, None)
    nfft = len(frame) + zero_pad
    return SpectralFrame(mags[0], frame_index, sample_rate / nfft, None if phases is None else phases[0])


def log_spectra(frames: np.ndarray, zero_pad: int = 0, with_phase: bool = False):
    """Vectorised :func:`log_spectrum` over an ``(n, frame_len)`` array."""
    frames = np.asarray(frames, dtype=np.float64)
    nfft = frames.shape[1] + zero_pad
    spec = np.fft.rfft(frames, n=nfft, axis=1)[:, : nfft // 2]
    logmag = np.log(np.abs(spec) + LOG_EPS)
    if with_phase:
        return logmag, np.angle(spec)
    return logmag


def frame_labels_from_annotations(annotations: Sequence[Annotation], class_id: str, count: int,
                                  sample_rate: int = DEFAULT_SR, frame_len: int = FRAME_LEN,
                                  hop: int = HOP) -> np.ndarray:
    """Binary frame labels: a frame is alarm iff >= 50% of it lies in a signal interval."""
    covered = np.zeros(count * hop + frame_len, dtype=bool)
    for a in annotations:
        if a.class_id != class_id:
            continue
        lo = max(int(round(a.start_s * sample_rate)), 0)
        hi = min(int(round(a.end_s * sample_rate)), covered.shape[0])
        covered[lo:hi] = True
    if count == 0:
        return np.zeros(0, dtype=bool)
    csum = np.concatenate([[0], np.cumsum(covered)])
    starts = np.arange(count) * hop
    overlap = csum[starts + frame_len] - csum[starts]
    return overlap * 2 >= frame_len
