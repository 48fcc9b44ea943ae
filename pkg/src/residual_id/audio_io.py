"""PCM WAV reading/writing and framing of sampled signals.

Only the corpus format is supported: RIFF/WAVE, PCM (format tag 1),
16 bits per sample, one channel, any positive sample rate.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    ClipTooShort,
    EmptyAudio,
    IoFailure,
    MalformedHeader,
    UnsupportedFormat,
)

RECTANGULAR = "rectangular"
HAMMING = "hamming"

_PCM_FULL_SCALE = 32768.0  # one quantization step is 1/32768


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono waveform with float samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        object.__setattr__(
            self, "samples", np.asarray(self.samples, dtype=np.float64)
        )
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if self.samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self):
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class FrameSpec:
    """Framing parameters: frame length / hop in milliseconds plus window."""

    frame_len_ms: float = 20.0
    shift_ms: float = 10.0
    window: str = HAMMING

    def __post_init__(self):
        if not 0 < self.shift_ms <= self.frame_len_ms:
            raise ValueError("require 0 < shift_ms <= frame_len_ms")
        if self.window not in (RECTANGULAR, HAMMING):
            raise ValueError(f"unknown window {self.window!r}")

    def frame_len(self, sample_rate_hz):
        return int(round(self.frame_len_ms * sample_rate_hz / 1000.0))

    def hop(self, sample_rate_hz):
        return int(round(self.shift_ms * sample_rate_hz / 1000.0))


@dataclass(frozen=True, eq=False)
class Frame:
    """Fixed-length slice of a clip, windowed if the spec asked for it."""

    samples: np.ndarray
    start_index: int


def hamming_window(length):
    """w[n] = 0.54 - 0.46 cos(2 pi n / (L - 1)); single-point window is 1."""
    if length == 1:
        return np.ones(1)
    n = np.arange(length)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * n / (length - 1))


def read_wav(path):
    """Read a 16-bit PCM mono WAV file into an AudioClip.

    Integer samples are normalized by 1/32768, so every value lies in
    [-1, 1) except -32768 which maps to exactly -1.
    """
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc

    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedHeader(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        tag = data[pos : pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4 : pos + 8])
        body = data[pos + 8 : pos + 8 + size]
        if tag == b"fmt ":
            fmt = body
        elif tag == b"data":
            payload = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None or len(fmt) < 16 or payload is None:
        raise MalformedHeader(f"{path}: missing fmt or data chunk")

    format_tag, channels, sample_rate, _, _, bits = struct.unpack(
        "<HHIIHH", fmt[:16]
    )
    if format_tag != 1:
        raise UnsupportedFormat(f"{path}: format tag {format_tag}, want PCM (1)")
    if channels != 1:
        raise UnsupportedFormat(f"{path}: {channels} channels, want mono")
    if bits != 16:
        raise UnsupportedFormat(f"{path}: {bits} bits/sample, want 16")
    if sample_rate <= 0:
        raise MalformedHeader(f"{path}: non-positive sample rate")

    raw = np.frombuffer(payload[: len(payload) - (len(payload) % 2)], dtype="<i2")
    if raw.size == 0:
        raise EmptyAudio(f"{path}: zero samples")
    return AudioClip(raw.astype(np.float64) / _PCM_FULL_SCALE, int(sample_rate))


def write_wav(clip, path):
    """Write an AudioClip as 16-bit PCM mono.

    Samples are clamped to [-1, 1], scaled to full-scale integers and
    rounded to nearest, saturating at the int16 ceiling so +1.0 stores as
    32767. This makes write(read(f)) reproduce f exactly and bounds the
    read(write(clip)) error by one quantization step.
    """
    samples = np.asarray(clip.samples, dtype=np.float64)
    if samples.size == 0:
        raise EmptyAudio("refusing to write a clip with zero samples")
    scaled = np.round(np.clip(samples, -1.0, 1.0) * _PCM_FULL_SCALE)
    ints = np.clip(scaled, -32768, 32767).astype("<i2")
    payload = ints.tobytes()

    header = b"RIFF"
    header += struct.pack("<I", 4 + 8 + 16 + 8 + len(payload))
    header += b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH",
        16,
        1,
        1,
        clip.sample_rate_hz,
        clip.sample_rate_hz * 2,
        2,
        16,
    )
    header += b"data" + struct.pack("<I", len(payload))
    try:
        with open(path, "wb") as fh:
            fh.write(header + payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def frame_signal(clip, spec):
    """Cut a clip into frames at the spec's hop, dropping the trailing partial.

    Returns floor((len - L) / H) + 1 frames of length L. The window is
    multiplied in when the spec asks for hamming.
    """
    samples = np.asarray(clip.samples, dtype=np.float64)
    sr = clip.sample_rate_hz
    length = spec.frame_len(sr)
    hop = spec.hop(sr)
    if len(samples) < length:
        raise ClipTooShort(
            f"clip of {len(samples)} samples shorter than frame of {length}"
        )
    count = (len(samples) - length) // hop + 1
    window = hamming_window(length) if spec.window == HAMMING else None
    frames = []
    for i in range(count):
        start = i * hop
        chunk = samples[start : start + length]
        if window is not None:
            chunk = chunk * window
        frames.append(Frame(samples=chunk, start_index=start))
    return frames
