"""Mel-cepstral features of the LP residual.

Pipeline: residual of the clip -> framing -> energy-based frame selection
-> per-frame mel-filterbank log energies -> DCT-II cepstra with c0
dropped, so features are invariant to overall gain.
"""

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import lp
from .audio_io import FrameSpec, Frame, HAMMING, RECTANGULAR, frame_signal, hamming_window
from .errors import (
    AllFramesRejected,
    FrameLongerThanFft,
    InvalidBand,
    NegativeFrequency,
)

LOG_ENERGY_FLOOR = 1e-10   # filterbank energies are floored before the log
SELECTION_EPS = 1e-12      # inside the frame-selection dB computation
SILENCE_FLOOR_DB = -80.0   # clips whose loudest frame sits below this are rejected


def mel(frequency_hz):
    """Map Hz to mel: 2595 * log10(1 + f/700). Strictly increasing."""
    f = np.asarray(frequency_hz, dtype=np.float64)
    if np.any(f < 0):
        raise NegativeFrequency("mel undefined for negative frequency")
    out = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(out) if np.isscalar(frequency_hz) else out


def mel_to_hz(mel_value):
    m = np.asarray(mel_value, dtype=np.float64)
    out = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(out) if np.isscalar(mel_value) else out


@dataclass(frozen=True, eq=False)
class MelFilterbank:
    """Triangular filters with edges equally spaced on the mel axis."""

    num_filters: int
    fft_size: int
    sample_rate_hz: int
    weights: np.ndarray           # num_filters x (fft_size/2 + 1)
    center_frequencies_hz: np.ndarray


def build_filterbank(num_filters, fft_size, sample_rate_hz, f_low, f_high):
    """Build num_filters triangular filters between f_low and f_high.

    Edge frequencies are the num_filters + 2 points equally spaced in mel
    between mel(f_low) and mel(f_high); triangle k rises from edge k-1 to
    peak 1 at edge k and falls to zero at edge k+1, sampled at the FFT bin
    frequencies.
    """
    nyquist = sample_rate_hz / 2.0
    if not (0 <= f_low < f_high <= nyquist):
        raise InvalidBand(
            f"need 0 <= f_low < f_high <= {nyquist}, got [{f_low}, {f_high}]"
        )
    if num_filters < 2:
        raise InvalidBand("need at least 2 filters")

    edges_hz = mel_to_hz(np.linspace(mel(f_low), mel(f_high), num_filters + 2))
    bin_freqs = np.arange(fft_size // 2 + 1) * (sample_rate_hz / fft_size)

    weights = np.zeros((num_filters, fft_size // 2 + 1))
    for k in range(num_filters):
        left, center, right = edges_hz[k], edges_hz[k + 1], edges_hz[k + 2]
        rising = (bin_freqs >= left) & (bin_freqs <= center)
        falling = (bin_freqs > center) & (bin_freqs <= right)
        weights[k, rising] = (bin_freqs[rising] - left) / (center - left)
        weights[k, falling] = (right - bin_freqs[falling]) / (right - center)
    return MelFilterbank(
        num_filters=num_filters,
        fft_size=fft_size,
        sample_rate_hz=sample_rate_hz,
        weights=weights,
        center_frequencies_hz=edges_hz[1:-1].copy(),
    )


@lru_cache(maxsize=8)
def _dct_rows(num_filters, num_ceps):
    # C[j-1, m] = cos(pi j (m + 0.5) / M) for j = 1..num_ceps
    j = np.arange(1, num_ceps + 1)[:, None]
    m = np.arange(num_filters)[None, :]
    return np.cos(np.pi * j * (m + 0.5) / num_filters)


def _mfcc_batch(frames, bank, num_ceps):
    """Cepstra for a T x L block of raw frames. Shared by the single-frame
    and whole-clip paths so both produce bit-identical values."""
    if num_ceps > bank.num_filters:
        raise ValueError(
            f"num_ceps {num_ceps} exceeds filter count {bank.num_filters}"
        )
    if frames.shape[1] > bank.fft_size:
        raise FrameLongerThanFft(
            f"frame of {frames.shape[1]} samples exceeds fft_size {bank.fft_size}"
        )
    windowed = frames * hamming_window(frames.shape[1])
    spectrum = np.fft.rfft(windowed, n=bank.fft_size, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    energies = power @ bank.weights.T
    log_e = np.log(np.maximum(energies, LOG_ENERGY_FLOOR))
    return log_e @ _dct_rows(bank.num_filters, num_ceps).T


def mfcc_frame(residual_frame, bank, num_ceps):
    """Observation vector c_1..c_num_ceps of one residual frame.

    The frame is Hamming-windowed here, zero-padded to the bank's FFT
    size, turned into mel filterbank log energies, and DCT-II'd with
    c_j = sum_m logE_m cos(pi j (m + 0.5) / M). c0 is dropped.
    """
    samples = residual_frame.samples if isinstance(residual_frame, Frame) else residual_frame
    row = np.asarray(samples, dtype=np.float64)[None, :]
    return _mfcc_batch(row, bank, num_ceps)[0]


def select_frames(frames):
    """Indices of frames within 30 dB of the loudest one.

    Retain frame i iff 10 log10(E_i + eps) > max_j 10 log10(E_j + eps) - 30,
    with E the frame's sum of squares. May retain everything.
    """
    energies = np.array([float(np.dot(f.samples, f.samples)) for f in frames])
    if energies.size == 0:
        raise ValueError("no frames to select from")
    db = 10.0 * np.log10(energies + SELECTION_EPS)
    return [i for i in range(len(frames)) if db[i] > db.max() - 30.0]


@dataclass(frozen=True)
class FeatureConfig:
    """Everything that determines a feature matrix, for reproducibility."""

    frame_len_ms: float = 20.0
    shift_ms: float = 10.0
    window: str = HAMMING          # window of the LP analysis frames
    lp_order: int = lp.DEFAULT_ORDER
    fft_size: int = 512
    num_filters: int = 24
    num_ceps: int = 13
    f_low_hz: float = 0.0
    f_high_hz: float | None = None  # None means Nyquist of the clip

    def frame_spec(self, window=None):
        return FrameSpec(self.frame_len_ms, self.shift_ms, window or self.window)

    def canonical(self):
        parts = []
        for name in (
            "frame_len_ms", "shift_ms", "window", "lp_order", "fft_size",
            "num_filters", "num_ceps", "f_low_hz", "f_high_hz",
        ):
            value = getattr(self, name)
            if isinstance(value, float):
                value = format(value, ".17g")
            parts.append(f"{name}={value}")
        return ";".join(parts)

    def fingerprint(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """T x D observation sequence plus the frame start times in ms."""

    rows: np.ndarray
    frame_times: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rows", np.asarray(self.rows, dtype=np.float64))
        if self.rows.ndim != 2:
            raise ValueError("rows must be a 2-D array")

    @property
    def num_frames(self):
        return self.rows.shape[0]

    @property
    def dim(self):
        return self.rows.shape[1]


def filterbank_for(cfg, sample_rate_hz):
    f_high = cfg.f_high_hz if cfg.f_high_hz is not None else sample_rate_hz / 2.0
    return build_filterbank(
        cfg.num_filters, cfg.fft_size, sample_rate_hz, cfg.f_low_hz, f_high
    )


def extract_features(clip, cfg=FeatureConfig()):
    """Residual MFCC matrix of a clip.

    residual_of_clip -> framing of the residual (rectangular; mfcc_frame
    applies its own Hamming window) -> frame selection -> cepstra. Raises
    AllFramesRejected when even the loudest frame is effectively silent.
    """
    residual = lp.residual_of_clip(clip, cfg.frame_spec(), cfg.lp_order)
    frames = frame_signal(residual, cfg.frame_spec(window=RECTANGULAR))
    kept = select_frames(frames)
    peak_energy = max(
        float(np.dot(frames[i].samples, frames[i].samples)) for i in kept
    )
    if 10.0 * np.log10(peak_energy + SELECTION_EPS) <= SILENCE_FLOOR_DB:
        raise AllFramesRejected("clip is effectively silent")

    bank = filterbank_for(cfg, clip.sample_rate_hz)
    block = np.stack([frames[i].samples for i in kept])
    rows = _mfcc_batch(block, bank, cfg.num_ceps)
    times = np.array(
        [frames[i].start_index * 1000.0 / clip.sample_rate_hz for i in kept]
    )
    return FeatureMatrix(rows=rows, frame_times=times)
