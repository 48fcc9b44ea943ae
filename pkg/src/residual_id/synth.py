"""Deterministic source-filter speech synthesizer and corpus builder.

Speaker identity lives almost entirely in the excitation: pitch, pitch
jitter and the two-piece glottal pulse shape differ per speaker, while
the vocal-tract resonance configurations are drawn from one pool shared
by every speaker. Utterances interleave voiced, noise-only and silent
stretches so downstream frame selection has something to reject.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .audio_io import AudioClip, write_wav
from .errors import IoFailure, ProfileSpaceExhausted
from .util import derive_seed

SAMPLE_RATE = 16000

_PROFILE_NS = 0x50
_POOL_NS = 0x51
_UTTERANCE_NS = 0x52

PITCH_RANGE = (85.0, 255.0)
MIN_PITCH_GAP = 5.0
MIN_SHAPE_GAP = 0.05
OPEN_QUOTIENT_RANGE = (0.30, 0.80)
ASYMMETRY_RANGE = (0.45, 0.90)
JITTER_RANGE = (0.005, 0.02)
NOISE_FLOOR_RANGE = (0.01, 0.04)
MAX_PROFILE_ATTEMPTS = 1000

TRACT_POOL_SIZE = 8
VOICED_P, UNVOICED_P, SILENT_P = 0.75, 0.15, 0.10
CHUNK_RANGE_S = (0.15, 0.30)
UNVOICED_LEVEL = 0.3
PEAK_LEVEL = 0.9

VOICED = "voiced"
UNVOICED = "unvoiced"
SILENT = "silent"


@dataclass(frozen=True, eq=False)
class SpeakerProfile:
    speaker_id: str
    pitch_hz: float
    pitch_jitter: float
    open_quotient: float
    asymmetry: float
    tract_pole_sets: tuple   # tuples of complex upper-half-plane poles
    noise_floor: float

    def __post_init__(self):
        if not 80.0 <= self.pitch_hz <= 260.0:
            raise ValueError("pitch out of the 80-260 Hz band")
        if not (0.0 < self.open_quotient < 1.0 and 0.0 < self.asymmetry < 1.0):
            raise ValueError("glottal shape parameters must lie in (0, 1)")
        for poles in self.tract_pole_sets:
            if any(abs(p) >= 1.0 for p in poles):
                raise ValueError("tract poles must be strictly inside the unit circle")


@dataclass(frozen=True)
class CorpusSpec:
    num_speakers: int = 20
    train_seconds: float = 30.0
    test_clips_per_speaker: int = 3
    test_clip_seconds: float = 6.0
    master_seed: int = 0


@dataclass(frozen=True)
class Segment:
    """One planned stretch of an utterance, in samples."""

    start: int
    length: int
    kind: str
    pole_set_index: int


def tract_pole_pool(master_seed):
    """Shared pool of vocal-tract configurations, one per master seed.

    Each configuration is four conjugate pole pairs at formant-like
    center frequencies with moderate bandwidths; only the upper-half
    poles are stored.
    """
    rng = np.random.default_rng(derive_seed(master_seed, _POOL_NS))
    bands = ((300.0, 850.0), (950.0, 2400.0), (2500.0, 3400.0), (3500.0, 4700.0))
    widths = ((60.0, 150.0), (80.0, 200.0), (100.0, 250.0), (120.0, 300.0))
    pool = []
    for _ in range(TRACT_POOL_SIZE):
        poles = []
        for (f_lo, f_hi), (b_lo, b_hi) in zip(bands, widths):
            freq = rng.uniform(f_lo, f_hi)
            bw = rng.uniform(b_lo, b_hi)
            radius = np.exp(-np.pi * bw / SAMPLE_RATE)
            angle = 2.0 * np.pi * freq / SAMPLE_RATE
            poles.append(radius * np.exp(1j * angle))
        pool.append(tuple(poles))
    return tuple(pool)


def _draw_profile(index, rng, pool):
    pitch = rng.uniform(*PITCH_RANGE)
    oq = rng.uniform(*OPEN_QUOTIENT_RANGE)
    asym = rng.uniform(*ASYMMETRY_RANGE)
    jitter = rng.uniform(*JITTER_RANGE)
    noise = rng.uniform(*NOISE_FLOOR_RANGE)
    num_sets = int(rng.integers(3, 5))
    chosen = rng.choice(len(pool), size=num_sets, replace=False)
    sets = tuple(pool[i] for i in chosen)
    return SpeakerProfile(
        speaker_id=f"spk{index:03d}",
        pitch_hz=pitch,
        pitch_jitter=jitter,
        open_quotient=oq,
        asymmetry=asym,
        tract_pole_sets=sets,
        noise_floor=noise,
    )


def _separated(candidate, priors):
    for other in priors:
        if abs(candidate.pitch_hz - other.pitch_hz) < MIN_PITCH_GAP:
            return False
        shape_gap = max(
            abs(candidate.open_quotient - other.open_quotient),
            abs(candidate.asymmetry - other.asymmetry),
        )
        if shape_gap < MIN_SHAPE_GAP:
            return False
    return True


def make_speaker_profile(index, master_seed):
    """Deterministic speaker profile, separated from all lower indices.

    Profiles are rejection-resampled until the pitch differs by at least
    5 Hz and the glottal shape by at least 0.05 (in open quotient or
    asymmetry) from every prior index under the same master seed.
    """
    if index < 0:
        raise ValueError("index must be nonnegative")
    pool = tract_pole_pool(master_seed)
    priors = []
    for i in range(index + 1):
        rng = np.random.default_rng(derive_seed(master_seed, _PROFILE_NS, i))
        for _ in range(MAX_PROFILE_ATTEMPTS):
            candidate = _draw_profile(i, rng, pool)
            if _separated(candidate, priors):
                priors.append(candidate)
                break
        else:
            raise ProfileSpaceExhausted(
                f"no admissible profile for index {i} after "
                f"{MAX_PROFILE_ATTEMPTS} resamples"
            )
    return priors[index]


def glottal_pulse_derivative(period, open_quotient, asymmetry):
    """Derivative of a two-piece polynomial glottal flow pulse.

    The flow rises as a smoothstep over the opening phase and falls as
    1 - tau^2 over the closing phase, so its derivative ends in a sharp
    negative spike at glottal closure. Peak magnitude is normalized to 1;
    the closed phase is zero.
    """
    open_len = max(int(round(open_quotient * period)), 4)
    open_len = min(open_len, period)
    t1 = min(max(int(round(asymmetry * open_len)), 2), open_len - 2)
    t2 = open_len - t1
    rise = np.arange(t1) / t1
    fall = np.arange(t2) / t2
    deriv = np.zeros(period)
    deriv[:t1] = 6.0 * rise * (1.0 - rise) / t1
    deriv[t1:open_len] = -2.0 * fall / t2
    peak = np.max(np.abs(deriv))
    return deriv / peak if peak > 0 else deriv


def _poles_to_poly(poles):
    roots = list(poles) + [np.conj(p) for p in poles]
    return np.real(np.poly(roots))


def _plan_segments(total, rng, num_pole_sets):
    segments = []
    pos = 0
    counter = 0
    lo = int(CHUNK_RANGE_S[0] * SAMPLE_RATE)
    hi = int(CHUNK_RANGE_S[1] * SAMPLE_RATE)
    while pos < total:
        length = min(int(rng.integers(lo, hi + 1)), total - pos)
        kind = (VOICED, UNVOICED, SILENT)[
            int(rng.choice(3, p=[VOICED_P, UNVOICED_P, SILENT_P]))
        ]
        segments.append(
            Segment(start=pos, length=length, kind=kind,
                    pole_set_index=counter % num_pole_sets)
        )
        pos += length
        counter += 1
    return segments


def synthesize_utterance_with_plan(profile, duration_s, utterance_seed):
    """Like synthesize_utterance but also returns the segment plan."""
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    total = int(round(duration_s * SAMPLE_RATE))
    rng = np.random.default_rng(derive_seed(utterance_seed, _UTTERANCE_NS))
    segments = _plan_segments(total, rng, len(profile.tract_pole_sets))

    excitation = np.zeros(total)
    base_period = SAMPLE_RATE / profile.pitch_hz
    for seg in segments:
        if seg.kind == SILENT:
            continue
        if seg.kind == UNVOICED:
            excitation[seg.start : seg.start + seg.length] = (
                UNVOICED_LEVEL * rng.standard_normal(seg.length)
            )
            continue
        # voiced: pulse train at jittered pitch plus a low noise floor
        chunk = np.zeros(seg.length)
        pos = 0
        while pos < seg.length:
            period = int(round(
                base_period * (1.0 + profile.pitch_jitter * rng.standard_normal())
            ))
            period = int(np.clip(period, SAMPLE_RATE // 300, SAMPLE_RATE // 65))
            pulse = glottal_pulse_derivative(
                period, profile.open_quotient, profile.asymmetry
            )
            take = min(period, seg.length - pos)
            chunk[pos : pos + take] = pulse[:take]
            pos += period
        chunk += profile.noise_floor * rng.standard_normal(seg.length)
        excitation[seg.start : seg.start + seg.length] = chunk

    polys = [_poles_to_poly(p) for p in profile.tract_pole_sets]
    output = np.empty(total)
    state = np.zeros(len(polys[0]) - 1)
    for seg in segments:
        poly = polys[seg.pole_set_index]
        filtered, state = lfilter(
            [1.0], poly, excitation[seg.start : seg.start + seg.length], zi=state
        )
        output[seg.start : seg.start + seg.length] = filtered

    peak = np.max(np.abs(output))
    if peak > 0:
        output *= PEAK_LEVEL / peak
    return AudioClip(samples=output, sample_rate_hz=SAMPLE_RATE), segments


def synthesize_utterance(profile, duration_s, utterance_seed):
    """Deterministic 16 kHz utterance for one speaker profile."""
    clip, _ = synthesize_utterance_with_plan(profile, duration_s, utterance_seed)
    return clip


def utterance_seed_for(master_seed, speaker_index, clip_index):
    """Documented derivation: clip 0 is the training clip, 1.. are tests."""
    return derive_seed(master_seed, _UTTERANCE_NS, speaker_index, clip_index)


@dataclass(frozen=True)
class ManifestEntry:
    speaker_id: str
    role: str          # train | test
    path: str          # relative to the manifest's directory
    duration_s: float
    master_seed: int


def generate_corpus(spec, out_dir):
    """Write one training WAV and spec.test_clips_per_speaker test WAVs per
    speaker plus a manifest.csv; fully deterministic from master_seed.

    Returns the list of manifest entries.
    """
    if spec.test_clip_seconds <= 0 or spec.train_seconds <= 0:
        raise ValueError("durations must be positive")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc

    entries = []
    for i in range(spec.num_speakers):
        profile = make_speaker_profile(i, spec.master_seed)
        jobs = [("train", 0, spec.train_seconds)]
        jobs += [
            ("test", c, spec.test_clip_seconds)
            for c in range(1, spec.test_clips_per_speaker + 1)
        ]
        for role, clip_index, duration in jobs:
            seed = utterance_seed_for(spec.master_seed, i, clip_index)
            clip = synthesize_utterance(profile, duration, seed)
            if role == "train":
                name = f"{profile.speaker_id}_train.wav"
            else:
                name = f"{profile.speaker_id}_test{clip_index - 1}.wav"
            write_wav(clip, out / name)
            entries.append(
                ManifestEntry(
                    speaker_id=profile.speaker_id,
                    role=role,
                    path=name,
                    duration_s=duration,
                    master_seed=spec.master_seed,
                )
            )

    try:
        with open(out / "manifest.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["speaker_id", "role", "path", "duration_s", "master_seed"])
            for e in entries:
                writer.writerow(
                    [e.speaker_id, e.role, e.path, repr(e.duration_s), e.master_seed]
                )
    except OSError as exc:
        raise IoFailure(f"cannot write manifest: {exc}") from exc
    return entries


def load_manifest(path):
    """Read a corpus manifest back into ManifestEntry objects."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            entries = [
                ManifestEntry(
                    speaker_id=row["speaker_id"],
                    role=row["role"],
                    path=row["path"],
                    duration_s=float(row["duration_s"]),
                    master_seed=int(row["master_seed"]),
                )
                for row in reader
            ]
    except OSError as exc:
        raise IoFailure(f"cannot read manifest {path}: {exc}") from exc
    return entries
