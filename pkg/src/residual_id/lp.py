"""Linear prediction analysis and residual extraction.

Sign convention used throughout: the inverse filter is
A(z) = 1 + sum_k a_k z^-k, the predictor is shat(n) = -sum_k a_k s(n-k),
and the residual is e(n) = s(n) + sum_k a_k s(n-k). An AR(1) source
s(n) = 0.9 s(n-1) + u(n) therefore yields a_1 close to -0.9.
"""

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .audio_io import hamming_window, HAMMING
from .errors import (
    ClipTooShort,
    LagTooLarge,
    MemoryLengthMismatch,
    NumericalBreakdown,
    ZeroEnergy,
)

SILENCE_ENERGY = 1e-12  # frames with r[0] at or below this produce zero residual
DEFAULT_ORDER = 12


@dataclass(frozen=True, eq=False)
class LpModel:
    """Order-p predictor: coefficients a_1..a_p and final prediction-error energy."""

    order: int
    coeffs: np.ndarray
    error_energy: float

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=np.float64))
        if len(self.coeffs) != self.order:
            raise ValueError("coeffs length must equal order")
        if self.error_energy < 0:
            raise ValueError("error_energy must be nonnegative")


@dataclass(frozen=True, eq=False)
class ResidualSignal:
    """Prediction error aligned 1:1 with the analyzed region of the source."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        object.__setattr__(
            self, "samples", np.asarray(self.samples, dtype=np.float64)
        )

    def __len__(self):
        return len(self.samples)


def autocorrelate(samples, max_lag):
    """r[k] = sum_{n=k}^{L-1} x[n] x[n-k] for k = 0..max_lag."""
    x = np.asarray(samples, dtype=np.float64)
    if max_lag >= len(x):
        raise LagTooLarge(f"max_lag {max_lag} >= frame length {len(x)}")
    r = np.empty(max_lag + 1)
    for k in range(max_lag + 1):
        r[k] = np.dot(x[k:], x[: len(x) - k]) if k else np.dot(x, x)
    return r


def levinson_durbin(r, order):
    """Solve the order-p autocorrelation normal equations by the Levinson
    recursion.

    Equivalent (to rounding) to solving the p x p Toeplitz system
    R a = -r[1..p] directly. The running error energy satisfies
    E_p = r[0] * prod(1 - k_i^2) over the reflection coefficients k_i.
    Reflection coefficients leaving the unit disc by more than 1e-9
    signal an invalid autocorrelation sequence and raise.
    """
    r = np.asarray(r, dtype=np.float64)
    if len(r) < order + 1:
        raise ValueError(f"need {order + 1} autocorrelation lags, got {len(r)}")
    if r[0] <= 0.0:
        raise ZeroEnergy(f"r[0] = {r[0]} is not positive")

    a = np.zeros(order)
    energy = float(r[0])
    for i in range(1, order + 1):
        acc = r[i] + np.dot(a[: i - 1], r[i - 1 : 0 : -1])
        k = -acc / energy
        if abs(k) >= 1.0 + 1e-9:
            raise NumericalBreakdown(
                f"reflection coefficient {k} at order {i} leaves the unit disc"
            )
        if abs(k) >= 1.0:
            # tolerated sliver: clamp so the error energy stays positive
            k = np.sign(k) * (1.0 - 1e-12)
        if i > 1:
            prev = a[: i - 1].copy()
            a[: i - 1] = prev + k * prev[::-1]
        a[i - 1] = k
        energy *= 1.0 - k * k
    return LpModel(order=order, coeffs=a, error_energy=max(energy, 0.0))


def inverse_filter(samples, lp, memory):
    """Apply A(z) to samples: e(n) = s(n) + sum_k a_k s(n-k).

    `memory` supplies the lp.order samples immediately preceding
    samples[0], in chronological order (memory[-1] is s(-1)).
    """
    x = np.asarray(samples, dtype=np.float64)
    mem = np.asarray(memory, dtype=np.float64)
    if len(mem) != lp.order:
        raise MemoryLengthMismatch(
            f"memory length {len(mem)} != order {lp.order}"
        )
    ext = np.concatenate([mem, x])
    b = np.concatenate([[1.0], lp.coeffs])
    out = lfilter(b, [1.0], ext)[lp.order :]
    return np.asarray(out, dtype=np.float64)


def residual_of_clip(clip, spec, order=DEFAULT_ORDER):
    """LP residual of a whole clip, computed framewise.

    For each hop region [i*H, i*H + H) the coefficients are estimated from
    the windowed analysis frame starting at the same offset (length L >= H),
    then the inverse filter runs over the raw, unwindowed region samples
    with the actual preceding clip samples as memory (zeros before sample
    0). Regions whose analysis frame is essentially silent contribute a
    zero residual instead of failing. The concatenated residual covers
    hops * H samples and is aligned 1:1 with the clip.
    """
    samples = np.asarray(clip.samples, dtype=np.float64)
    sr = clip.sample_rate_hz
    length = spec.frame_len(sr)
    hop = spec.hop(sr)
    if len(samples) < length:
        raise ClipTooShort(
            f"clip of {len(samples)} samples shorter than frame of {length}"
        )
    hops = (len(samples) - length) // hop + 1
    window = hamming_window(length) if spec.window == HAMMING else np.ones(length)

    residual = np.zeros(hops * hop)
    for i in range(hops):
        start = i * hop
        analysis = samples[start : start + length] * window
        r = autocorrelate(analysis, order)
        if r[0] <= SILENCE_ENERGY:
            continue  # silent region: residual stays zero
        model = levinson_durbin(r, order)
        if start >= order:
            memory = samples[start - order : start]
        else:
            memory = np.concatenate([np.zeros(order - start), samples[:start]])
        region = samples[start : start + hop]
        residual[start : start + hop] = inverse_filter(region, model, memory)
    return ResidualSignal(samples=residual, sample_rate_hz=sr)
