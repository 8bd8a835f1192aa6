"""Acoustic cue measurements: formants at vowel midpoints and spectral peak
bins for fricatives and plosive bursts.

Formants come from Burg LPC over a single Gaussian-tapered 25 ms window at
the phone midpoint, after resampling to twice the gender-specific ceiling
(5000 Hz for men, 5500 Hz for women) and 50 Hz pre-emphasis. Peaks are simple
argmax reads on the pre-CMVN log-mel matrix, which keeps cross-bin ordering
physical.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal

from .features import MelSpectrogram, Waveform

FORMANT_CEILING_HZ = {"M": 5000.0, "F": 5500.0}
LPC_ORDER = 10  # two coefficients per formant, five formants
BANDWIDTH_MAX_HZ = 400.0
FREQ_MARGIN_HZ = 50.0
WINDOW_S = 0.025
PREEMPHASIS_FROM_HZ = 50.0


class FormantMeasurementError(RuntimeError):
    """LPC analysis failed for this occurrence; exclude it and count it."""


@dataclass(frozen=True)
class FormantSet:
    f1: float | None
    f2: float | None
    f3: float | None
    f4: float | None
    gender_ceiling: float

    def __post_init__(self):
        present = [f for f in (self.f1, self.f2, self.f3, self.f4) if f is not None]
        if any(b <= a for a, b in zip(present, present[1:])):
            raise ValueError("formants must be strictly increasing")
        for f in present:
            if not (FREQ_MARGIN_HZ < f < self.gender_ceiling - FREQ_MARGIN_HZ):
                raise ValueError(f"formant {f} Hz outside the admissible band")

    def get(self, index: int) -> float | None:
        return (self.f1, self.f2, self.f3, self.f4)[index - 1]


@dataclass(frozen=True)
class PeakMeasurement:
    bin: int
    source_frames: int  # 1 = single frame (midpoint or degraded burst), 2 = burst window


def burg_lpc(x: np.ndarray, order: int) -> np.ndarray:
    """Burg's method; returns the prediction polynomial [1, a1, ..., a_order]."""
    ef = np.asarray(x, dtype=np.float64).copy()
    eb = ef.copy()
    a = np.array([1.0])
    for _ in range(order):
        num = float(ef[1:] @ eb[:-1])
        den = float(ef[1:] @ ef[1:] + eb[:-1] @ eb[:-1])
        if den <= 0.0 or not np.isfinite(den):
            raise FormantMeasurementError("degenerate prediction error energy")
        k = -2.0 * num / den
        a = np.append(a, 0.0) + k * np.append(0.0, a[::-1])
        ef, eb = ef[1:] + k * eb[:-1], eb[:-1] + k * ef[1:]
    if not np.isfinite(a).all():
        raise FormantMeasurementError("non-finite LPC coefficients")
    return a


def _resample(x: np.ndarray, rate_in: int, rate_out: int) -> np.ndarray:
    ratio = Fraction(rate_out, rate_in)
    return signal.resample_poly(x, ratio.numerator, ratio.denominator)


def _gaussian_window(n: int) -> np.ndarray:
    # Praat-style Gaussian taper: near zero at the edges, effective duration
    # about half the physical length.
    u = (np.arange(n) - (n - 1) / 2.0) / (n + 1)
    return (np.exp(-48.0 * u * u) - np.exp(-12.0)) / (1.0 - np.exp(-12.0))


def estimate_formants(w: Waveform, midpoint_sample: int, gender: str) -> FormantSet:
    """First four formants (Hz) at a waveform position.

    Candidates are LPC polynomial roots converted to (frequency, bandwidth);
    only resonances inside (50, ceiling-50) Hz with bandwidth under 400 Hz
    survive, sorted ascending. Fewer than four survivors leave the higher
    formants absent.
    """
    if gender not in FORMANT_CEILING_HZ:
        raise ValueError(f"gender must be M or F, got {gender!r}")
    ceiling = FORMANT_CEILING_HZ[gender]
    rate = int(2 * ceiling)

    y = _resample(w.samples, w.sample_rate, rate)
    mid = int(round(midpoint_sample * rate / w.sample_rate))
    # Gaussian windows span twice their nominal length (Praat convention), so
    # the 25 ms window occupies a 50 ms physical stretch.
    half = int(round(WINDOW_S * rate))
    if mid - half < 0 or mid + half > y.size:
        raise ValueError("the analysis window does not fit around the midpoint")

    alpha = np.exp(-2.0 * np.pi * PREEMPHASIS_FROM_HZ / rate)
    y = np.concatenate([y[:1], y[1:] - alpha * y[:-1]])
    frame = y[mid - half : mid + half] * _gaussian_window(2 * half)

    a = burg_lpc(frame, LPC_ORDER)
    roots = np.roots(a)
    roots = roots[np.imag(roots) > 0]
    freqs = np.angle(roots) * rate / (2.0 * np.pi)
    bandwidths = -np.log(np.abs(roots)) * rate / np.pi

    keep = ((freqs > FREQ_MARGIN_HZ) & (freqs < ceiling - FREQ_MARGIN_HZ)
            & (bandwidths < BANDWIDTH_MAX_HZ))
    candidates = np.sort(freqs[keep])
    values = [float(candidates[i]) if i < candidates.size else None for i in range(4)]
    return FormantSet(f1=values[0], f2=values[1], f3=values[2], f4=values[3],
                      gender_ceiling=ceiling)


def fricative_peak(x: MelSpectrogram, midpoint_frame: int) -> PeakMeasurement:
    """Bin of the highest log-mel value at the phone midpoint (ties -> lower bin)."""
    if x.cmvn_applied:
        raise ValueError("peak measurement expects pre-CMVN features")
    if not (0 <= midpoint_frame < x.n_frames):
        raise ValueError(f"midpoint frame {midpoint_frame} outside [0, {x.n_frames})")
    return PeakMeasurement(bin=int(np.argmax(x.values[midpoint_frame])), source_frames=1)


def burst_peak(x: MelSpectrogram, release_onset_frame: int) -> PeakMeasurement:
    """Bin of the highest log-mel value over the first two release frames.

    The two 25 ms windows, one hop apart, cover a 35 ms stretch from the
    burst onset. Ties resolve to the lower bin, then the earlier frame; a
    release starting on the last frame degrades to that single frame.
    """
    if x.cmvn_applied:
        raise ValueError("peak measurement expects pre-CMVN features")
    if not (0 <= release_onset_frame < x.n_frames):
        raise ValueError(f"onset frame {release_onset_frame} outside [0, {x.n_frames})")
    stop = min(release_onset_frame + 2, x.n_frames)
    window = x.values[release_onset_frame:stop]
    best = window.max()
    bins, = np.where((window == best).any(axis=0))
    return PeakMeasurement(bin=int(bins[0]), source_frames=stop - release_onset_frame)
