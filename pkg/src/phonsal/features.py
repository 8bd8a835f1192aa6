"""Log-mel filterbank front end.

Computes the 80-channel log-mel representation consumed by the rest of the
toolkit, applies utterance-level mean/variance normalization (CMVN), and maps
between Hz and mel bin indices.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

SUPPORTED_SAMPLE_RATE = 16000
LOG_FLOOR = 1e-10
CMVN_STD_FLOOR = 1e-8


def hz_to_mel(hz):
    """HTK mel scale: mel = 2595 * log10(1 + hz / 700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class FrameParams:
    """Framing and filterbank geometry for the log-mel front end."""

    window_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 80
    preemphasis: float = 0.97
    dither: float = 0.0

    def __post_init__(self):
        if not (self.window_ms > self.hop_ms > 0):
            raise ValueError("window_ms must exceed hop_ms and both must be positive")
        if self.n_mels < 1:
            raise ValueError("n_mels must be positive")

    def window_samples(self, sample_rate: int) -> int:
        return int(round(self.window_ms * sample_rate / 1000.0))

    def hop_samples(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000.0))


@dataclass(frozen=True)
class Waveform:
    """Mono PCM audio, samples normalized to [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("waveform must be a non-empty 1-D array")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class MelSpectrogram:
    """T x F matrix of log-compressed mel energies plus its framing metadata."""

    values: np.ndarray
    frame_params: FrameParams
    sample_rate: int
    cmvn_applied: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("values must be a 2-D (frames x bins) array")
        if values.shape[0] < 1:
            raise ValueError("need at least one frame")
        if values.shape[1] != self.frame_params.n_mels:
            raise ValueError(
                f"bin count {values.shape[1]} does not match n_mels {self.frame_params.n_mels}"
            )
        object.__setattr__(self, "values", values)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]

    def frame_time(self, frame: int) -> float:
        """Window-center time of a frame, in seconds."""
        p = self.frame_params
        return (frame * p.hop_ms + p.window_ms / 2.0) / 1000.0


def n_frames(num_samples: int, p: FrameParams, sample_rate: int) -> int:
    """Number of full analysis windows: 1 + floor((N - window) / hop)."""
    win = p.window_samples(sample_rate)
    hop = p.hop_samples(sample_rate)
    if num_samples < win:
        return 0
    return 1 + (num_samples - win) // hop


def frame_center_sample(frame: int, p: FrameParams, sample_rate: int) -> float:
    """Window-center position of a frame, in samples."""
    return frame * p.hop_samples(sample_rate) + p.window_samples(sample_rate) / 2.0


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filters, (n_mels, n_fft//2+1), HTK mel from 0 Hz to Nyquist."""
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    points_hz = mel_to_hz(np.linspace(0.0, float(hz_to_mel(sample_rate / 2.0)), n_mels + 2))
    lower = points_hz[:-2, None]
    center = points_hz[1:-1, None]
    upper = points_hz[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    return np.clip(np.minimum(rising, falling), 0.0, None)


def mel_bin_centers(p: FrameParams, sample_rate: int) -> np.ndarray:
    """Center frequency in Hz of each mel bin, strictly increasing."""
    points_hz = mel_to_hz(np.linspace(0.0, float(hz_to_mel(sample_rate / 2.0)), p.n_mels + 2))
    return points_hz[1:-1]


def hz_to_bin(hz: float, p: FrameParams, sample_rate: int) -> int:
    """Index of the mel bin whose center is nearest to ``hz`` (ties -> lower)."""
    nyquist = sample_rate / 2.0
    if not (0.0 <= hz <= nyquist):
        raise ValueError(f"frequency {hz} Hz outside [0, {nyquist}]")
    centers = mel_bin_centers(p, sample_rate)
    return int(np.argmin(np.abs(centers - hz)))


def _frame_signal(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    count = 1 + (x.size - win) // hop
    idx = np.arange(count)[:, None] * hop + np.arange(win)[None, :]
    return x[idx]


def compute_logmel(w: Waveform, p: FrameParams | None = None) -> MelSpectrogram:
    """Log-compressed mel filterbank energies of a 16 kHz waveform.

    Hamming-windowed frames with whole-signal pre-emphasis; energies pass
    through ln(max(e, 1e-10)) so silence maps to a finite floor.
    """
    if p is None:
        p = FrameParams()
    if w.sample_rate != SUPPORTED_SAMPLE_RATE:
        raise ValueError(f"only {SUPPORTED_SAMPLE_RATE} Hz input is supported, got {w.sample_rate}")
    x = w.samples
    if not np.isfinite(x).all():
        raise ValueError("waveform contains non-finite samples")
    win = p.window_samples(w.sample_rate)
    hop = p.hop_samples(w.sample_rate)
    if x.size < win:
        raise ValueError(f"too-short input: {x.size} samples < one {win}-sample window")

    if p.dither > 0:
        # Fixed key keeps the front end deterministic even with dither enabled.
        rng = np.random.Generator(np.random.Philox(key=0xD17E4))
        x = x + p.dither * rng.standard_normal(x.size)
    if p.preemphasis > 0:
        x = np.concatenate([x[:1], x[1:] - p.preemphasis * x[:-1]])

    frames = _frame_signal(x, win, hop) * np.hamming(win)
    n_fft = 1 << (win - 1).bit_length()
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    energy = power @ mel_filterbank(p.n_mels, n_fft, w.sample_rate).T
    values = np.log(np.maximum(energy, LOG_FLOOR))
    return MelSpectrogram(values=values, frame_params=p, sample_rate=w.sample_rate)


def cmvn(x: MelSpectrogram) -> MelSpectrogram:
    """Utterance-level per-channel mean/variance normalization.

    Uses the population standard deviation; channels with std below 1e-8
    are zeroed out instead of amplified.
    """
    if x.cmvn_applied:
        raise ValueError("CMVN already applied to this spectrogram")
    if x.n_frames < 2:
        raise ValueError("CMVN needs at least two frames")
    centered = x.values - x.values.mean(axis=0)
    centered -= centered.mean(axis=0)  # second pass removes the rounding residual
    std = centered.std(axis=0)
    degenerate = std < CMVN_STD_FLOOR
    out = np.where(degenerate, 0.0, centered / np.where(degenerate, 1.0, std))
    return replace(x, values=out, cmvn_applied=True)
