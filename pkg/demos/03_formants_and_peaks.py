"""
Acoustic cue measurement
========================

Measure formants on a synthetic vowel with known resonances, then read
spectral peak bins for a fricative and a plosive burst off the log-mel
matrix.
"""

import numpy as np

from phonsal import Waveform, compute_logmel, estimate_formants, fricative_peak, burst_peak
from phonsal.features import mel_bin_centers
from phonsal.synth import bandpass_noise, synthesize_vowel

rng = np.random.default_rng(3)

# vowel with poles planted at 600 / 1400 / 2600 Hz
truth = (600.0, 1400.0, 2600.0, 3500.0)
samples = synthesize_vowel(truth, [80, 90, 120, 180], f0=120.0, duration=0.5)
vowel = Waveform(samples=samples, sample_rate=16000)
formants = estimate_formants(vowel, midpoint_sample=len(vowel) // 2, gender="M")
print("planted formants:", [f"{f:.0f}" for f in truth[:3]])
print("measured:        ",
      [None if f is None else f"{f:.0f}" for f in (formants.f1, formants.f2, formants.f3)])

# /s/-like frication: band noise at 5-7.5 kHz, peak should land in that band
noise = bandpass_noise(5000, 7500, 8000, rng, 16000, 0.3)
mel = compute_logmel(Waveform(samples=noise, sample_rate=16000))
peak = fricative_peak(mel, mel.n_frames // 2)
centers = mel_bin_centers(mel.frame_params, 16000)
print(f"fricative peak: bin {peak.bin} ({centers[peak.bin]:.0f} Hz)")

# plosive burst: silence, then a sharp band-limited transient
silence = 0.001 * rng.standard_normal(4000)
burst = bandpass_noise(3000, 6500, 960, rng, 16000, 0.5) * np.exp(-np.arange(960) / 200)
wave = Waveform(samples=np.concatenate([silence, burst, silence]), sample_rate=16000)
mel = compute_logmel(wave)
onset_frame = (4000 - 200) // 160 + 1
measurement = burst_peak(mel, onset_frame)
print(f"burst peak over 2 frames (35 ms): bin {measurement.bin} "
      f"({centers[measurement.bin]:.0f} Hz), frames used: {measurement.source_frames}")
