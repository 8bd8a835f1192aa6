"""
Log-mel front end basics
========================

Compute the 80-channel log-mel representation of a synthetic vowel, apply
utterance-level CMVN, and look at the mel bin geometry.
"""

import numpy as np

from phonsal import FrameParams, Waveform, cmvn, compute_logmel, hz_to_bin, mel_bin_centers
from phonsal.synth import synthesize_vowel

# a half-second /a/-like vowel at 16 kHz
samples = synthesize_vowel((730, 1090, 2440, 3400), [80, 90, 120, 180],
                           f0=120.0, duration=0.5)
wave = Waveform(samples=samples, sample_rate=16000)

params = FrameParams()  # 25 ms windows, 10 ms hop, 80 mel channels
mel = compute_logmel(wave, params)
print(f"waveform: {len(wave)} samples -> {mel.n_frames} frames x {mel.n_bins} bins")
print(f"frame 0 covers 0..25 ms, centered at {mel.frame_time(0) * 1000:.1f} ms")

# energy concentrates around the first formant
centers = mel_bin_centers(params, 16000)
loudest = int(np.argmax(mel.values.mean(axis=0)))
print(f"loudest bin: {loudest} (center {centers[loudest]:.0f} Hz)")
print(f"bin nearest 730 Hz: {hz_to_bin(730, params, 16000)}")

# CMVN standardizes each channel over the utterance
normalized = cmvn(mel)
print(f"after CMVN: per-channel mean ~ {normalized.values.mean(axis=0).max():.1e}, "
      f"std ~ {normalized.values.std(axis=0).mean():.3f}")
