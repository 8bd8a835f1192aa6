"""Deterministic synthetic speech material.

Builds vowels as impulse trains through all-pole resonators (so formant
ground truth is exact), fricatives as band-limited noise, and plosives as
closure silence plus a band-shaped burst. On top of that it assembles a
small TIMIT-layout corpus with exact .PHN/.WRD annotations and a matching
oracle backend script, which is what the self-test and the demo scripts run
against instead of licensed data.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from . import audio
from .backend import ScriptedCorpusBackend, Token, TokenSequence, features_fingerprint
from .features import FrameParams, Waveform, cmvn, compute_logmel

SAMPLE_RATE = 16000

# steady-state (F1, F2, F3) targets per studied vowel, male speakers
VOWEL_FORMANTS_M = {
    "iy": (270, 2290, 3010), "ih": (390, 1990, 2550), "eh": (530, 1840, 2480),
    "ae": (660, 1720, 2410), "aa": (730, 1090, 2440), "ah": (640, 1190, 2390),
    "ax": (500, 1500, 2500), "uh": (440, 1020, 2240), "uw": (300, 870, 2240),
    "ux": (350, 1600, 2250), "ix": (400, 1700, 2450),
}
FEMALE_SHIFT = 1.15
F0_HZ = {"M": 120.0, "F": 210.0}

FRICATIVE_BANDS = {
    "s": (5000, 7500, 0.30, False), "z": (4500, 7000, 0.25, True),
    "sh": (2000, 4000, 0.30, False), "zh": (2000, 4000, 0.25, True),
    "f": (1500, 7000, 0.06, False), "v": (1000, 6000, 0.05, True),
    "th": (1500, 7000, 0.06, False), "dh": (1000, 6000, 0.05, True),
}
BURST_BANDS = {
    "p": (300, 900), "b": (300, 900),
    "t": (3000, 6500), "d": (3000, 6500),
    "k": (1200, 2800), "g": (1200, 2800),
}

LEXICON = {
    "sea": ["s", "iy"], "she": ["sh", "iy"], "tea": ["tcl", "t", "iy"],
    "key": ["kcl", "k", "iy"], "do": ["dcl", "d", "uw"], "goo": ["gcl", "g", "uw"],
    "fee": ["f", "iy"], "the": ["dh", "ax"], "zoo": ["z", "uw"],
    "paw": ["pcl", "p", "aa"], "bee": ["bcl", "b", "iy"], "shoe": ["sh", "uw"],
    "is": ["ih", "z"], "ease": ["iy", "z"], "thaw": ["th", "aa"], "vee": ["v", "iy"],
    "ash": ["ae", "sh"], "up": ["ah", "s"],
}

# words deliberately split into two subword tokens to exercise aggregation
TWO_TOKEN_WORDS = {"sea": ("se", "a"), "tea": ("te", "a"), "shoe": ("sh", "oe"),
                   "ease": ("ea", "se"), "thaw": ("th", "aw")}

PHONE_S = {"vowel": 0.16, "fricative": 0.14, "closure": 0.07, "release": 0.05, "sil": 0.08}


def impulse_train(f0: float, n_samples: int, sample_rate: int) -> np.ndarray:
    x = np.zeros(n_samples)
    period = sample_rate / f0
    positions = np.arange(0, n_samples, period).astype(int)
    x[positions[positions < n_samples]] = 1.0
    return x


def apply_resonators(x: np.ndarray, formants, bandwidths, sample_rate: int) -> np.ndarray:
    """Cascade of two-pole resonators with poles exactly at the given
    frequencies and bandwidths."""
    y = x
    for f, bw in zip(formants, bandwidths):
        r = np.exp(-np.pi * bw / sample_rate)
        theta = 2.0 * np.pi * f / sample_rate
        b = [1.0 - r]
        a = [1.0, -2.0 * r * np.cos(theta), r * r]
        y = signal.lfilter(b, a, y)
    return y


def synthesize_vowel(formants, bandwidths, f0: float, duration: float,
                     sample_rate: int = SAMPLE_RATE, amplitude: float = 0.3,
                     source_tilt: float = 0.98) -> np.ndarray:
    """Voiced vowel with poles exactly at ``formants``.

    The impulse train passes through a leaky integrator (pole at
    ``source_tilt``) so the excitation falls off with frequency like a
    glottal source; a flat source would fight the downstream pre-emphasis
    and bias formant reads upward.
    """
    n = int(round(duration * sample_rate))
    x = impulse_train(f0, n, sample_rate)
    if source_tilt:
        x = signal.lfilter([1.0], [1.0, -source_tilt], x)
    x = apply_resonators(x, formants, bandwidths, sample_rate)
    peak = np.abs(x).max()
    return x * (amplitude / peak) if peak > 0 else x


def bandpass_noise(lo: float, hi: float, n_samples: int, rng: np.random.Generator,
                   sample_rate: int = SAMPLE_RATE, amplitude: float = 0.2) -> np.ndarray:
    noise = rng.standard_normal(n_samples + 256)
    sos = signal.butter(4, [lo, hi], btype="bandpass", fs=sample_rate, output="sos")
    shaped = signal.sosfilt(sos, noise)[256:]
    peak = np.abs(shaped).max()
    return shaped * (amplitude / peak) if peak > 0 else shaped


def _vowel_formants(label: str, gender: str):
    base = VOWEL_FORMANTS_M[label]
    scale = FEMALE_SHIFT if gender == "F" else 1.0
    return [f * scale for f in base] + [3400.0 * scale]


def synthesize_phone(label: str, gender: str, rng: np.random.Generator) -> np.ndarray:
    sr = SAMPLE_RATE
    if label in VOWEL_FORMANTS_M:
        return synthesize_vowel(_vowel_formants(label, gender), [80, 90, 120, 180],
                                F0_HZ[gender], PHONE_S["vowel"], sr)
    if label in FRICATIVE_BANDS:
        lo, hi, amp, voiced = FRICATIVE_BANDS[label]
        n = int(PHONE_S["fricative"] * sr)
        out = bandpass_noise(lo, hi, n, rng, sr, amp)
        if voiced:
            out = out + 0.05 * np.sin(2 * np.pi * F0_HZ[gender] * np.arange(n) / sr)
        return out
    if label.endswith("cl"):
        n = int(PHONE_S["closure"] * sr)
        return 0.002 * rng.standard_normal(n)
    if label in BURST_BANDS:
        lo, hi = BURST_BANDS[label]
        n = int(PHONE_S["release"] * sr)
        burst = bandpass_noise(lo, hi, n, rng, sr, 0.35)
        burst *= np.exp(-np.arange(n) / (0.012 * sr))  # sharp onset, fast decay
        return burst
    if label == "h#":
        return 0.001 * rng.standard_normal(int(PHONE_S["sil"] * sr))
    raise ValueError(f"no synthesis recipe for phone {label!r}")


@dataclass(frozen=True)
class MiniUtterance:
    utterance_id: str
    speaker: str
    gender: str
    words: tuple[str, ...]
    transcript_words: tuple[str, ...]  # what the scripted backend "predicts"


MINI_UTTERANCES = (
    MiniUtterance("train/dr1/mjd0/sx101", "mjd0", "M", ("sea", "tea"), ("sea", "tea")),
    MiniUtterance("train/dr1/mjd0/sx102", "mjd0", "M", ("she", "goo"), ("she", "goo")),
    MiniUtterance("train/dr1/mjd0/sx103", "mjd0", "M", ("key", "fee"), ("key", "fee")),
    MiniUtterance("train/dr1/mjd0/sx104", "mjd0", "M", ("the", "zoo"), ("the", "zoo")),
    # deliberate misrecognition: excluded by the error-free filter, feeds WER
    MiniUtterance("train/dr1/mjd0/sx105", "mjd0", "M", ("paw", "bee"), ("pa", "bee")),
    MiniUtterance("train/dr1/mjd0/sa101", "mjd0", "M", ("shoe",), ("shoe",)),
    MiniUtterance("train/dr1/fsk0/sx201", "fsk0", "F", ("sea", "do"), ("sea", "do")),
    MiniUtterance("train/dr1/fsk0/sx202", "fsk0", "F", ("tea", "she"), ("tea", "she")),
    MiniUtterance("train/dr1/fsk0/sx203", "fsk0", "F", ("is", "ease"), ("is", "ease")),
    MiniUtterance("train/dr1/fsk0/sx204", "fsk0", "F", ("thaw", "vee"), ("thaw", "vee")),
    MiniUtterance("train/dr1/fsk0/sx205", "fsk0", "F", ("bee", "key"), ("bee", "key")),
)


def tokens_for_words(words, vocab: dict[str, int]) -> TokenSequence:
    tokens = []
    for word in words:
        pieces = TWO_TOKEN_WORDS.get(word, (word,))
        for j, piece in enumerate(pieces):
            tokens.append(Token(id=vocab[piece], text=piece, begins_word=(j == 0)))
    return TokenSequence(tuple(tokens))


def _build_vocab() -> dict[str, int]:
    pieces = set()
    for utt in MINI_UTTERANCES:
        for word in utt.transcript_words:
            pieces.update(TWO_TOKEN_WORDS.get(word, (word,)))
    return {piece: i for i, piece in enumerate(sorted(pieces))}


def render_utterance(utt: MiniUtterance, seed: int = 0):
    """Waveform plus sample-exact phone and word spans for one utterance."""
    digest = hashlib.sha256(f"{utt.utterance_id}:{seed}".encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    phone_spans: list[tuple[int, int, str]] = []
    word_spans: list[tuple[int, int, str]] = []
    chunks: list[np.ndarray] = []
    cursor = 0

    def push(label: str, samples: np.ndarray):
        nonlocal cursor
        phone_spans.append((cursor, cursor + samples.size, label))
        chunks.append(samples)
        cursor += samples.size

    push("h#", synthesize_phone("h#", utt.gender, rng))
    for word in utt.words:
        word_start = cursor
        for phone in LEXICON[word]:
            push(phone, synthesize_phone(phone, utt.gender, rng))
        word_spans.append((word_start, cursor, word))
    push("h#", synthesize_phone("h#", utt.gender, rng))

    samples = np.concatenate(chunks)
    peak = np.abs(samples).max()
    if peak > 0.99:
        samples = samples * (0.99 / peak)
    return Waveform(samples=samples, sample_rate=SAMPLE_RATE), phone_spans, word_spans


def build_mini_corpus(root, seed: int = 0, frame_params: FrameParams | None = None):
    """Write the synthetic corpus and its oracle backend script.

    Returns (corpus_root, script_path). One utterance is stored as SPHERE
    under a .wav name to exercise format sniffing.
    """
    if frame_params is None:
        frame_params = FrameParams()
    root = Path(root)
    vocab = _build_vocab()
    entries: dict[str, TokenSequence] = {}

    for index, utt in enumerate(MINI_UTTERANCES):
        w, phone_spans, word_spans = render_utterance(utt, seed)
        folder = root / Path(utt.utterance_id).parent
        folder.mkdir(parents=True, exist_ok=True)
        stem = Path(utt.utterance_id).name
        audio_path = folder / f"{stem}.wav"
        if index == 1:
            audio.write_sphere(audio_path, w)
        else:
            audio.write_wav(audio_path, w)
        with open(folder / f"{stem}.phn", "w", encoding="utf-8") as f:
            f.writelines(f"{a} {b} {label}\n" for a, b, label in phone_spans)
        with open(folder / f"{stem}.wrd", "w", encoding="utf-8") as f:
            f.writelines(f"{a} {b} {label}\n" for a, b, label in word_spans)
        with open(folder / f"{stem}.txt", "w", encoding="utf-8") as f:
            f.write(f"0 {len(w)} {' '.join(utt.words)}\n")

        # fingerprint what the pipeline will actually read back (int16-quantized)
        features = cmvn(compute_logmel(audio.load_audio(audio_path), frame_params))
        entries[features_fingerprint(features)] = tokens_for_words(utt.transcript_words, vocab)

    script_path = root / "backend_script.json"
    with open(script_path, "w", encoding="utf-8") as f:
        json.dump(ScriptedCorpusBackend.script_document(entries), f, indent=1, sort_keys=True)
    return root, script_path
