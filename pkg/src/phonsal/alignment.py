"""TIMIT-style time-aligned annotations and their mapping onto model output.

Parses .PHN/.WRD span files, reconstructs words from subword tokens, checks
predictions against the annotation, converts sample spans to frame spans, and
enumerates the phone occurrences under study (11 monophthong vowels, 8
fricatives, and prevocalic plosives split into closure/release phases).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

from .backend import TokenSequence
from .features import FrameParams, Waveform, frame_center_sample, n_frames as count_frames

VOWELS = {"aa": "ɑ", "ae": "æ", "ah": "ʌ", "eh": "ɛ", "ax": "ə", "uh": "ʊ",
          "ih": "ɪ", "ix": "ɨ", "iy": "i", "ux": "ʉ", "uw": "u"}
FRICATIVES = {"s": "s", "z": "z", "sh": "ʃ", "zh": "ʒ",
              "f": "f", "v": "v", "th": "θ", "dh": "ð"}
PLOSIVES = {"p": "p", "b": "b", "t": "t", "d": "d", "k": "k", "g": "g"}
CLOSURES = {"pcl": "p", "bcl": "b", "tcl": "t", "dcl": "d", "kcl": "k", "gcl": "g"}

PUNCTUATION = ".,!?;:'\"()-"
_STRIP_TABLE = str.maketrans("", "", PUNCTUATION)


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotatedSpan:
    start: int
    end: int
    label: str

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError(f"bad span [{self.start}, {self.end})")


@dataclass(frozen=True)
class PhoneOccurrence:
    phoneme: str
    phone_class: str  # vowel | fricative | plosive
    phase: str  # whole | closure | release
    start: int
    end: int
    frames: range
    midpoint_frame: int
    word_index: int
    speaker_gender: str
    utterance_id: str

    def __post_init__(self):
        if len(self.frames) == 0:
            raise ValueError("frame span must be non-empty")
        if (self.phase != "whole") != (self.phone_class == "plosive"):
            raise ValueError("closure/release phases apply to plosives only")


@dataclass
class UtteranceRecord:
    utterance_id: str
    waveform: Waveform
    phones: list[AnnotatedSpan]
    words: list[AnnotatedSpan]
    speaker_id: str
    gender: str
    tokens: TokenSequence | None = None
    error_free: bool | None = None


def _parse_spans(text: str, what: str) -> list[AnnotatedSpan]:
    spans: list[AnnotatedSpan] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(f"{what} line {lineno}: expected 'start end label', got {line!r}")
        try:
            start, end = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"{what} line {lineno}: non-integer span in {line!r}") from None
        if start < 0 or end <= start:
            raise ParseError(f"{what} line {lineno}: bad span [{start}, {end})")
        if spans and start < spans[-1].end:
            raise ParseError(f"{what} line {lineno}: span overlaps or descends")
        spans.append(AnnotatedSpan(start, end, parts[2]))
    return spans


def parse_phn(text: str) -> list[AnnotatedSpan]:
    return _parse_spans(text, ".PHN")


def parse_wrd(text: str) -> list[AnnotatedSpan]:
    return _parse_spans(text, ".WRD")


def gender_from_speaker(speaker_dir_name: str) -> str:
    first = speaker_dir_name[:1].upper()
    if first in ("M", "F"):
        return first
    raise ValueError(f"speaker name {speaker_dir_name!r} does not start with m/f")


def words_from_tokens(ts: TokenSequence) -> list[tuple[str, range]]:
    """Split a token sequence into words at begins_word boundaries."""
    words: list[tuple[str, range]] = []
    start = 0
    for i, token in enumerate(ts):
        if token.begins_word and i > start:
            text = "".join(t.text for t in ts.tokens[start:i])
            words.append((text, range(start, i)))
            start = i
    if len(ts) > start:
        words.append(("".join(t.text for t in ts.tokens[start:]), range(start, len(ts))))
    return words


def normalize_word(word: str) -> str:
    return word.lower().translate(_STRIP_TABLE)


def normalize_words(words: list[str]) -> list[str]:
    out = [normalize_word(w) for w in words]
    return [w for w in out if w]


def check_error_free(predicted: list[str], annotated: list[str]) -> bool:
    return normalize_words(predicted) == normalize_words(annotated)


def word_edit_distance(reference: list[str], hypothesis: list[str]) -> int:
    """Levenshtein distance over word sequences (S + D + I)."""
    prev = list(range(len(hypothesis) + 1))
    for i, ref_word in enumerate(reference, start=1):
        cur = [i] + [0] * len(hypothesis)
        for j, hyp_word in enumerate(hypothesis, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1,
                         prev[j - 1] + (ref_word != hyp_word))
        prev = cur
    return prev[-1]


def wer(reference: list[str], hypothesis: list[str]) -> float:
    """Word error rate in percent: 100 * (S + D + I) / N."""
    if not reference:
        raise ValueError("reference must be non-empty")
    return 100.0 * word_edit_distance(reference, hypothesis) / len(reference)


def span_to_frames(span: tuple[int, int], p: FrameParams, sample_rate: int,
                   total_frames: int | None = None) -> tuple[range, int]:
    """Frame range whose window centers fall inside [start, end), plus the
    frame nearest the span midpoint.

    A span too short to contain any window center maps to the single nearest
    frame. When ``total_frames`` is given, results are clamped to [0, T).
    """
    start, end = span
    hop = p.hop_samples(sample_rate)
    half_window = p.window_samples(sample_rate) / 2.0

    def nearest_frame(position: float) -> int:
        t = int(round((position - half_window) / hop))
        best = min((abs(frame_center_sample(c, p, sample_rate) - position), c)
                   for c in (t - 1, t, t + 1) if c >= 0)[1]
        return best

    first = math.ceil((start - half_window) / hop)
    last = math.ceil((end - half_window) / hop) - 1
    first = max(first, 0)
    if total_frames is not None:
        last = min(last, total_frames - 1)
    if first > last:
        mid_frame = nearest_frame((start + end) / 2.0)
        if total_frames is not None:
            mid_frame = min(mid_frame, total_frames - 1)
        return range(mid_frame, mid_frame + 1), mid_frame

    mid_frame = nearest_frame((start + end) / 2.0)
    if total_frames is not None:
        mid_frame = min(mid_frame, total_frames - 1)
    return range(first, last + 1), mid_frame


def _containing_word(span: AnnotatedSpan, words: list[AnnotatedSpan]) -> int | None:
    for i, w in enumerate(words):
        if w.start <= span.start and span.end <= w.end:
            return i
    return None


def extract_occurrences(utt: UtteranceRecord, p: FrameParams | None = None,
                        total_frames: int | None = None) -> list[PhoneOccurrence]:
    """Enumerate studied phone occurrences of an error-free utterance.

    Plosives are kept only when the phone after the release is a studied
    vowel; a closure phone immediately preceding its release contributes a
    separate closure-phase occurrence. Phones not nested inside an annotated
    word are skipped with a warning.
    """
    if p is None:
        p = FrameParams()
    if not utt.error_free:
        raise ValueError("occurrence extraction requires an error-free utterance")
    if total_frames is None:
        total_frames = count_frames(len(utt.waveform), p, utt.waveform.sample_rate)

    def make(span: AnnotatedSpan, phoneme: str, phone_class: str, phase: str) -> PhoneOccurrence | None:
        word_index = _containing_word(span, utt.words)
        if word_index is None:
            warnings.warn(
                f"{utt.utterance_id}: phone {span.label!r} at [{span.start}, {span.end}) "
                "is not nested in any word; skipped"
            )
            return None
        frames, mid = span_to_frames((span.start, span.end), p, utt.waveform.sample_rate,
                                     total_frames=total_frames)
        return PhoneOccurrence(
            phoneme=phoneme, phone_class=phone_class, phase=phase,
            start=span.start, end=span.end, frames=frames, midpoint_frame=mid,
            word_index=word_index, speaker_gender=utt.gender,
            utterance_id=utt.utterance_id,
        )

    occurrences: list[PhoneOccurrence] = []
    phones = utt.phones
    for j, span in enumerate(phones):
        label = span.label.lower()
        if label in VOWELS:
            occ = make(span, VOWELS[label], "vowel", "whole")
        elif label in FRICATIVES:
            occ = make(span, FRICATIVES[label], "fricative", "whole")
        elif label in PLOSIVES:
            following = phones[j + 1].label.lower() if j + 1 < len(phones) else None
            if following not in VOWELS:
                continue
            preceding = phones[j - 1] if j > 0 else None
            if preceding is not None and CLOSURES.get(preceding.label.lower()) == PLOSIVES[label]:
                closure = make(preceding, PLOSIVES[label], "plosive", "closure")
                if closure is not None:
                    occurrences.append(closure)
            occ = make(span, PLOSIVES[label], "plosive", "release")
        else:
            continue
        if occ is not None:
            occurrences.append(occ)
    return occurrences


@dataclass(frozen=True)
class UtterancePaths:
    utterance_id: str  # e.g. "train/dr1/mabc0/sx127"
    audio: Path
    phn: Path
    wrd: Path
    txt: Path | None
    speaker_id: str
    gender: str


def walk_corpus(root, subset: str | None = "sx") -> list[UtterancePaths]:
    """Find utterances under <root>/<split>/<dialect>/<speaker>/<utt>.* with
    case-insensitive extensions; ``subset`` keeps only utterance ids starting
    with that prefix."""
    root = Path(root)
    found: list[UtterancePaths] = []
    for phn in sorted(root.rglob("*")):
        if phn.suffix.lower() != ".phn" or not phn.is_file():
            continue
        stem = phn.stem
        if subset and not stem.lower().startswith(subset.lower()):
            continue
        folder = phn.parent
        by_ext = {}
        for candidate in folder.iterdir():
            if candidate.stem.lower() == stem.lower():
                by_ext[candidate.suffix.lower()] = candidate
        audio = by_ext.get(".wav") or by_ext.get(".sph")
        wrd = by_ext.get(".wrd")
        if audio is None or wrd is None:
            continue
        speaker = folder.name
        try:
            gender = gender_from_speaker(speaker)
        except ValueError:
            continue
        rel = phn.relative_to(root)
        utt_id = "/".join(rel.parts[:-1] + (stem.lower(),))
        found.append(UtterancePaths(
            utterance_id=utt_id, audio=audio, phn=phn, wrd=wrd,
            txt=by_ext.get(".txt"), speaker_id=speaker, gender=gender,
        ))
    return sorted(found, key=lambda u: u.utterance_id)
