import numpy as np
import pytest

from phonsal.alignment import (
    AnnotatedSpan, ParseError, PhoneOccurrence, UtteranceRecord,
    check_error_free, extract_occurrences, gender_from_speaker, normalize_words,
    parse_phn, parse_wrd, span_to_frames, walk_corpus, wer, word_edit_distance,
    words_from_tokens,
)
from phonsal.backend import Token, TokenSequence
from phonsal.features import FrameParams, Waveform, frame_center_sample


class TestParsers:
    def test_basic_line(self):
        spans = parse_phn("0 3050 h#\n")
        assert spans == [AnnotatedSpan(0, 3050, "h#")]

    def test_empty_file(self):
        assert parse_phn("") == []
        assert parse_wrd("\n\n") == []

    def test_multiple_ascending(self):
        spans = parse_wrd("100 200 sea\n200 350 tea\n")
        assert [s.label for s in spans] == ["sea", "tea"]

    def test_out_of_order_rejected(self):
        with pytest.raises(ParseError, match="line 2"):
            parse_phn("100 200 a\n150 300 b\n")

    def test_descending_span_rejected(self):
        with pytest.raises(ParseError, match="line 1"):
            parse_phn("200 100 a\n")

    def test_malformed_line_reports_number(self):
        with pytest.raises(ParseError, match="line 3"):
            parse_phn("0 10 a\n10 20 b\nnot a span\n")

    def test_non_integer_rejected(self):
        with pytest.raises(ParseError, match="non-integer"):
            parse_phn("zero ten a\n")


class TestGender:
    def test_female(self):
        assert gender_from_speaker("FDAW0") == "F"

    def test_male_lowercase(self):
        assert gender_from_speaker("mjsw0") == "M"

    def test_other_prefix_rejected(self):
        with pytest.raises(ValueError):
            gender_from_speaker("XABC0")


class TestWordsFromTokens:
    def test_single_token_word(self):
        ts = TokenSequence((Token(0, "us", True),))
        assert words_from_tokens(ts) == [("us", range(0, 1))]

    def test_two_token_word(self):
        ts = TokenSequence((Token(0, "for", True), Token(1, "give", False)))
        assert words_from_tokens(ts) == [("forgive", range(0, 2))]

    def test_every_token_begins_a_word(self):
        ts = TokenSequence((Token(0, "a", True), Token(1, "b", True), Token(2, "c", True)))
        assert [w for w, _ in words_from_tokens(ts)] == ["a", "b", "c"]

    def test_concatenation_is_lossless(self):
        rng = np.random.default_rng(20)
        pieces = ["ab", "c", "def", "gh", "i"]
        for _ in range(30):
            tokens = [Token(i, pieces[int(rng.integers(len(pieces)))],
                            bool(rng.random() < 0.4) or i == 0)
                      for i in range(int(rng.integers(1, 10)))]
            ts = TokenSequence(tuple(tokens))
            words = words_from_tokens(ts)
            assert "".join(w for w, _ in words) == "".join(t.text for t in tokens)
            covered = [i for _, r in words for i in r]
            assert covered == list(range(len(tokens)))


class TestErrorFree:
    def test_identical(self):
        assert check_error_free(["the", "sea"], ["the", "sea"])

    def test_substitution(self):
        assert not check_error_free(["the", "see"], ["the", "sea"])

    def test_case_and_punctuation_ignored(self):
        # by hand: lowercase + strip ".,!?;:'\"()-" makes these identical
        assert check_error_free(["Hello,", "WORLD!"], ["hello", "world"])
        assert check_error_free(["don't"], ["dont"])

    def test_normalize_words_drops_empty(self):
        assert normalize_words(["-", "ok"]) == ["ok"]


class TestWer:
    def test_identical_zero(self):
        assert wer(["a", "b", "c"], ["a", "b", "c"]) == 0.0

    def test_one_substitution_of_three(self):
        assert wer(["a", "b", "c"], ["a", "x", "c"]) == pytest.approx(33.33, abs=0.01)

    def test_empty_hypothesis_all_deletions(self):
        assert wer(["a", "b"], []) == 100.0

    def test_insertion_counts(self):
        assert word_edit_distance(["a", "b"], ["a", "x", "b"]) == 1

    def test_self_wer_zero_property(self):
        rng = np.random.default_rng(21)
        vocab = ["a", "b", "c", "d"]
        for _ in range(20):
            words = [vocab[int(rng.integers(4))] for _ in range(int(rng.integers(1, 12)))]
            assert wer(words, list(words)) == 0.0

    def test_empty_reference_rejected(self):
        with pytest.raises(ValueError):
            wer([], ["a"])


class TestSpanToFrames:
    def test_derived_example(self):
        # centers are t*160 + 200; inside [1600, 4800) that is t = 9..28
        frames, mid = span_to_frames((1600, 4800), FrameParams(), 16000)
        assert frames == range(9, 29)
        # midpoint 3200: center(19) = 3240 is 40 away, center(18) = 3080 is 120 away
        assert mid == 19

    def test_against_enumerated_centers(self):
        p = FrameParams()
        rng = np.random.default_rng(22)
        for _ in range(60):
            start = int(rng.integers(0, 20000))
            end = start + int(rng.integers(1, 5000))
            frames, mid = span_to_frames((start, end), p, 16000)
            oracle = [t for t in range(0, 200)
                      if start <= frame_center_sample(t, p, 16000) < end]
            if oracle:
                assert list(frames) == oracle
            else:
                assert len(frames) == 1
            centers = [abs(frame_center_sample(t, p, 16000) - (start + end) / 2)
                       for t in range(200)]
            assert mid == int(np.argmin(centers))

    def test_short_span_single_frame(self):
        frames, mid = span_to_frames((1000, 1050), FrameParams(), 16000)
        assert len(frames) == 1
        assert frames[0] == mid

    def test_clamped_to_total_frames(self):
        frames, mid = span_to_frames((15800, 16000), FrameParams(), 16000, total_frames=98)
        assert frames.stop <= 98
        assert mid <= 97

    def test_consecutive_phones_get_disjoint_ranges(self):
        # window centers partition: adjacent spans never share a frame
        p = FrameParams()
        rng = np.random.default_rng(23)
        for _ in range(40):
            a = int(rng.integers(0, 10000))
            b = a + int(rng.integers(400, 4000))
            c = b + int(rng.integers(400, 4000))
            left, _ = span_to_frames((a, b), p, 16000)
            right, _ = span_to_frames((b, c), p, 16000)
            assert set(left).isdisjoint(set(right))


def _record(phone_items, word_items, gender="M"):
    return UtteranceRecord(
        utterance_id="test/utt",
        waveform=Waveform(samples=np.zeros(16000), sample_rate=16000),
        phones=[AnnotatedSpan(*p) for p in phone_items],
        words=[AnnotatedSpan(*w) for w in word_items],
        speaker_id="mjd0", gender=gender, tokens=None, error_free=True,
    )


class TestExtractOccurrences:
    def test_prevocalic_plosive_closure_release_and_vowel(self):
        utt = _record(
            [(0, 800, "h#"), (800, 1900, "tcl"), (1900, 2600, "t"), (2600, 5000, "iy"),
             (5000, 6000, "h#")],
            [(800, 5000, "tea")],
        )
        occs = extract_occurrences(utt)
        kinds = [(o.phoneme, o.phone_class, o.phase) for o in occs]
        assert ("t", "plosive", "closure") in kinds
        assert ("t", "plosive", "release") in kinds
        assert ("i", "vowel", "whole") in kinds
        assert len(occs) == 3
        assert all(o.word_index == 0 for o in occs)

    def test_non_prevocalic_plosive_excluded(self):
        utt = _record(
            [(0, 800, "tcl"), (800, 1500, "t"), (1500, 3000, "s")],
            [(0, 3000, "ts")],
        )
        occs = extract_occurrences(utt)
        assert [(o.phoneme, o.phone_class) for o in occs] == [("s", "fricative")]

    def test_fricative_whole_phase(self):
        utt = _record(
            [(0, 2000, "s"), (2000, 4000, "iy")],
            [(0, 4000, "sea")],
        )
        occs = extract_occurrences(utt)
        s_occ = [o for o in occs if o.phoneme == "s"][0]
        assert s_occ.phase == "whole"
        assert s_occ.phone_class == "fricative"

    def test_release_without_closure_kept(self):
        utt = _record(
            [(0, 900, "h#"), (900, 1600, "k"), (1600, 4000, "ae")],
            [(900, 4000, "cat")],
        )
        occs = extract_occurrences(utt)
        kinds = [(o.phoneme, o.phase) for o in occs]
        assert ("k", "release") in kinds
        assert not any(phase == "closure" for _, phase in kinds)

    def test_phone_outside_words_warns_and_skips(self):
        utt = _record(
            [(0, 2000, "s"), (2000, 4000, "iy")],
            [(2000, 4000, "e")],  # the fricative is not inside any word
        )
        with pytest.warns(UserWarning, match="not nested"):
            occs = extract_occurrences(utt)
        assert [o.phoneme for o in occs] == ["i"]

    def test_requires_error_free(self):
        utt = _record([(0, 2000, "s")], [(0, 2000, "s")])
        utt.error_free = False
        with pytest.raises(ValueError, match="error-free"):
            extract_occurrences(utt)

    def test_unknown_phones_ignored(self):
        utt = _record(
            [(0, 1000, "ow"), (1000, 2000, "r"), (2000, 3000, "iy")],
            [(0, 3000, "word")],
        )
        occs = extract_occurrences(utt)
        assert [o.phoneme for o in occs] == ["i"]

    def test_phase_class_invariant(self):
        with pytest.raises(ValueError, match="plosives"):
            PhoneOccurrence(phoneme="s", phone_class="fricative", phase="closure",
                            start=0, end=100, frames=range(0, 1), midpoint_frame=0,
                            word_index=0, speaker_gender="M", utterance_id="x")


class TestWalkCorpus:
    def test_finds_sx_utterances_sorted(self, mini_corpus):
        corpus_root, _ = mini_corpus
        utts = walk_corpus(corpus_root, "sx")
        ids = [u.utterance_id for u in utts]
        assert len(ids) == 10
        assert ids == sorted(ids)
        assert all("/sx" in u for u in ids)

    def test_subset_none_includes_sa(self, mini_corpus):
        corpus_root, _ = mini_corpus
        utts = walk_corpus(corpus_root, None)
        assert len(utts) == 11

    def test_genders_from_speaker_dirs(self, mini_corpus):
        corpus_root, _ = mini_corpus
        genders = {u.speaker_id: u.gender for u in walk_corpus(corpus_root, "sx")}
        assert genders == {"mjd0": "M", "fsk0": "F"}
