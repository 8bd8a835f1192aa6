"""Synthetic acceptance suite.

Each check pairs a toolkit code path with an independent oracle: a planted
high-energy region with analytically known saliency, all-pole vowels with
exact resonance ground truth, definition-literal brute-force metric
reimplementations, and byte-level determinism of a full corpus run. The CLI
``selftest`` subcommand and the test suite both run these checks.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import metrics, synth
from .acoustics import estimate_formants
from .alignment import PhoneOccurrence
from .attribution import (
    BinaryMap, MaskPlan, SaliencyMap, attribute_token, binarize_topk, normalize,
    segment_by_energy,
)
from .backend import Token, TokenSequence, make_energy_oracle
from .features import FrameParams, MelSpectrogram, cmvn, mel_bin_centers
from .metrics import OccurrenceMeasurement, boxplot_stats
from .report import RunConfig, run_pipeline


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


# ---------------------------------------------------------------------------
# planted-region attribution recovery


def _planted_spectrogram(rng: np.random.Generator, t: int = 100, f: int = 80,
                         region=(40, 30, 61, 51)) -> tuple[MelSpectrogram, tuple]:
    """Random spectrogram with a high-energy block isolated from the rest by
    a low-energy moat, so the block is exactly one energy segment."""
    values = rng.uniform(0.0, 1.0, size=(t, f))
    t0, f0, t1, f1 = region
    values[t0 - 1 : t1 + 1, f0 - 1 : f1 + 1] = -1.0
    values[t0:t1, f0:f1] = rng.uniform(7.0, 8.0, size=(t1 - t0, f1 - f0))
    p = FrameParams(n_mels=f)
    return MelSpectrogram(values=values, frame_params=p, sample_rate=16000), region


def check_planted_region() -> CheckResult:
    start_time = time.time()
    rng = np.random.default_rng(2024)
    pre, region = _planted_spectrogram(rng)
    t0, f0, t1, f1 = region
    seg = segment_by_energy(pre)

    region_mask = np.zeros(pre.values.shape, dtype=bool)
    region_mask[t0:t1, f0:f1] = True
    region_label = seg.labels[t0, f0]
    aligned = np.array_equal(seg.labels == region_label, region_mask)
    if not aligned:
        return CheckResult("planted_region", False, "region is not a single segment")

    features = cmvn(pre)
    backend = make_energy_oracle(region, TokenSequence((Token(0, "x", True),)))
    plan = MaskPlan(iterations=20000, keep_prob=0.5, seed=7)
    raw = attribute_token(features, seg, backend, (), 0, plan, workers=1)

    per_segment = np.array([raw.values[seg.labels == s].flat[0] for s in range(seg.n_segments)])
    others = np.delete(per_segment, region_label)
    ordering_ok = per_segment[region_label] > others.max()

    binary = binarize_topk(normalize(raw), 0.03)
    k = int(binary.values.sum())
    inside = int((binary.values & region_mask).sum())
    share = inside / k
    elapsed = time.time() - start_time

    passed = ordering_ok and share >= 0.70 and k == 240 and elapsed <= 60.0
    detail = (f"{share:.1%} of {k} salient elements inside region, "
              f"region saliency {per_segment[region_label]:.4f} vs max other "
              f"{others.max():.4f}, {elapsed:.1f}s")
    return CheckResult("planted_region", passed, detail)


# ---------------------------------------------------------------------------
# formant accuracy on synthetic vowels


def check_formant_accuracy() -> CheckResult:
    start_time = time.time()
    rng = np.random.default_rng(99)
    n_ok = 0
    n_total = 20
    for _ in range(n_total):
        truth = (rng.uniform(300, 800), rng.uniform(900, 2200), rng.uniform(2300, 3000), 3500.0)
        samples = synth.synthesize_vowel(truth, [80, 90, 120, 180], f0=120.0,
                                         duration=0.5, sample_rate=16000)
        w = synth.Waveform(samples=samples, sample_rate=16000)
        fs = estimate_formants(w, midpoint_sample=len(samples) // 2, gender="M")
        measured = (fs.f1, fs.f2, fs.f3)
        if any(m is None for m in measured):
            continue
        errors = [abs(m - t) for m, t in zip(measured, truth)]
        if errors[0] <= 60 and errors[1] <= 60 and errors[2] <= 100:
            n_ok += 1
    elapsed = time.time() - start_time
    passed = n_ok >= math.ceil(0.9 * n_total) and elapsed <= 5.0
    return CheckResult("formant_accuracy", passed,
                       f"{n_ok}/{n_total} vowels within tolerance, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# metric equivalence against definition-literal brute force


def _bf_time_coverage(binary: np.ndarray, frames: range) -> float:
    covered = 0
    for t in frames:
        if any(bool(binary[t, f]) for f in range(binary.shape[1])):
            covered += 1
    return 100.0 * covered / len(frames)


def _bf_nearest_bin(hz: float, centers: np.ndarray) -> int:
    best, best_dist = 0, abs(centers[0] - hz)
    for i in range(1, centers.size):
        d = abs(centers[i] - hz)
        if d < best_dist:
            best, best_dist = i, d
    return best


def _bf_spectral_match(measurements, centers) -> dict:
    table: dict = {}

    def cell(key):
        return table.setdefault(key, {"matched": 0, "n": 0, "fail": 0})

    for m in measurements:
        occ = m.occurrence
        if occ.phone_class == "vowel":
            for idx, cue in enumerate(("F1", "F2", "F3", "F4"), start=1):
                c = cell((occ.phoneme, occ.speaker_gender, cue))
                c["n"] += 1
                value = None if (m.measurement_failed or m.formants is None) else m.formants.get(idx)
                if value is None:
                    c["fail"] += 1
                elif m.binary.values[occ.midpoint_frame, _bf_nearest_bin(value, centers)]:
                    c["matched"] += 1
        elif occ.phone_class == "fricative":
            c = cell((occ.phoneme, occ.speaker_gender, "peak"))
            c["n"] += 1
            if m.measurement_failed or m.peak is None:
                c["fail"] += 1
            elif m.binary.values[occ.midpoint_frame, m.peak.bin]:
                c["matched"] += 1
        elif occ.phone_class == "plosive" and occ.phase == "release":
            c = cell((occ.phoneme, occ.speaker_gender, "peak"))
            c["n"] += 1
            if m.measurement_failed or m.peak is None:
                c["fail"] += 1
            else:
                onset = occ.frames.start
                hit = False
                for t in (onset, onset + 1):
                    if t < m.binary.values.shape[0] and m.binary.values[t, m.peak.bin]:
                        hit = True
                if hit:
                    c["matched"] += 1
    out = {}
    for key, c in table.items():
        denom = c["n"] - c["fail"]
        out[key] = None if denom <= 0 else 100.0 * c["matched"] / denom
    return out


def _bf_frequency_distribution(measurements, n_bins) -> dict:
    groups: dict = {}
    for m in measurements:
        occ = m.occurrence
        if occ.phone_class == "plosive" and occ.phase != "release":
            continue
        key = (occ.phone_class, occ.phoneme, occ.speaker_gender)
        counts, n = groups.setdefault(key, ([0] * n_bins, [0]))
        if occ.phone_class == "plosive":
            onset = occ.frames.start
            for b in range(n_bins):
                hit = False
                for t in (onset, onset + 1):
                    if t < m.binary.values.shape[0] and m.binary.values[t, b]:
                        hit = True
                counts[b] += int(hit)
        else:
            for b in range(n_bins):
                counts[b] += int(bool(m.binary.values[occ.midpoint_frame, b]))
        n[0] += 1
    return {key: [c / n[0] for c in counts] for key, (counts, n) in groups.items()}


def _bf_quartile(sorted_values, q: float) -> float:
    h = (len(sorted_values) - 1) * q
    lo = math.floor(h)
    hi = min(lo + 1, len(sorted_values) - 1)
    return sorted_values[lo] + (h - lo) * (sorted_values[hi] - sorted_values[lo])


def _bf_boxplot(values):
    v = sorted(values)
    q1, med, q3 = (_bf_quartile(v, q) for q in (0.25, 0.5, 0.75))
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = [x for x in v if lo_fence <= x <= hi_fence]
    outliers = [x for x in v if x < lo_fence or x > hi_fence]
    return med, q1, q3, inside[0], inside[-1], outliers


_VOWELS = ("ɑ", "æ", "ʌ", "ɛ", "ə", "ʊ", "ɪ", "ɨ", "i", "ʉ", "u")
_FRICS = ("s", "z", "ʃ", "ʒ", "f", "v", "θ", "ð")
_PLOS = ("p", "b", "k", "g", "t", "d")


def _random_binary(rng, t, f) -> BinaryMap:
    values = rng.random((t, f)) < rng.uniform(0.05, 0.5)
    return BinaryMap(values=values, k=int(values.sum()))


def _random_measurement(rng, t, f) -> OccurrenceMeasurement:
    phone_class = str(rng.choice(["vowel", "fricative", "plosive"]))
    gender = str(rng.choice(["M", "F"]))
    a = int(rng.integers(0, t - 1))
    b = int(rng.integers(a + 1, t + 1))
    midpoint = int(rng.integers(a, b))
    if phone_class == "vowel":
        phoneme, phase = str(rng.choice(_VOWELS)), "whole"
    elif phone_class == "fricative":
        phoneme, phase = str(rng.choice(_FRICS)), "whole"
    else:
        phoneme = str(rng.choice(_PLOS))
        phase = str(rng.choice(["closure", "release"]))
    occ = PhoneOccurrence(
        phoneme=phoneme, phone_class=phone_class, phase=phase,
        start=a * 160, end=b * 160 + 160, frames=range(a, b), midpoint_frame=midpoint,
        word_index=0, speaker_gender=gender, utterance_id="synthetic",
    )
    m = OccurrenceMeasurement(occurrence=occ, binary=_random_binary(rng, t, f))
    if phone_class == "vowel":
        if rng.random() < 0.1:
            m.measurement_failed = True
        else:
            freqs = np.sort(rng.uniform(150, 4800, size=4))
            n_present = int(rng.integers(1, 5))
            from .acoustics import FormantSet
            vals = [float(freqs[i]) if i < n_present else None for i in range(4)]
            m.formants = FormantSet(f1=vals[0], f2=vals[1], f3=vals[2], f4=vals[3],
                                    gender_ceiling=5500.0)
    elif phone_class == "fricative" or phase == "release":
        from .acoustics import PeakMeasurement
        m.peak = PeakMeasurement(bin=int(rng.integers(0, f)), source_frames=1)
    return m


def check_metric_bruteforce(n_instances: int = 200) -> CheckResult:
    rng = np.random.default_rng(314)
    for i in range(n_instances):
        t = int(rng.integers(6, 24))
        f = int(rng.integers(8, 32))
        p = FrameParams(n_mels=f)
        centers = mel_bin_centers(p, 16000)

        binary = _random_binary(rng, t, f)
        a = int(rng.integers(0, t))
        b = int(rng.integers(a + 1, t + 1))
        frames = range(a, b)
        if metrics.time_coverage(binary, frames) != _bf_time_coverage(binary.values, frames):
            return CheckResult("metric_bruteforce", False, f"TC mismatch at instance {i}")

        ms = [_random_measurement(rng, t, f) for _ in range(int(rng.integers(1, 12)))]
        table = metrics.spectral_match(ms, p, 16000)
        bf = _bf_spectral_match(ms, centers)
        for key, expected in bf.items():
            got = table.percent(*key)
            if got != expected:
                return CheckResult("metric_bruteforce", False,
                                   f"SM mismatch at instance {i} key {key}: {got} != {expected}")

        dist = metrics.frequency_distribution(ms, f)
        bf_dist = _bf_frequency_distribution(ms, f)
        if set(dist) != set(bf_dist):
            return CheckResult("metric_bruteforce", False, f"D groups mismatch at instance {i}")
        for key, cell in dist.items():
            if not np.array_equal(cell.density(), np.array(bf_dist[key])):
                return CheckResult("metric_bruteforce", False, f"D mismatch at instance {i}")

        values = rng.uniform(0, 100, size=int(rng.integers(1, 40))).tolist()
        s = boxplot_stats(values)
        med, q1, q3, lo, hi, outliers = _bf_boxplot(values)
        stats_pairs = [(s.median, med), (s.q1, q1), (s.q3, q3),
                       (s.whisker_lo, lo), (s.whisker_hi, hi)]
        if any(abs(x - y) > 1e-12 for x, y in stats_pairs) or list(s.outliers) != outliers:
            return CheckResult("metric_bruteforce", False, f"boxplot mismatch at instance {i}")
    return CheckResult("metric_bruteforce", True, f"{n_instances} random instances match")


# ---------------------------------------------------------------------------
# binarization exactness and normalization contracts


def check_binarization(n_instances: int = 100) -> CheckResult:
    rng = np.random.default_rng(555)
    for _ in range(n_instances):
        t = int(rng.integers(2, 60))
        f = int(rng.integers(2, 120))
        s = SaliencyMap(values=rng.standard_normal((t, f)), normalized=True)
        binary = binarize_topk(s, 0.03)
        expected_k = math.ceil(Fraction("0.03") * t * f)
        if int(binary.values.sum()) != expected_k or binary.k != expected_k:
            return CheckResult("binarization", False,
                               f"count {binary.k} != ceil(0.03*{t}*{f}) = {expected_k}")
        # against a full sort of distinct values
        flat = s.values.ravel()
        top = set(np.argsort(-flat)[:expected_k].tolist())
        chosen = set(np.flatnonzero(binary.values.ravel()).tolist())
        if len(set(flat.tolist())) == flat.size and top != chosen:
            return CheckResult("binarization", False, "top-k set differs from full sort")
    # tie-break determinism on constant maps
    const = SaliencyMap(values=np.zeros((13, 17)), normalized=True)
    binary = binarize_topk(const, 0.03)
    k = math.ceil(Fraction("0.03") * 13 * 17)
    flat = binary.values.ravel()
    if not (flat[:k].all() and not flat[k:].any()):
        return CheckResult("binarization", False, "constant-map tie-break not row-major")
    return CheckResult("binarization", True, f"{n_instances} shapes exact, tie-break row-major")


def check_normalization(n_instances: int = 50) -> CheckResult:
    rng = np.random.default_rng(777)
    for _ in range(n_instances):
        t = int(rng.integers(4, 40))
        f = int(rng.integers(4, 90))
        raw = SaliencyMap(values=rng.standard_normal((t, f)) * rng.uniform(0.5, 20))
        out = normalize(raw)
        if abs(out.values.mean()) >= 1e-9 or abs(out.values.std() - 1.0) >= 1e-9:
            return CheckResult("normalization", False,
                               f"mean {out.values.mean():.2e}, std {out.values.std():.12f}")
        a, b = float(rng.uniform(0.2, 5.0)), float(rng.uniform(-10, 10))
        affine = SaliencyMap(values=a * raw.values + b)
        same = np.array_equal(binarize_topk(normalize(affine), 0.03).values,
                              binarize_topk(out, 0.03).values)
        if not same:
            return CheckResult("normalization", False, "binarize output not affine-invariant")
    return CheckResult("normalization", True, f"{n_instances} maps within 1e-9, affine-invariant")


# ---------------------------------------------------------------------------
# end-to-end determinism and real-data schema


def _mini_run(work: Path, name: str, workers: int, seed: int = 11,
              iterations: int = 300):
    corpus = work / "corpus"
    if not (corpus / "backend_script.json").exists():
        synth.build_mini_corpus(corpus)
    out = work / name
    cfg = RunConfig(
        corpus_root=str(corpus), backend_spec=f"oracle:{corpus / 'backend_script.json'}",
        output_dir=str(out), iterations=iterations, seed=seed, workers=workers,
    )
    summary = run_pipeline(cfg)
    return out, summary


def check_determinism(work_dir: str | None = None) -> CheckResult:
    with tempfile.TemporaryDirectory() as tmp:
        work = Path(work_dir) if work_dir else Path(tmp)
        work.mkdir(parents=True, exist_ok=True)
        out1, summary1 = _mini_run(work, "run_w1", workers=1)
        out2, summary2 = _mini_run(work, "run_w8", workers=8)
        if sorted(summary1.files) != sorted(summary2.files):
            return CheckResult("determinism", False, "file sets differ between runs")
        for name in summary1.files:
            if (out1 / name).read_bytes() != (out2 / name).read_bytes():
                return CheckResult("determinism", False, f"{name} differs between 1 and 8 workers")
        return CheckResult(
            "determinism", True,
            f"{len(summary1.files)} files byte-identical across 1 vs 8 workers "
            f"({summary1.n_analyzed} utterances analyzed)")


def check_schema(work_dir: str | None = None) -> CheckResult:
    with tempfile.TemporaryDirectory() as tmp:
        work = Path(work_dir) if work_dir else Path(tmp)
        work.mkdir(parents=True, exist_ok=True)
        out, _ = _mini_run(work, "run_schema", workers=1)

        lines = (out / "sm_formants.csv").read_text(encoding="utf-8").splitlines()
        header_ok = lines[0] == "phoneme,F1_M,F1_F,F2_M,F2_F,F3_M,F3_F,F4_M,F4_F"
        rows = [line.split(",")[0] for line in lines[1:]]
        formant_rows_ok = rows == list(_VOWELS) + ["avg"]
        widths_ok = all(len(line.split(",")) == 9 for line in lines[1:])

        lines2 = (out / "sm_peaks.csv").read_text(encoding="utf-8").splitlines()
        peaks_header_ok = lines2[0] == "phoneme,class,M,F"
        got = [(line.split(",")[0], line.split(",")[1]) for line in lines2[1:]]
        expected = ([(p, "fricative") for p in _FRICS] + [("avg", "fricative")]
                    + [(p, "plosive") for p in _PLOS] + [("avg", "plosive")])
        peaks_rows_ok = got == expected

        passed = all((header_ok, formant_rows_ok, widths_ok, peaks_header_ok, peaks_rows_ok))
        detail = (f"formants header={header_ok} rows={formant_rows_ok} widths={widths_ok}; "
                  f"peaks header={peaks_header_ok} rows={peaks_rows_ok}")
        return CheckResult("schema", passed, detail)


ALL_CHECKS = (
    check_planted_region,
    check_formant_accuracy,
    check_metric_bruteforce,
    check_binarization,
    check_normalization,
    check_determinism,
    check_schema,
)


def run_all(work_dir: str | None = None) -> list[CheckResult]:
    results = []
    for check in ALL_CHECKS:
        if check in (check_determinism, check_schema):
            results.append(check(work_dir))
        else:
            results.append(check())
    return results
