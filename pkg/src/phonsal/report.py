"""End-to-end corpus analysis and emission of tables/plot data.

For every utterance: features -> transcription -> error-free check ->
per-token attribution -> word maps -> occurrence extraction -> cue
measurement -> metric tallies. Emits corpus WER, time-coverage boxplot data,
the two spectral-match tables, and per-phoneme frequency-distribution files,
all as deterministic CSV (rendering is left to external plotting).
"""

from __future__ import annotations

import hashlib
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import attribution, metrics
from .acoustics import FormantMeasurementError, estimate_formants, fricative_peak, burst_peak
from .alignment import (
    UtteranceRecord, check_error_free, extract_occurrences, parse_phn, parse_wrd,
    normalize_words, span_to_frames, walk_corpus, word_edit_distance, words_from_tokens,
)
from .attribution import BinaryMap, MaskPlan, SaliencyMap, binarize_topk, segment_by_energy
from .audio import load_audio
from .backend import Backend, BackendError, Token, TokenSequence, features_fingerprint, from_spec
from .features import FrameParams, MelSpectrogram, cmvn, compute_logmel, mel_bin_centers
from .metrics import OccurrenceMeasurement, boxplot_stats

CACHE_VERSION = 1

VOWEL_ORDER = ("ɑ", "æ", "ʌ", "ɛ", "ə", "ʊ", "ɪ", "ɨ", "i", "ʉ", "u")
FRICATIVE_ORDER = ("s", "z", "ʃ", "ʒ", "f", "v", "θ", "ð")
PLOSIVE_ORDER = ("p", "b", "k", "g", "t", "d")


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    corpus_root: str
    backend_spec: str
    output_dir: str
    subset: str | None = "sx"
    iterations: int = attribution.DEFAULT_ITERATIONS
    keep_prob: float = attribution.DEFAULT_KEEP_PROB
    top_fraction: float = attribution.DEFAULT_TOP_FRACTION
    seed: int = 0
    error_free_only: bool = True
    cache: bool = True
    workers: int = 1
    batch_size: int = 128
    n_bands: int = attribution.DEFAULT_N_BANDS
    dump_maps: bool = False
    frame_params: FrameParams = field(default_factory=FrameParams)

    def __post_init__(self):
        if self.iterations < 2:
            raise ValueError("iterations must be at least 2")
        if not (0.0 < self.top_fraction <= 1.0):
            raise ValueError("top_fraction must lie in (0, 1]")


@dataclass
class UtteranceOutcome:
    utterance_id: str
    skipped: str | None = None  # reason, or None when analyzed
    edit_distance: int = 0
    n_reference_words: int = 0
    error_free: bool | None = None
    word_items: list[tuple[BinaryMap, range]] = field(default_factory=list)
    measurements: list[OccurrenceMeasurement] = field(default_factory=list)
    n_formant_failures: int = 0
    cache_hit: bool = False
    map_dumps: list[tuple[str, object, str]] = field(default_factory=list)  # kind, map, label


def _utterance_seed(seed: int, utterance_id: str) -> int:
    digest = hashlib.sha256(f"{seed}:{utterance_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _cache_key(cfg: RunConfig, fingerprint: str) -> str:
    parts = (f"v{CACHE_VERSION}", fingerprint, str(cfg.seed), str(cfg.iterations),
             repr(cfg.keep_prob), repr(cfg.top_fraction), str(cfg.n_bands))
    return hashlib.sha256(":".join(parts).encode()).hexdigest()


def _cache_dir(cfg: RunConfig) -> Path:
    return Path(cfg.output_dir) / "cache"


def _cache_store(path: Path, tokens: TokenSequence, token_maps: list[SaliencyMap]) -> None:
    doc = [{"id": t.id, "text": t.text, "begins_word": t.begins_word} for t in tokens]
    stacked = np.stack([m.values for m in token_maps])
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npz")
    with open(tmp, "wb") as f:
        np.savez_compressed(f, tokens=np.array(json.dumps(doc)), maps=stacked)
    tmp.replace(path)


def _cache_load(path: Path) -> tuple[TokenSequence, list[SaliencyMap]] | None:
    if not path.exists():
        return None
    try:
        with np.load(path, allow_pickle=False) as data:
            doc = json.loads(str(data["tokens"]))
            stacked = data["maps"]
    except (OSError, ValueError, KeyError):
        return None
    tokens = TokenSequence(tuple(Token(d["id"], d["text"], d["begins_word"]) for d in doc))
    maps = [SaliencyMap(values=stacked[i], token_index=i, normalized=True)
            for i in range(stacked.shape[0])]
    return tokens, maps


def _attribute_all(cfg: RunConfig, utterance_id: str, features: MelSpectrogram,
                   pre_cmvn: MelSpectrogram, backend: Backend
                   ) -> tuple[TokenSequence, list[SaliencyMap], bool]:
    """Transcribe and produce one normalized saliency map per token, through
    the cache when enabled."""
    cache_path = None
    if cfg.cache:
        key = _cache_key(cfg, features_fingerprint(features))
        cache_path = _cache_dir(cfg) / f"{key}.npz"
        cached = _cache_load(cache_path)
        if cached is not None:
            return cached[0], cached[1], True

    tokens = backend.transcribe(features)
    seg = segment_by_energy(pre_cmvn, n_bands=cfg.n_bands)
    plan = MaskPlan(iterations=cfg.iterations, keep_prob=cfg.keep_prob,
                    seed=_utterance_seed(cfg.seed, utterance_id))
    ids = tokens.ids()
    token_maps = []
    for i, target in enumerate(ids):
        raw = attribution.attribute_token(features, seg, backend, tuple(ids[:i]), target,
                                          plan, batch_size=cfg.batch_size, token_index=i)
        token_maps.append(attribution.normalize(raw))
    if cache_path is not None:
        _cache_store(cache_path, tokens, token_maps)
    return tokens, token_maps, False


def _word_binary_maps(token_maps: list[SaliencyMap], tokens: TokenSequence,
                      top_fraction: float) -> list[tuple[str, range, BinaryMap]]:
    out = []
    for word, token_range in words_from_tokens(tokens):
        word_map = attribution.aggregate_word([token_maps[i] for i in token_range])
        out.append((word, token_range, binarize_topk(word_map, top_fraction)))
    return out


def process_utterance(cfg: RunConfig, paths, backend: Backend) -> UtteranceOutcome:
    outcome = UtteranceOutcome(utterance_id=paths.utterance_id)
    try:
        waveform = load_audio(paths.audio)
        phones = parse_phn(paths.phn.read_text())
        word_spans = parse_wrd(paths.wrd.read_text())
        pre_cmvn = compute_logmel(waveform, cfg.frame_params)
        features = cmvn(pre_cmvn)
        tokens, token_maps, outcome.cache_hit = _attribute_all(
            cfg, paths.utterance_id, features, pre_cmvn, backend)
    except (BackendError, OSError, ValueError, attribution.MaskDiversityError) as exc:
        outcome.skipped = f"backend_or_input_error: {exc}"
        return outcome

    predicted = [w for w, _ in words_from_tokens(tokens)]
    annotated = [s.label for s in word_spans]
    ref, hyp = normalize_words(annotated), normalize_words(predicted)
    if ref:
        outcome.edit_distance = word_edit_distance(ref, hyp)
        outcome.n_reference_words = len(ref)
    outcome.error_free = check_error_free(predicted, annotated)

    if cfg.error_free_only and not outcome.error_free:
        outcome.skipped = "not_error_free"
        return outcome
    if len(predicted) != len(annotated):
        outcome.skipped = "word_count_mismatch"
        return outcome

    word_maps = _word_binary_maps(token_maps, tokens, cfg.top_fraction)
    total_frames = features.n_frames
    record = UtteranceRecord(
        utterance_id=paths.utterance_id, waveform=waveform, phones=phones,
        words=word_spans, speaker_id=paths.speaker_id, gender=paths.gender,
        tokens=tokens, error_free=True,
    )
    occurrences = extract_occurrences(record, cfg.frame_params, total_frames=total_frames)

    for span, (_, _, binary) in zip(word_spans, word_maps):
        frames, _ = span_to_frames((span.start, span.end), cfg.frame_params,
                                   waveform.sample_rate, total_frames)
        outcome.word_items.append((binary, frames))

    if cfg.dump_maps:
        for i, (saliency, token) in enumerate(zip(token_maps, tokens)):
            outcome.map_dumps.append(("token", saliency, f"token{i} {token.text}"))
        for j, (word, _, binary) in enumerate(word_maps):
            outcome.map_dumps.append(("word", binary, f"word{j} {word}"))

    for occ in occurrences:
        binary = word_maps[occ.word_index][2]
        m = OccurrenceMeasurement(occurrence=occ, binary=binary)
        if occ.phone_class == "vowel":
            try:
                m.formants = estimate_formants(waveform, (occ.start + occ.end) // 2, record.gender)
            except (FormantMeasurementError, ValueError):
                m.measurement_failed = True
                outcome.n_formant_failures += 1
        elif occ.phone_class == "fricative":
            m.peak = fricative_peak(pre_cmvn, occ.midpoint_frame)
        elif occ.phone_class == "plosive" and occ.phase == "release":
            m.peak = burst_peak(pre_cmvn, occ.frames.start)
        outcome.measurements.append(m)
    return outcome


def _fmt(x: float | None, decimals: int) -> str:
    return "" if x is None else f"{x:.{decimals}f}"


def write_wer(path: Path, wer_percent: float) -> None:
    path.write_text(f"WER {wer_percent:.2f}\n", encoding="utf-8")


def _tc_rows():
    for phoneme in VOWEL_ORDER:
        yield phoneme, "vowel", "whole"
    for phoneme in FRICATIVE_ORDER:
        yield phoneme, "fricative", "whole"
    for phoneme in PLOSIVE_ORDER:
        for phase in ("closure", "release"):
            yield phoneme, "plosive", phase


def write_tc_boxplot(path: Path, tc_values: dict, word_reference: float | None) -> None:
    buf = io.StringIO()
    if word_reference is not None:
        buf.write(f"# word_reference_coverage: {word_reference:.4f}\n")
    buf.write("phoneme,class,phase,n,median,q1,q3,whisker_lo,whisker_hi,outliers\n")
    for phoneme, phone_class, phase in _tc_rows():
        values = tc_values.get((phone_class, phoneme, phase))
        if not values:
            continue
        s = boxplot_stats(values)
        outliers = ";".join(f"{x:.4f}" for x in s.outliers)
        buf.write(f"{phoneme},{phone_class},{phase},{s.n},{s.median:.4f},{s.q1:.4f},"
                  f"{s.q3:.4f},{s.whisker_lo:.4f},{s.whisker_hi:.4f},{outliers}\n")
    path.write_text(buf.getvalue(), encoding="utf-8")


def write_sm_formants(path: Path, table: metrics.SpectralMatchTable) -> None:
    buf = io.StringIO()
    buf.write("phoneme,F1_M,F1_F,F2_M,F2_F,F3_M,F3_F,F4_M,F4_F\n")
    columns = [(cue, gender) for cue in metrics.FORMANT_CUES for gender in ("M", "F")]
    sums = {c: [] for c in columns}
    for phoneme in VOWEL_ORDER:
        cells = []
        for cue, gender in columns:
            percent = table.percent(phoneme, gender, cue)
            if percent is not None:
                sums[(cue, gender)].append(percent)
            cells.append(_fmt(percent, 1))
        buf.write(phoneme + "," + ",".join(cells) + "\n")
    avg_cells = [_fmt(float(np.mean(sums[c])) if sums[c] else None, 1) for c in columns]
    buf.write("avg," + ",".join(avg_cells) + "\n")
    path.write_text(buf.getvalue(), encoding="utf-8")


def write_sm_peaks(path: Path, table: metrics.SpectralMatchTable) -> None:
    buf = io.StringIO()
    buf.write("phoneme,class,M,F\n")
    for phone_class, order in (("fricative", FRICATIVE_ORDER), ("plosive", PLOSIVE_ORDER)):
        sums = {"M": [], "F": []}
        for phoneme in order:
            cells = []
            for gender in ("M", "F"):
                percent = table.percent(phoneme, gender, "peak")
                if percent is not None:
                    sums[gender].append(percent)
                cells.append(_fmt(percent, 1))
            buf.write(f"{phoneme},{phone_class}," + ",".join(cells) + "\n")
        avg = [_fmt(float(np.mean(sums[g])) if sums[g] else None, 1) for g in ("M", "F")]
        buf.write(f"avg,{phone_class}," + ",".join(avg) + "\n")
    path.write_text(buf.getvalue(), encoding="utf-8")


def _mean_formants(measurements: list[OccurrenceMeasurement], phoneme: str,
                   gender: str) -> list[float | None]:
    collected: list[list[float]] = [[], [], [], []]
    for m in measurements:
        occ = m.occurrence
        if occ.phone_class != "vowel" or occ.phoneme != phoneme or occ.speaker_gender != gender:
            continue
        if m.measurement_failed or m.formants is None:
            continue
        for i in range(4):
            value = m.formants.get(i + 1)
            if value is not None:
                collected[i].append(value)
    return [float(np.mean(c)) if c else None for c in collected]


def write_distributions(out_dir: Path, dist_cells: dict, measurements: list,
                        p: FrameParams, sample_rate: int) -> list[Path]:
    centers = mel_bin_centers(p, sample_rate)
    by_group: dict[tuple[str, str], dict[str, metrics.DistributionCell]] = {}
    for (phone_class, phoneme, gender), cell in dist_cells.items():
        by_group.setdefault((phone_class, phoneme), {})[gender] = cell
    written = []
    for (phone_class, phoneme) in sorted(by_group):
        cells = by_group[(phone_class, phoneme)]
        buf = io.StringIO()
        for gender in ("M", "F"):
            n = cells[gender].n_occurrences if gender in cells else 0
            buf.write(f"# n_occurrences_{gender}: {n}\n")
        if phone_class == "vowel":
            for gender in ("M", "F"):
                means = _mean_formants(measurements, phoneme, gender)
                text = ",".join(_fmt(v, 1) for v in means)
                buf.write(f"# avg_formants_{gender}_hz: {text}\n")
        buf.write("bin_center_hz,density_M,density_F\n")
        densities = {g: cells[g].density() if g in cells else None for g in ("M", "F")}
        for b, center in enumerate(centers):
            row_m = _fmt(None if densities["M"] is None else float(densities["M"][b]), 6)
            row_f = _fmt(None if densities["F"] is None else float(densities["F"][b]), 6)
            buf.write(f"{center:.1f},{row_m},{row_f}\n")
        path = out_dir / f"dist_{phone_class}_{phoneme}.csv"
        path.write_text(buf.getvalue(), encoding="utf-8")
        written.append(path)
    return written


@dataclass
class RunSummary:
    wer: float | None
    n_utterances: int
    n_analyzed: int
    skips: dict[str, int]
    n_formant_failures: int
    word_reference_coverage: float | None
    cache_hits: int
    files: list[str]


def run_pipeline(cfg: RunConfig, backend: Backend | None = None) -> RunSummary:
    utterances = walk_corpus(cfg.corpus_root, cfg.subset)
    if not utterances:
        raise PipelineError(f"no utterances under {cfg.corpus_root!r} (subset {cfg.subset!r})")
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    own_backend = backend is None
    if own_backend:
        backend = from_spec(cfg.backend_spec)
    try:
        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                outcomes = list(pool.map(lambda u: process_utterance(cfg, u, backend), utterances))
        else:
            outcomes = [process_utterance(cfg, u, backend) for u in utterances]
    finally:
        if own_backend:
            backend.close()
    outcomes.sort(key=lambda o: o.utterance_id)

    skips: dict[str, int] = {}
    tc_values: dict[tuple[str, str, str], list[float]] = {}
    word_items: list[tuple[BinaryMap, range]] = []
    all_measurements: list[OccurrenceMeasurement] = []
    total_edit, total_ref = 0, 0
    n_analyzed = n_formant_failures = cache_hits = 0

    for outcome in outcomes:
        total_edit += outcome.edit_distance
        total_ref += outcome.n_reference_words
        cache_hits += int(outcome.cache_hit)
        if outcome.skipped is not None:
            reason = outcome.skipped.split(":", 1)[0]
            skips[reason] = skips.get(reason, 0) + 1
            continue
        n_analyzed += 1
        n_formant_failures += outcome.n_formant_failures
        word_items.extend(outcome.word_items)
        all_measurements.extend(outcome.measurements)
        for m in outcome.measurements:
            occ = m.occurrence
            key = (occ.phone_class, occ.phoneme, occ.phase)
            tc_values.setdefault(key, []).append(metrics.time_coverage(m.binary, occ.frames))

    if n_analyzed == 0:
        raise PipelineError("zero error-free utterances; nothing to analyze")

    table = metrics.spectral_match(all_measurements, cfg.frame_params, 16000)
    dist_cells = metrics.frequency_distribution(all_measurements, cfg.frame_params.n_mels)
    word_reference = metrics.word_reference_coverage(word_items) if word_items else None
    wer_value = 100.0 * total_edit / total_ref if total_ref else None

    files = []
    if cfg.dump_maps:
        maps_dir = out_dir / "maps"
        maps_dir.mkdir(exist_ok=True)
        for outcome in outcomes:
            base = outcome.utterance_id.replace("/", "_")
            for kind, saliency_or_binary, label in outcome.map_dumps:
                index, _, text = label.partition(" ")
                if kind == "token":
                    path = maps_dir / f"{base}_{index}.f32"
                    attribution.save_saliency_map(path, saliency_or_binary, text)
                else:
                    path = maps_dir / f"{base}_{index}.rle"
                    attribution.save_binary_map_rle(path, saliency_or_binary, text)
                files.append(f"maps/{path.name}")

    if wer_value is not None:
        write_wer(out_dir / "wer.txt", wer_value)
        files.append("wer.txt")
    write_tc_boxplot(out_dir / "tc_boxplot.csv", tc_values, word_reference)
    files.append("tc_boxplot.csv")
    write_sm_formants(out_dir / "sm_formants.csv", table)
    files.append("sm_formants.csv")
    write_sm_peaks(out_dir / "sm_peaks.csv", table)
    files.append("sm_peaks.csv")
    files.extend(p.name for p in write_distributions(
        out_dir, dist_cells, all_measurements, cfg.frame_params, 16000))

    summary = RunSummary(
        wer=wer_value, n_utterances=len(utterances), n_analyzed=n_analyzed,
        skips=dict(sorted(skips.items())), n_formant_failures=n_formant_failures,
        word_reference_coverage=word_reference, cache_hits=cache_hits,
        files=sorted(files),
    )
    with open(out_dir / "run_summary.json", "w", encoding="utf-8") as f:
        json.dump({
            "wer": summary.wer, "n_utterances": summary.n_utterances,
            "n_analyzed": summary.n_analyzed, "skips": summary.skips,
            "n_formant_failures": summary.n_formant_failures,
            "word_reference_coverage": summary.word_reference_coverage,
            "cache_hits": summary.cache_hits, "files": summary.files,
            "cache_version": CACHE_VERSION,
        }, f, indent=1, sort_keys=True)
        f.write("\n")
    return summary


def dump_saliency(cfg: RunConfig, utterance_id: str, token_index: int,
                  backend: Backend | None = None) -> list[Path]:
    """Write the (spectrogram, saliency, binary) triple for one token as CSV
    matrices with frame times (s) down the rows and bin centers (Hz) across
    the columns."""
    candidates = [u for u in walk_corpus(cfg.corpus_root, subset=None)
                  if u.utterance_id == utterance_id]
    if not candidates:
        raise PipelineError(f"unknown utterance id {utterance_id!r}")
    paths = candidates[0]

    own_backend = backend is None
    if own_backend:
        backend = from_spec(cfg.backend_spec)
    try:
        waveform = load_audio(paths.audio)
        pre_cmvn = compute_logmel(waveform, cfg.frame_params)
        features = cmvn(pre_cmvn)
        tokens, token_maps, _ = _attribute_all(cfg, utterance_id, features, pre_cmvn, backend)
    finally:
        if own_backend:
            backend.close()
    if not (0 <= token_index < len(tokens)):
        raise PipelineError(f"token index {token_index} outside [0, {len(tokens)})")

    saliency = token_maps[token_index]
    binary = binarize_topk(saliency, cfg.top_fraction)
    centers = mel_bin_centers(cfg.frame_params, waveform.sample_rate)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = utterance_id.replace("/", "_") + f"_token{token_index}"

    def write_matrix(name: str, values: np.ndarray, fmt: str) -> Path:
        path = out_dir / f"{base}_{name}.csv"
        buf = io.StringIO()
        buf.write("time_s," + ",".join(f"{c:.1f}" for c in centers) + "\n")
        for t in range(values.shape[0]):
            row = ",".join(fmt % v for v in values[t])
            buf.write(f"{pre_cmvn.frame_time(t):.4f},{row}\n")
        path.write_text(buf.getvalue(), encoding="utf-8")
        return path

    return [
        write_matrix("spectrogram", pre_cmvn.values, "%.6f"),
        write_matrix("saliency", saliency.values, "%.6f"),
        write_matrix("binary", binary.values.astype(int), "%d"),
    ]
