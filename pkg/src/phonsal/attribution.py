"""Perturbation-based saliency maps for predicted tokens.

The engine clusters spectrogram elements into energy segments, repeatedly
masks random subsets of segments, scores every perturbed variant through the
backend, and reads each segment's saliency off the difference between its
kept-mean and masked-mean score. Token maps are standardized individually,
word maps are element-wise maxima over the word's tokens, and binary maps
keep exactly the top fraction of elements.
"""

from __future__ import annotations

import heapq
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np
from scipy import ndimage

from .alignment import words_from_tokens
from .backend import Backend, ScoreRequest, TokenSequence
from .features import MelSpectrogram

FILL_VALUE = 0.0  # post-CMVN per-channel mean
DEFAULT_TOP_FRACTION = 0.03
DEFAULT_ITERATIONS = 20000
DEFAULT_KEEP_PROB = 0.5
DEFAULT_N_BANDS = 8
MIN_SEGMENT_ELEMENTS = 4
MAX_SEGMENTS = 2000
SALIENCY_DECIMALS = 12  # accumulators rounded to 1e-12 before any tie-breaking
_REDUCE_CHUNK = 4096  # fixed-size reduction blocks keep results batch-size independent


class MaskDiversityError(RuntimeError):
    """A segment was never masked or never kept across all iterations."""


@dataclass(frozen=True)
class SegmentMap:
    """Dense segment labels over the (frame, bin) grid."""

    labels: np.ndarray
    n_segments: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int32)
        if labels.ndim != 2:
            raise ValueError("labels must be 2-D")
        counts = np.bincount(labels.ravel(), minlength=self.n_segments)
        if counts.size != self.n_segments or (counts == 0).any():
            raise ValueError("segment ids must be dense and every segment non-empty")
        object.__setattr__(self, "labels", labels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.n_segments)


@dataclass(frozen=True)
class MaskPlan:
    """Reproducible Bernoulli keep/mask bits for every (iteration, segment).

    Bits for iteration k are read from a counter-based stream keyed by
    (seed, k), so any worker can regenerate any block without shared state.
    """

    iterations: int = DEFAULT_ITERATIONS
    keep_prob: float = DEFAULT_KEEP_PROB
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.keep_prob < 1.0):
            raise ValueError("keep_prob must lie strictly between 0 and 1")
        if self.iterations < 2:
            raise ValueError("need at least 2 mask iterations")

    def bits_block(self, start: int, stop: int, n_segments: int) -> np.ndarray:
        """Keep bits for iterations [start, stop), shape (stop-start, n_segments)."""
        out = np.empty((stop - start, n_segments), dtype=bool)
        for k in range(start, stop):
            gen = np.random.Generator(np.random.Philox(key=self.seed, counter=[k, 0, 0, 0]))
            out[k - start] = gen.random(n_segments) < self.keep_prob
        return out


@dataclass(frozen=True)
class SaliencyMap:
    values: np.ndarray
    token_index: int = -1
    normalized: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("saliency values must be 2-D")
        if not np.isfinite(values).all():
            raise ValueError("saliency values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class BinaryMap:
    values: np.ndarray
    k: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=bool)
        if values.ndim != 2:
            raise ValueError("binary map must be 2-D")
        if int(values.sum()) != self.k:
            raise ValueError("k must equal the number of true elements")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _quantile_bands(values: np.ndarray, n_bands: int) -> np.ndarray:
    edges = np.quantile(values.ravel(), np.arange(1, n_bands) / n_bands)
    return np.searchsorted(edges, values, side="right").astype(np.int32)


def _adjacency(labels: np.ndarray) -> dict[int, dict[int, int]]:
    """4-neighbor boundary lengths between distinct segments."""
    pairs = []
    a, b = labels[:, :-1].ravel(), labels[:, 1:].ravel()
    keep = a != b
    pairs.append(np.stack([a[keep], b[keep]], axis=1))
    a, b = labels[:-1, :].ravel(), labels[1:, :].ravel()
    keep = a != b
    pairs.append(np.stack([a[keep], b[keep]], axis=1))
    all_pairs = np.concatenate(pairs, axis=0)
    lo = np.minimum(all_pairs[:, 0], all_pairs[:, 1])
    hi = np.maximum(all_pairs[:, 0], all_pairs[:, 1])
    uniq, counts = np.unique(np.stack([lo, hi], axis=1), axis=0, return_counts=True)
    adj: dict[int, dict[int, int]] = {}
    for (s, t), c in zip(uniq.tolist(), counts.tolist()):
        adj.setdefault(s, {})[t] = c
        adj.setdefault(t, {})[s] = c
    return adj


def _merge_until_valid(labels: np.ndarray, n_segments: int,
                       min_elements: int, max_segments: int) -> tuple[np.ndarray, int]:
    sizes = {s: int(c) for s, c in enumerate(np.bincount(labels.ravel(), minlength=n_segments))}
    adj = _adjacency(labels)
    merged_into: dict[int, int] = {}

    def resolve(s: int) -> int:
        while s in merged_into:
            s = merged_into[s]
        return s

    alive = set(sizes)
    # lazy min-heap over (size, id); stale entries are skipped on pop, so each
    # merge costs O(deg log n) instead of a full scan
    heap = [(size, s) for s, size in sizes.items()]
    heapq.heapify(heap)
    while len(alive) > 1 and heap:
        size, victim = heapq.heappop(heap)
        if victim not in alive or sizes[victim] != size:
            continue
        if size >= min_elements and len(alive) <= max_segments:
            break
        neighbors = adj.get(victim, {})
        if not neighbors:  # isolated segment cannot occur on a connected grid
            break
        target = max(neighbors, key=lambda s: (neighbors[s], -s))
        # fold victim into target: sizes, boundary lengths, rerouted edges
        sizes[target] += sizes.pop(victim)
        merged_into[victim] = target
        for other, length in neighbors.items():
            if other == target:
                continue
            adj[other].pop(victim, None)
            adj[other][target] = adj[other].get(target, 0) + length
            adj[target][other] = adj[other][target]
        adj[target].pop(victim, None)
        del adj[victim]
        alive.discard(victim)
        heapq.heappush(heap, (sizes[target], target))

    remap = np.arange(n_segments, dtype=np.int32)
    for s in range(n_segments):
        remap[s] = resolve(s)
    labels = remap[labels]
    # dense ids in first-seen scan order
    flat = labels.ravel()
    uniq, first_index = np.unique(flat, return_index=True)
    rank = np.empty(uniq.size, dtype=np.int32)
    rank[np.argsort(first_index, kind="stable")] = np.arange(uniq.size, dtype=np.int32)
    dense = rank[np.searchsorted(uniq, flat)]
    return dense.reshape(labels.shape).astype(np.int32), int(uniq.size)


def segment_by_energy(x: MelSpectrogram, n_bands: int = DEFAULT_N_BANDS,
                      min_elements: int = MIN_SEGMENT_ELEMENTS,
                      max_segments: int = MAX_SEGMENTS) -> SegmentMap:
    """Partition a pre-CMVN log-mel matrix into energy-coherent segments.

    Elements are quantized into energy-quantile bands; 8-connected components
    within each band become segments; runts below ``min_elements`` merge into
    the neighbor sharing the longest boundary, and the smallest segments keep
    merging until at most ``max_segments`` remain.
    """
    if x.cmvn_applied:
        raise ValueError("segmentation expects pre-CMVN features (physical energy ordering)")
    values = x.values
    if values.size < n_bands:
        raise ValueError(f"grid of {values.size} elements cannot fill {n_bands} bands")
    bands = _quantile_bands(values, n_bands)

    labels = np.full(values.shape, -1, dtype=np.int32)
    next_id = 0
    structure = np.ones((3, 3), dtype=bool)
    for band in np.unique(bands):
        comp, n_comp = ndimage.label(bands == band, structure=structure)
        mask = comp > 0
        labels[mask] = comp[mask] - 1 + next_id
        next_id += n_comp

    labels, n_segments = _merge_until_valid(labels, next_id, min_elements, max_segments)
    return SegmentMap(labels=labels, n_segments=n_segments)


def _collect_scores(features: MelSpectrogram, seg: SegmentMap, backend: Backend,
                    prefix: tuple[int, ...], target: int, plan: MaskPlan,
                    batch_size: int, workers: int) -> np.ndarray:
    labels_flat = seg.labels.ravel()
    base = features.values.ravel()
    shape = features.values.shape

    def run_batch(start: int) -> tuple[int, list[float]]:
        stop = min(start + batch_size, plan.iterations)
        keep = plan.bits_block(start, stop, seg.n_segments)
        masked = base[None, :] * keep[:, labels_flat]
        if FILL_VALUE != 0.0:
            masked += FILL_VALUE * (1.0 - keep[:, labels_flat])
        requests = [
            ScoreRequest(replace(features, values=masked[i].reshape(shape)), prefix, target)
            for i in range(stop - start)
        ]
        return start, backend.score_batch(requests)

    scores = np.empty(plan.iterations, dtype=np.float64)
    starts = range(0, plan.iterations, batch_size)
    if workers <= 1:
        results = map(run_batch, starts)
    else:
        pool = ThreadPoolExecutor(max_workers=workers)
        try:
            results = list(pool.map(run_batch, starts))
        finally:
            pool.shutdown()
    for start, batch_scores in results:
        scores[start : start + len(batch_scores)] = batch_scores
    if not np.isfinite(scores).all() or scores.min() < 0 or scores.max() > 1:
        raise ValueError("backend produced scores outside [0, 1]")
    return scores


def attribute_token(features: MelSpectrogram, seg: SegmentMap, backend: Backend,
                    prefix: tuple[int, ...] | list[int], target: int, plan: MaskPlan,
                    batch_size: int = 128, workers: int = 1,
                    token_index: int = -1) -> SaliencyMap:
    """Saliency of every spectrogram element for one target token.

    Masked segments are filled with 0 (the per-channel mean after CMVN). A
    segment's saliency is mean(score | kept) - mean(score | masked); elements
    inherit their segment's value. Output is reproducible for a fixed plan
    regardless of batch size or worker count.
    """
    if seg.shape != features.values.shape:
        raise ValueError("segment map shape does not match features")
    prefix = tuple(prefix)
    scores = _collect_scores(features, seg, backend, prefix, target, plan, batch_size, workers)

    # Deterministic reduction: fixed-size blocks in fixed order, regardless of
    # how the scores were computed above.
    n_seg = seg.n_segments
    labels_flat = seg.labels.ravel()
    kept_sum = np.zeros(n_seg, dtype=np.float64)
    kept_count = np.zeros(n_seg, dtype=np.int64)
    total_sum = 0.0
    for start in range(0, plan.iterations, _REDUCE_CHUNK):
        stop = min(start + _REDUCE_CHUNK, plan.iterations)
        bits = plan.bits_block(start, stop, n_seg)
        block = scores[start:stop]
        kept_sum += np.einsum("i,is->s", block, bits)
        kept_count += bits.sum(axis=0)
        total_sum += float(np.add.reduce(block))

    masked_count = plan.iterations - kept_count
    if (kept_count == 0).any() or (masked_count == 0).any():
        raise MaskDiversityError(
            "insufficient mask diversity: some segment was never kept or never masked"
        )
    saliency = kept_sum / kept_count - (total_sum - kept_sum) / masked_count
    saliency = np.round(saliency, SALIENCY_DECIMALS)
    return SaliencyMap(values=saliency[seg.labels], token_index=token_index, normalized=False)


def normalize(s: SaliencyMap) -> SaliencyMap:
    """Standardize one explanation to zero mean, unit (population) std."""
    if s.normalized:
        raise ValueError("saliency map already normalized")
    centered = s.values - s.values.mean()
    centered -= centered.mean()  # second pass removes the rounding residual
    std = float(centered.std())
    if std < 1e-12:
        out = np.zeros_like(s.values)
    else:
        out = centered / std
    return SaliencyMap(values=out, token_index=s.token_index, normalized=True)


def aggregate_word(maps: list[SaliencyMap]) -> SaliencyMap:
    """Element-wise maximum over one word's normalized token maps."""
    if not maps:
        raise ValueError("cannot aggregate an empty list of maps")
    shape = maps[0].shape
    for m in maps:
        if not m.normalized:
            raise ValueError("aggregate_word expects normalized maps")
        if m.shape != shape:
            raise ValueError("shape mismatch between token maps")
    values = maps[0].values
    for m in maps[1:]:
        values = np.maximum(values, m.values)
    return SaliencyMap(values=values, token_index=maps[0].token_index, normalized=True)


def top_k_count(fraction: float, n_elements: int) -> int:
    """ceil(fraction * n) computed exactly from the decimal the caller wrote."""
    if not (0.0 < fraction <= 1.0):
        raise ValueError("fraction must lie in (0, 1]")
    return math.ceil(Fraction(str(fraction)) * n_elements)


def binarize_topk(s: SaliencyMap, fraction: float = DEFAULT_TOP_FRACTION) -> BinaryMap:
    """Keep exactly ceil(fraction * T * F) elements of highest saliency.

    Ties break toward earlier frames, then lower bins.
    """
    if not s.normalized:
        raise ValueError("binarize_topk expects a normalized (or aggregated) map")
    flat = s.values.ravel()
    k = top_k_count(fraction, flat.size)
    order = np.argsort(-flat, kind="stable")  # stable sort = row-major tie-break
    mask = np.zeros(flat.size, dtype=bool)
    mask[order[:k]] = True
    return BinaryMap(values=mask.reshape(s.shape), k=k)


@dataclass(frozen=True)
class WordExplanation:
    word: str
    token_range: range
    binary: BinaryMap
    token_maps: tuple[SaliencyMap, ...]


@dataclass(frozen=True)
class UtteranceExplanation:
    tokens: TokenSequence
    words: tuple[WordExplanation, ...]


def explain_utterance(features: MelSpectrogram, seg: SegmentMap, backend: Backend,
                      plan: MaskPlan, top_fraction: float = DEFAULT_TOP_FRACTION,
                      batch_size: int = 128, workers: int = 1) -> UtteranceExplanation:
    """Full per-utterance attribution: transcribe, attribute every token with
    the clean prefix teacher-forced, standardize, then aggregate and binarize
    per word.

    ``features`` must be post-CMVN; ``seg`` comes from the same utterance's
    pre-CMVN log-mel.
    """
    if not features.cmvn_applied:
        raise ValueError("explain_utterance expects CMVN-normalized features")
    tokens = backend.transcribe(features)
    ids = tokens.ids()
    token_maps = []
    for i, target in enumerate(ids):
        raw = attribute_token(features, seg, backend, tuple(ids[:i]), target, plan,
                              batch_size=batch_size, workers=workers, token_index=i)
        token_maps.append(normalize(raw))

    words = []
    for word, token_range in words_from_tokens(tokens):
        maps = tuple(token_maps[i] for i in token_range)
        word_map = aggregate_word(list(maps))
        words.append(WordExplanation(
            word=word,
            token_range=token_range,
            binary=binarize_topk(word_map, top_fraction),
            token_maps=maps,
        ))
    return UtteranceExplanation(tokens=tokens, words=tuple(words))


def save_saliency_map(path, s: SaliencyMap, token_text: str) -> None:
    """Binary dump: one ASCII header line "T F <text>", then row-major f32."""
    t, f = s.shape
    with open(path, "wb") as fh:
        fh.write(f"{t} {f} {token_text}\n".encode("utf-8"))
        fh.write(s.values.astype("<f4").tobytes())


def load_saliency_map(path) -> tuple[np.ndarray, str]:
    with open(path, "rb") as fh:
        header = fh.readline().decode("utf-8").rstrip("\n")
        t_str, f_str, text = header.split(" ", 2)
        t, f = int(t_str), int(f_str)
        values = np.frombuffer(fh.read(4 * t * f), dtype="<f4").reshape(t, f)
    return values.astype(np.float64), text


def save_binary_map_rle(path, b: BinaryMap, token_text: str) -> None:
    """Text dump: header line, then run lengths of the flattened map starting
    with a zeros-run (possibly of length 0)."""
    flat = b.values.ravel()
    boundaries = np.flatnonzero(np.diff(flat)) + 1
    runs = np.diff(np.concatenate([[0], boundaries, [flat.size]]))
    if flat[0]:
        runs = np.concatenate([[0], runs])
    t, f = b.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{t} {f} {token_text}\n")
        fh.write(" ".join(str(int(r)) for r in runs) + "\n")


def load_binary_map_rle(path) -> tuple[np.ndarray, str]:
    with open(path, "r", encoding="utf-8") as fh:
        t_str, f_str, text = fh.readline().rstrip("\n").split(" ", 2)
        runs = [int(r) for r in fh.readline().split()]
    flat = np.zeros(int(t_str) * int(f_str), dtype=bool)
    pos, value = 0, False
    for run in runs:
        flat[pos : pos + run] = value
        pos += run
        value = not value
    return flat.reshape(int(t_str), int(f_str)), text
