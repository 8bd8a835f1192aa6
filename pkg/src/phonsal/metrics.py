"""Agreement metrics between binary saliency maps and phonetic annotation.

Three quantities per studied phoneme: time coverage (share of a phone's
frames holding any salient element), spectral match (share of measured cues,
formants or peak bins, landing on salient elements at their measurement
frame), and the per-bin frequency distribution of salient elements across
occurrences. Tallies are plain mergeable counters so corpus reduction can
run in any grouping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .acoustics import FormantSet, PeakMeasurement
from .alignment import PhoneOccurrence
from .attribution import BinaryMap
from .features import FrameParams, hz_to_bin

FORMANT_CUES = ("F1", "F2", "F3", "F4")


def time_coverage(binary: BinaryMap, frames: range) -> float:
    """Percent of frames in ``frames`` with at least one salient element."""
    if len(frames) == 0:
        raise ValueError("empty frame range")
    t = binary.values.shape[0]
    if frames.start < 0 or frames.stop > t:
        raise ValueError(f"frame range {frames} outside [0, {t})")
    covered = binary.values[frames.start : frames.stop].any(axis=1)
    return 100.0 * float(covered.sum()) / len(frames)


def word_reference_coverage(word_items: list[tuple[BinaryMap, range]]) -> float:
    """Mean time coverage of whole words, each over its own frame span."""
    if not word_items:
        raise ValueError("need at least one analyzed word")
    values = [time_coverage(binary, frames) for binary, frames in word_items]
    return float(np.mean(values))


@dataclass
class OccurrenceMeasurement:
    """One studied occurrence joined with its word's binary map and cue."""

    occurrence: PhoneOccurrence
    binary: BinaryMap
    formants: FormantSet | None = None
    peak: PeakMeasurement | None = None
    measurement_failed: bool = False


@dataclass
class SpectralMatchCell:
    matched: int = 0
    n_occurrences: int = 0
    n_failures: int = 0

    @property
    def percent(self) -> float | None:
        denom = self.n_occurrences - self.n_failures
        if denom <= 0:
            return None
        return 100.0 * self.matched / denom

    def merge(self, other: "SpectralMatchCell") -> None:
        self.matched += other.matched
        self.n_occurrences += other.n_occurrences
        self.n_failures += other.n_failures


@dataclass
class SpectralMatchTable:
    """Cells keyed by (phoneme, gender, cue) with cue in {F1..F4, peak}."""

    cells: dict[tuple[str, str, str], SpectralMatchCell] = field(default_factory=dict)

    def cell(self, phoneme: str, gender: str, cue: str) -> SpectralMatchCell:
        return self.cells.setdefault((phoneme, gender, cue), SpectralMatchCell())

    def percent(self, phoneme: str, gender: str, cue: str) -> float | None:
        got = self.cells.get((phoneme, gender, cue))
        return None if got is None else got.percent

    def merge(self, other: "SpectralMatchTable") -> None:
        for key, cell in other.cells.items():
            self.cells.setdefault(key, SpectralMatchCell()).merge(cell)


def _burst_frames(occ: PhoneOccurrence, n_frames: int) -> list[int]:
    onset = occ.frames.start
    return [t for t in (onset, onset + 1) if t < n_frames]


def spectral_match(measurements: list[OccurrenceMeasurement], p: FrameParams,
                   sample_rate: int) -> SpectralMatchTable:
    """Tally cue/saliency agreement at each cue's measurement frame(s).

    Vowel formants match when the binary map is salient at (midpoint frame,
    nearest mel bin); fricative peaks at (midpoint frame, peak bin); burst
    peaks when either of the two release-onset frames is salient at the peak
    bin. Missing formants and failed measurements count as failures, keeping
    denominators honest. Plosive closure occurrences carry no cue.
    """
    table = SpectralMatchTable()
    for m in measurements:
        occ = m.occurrence
        if occ.phone_class == "vowel":
            for index, cue in enumerate(FORMANT_CUES, start=1):
                cell = table.cell(occ.phoneme, occ.speaker_gender, cue)
                cell.n_occurrences += 1
                value = None if (m.measurement_failed or m.formants is None) else m.formants.get(index)
                if value is None:
                    cell.n_failures += 1
                elif m.binary.values[occ.midpoint_frame, hz_to_bin(value, p, sample_rate)]:
                    cell.matched += 1
        elif occ.phone_class == "fricative":
            cell = table.cell(occ.phoneme, occ.speaker_gender, "peak")
            cell.n_occurrences += 1
            if m.measurement_failed or m.peak is None:
                cell.n_failures += 1
            elif m.binary.values[occ.midpoint_frame, m.peak.bin]:
                cell.matched += 1
        elif occ.phone_class == "plosive" and occ.phase == "release":
            cell = table.cell(occ.phoneme, occ.speaker_gender, "peak")
            cell.n_occurrences += 1
            if m.measurement_failed or m.peak is None:
                cell.n_failures += 1
            else:
                frames = _burst_frames(occ, m.binary.values.shape[0])
                if any(m.binary.values[t, m.peak.bin] for t in frames):
                    cell.matched += 1
    return table


@dataclass
class DistributionCell:
    counts: np.ndarray
    n_occurrences: int = 0

    def density(self) -> np.ndarray:
        return self.counts / self.n_occurrences

    def merge(self, other: "DistributionCell") -> None:
        self.counts = self.counts + other.counts
        self.n_occurrences += other.n_occurrences


def frequency_distribution(measurements: list[OccurrenceMeasurement],
                           n_bins: int) -> dict[tuple[str, str, str], DistributionCell]:
    """Per (class, phoneme, gender): fraction of occurrences salient at each
    bin at the measurement frame (midpoint; either burst frame for plosives).

    Groups with zero occurrences are simply absent.
    """
    cells: dict[tuple[str, str, str], DistributionCell] = {}
    for m in measurements:
        occ = m.occurrence
        if occ.phone_class == "plosive":
            if occ.phase != "release":
                continue
            frames = _burst_frames(occ, m.binary.values.shape[0])
            salient = np.zeros(n_bins, dtype=bool)
            for t in frames:
                salient |= m.binary.values[t]
        else:
            salient = m.binary.values[occ.midpoint_frame]
        key = (occ.phone_class, occ.phoneme, occ.speaker_gender)
        cell = cells.setdefault(key, DistributionCell(counts=np.zeros(n_bins, dtype=np.int64)))
        cell.counts = cell.counts + salient.astype(np.int64)
        cell.n_occurrences += 1
    return cells


@dataclass(frozen=True)
class BoxplotStats:
    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    outliers: tuple[float, ...]
    n: int


def boxplot_stats(values: list[float]) -> BoxplotStats:
    """Quartiles by linear interpolation, Tukey whiskers at 1.5 IQR."""
    if len(values) == 0:
        raise ValueError("boxplot of an empty list")
    v = np.sort(np.asarray(values, dtype=np.float64))
    q1, median, q3 = np.quantile(v, [0.25, 0.5, 0.75])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo_fence) & (v <= hi_fence)]
    outliers = v[(v < lo_fence) | (v > hi_fence)]
    return BoxplotStats(
        median=float(median), q1=float(q1), q3=float(q3),
        whisker_lo=float(inside[0]), whisker_hi=float(inside[-1]),
        outliers=tuple(float(x) for x in outliers), n=v.size,
    )
