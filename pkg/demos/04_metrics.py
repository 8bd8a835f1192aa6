"""
Agreement metrics
=================

Build a couple of phone occurrences with binary saliency maps by hand and
compute the three agreement metrics plus boxplot statistics.
"""

import numpy as np

from phonsal import FrameParams, boxplot_stats, hz_to_bin, spectral_match, time_coverage
from phonsal.acoustics import FormantSet
from phonsal.alignment import PhoneOccurrence
from phonsal.attribution import BinaryMap
from phonsal.metrics import OccurrenceMeasurement, frequency_distribution

params = FrameParams()


def make_binary(values):
    values = np.asarray(values, dtype=bool)
    return BinaryMap(values=values, k=int(values.sum()))


# a vowel /ɑ/ spanning frames 10..30, salient on 16 of its 20 frames and
# exactly at its F1/F2 bins at the midpoint frame
occ = PhoneOccurrence(phoneme="ɑ", phone_class="vowel", phase="whole",
                      start=1600, end=4800, frames=range(10, 30), midpoint_frame=19,
                      word_index=0, speaker_gender="M", utterance_id="demo")
mask = np.zeros((40, 80), dtype=bool)
mask[10:26, 30] = True
f1, f2 = 700.0, 1100.0
mask[19, hz_to_bin(f1, params, 16000)] = True
mask[19, hz_to_bin(f2, params, 16000)] = True
binary = make_binary(mask)

tc = time_coverage(binary, occ.frames)
print(f"time coverage: {tc:.1f}% of the vowel's {len(occ.frames)} frames")

measurement = OccurrenceMeasurement(
    occurrence=occ, binary=binary,
    formants=FormantSet(f1=f1, f2=f2, f3=2400.0, f4=3300.0, gender_ceiling=5000.0))
table = spectral_match([measurement], params, 16000)
for cue in ("F1", "F2", "F3", "F4"):
    print(f"spectral match {cue}: {table.percent('ɑ', 'M', cue):.0f}%")

dist = frequency_distribution([measurement], params.n_mels)
density = dist[("vowel", "ɑ", "M")].density()
print(f"frequency distribution: {int(density.sum())} salient bins at the midpoint frame")

# boxplot data for a bag of coverage scores
scores = [96.0, 100.0, 100.0, 91.5, 98.0, 100.0, 42.0]
stats = boxplot_stats(scores)
print(f"median {stats.median:.1f}, quartiles [{stats.q1:.1f}, {stats.q3:.1f}], "
      f"whiskers [{stats.whisker_lo:.1f}, {stats.whisker_hi:.1f}], outliers {list(stats.outliers)}")
