from __future__ import annotations

import numpy as np
import pytest

from phonsal import synth
from phonsal.features import FrameParams, MelSpectrogram


@pytest.fixture(scope="session")
def mini_corpus(tmp_path_factory):
    """Synthetic TIMIT-layout corpus plus its oracle backend script."""
    root = tmp_path_factory.mktemp("corpus")
    corpus_root, script_path = synth.build_mini_corpus(root)
    return corpus_root, script_path


def make_mel(values, sample_rate=16000, cmvn_applied=False):
    values = np.asarray(values, dtype=np.float64)
    p = FrameParams(n_mels=values.shape[1])
    return MelSpectrogram(values=values, frame_params=p, sample_rate=sample_rate,
                          cmvn_applied=cmvn_applied)
