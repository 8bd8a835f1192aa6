"""End-to-end interop over the wire: the analysis toolkit's subprocess client
driving this adapter. Runs only when phonsal is installed; the protocol
itself is covered regardless by test_protocol.py."""

import sys
from pathlib import Path

import numpy as np
import pytest

phonsal = pytest.importorskip("phonsal")

STUB_SCRIPT = Path(__file__).parent / "data" / "stub_script.json"


@pytest.fixture
def wire_backend():
    command = f"{sys.executable} -m asrbridge --model stub:{STUB_SCRIPT}"
    with phonsal.ProcessBackend(command) as backend:
        yield backend


def make_features(values):
    p = phonsal.FrameParams(n_mels=values.shape[1])
    return phonsal.MelSpectrogram(values=values, frame_params=p, sample_rate=16000,
                                  cmvn_applied=True)


def test_transcribe_roundtrip(wire_backend):
    features = make_features(np.zeros((4, 8)))
    tokens = wire_backend.transcribe(features)
    assert tokens.text() == "forgive me"
    assert [t.begins_word for t in tokens] == [True, False, True]


def test_score_roundtrip(wire_backend):
    features = make_features(np.random.default_rng(0).normal(0, 1, (4, 8)))
    requests = [phonsal.ScoreRequest(features, (17,), 9)] * 5
    assert wire_backend.score_batch(requests) == [0.75] * 5


def test_full_attribution_through_the_wire(wire_backend):
    rng = np.random.default_rng(1)
    values = rng.uniform(0, 1, (12, 8))
    pre = phonsal.MelSpectrogram(values=values, frame_params=phonsal.FrameParams(n_mels=8),
                                 sample_rate=16000)
    seg = phonsal.segment_by_energy(pre, n_bands=4)
    features = make_features(values - values.mean(axis=0))
    plan = phonsal.MaskPlan(iterations=64, seed=3)
    saliency = phonsal.attribute_token(features, seg, wire_backend, (), 9, plan,
                                       batch_size=16)
    # the stub's probability is constant, so attribution must be exactly zero
    assert np.all(saliency.values == 0.0)
