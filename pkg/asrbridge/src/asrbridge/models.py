"""Model wrappers the adapter can serve.

A model object needs two methods:

    decode(features) -> list of (token_id, piece) pairs, pieces carrying the
        tokenizer's word-boundary marker
    target_probability(features, prefix, target) -> float in [0, 1], the
        teacher-forced softmax probability of ``target`` after ``prefix``

``target_probability_batch`` is optional; the adapter falls back to a loop.
The stub model answers from fixed tables so protocol tests are exact, and
``load_model`` also accepts a ``module:pkg.attr`` spec for wiring in a real
model factory without this package depending on any ML framework.
"""

from __future__ import annotations

import importlib
import json

import numpy as np


class StubModel:
    """Scripted model: fixed decode output and a fixed probability table."""

    def __init__(self, pieces, prob_table=None, default_prob=0.5, poison_targets=()):
        self.pieces = [(int(i), str(p)) for i, p in pieces]
        self.prob_table = {int(k): float(v) for k, v in (prob_table or {}).items()}
        self.default_prob = float(default_prob)
        self.poison_targets = set(int(t) for t in poison_targets)

    @classmethod
    def from_script_file(cls, path) -> "StubModel":
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
        return cls(
            pieces=doc["pieces"],
            prob_table=doc.get("probs", {}),
            default_prob=doc.get("default_prob", 0.5),
            poison_targets=doc.get("poison_targets", ()),
        )

    def decode(self, features: np.ndarray):
        if features.size == 0:
            raise ValueError("empty features")
        return list(self.pieces)

    def target_probability(self, features: np.ndarray, prefix, target: int) -> float:
        if target in self.poison_targets:
            raise RuntimeError(f"stub model refuses target {target}")
        return self.prob_table.get(int(target), self.default_prob)


def load_model(spec: str):
    """Build a model from a spec string: ``stub:<script.json>`` or
    ``module:<package.attribute>`` (a zero-argument factory)."""
    if spec.startswith("stub:"):
        return StubModel.from_script_file(spec[len("stub:"):])
    if spec.startswith("module:"):
        module_name, _, attr = spec[len("module:"):].rpartition(".")
        factory = getattr(importlib.import_module(module_name), attr)
        return factory()
    raise ValueError(f"unknown model spec {spec!r} (expected stub: or module:)")
