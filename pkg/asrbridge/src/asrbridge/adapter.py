"""JSON-lines request loop wrapping an autoregressive ASR model.

One JSON object per line on stdin, one per line on stdout:

    -> {"id": u64, "op": "transcribe", "features": [[f32, ...], ...]}
    <- {"id": u64, "tokens": [{"id": int, "text": str, "begins_word": bool}, ...]}
    -> {"id": u64, "op": "score", "prefix": [int, ...], "target": int,
        "features_batch": [[[f32, ...], ...], ...]}
    <- {"id": u64, "probs": [f64, ...]}
    <- {"id": u64, "error": str}            on any failure

Word-boundary flags come from the tokenizer's marker convention: in
``prefix`` mode a piece starting with the marker begins a word
(SentencePiece style); in ``suffix`` mode a piece ending with the marker
joins onto the next piece (subword-nmt style). Malformed requests and model
exceptions produce an error response and the loop keeps running.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass

import numpy as np

from .models import load_model

SENTENCEPIECE_MARKER = "▁"


@dataclass(frozen=True)
class AdapterConfig:
    model_spec: str
    device: str = "cpu"
    max_batch: int = 128
    marker_mode: str = "prefix"  # prefix | suffix
    marker: str = SENTENCEPIECE_MARKER

    def __post_init__(self):
        if self.max_batch < 1:
            raise ValueError("max_batch must be at least 1")
        if self.marker_mode not in ("prefix", "suffix"):
            raise ValueError("marker_mode must be 'prefix' or 'suffix'")


def pieces_to_tokens(pieces, marker_mode: str, marker: str) -> list[dict]:
    """Convert (id, piece) pairs into wire tokens with begins_word flags."""
    tokens = []
    previous_joined = False
    for index, (token_id, piece) in enumerate(pieces):
        if marker_mode == "prefix":
            begins = piece.startswith(marker)
            text = piece[len(marker):] if begins else piece
        else:
            begins = not previous_joined
            previous_joined = piece.endswith(marker)
            text = piece[: -len(marker)] if previous_joined else piece
        if index == 0:
            begins = True
        tokens.append({"id": int(token_id), "text": text, "begins_word": bool(begins)})
    return tokens


def detokenize(pieces, marker_mode: str, marker: str) -> str:
    """The transcript string implied by the marker convention."""
    words = []
    for token in pieces_to_tokens(pieces, marker_mode, marker):
        if token["begins_word"] or not words:
            words.append(token["text"])
        else:
            words[-1] += token["text"]
    return " ".join(words)


def _features_array(payload) -> np.ndarray:
    arr = np.asarray(payload, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError("features must be a non-empty 2-D matrix")
    if not np.isfinite(arr).all():
        raise ValueError("features contain non-finite values")
    return arr


class Adapter:
    def __init__(self, config: AdapterConfig, model=None):
        self.config = config
        self.model = model if model is not None else load_model(config.model_spec)

    def _transcribe(self, request: dict) -> dict:
        features = _features_array(request["features"])
        pieces = self.model.decode(features)
        tokens = pieces_to_tokens(pieces, self.config.marker_mode, self.config.marker)
        return {"id": request["id"], "tokens": tokens}

    def _score(self, request: dict) -> dict:
        prefix = [int(p) for p in request["prefix"]]
        target = int(request["target"])
        batch = [_features_array(f) for f in request["features_batch"]]
        probs: list[float] = []
        for start in range(0, len(batch), self.config.max_batch):
            chunk = batch[start : start + self.config.max_batch]
            if hasattr(self.model, "target_probability_batch"):
                chunk_probs = self.model.target_probability_batch(chunk, prefix, target)
            else:
                chunk_probs = [self.model.target_probability(f, prefix, target) for f in chunk]
            probs.extend(float(p) for p in chunk_probs)
        for p in probs:
            if not (0.0 <= p <= 1.0) or not np.isfinite(p):
                raise ValueError(f"model produced probability {p!r} outside [0, 1]")
        return {"id": request["id"], "probs": probs}

    def handle_line(self, line: str) -> dict | None:
        line = line.strip()
        if not line:
            return None
        request_id = 0
        try:
            request = json.loads(line)
            request_id = int(request.get("id", 0))
            op = request["op"]
            if op == "transcribe":
                return self._transcribe(request)
            if op == "score":
                return self._score(request)
            raise ValueError(f"unknown op {op!r}")
        except Exception as exc:  # keep serving: every failure becomes a response
            return {"id": request_id, "error": f"{type(exc).__name__}: {exc}"}

    def serve(self, stdin=None, stdout=None) -> None:
        stdin = stdin if stdin is not None else sys.stdin
        stdout = stdout if stdout is not None else sys.stdout
        for line in stdin:
            response = self.handle_line(line)
            if response is None:
                continue
            stdout.write(json.dumps(response) + "\n")
            stdout.flush()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="asrbridge",
        description="Serve an ASR model over the JSON-lines scoring protocol (stdin/stdout).",
    )
    parser.add_argument("--model", required=True,
                        help="model spec: stub:<script.json> or module:<pkg.factory>")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-batch", type=int, default=128, dest="max_batch")
    parser.add_argument("--marker-mode", choices=("prefix", "suffix"), default="prefix",
                        dest="marker_mode")
    parser.add_argument("--marker", default=SENTENCEPIECE_MARKER)
    args = parser.parse_args(argv)
    config = AdapterConfig(model_spec=args.model, device=args.device,
                           max_batch=args.max_batch, marker_mode=args.marker_mode,
                           marker=args.marker)
    Adapter(config).serve()
    return 0


if __name__ == "__main__":
    sys.exit(main())
