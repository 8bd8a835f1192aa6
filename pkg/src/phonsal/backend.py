"""Scoring contract between the attribution engine and an ASR model.

A backend answers two questions: what token sequence does the model predict
for a feature matrix, and how probable is a given target token under teacher
forcing when the features are perturbed. Besides in-process oracle backends
used for testing, this module speaks a JSON-lines protocol to external model
processes (child process stdin/stdout, or HTTP POST with one JSON object per
request).

Wire schema, one JSON object per line:

    -> {"id": u64, "op": "transcribe", "features": [[f32, ...], ...]}
    <- {"id": u64, "tokens": [{"id": int, "text": str, "begins_word": bool}, ...]}
    -> {"id": u64, "op": "score", "prefix": [int, ...], "target": int,
        "features_batch": [[[f32, ...], ...], ...]}
    <- {"id": u64, "probs": [f64, ...]}
    <- {"id": u64, "error": str}            on failure

Features are row-major, T rows by F columns.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import shlex
import subprocess
import threading
import urllib.request
from concurrent.futures import Future, TimeoutError as FutureTimeout
from dataclasses import dataclass

import numpy as np

from .features import MelSpectrogram

DEFAULT_MAX_BATCH = 128


class BackendError(Exception):
    """Base class for backend failures."""


class TransportError(BackendError):
    """The backend process or endpoint is unreachable or died."""


class ProtocolError(BackendError):
    """The backend answered, but with something outside the contract."""


@dataclass(frozen=True)
class Token:
    id: int
    text: str
    begins_word: bool

    def __post_init__(self):
        if self.id < 0:
            raise ValueError("token id must be non-negative")


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[Token, ...]

    def __post_init__(self):
        tokens = tuple(self.tokens)
        if tokens and not tokens[0].begins_word:
            raise ValueError("first token must begin a word")
        object.__setattr__(self, "tokens", tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def ids(self) -> list[int]:
        return [t.id for t in self.tokens]

    def text(self) -> str:
        """Transcript string: words joined by single spaces."""
        words: list[str] = []
        for t in self.tokens:
            if t.begins_word or not words:
                words.append(t.text)
            else:
                words[-1] += t.text
        return " ".join(words)


@dataclass(frozen=True)
class ScoreRequest:
    features: MelSpectrogram
    prefix: tuple[int, ...]
    target: int


class Backend:
    """Interface the attribution engine talks to. Implementations must be
    deterministic: identical requests yield identical responses."""

    def transcribe(self, features: MelSpectrogram) -> TokenSequence:
        raise NotImplementedError

    def score_batch(self, requests: list[ScoreRequest]) -> list[float]:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _check_transcribe_input(features: MelSpectrogram) -> None:
    if features.values.size == 0:
        raise ValueError("empty features")
    if not features.cmvn_applied:
        raise ValueError("transcribe expects CMVN-normalized features")


def _check_probs(probs, expected: int) -> list[float]:
    arr = np.asarray(probs, dtype=np.float64)
    if arr.shape != (expected,):
        raise ProtocolError(f"expected {expected} probabilities, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ProtocolError("backend returned non-finite probability")
    if (arr < 0).any() or (arr > 1).any():
        raise ProtocolError("backend returned probability outside [0, 1]")
    return arr.tolist()


def _check_shared_prefix_target(requests: list[ScoreRequest]) -> tuple[tuple[int, ...], int]:
    prefix, target = requests[0].prefix, requests[0].target
    for r in requests[1:]:
        if r.prefix != prefix or r.target != target:
            raise ValueError("score_batch requests must share one prefix/target")
    return prefix, target


class EnergyOracleBackend(Backend):
    """Analytic test backend: probability is the clamped mean of the feature
    values inside a fixed rectangle, so saliency has a known ground truth.

    The rectangle is half-open in (frame, bin) space. A zero-area rectangle
    yields the constant 0.5.
    """

    def __init__(self, region: tuple[int, int, int, int], script: TokenSequence):
        self.region = region
        self.script = script

    def transcribe(self, features: MelSpectrogram) -> TokenSequence:
        _check_transcribe_input(features)
        return self.script

    def score_one(self, values: np.ndarray) -> float:
        t0, f0, t1, f1 = self.region
        patch = values[t0:t1, f0:f1]
        if patch.size == 0:
            return 0.5
        return float(np.clip(patch.mean(), 0.0, 1.0))

    def score_batch(self, requests: list[ScoreRequest]) -> list[float]:
        if not requests:
            return []
        _check_shared_prefix_target(requests)
        return [self.score_one(r.features.values) for r in requests]


def make_energy_oracle(region: tuple[int, int, int, int], vocab: TokenSequence) -> EnergyOracleBackend:
    return EnergyOracleBackend(region=region, script=vocab)


def features_fingerprint(features: MelSpectrogram, decimals: int = 6) -> str:
    """Content hash of a feature matrix, robust to sub-1e-6 numeric wobble."""
    q = np.round(np.asarray(features.values, dtype=np.float64), decimals)
    q = q + 0.0  # collapse -0.0 so the byte image is canonical
    h = hashlib.sha256()
    h.update(str(q.shape).encode())
    h.update(q.tobytes())
    return h.hexdigest()


class ScriptedCorpusBackend(Backend):
    """Deterministic oracle for whole-corpus runs.

    Transcriptions are looked up by feature fingerprint (the script is built
    by whoever generated the corpus). Scores pass the mean feature value of a
    target-derived rectangle through a logistic squash, so every token watches
    its own region and probabilities stay strictly inside (0, 1).
    """

    SCRIPT_VERSION = 1

    def __init__(self, entries: dict[str, TokenSequence], gain: float = 4.0):
        self.entries = entries
        self.gain = gain

    @classmethod
    def from_script_file(cls, path) -> "ScriptedCorpusBackend":
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
        if doc.get("version") != cls.SCRIPT_VERSION:
            raise ProtocolError(f"unsupported oracle script version {doc.get('version')!r}")
        entries = {}
        for fingerprint, entry in doc["entries"].items():
            entries[fingerprint] = TokenSequence(
                tuple(Token(t["id"], t["text"], t["begins_word"]) for t in entry["tokens"])
            )
        return cls(entries)

    @staticmethod
    def script_document(entries: dict[str, TokenSequence]) -> dict:
        return {
            "version": ScriptedCorpusBackend.SCRIPT_VERSION,
            "entries": {
                fp: {"tokens": [
                    {"id": t.id, "text": t.text, "begins_word": t.begins_word} for t in seq
                ]}
                for fp, seq in entries.items()
            },
        }

    @staticmethod
    def target_region(target: int, n_frames: int, n_bins: int) -> tuple[int, int, int, int]:
        rng = np.random.Generator(np.random.Philox(key=target, counter=[0, 0, 0, 0]))
        ht = max(1, n_frames // 3)
        wf = max(1, n_bins // 3)
        t0 = int(rng.integers(0, n_frames - ht + 1))
        f0 = int(rng.integers(0, n_bins - wf + 1))
        return t0, f0, t0 + ht, f0 + wf

    def transcribe(self, features: MelSpectrogram) -> TokenSequence:
        _check_transcribe_input(features)
        fingerprint = features_fingerprint(features)
        try:
            return self.entries[fingerprint]
        except KeyError:
            raise ProtocolError("no scripted transcription for these features") from None

    def score_batch(self, requests: list[ScoreRequest]) -> list[float]:
        if not requests:
            return []
        _, target = _check_shared_prefix_target(requests)
        out = []
        for r in requests:
            t0, f0, t1, f1 = self.target_region(target, r.features.n_frames, r.features.n_bins)
            mean = float(r.features.values[t0:t1, f0:f1].mean())
            out.append(1.0 / (1.0 + np.exp(-self.gain * mean)))
        return out


def _encode_features(values: np.ndarray) -> list:
    return np.asarray(values, dtype=np.float32).tolist()


def _decode_tokens(payload) -> TokenSequence:
    try:
        tokens = tuple(
            Token(int(t["id"]), str(t["text"]), bool(t["begins_word"])) for t in payload
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed token list: {exc}") from exc
    if not tokens:
        raise ProtocolError("backend returned an empty token list")
    return TokenSequence(tokens)


class ProcessBackend(Backend):
    """JSON-lines client for a model served by a child process.

    Requests may be submitted from several threads at once; a reader thread
    matches responses to callers by id, so the child can answer out of order.
    """

    def __init__(self, command: str, max_batch: int = DEFAULT_MAX_BATCH, timeout: float = 300.0):
        self.command = command
        self.max_batch = max_batch
        self.timeout = timeout
        self._ids = itertools.count(1)
        self._pending: dict[int, Future] = {}
        self._broken: Exception | None = None
        self._lock = threading.Lock()
        try:
            self._proc = subprocess.Popen(
                shlex.split(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
            )
        except OSError as exc:
            raise TransportError(f"cannot start backend {command!r}: {exc}") from exc
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        for line in self._proc.stdout:
            line = line.strip()
            if not line:
                continue
            try:
                msg = json.loads(line)
                rid = int(msg["id"])
            except (ValueError, KeyError, TypeError):
                self._fail_all(ProtocolError(f"unparseable response line: {line[:200]}"))
                return
            with self._lock:
                fut = self._pending.pop(rid, None)
            if fut is not None:
                fut.set_result(msg)
        self._fail_all(self._death_error())

    def _death_error(self) -> TransportError:
        code = self._proc.poll()
        stderr_tail = ""
        try:
            if self._proc.stderr is not None:
                stderr_tail = self._proc.stderr.read()[-2000:]
        except Exception:
            pass
        return TransportError(
            f"backend process ended (exit code {code}); stderr tail: {stderr_tail!r}"
        )

    def _fail_all(self, exc: Exception) -> None:
        with self._lock:
            pending, self._pending = self._pending, {}
            self._broken = exc
        for fut in pending.values():
            if not fut.done():
                fut.set_exception(exc)

    def _roundtrip(self, payload: dict) -> dict:
        rid = next(self._ids)
        payload = {"id": rid, **payload}
        fut: Future = Future()
        with self._lock:
            if self._broken is not None:
                raise self._broken
            if self._proc.poll() is not None:
                raise self._death_error()
            self._pending[rid] = fut
            try:
                self._proc.stdin.write(json.dumps(payload) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                self._pending.pop(rid, None)
                raise self._death_error() from exc
        try:
            msg = fut.result(timeout=self.timeout)
        except FutureTimeout:
            with self._lock:
                self._pending.pop(rid, None)
            raise TransportError(f"backend timed out after {self.timeout}s") from None
        if "error" in msg:
            raise ProtocolError(f"backend error: {msg['error']}")
        return msg

    def transcribe(self, features: MelSpectrogram) -> TokenSequence:
        _check_transcribe_input(features)
        msg = self._roundtrip({"op": "transcribe", "features": _encode_features(features.values)})
        if "tokens" not in msg:
            raise ProtocolError("transcribe response lacks 'tokens'")
        return _decode_tokens(msg["tokens"])

    def score_batch(self, requests: list[ScoreRequest]) -> list[float]:
        if not requests:
            return []
        prefix, target = _check_shared_prefix_target(requests)
        probs: list[float] = []
        for start in range(0, len(requests), self.max_batch):
            chunk = requests[start : start + self.max_batch]
            msg = self._roundtrip({
                "op": "score",
                "prefix": list(prefix),
                "target": target,
                "features_batch": [_encode_features(r.features.values) for r in chunk],
            })
            if "probs" not in msg:
                raise ProtocolError("score response lacks 'probs'")
            probs.extend(_check_probs(msg["probs"], len(chunk)))
        return probs

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()


class HttpBackend(Backend):
    """Same schema as ProcessBackend, POSTed one JSON object per request."""

    def __init__(self, url: str, max_batch: int = DEFAULT_MAX_BATCH, timeout: float = 300.0):
        self.url = url
        self.max_batch = max_batch
        self.timeout = timeout
        self._ids = itertools.count(1)

    def _roundtrip(self, payload: dict) -> dict:
        payload = {"id": next(self._ids), **payload}
        req = urllib.request.Request(
            self.url,
            data=json.dumps(payload).encode("utf-8"),
            headers={"Content-Type": "application/json"},
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = resp.read()
        except OSError as exc:
            raise TransportError(f"backend {self.url} unreachable: {exc}") from exc
        try:
            msg = json.loads(body)
        except ValueError as exc:
            raise ProtocolError(f"non-JSON response: {body[:200]!r}") from exc
        if msg.get("id") != payload["id"]:
            raise ProtocolError(f"response id {msg.get('id')!r} does not echo request "
                                f"id {payload['id']}")
        if "error" in msg:
            raise ProtocolError(f"backend error: {msg['error']}")
        return msg

    def transcribe(self, features: MelSpectrogram) -> TokenSequence:
        _check_transcribe_input(features)
        msg = self._roundtrip({"op": "transcribe", "features": _encode_features(features.values)})
        if "tokens" not in msg:
            raise ProtocolError("transcribe response lacks 'tokens'")
        return _decode_tokens(msg["tokens"])

    def score_batch(self, requests: list[ScoreRequest]) -> list[float]:
        if not requests:
            return []
        prefix, target = _check_shared_prefix_target(requests)
        probs: list[float] = []
        for start in range(0, len(requests), self.max_batch):
            chunk = requests[start : start + self.max_batch]
            msg = self._roundtrip({
                "op": "score",
                "prefix": list(prefix),
                "target": target,
                "features_batch": [_encode_features(r.features.values) for r in chunk],
            })
            if "probs" not in msg:
                raise ProtocolError("score response lacks 'probs'")
            probs.extend(_check_probs(msg["probs"], len(chunk)))
        return probs


def from_spec(spec: str) -> Backend:
    """Build a backend from a spec string: exec:<command>, http:<url>, or
    oracle:<script.json>."""
    if spec.startswith("exec:"):
        return ProcessBackend(spec[len("exec:"):])
    if spec.startswith("http:") or spec.startswith("https:"):
        return HttpBackend(spec)
    if spec.startswith("oracle:"):
        return ScriptedCorpusBackend.from_script_file(spec[len("oracle:"):])
    raise ValueError(f"unknown backend spec {spec!r} (expected exec:, http(s):, or oracle:)")
