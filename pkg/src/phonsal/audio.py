"""Audio file readers for 16-bit PCM WAV and NIST SPHERE.

TIMIT distributions frequently ship SPHERE data under a .wav extension, so
``load_audio`` sniffs the magic bytes instead of trusting the suffix.
"""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

from .features import Waveform

SPHERE_MAGIC = b"NIST_1A"
PCM_SCALE = 32768.0


class AudioFormatError(ValueError):
    pass


def read_wav(path) -> Waveform:
    with wave.open(str(path), "rb") as f:
        if f.getsampwidth() != 2:
            raise AudioFormatError(f"{path}: only 16-bit PCM WAV is supported")
        n_channels = f.getnchannels()
        rate = f.getframerate()
        raw = f.readframes(f.getnframes())
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / PCM_SCALE
    if n_channels > 1:
        data = data.reshape(-1, n_channels)[:, 0]
    return Waveform(samples=data, sample_rate=rate)


def _parse_sphere_header(header: bytes, path) -> dict:
    fields = {}
    for line in header.decode("ascii", errors="replace").splitlines():
        parts = line.split()
        if not parts or parts[0] in ("NIST_1A", "end_head"):
            if parts and parts[0] == "end_head":
                break
            continue
        if len(parts) >= 3 and parts[1].startswith("-"):
            key, kind, value = parts[0], parts[1], " ".join(parts[2:])
            if kind.startswith("-i"):
                fields[key] = int(value)
            else:
                fields[key] = value
    if not fields:
        raise AudioFormatError(f"{path}: no parseable SPHERE header fields")
    return fields


def read_sphere(path) -> Waveform:
    raw = Path(path).read_bytes()
    if not raw.startswith(SPHERE_MAGIC):
        raise AudioFormatError(f"{path}: missing NIST_1A magic")
    try:
        header_size = int(raw.splitlines()[1])
    except (IndexError, ValueError) as exc:
        raise AudioFormatError(f"{path}: unreadable SPHERE header size") from exc
    fields = _parse_sphere_header(raw[:header_size], path)

    coding = fields.get("sample_coding", "pcm")
    if coding != "pcm":
        raise AudioFormatError(f"{path}: unsupported sample_coding {coding!r}")
    if fields.get("sample_n_bytes", 2) != 2:
        raise AudioFormatError(f"{path}: only 16-bit SPHERE PCM is supported")
    byte_format = fields.get("sample_byte_format", "01")
    dtype = "<i2" if byte_format == "01" else ">i2"
    rate = fields.get("sample_rate")
    if rate is None:
        raise AudioFormatError(f"{path}: SPHERE header lacks sample_rate")

    body = raw[header_size:]
    count = fields.get("sample_count")
    data = np.frombuffer(body, dtype=dtype, count=count if count is not None else -1)
    n_channels = fields.get("channel_count", 1)
    values = data.astype(np.float64) / PCM_SCALE
    if n_channels > 1:
        values = values.reshape(-1, n_channels)[:, 0]
    return Waveform(samples=values, sample_rate=rate)


def load_audio(path) -> Waveform:
    """Read a waveform, dispatching on file magic (RIFF WAV vs NIST SPHERE)."""
    with open(path, "rb") as f:
        magic = f.read(7)
    if magic.startswith(SPHERE_MAGIC):
        return read_sphere(path)
    if magic.startswith(b"RIFF"):
        return read_wav(path)
    raise AudioFormatError(f"{path}: neither WAV nor SPHERE (magic {magic[:4]!r})")


def _to_int16(w: Waveform) -> np.ndarray:
    return np.clip(np.round(w.samples * PCM_SCALE), -32768, 32767).astype(np.int16)


def write_wav(path, w: Waveform) -> None:
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(_to_int16(w).astype("<i2").tobytes())


def write_sphere(path, w: Waveform) -> None:
    data = _to_int16(w)
    header_lines = [
        "NIST_1A",
        "   1024",
        f"sample_count -i {data.size}",
        f"sample_rate -i {w.sample_rate}",
        "channel_count -i 1",
        "sample_n_bytes -i 2",
        "sample_byte_format -s2 01",
        "sample_sig_bits -i 16",
        "sample_coding -s3 pcm",
        "end_head",
    ]
    header = "\n".join(header_lines).encode("ascii")
    header = header + b" " * (1024 - len(header) - 1) + b"\n"
    with open(path, "wb") as f:
        f.write(header)
        f.write(data.astype("<i2").tobytes())
