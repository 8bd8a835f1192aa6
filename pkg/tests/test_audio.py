import numpy as np
import pytest

from phonsal.audio import (
    AudioFormatError, load_audio, read_sphere, read_wav, write_sphere, write_wav,
)
from phonsal.features import Waveform


def noise_wave(n=4000, rate=16000, seed=5):
    rng = np.random.default_rng(seed)
    return Waveform(samples=rng.uniform(-0.9, 0.9, n), sample_rate=rate)


def quantized(w):
    return np.round(w.samples * 32768.0).clip(-32768, 32767) / 32768.0


def test_wav_roundtrip(tmp_path):
    w = noise_wave()
    path = tmp_path / "x.wav"
    write_wav(path, w)
    back = read_wav(path)
    assert back.sample_rate == 16000
    assert np.allclose(back.samples, quantized(w))


def test_sphere_roundtrip(tmp_path):
    w = noise_wave(seed=6)
    path = tmp_path / "x.sph"
    write_sphere(path, w)
    back = read_sphere(path)
    assert back.sample_rate == 16000
    assert np.allclose(back.samples, quantized(w))


def test_sphere_big_endian(tmp_path):
    data = np.array([100, -200, 3000, -32768], dtype=np.int16)
    header_lines = [
        "NIST_1A", "   1024",
        "sample_count -i 4", "sample_rate -i 16000", "channel_count -i 1",
        "sample_n_bytes -i 2", "sample_byte_format -s2 10", "sample_coding -s3 pcm",
        "end_head",
    ]
    header = "\n".join(header_lines).encode()
    blob = header + b" " * (1024 - len(header)) + data.astype(">i2").tobytes()
    path = tmp_path / "be.sph"
    path.write_bytes(blob)
    back = read_sphere(path)
    assert np.allclose(back.samples, data / 32768.0)


def test_load_audio_sniffs_sphere_under_wav_name(tmp_path):
    w = noise_wave(seed=7)
    path = tmp_path / "really_sphere.wav"
    write_sphere(path, w)
    back = load_audio(path)
    assert np.allclose(back.samples, quantized(w))


def test_load_audio_sniffs_riff(tmp_path):
    w = noise_wave(seed=8)
    path = tmp_path / "x.wav"
    write_wav(path, w)
    assert np.allclose(load_audio(path).samples, quantized(w))


def test_load_audio_rejects_garbage(tmp_path):
    path = tmp_path / "junk.wav"
    path.write_bytes(b"not audio at all")
    with pytest.raises(AudioFormatError):
        load_audio(path)


def test_sphere_rejects_non_pcm(tmp_path):
    header_lines = [
        "NIST_1A", "   1024",
        "sample_count -i 2", "sample_rate -i 16000",
        "sample_coding -s4 ulaw", "end_head",
    ]
    header = "\n".join(header_lines).encode()
    path = tmp_path / "u.sph"
    path.write_bytes(header + b" " * (1024 - len(header)) + b"\x00\x00\x00\x00")
    with pytest.raises(AudioFormatError, match="sample_coding"):
        read_sphere(path)
