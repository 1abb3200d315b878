"""Mono PCM16 WAV ingestion and egress.

Decoding divides int16 values by 32768. Encoding multiplies by the same
32768, rounds half away from zero and clamps to [-32768, 32767], so +1.0 lands
on 32767, every int16 value survives decode/encode unchanged, and a float
write/read round trip is within 1/32767.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import MultiChannel, NotWav, TruncatedData, UnsupportedEncoding

DEFAULT_SAMPLE_RATE = 48000
DEFAULT_BITS = 16

_PCM_FORMAT = 1
DECODE_SCALE = 32768.0
ENCODE_SCALE = 32768.0


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE
    source_id: str | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {samples.shape}")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain NaN or Inf")
        if samples.size and np.max(np.abs(samples)) > 1.0:
            raise ValueError("samples must lie in [-1.0, 1.0]")
        samples = samples.copy()
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def __len__(self) -> int:
        return len(self.samples)


def decode_pcm16(data: bytes) -> np.ndarray:
    """Little-endian int16 bytes -> float64 samples in [-1, 1)."""
    if len(data) % 2:
        raise TruncatedData(f"PCM16 payload has odd byte count {len(data)}")
    return np.frombuffer(data, dtype="<i2").astype(np.float64) / DECODE_SCALE


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    """Float samples -> int16, rounding half away from zero."""
    scaled = np.asarray(samples, dtype=np.float64) * ENCODE_SCALE
    rounded = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    return np.clip(rounded, -32768, 32767).astype("<i2")


def _read_exact(fp: BinaryIO, n: int, what: str) -> bytes:
    buf = fp.read(n)
    if len(buf) != n:
        raise TruncatedData(f"unexpected end of file while reading {what}")
    return buf


def read_wav_header(fp: BinaryIO) -> tuple[int, int]:
    """Consume a WAV header from ``fp`` up to the start of the data chunk.

    Returns ``(sample_rate_hz, data_size_bytes)``; the stream is left
    positioned on the first PCM byte.
    """
    riff = fp.read(12)
    if len(riff) < 12 or riff[:4] != b"RIFF" or riff[8:12] != b"WAVE":
        raise NotWav("missing RIFF/WAVE magic")

    sample_rate = None
    while True:
        head = fp.read(8)
        if len(head) < 8:
            if sample_rate is None:
                raise TruncatedData("no fmt chunk before end of file")
            raise TruncatedData("no data chunk before end of file")
        chunk_id, size = head[:4], struct.unpack("<I", head[4:])[0]
        if chunk_id == b"fmt ":
            body = _read_exact(fp, size + (size & 1), "fmt chunk")
            if size < 16:
                raise TruncatedData(f"fmt chunk too short ({size} bytes)")
            fmt, channels, rate, _, _, bits = struct.unpack("<HHIIHH", body[:16])
            if fmt != _PCM_FORMAT or bits != 16:
                raise UnsupportedEncoding(
                    f"only PCM 16-bit is supported (format={fmt}, bits={bits})"
                )
            if channels != 1:
                raise MultiChannel(f"expected mono audio, got {channels} channels")
            if rate == 0:
                raise UnsupportedEncoding("sample rate of 0 Hz")
            sample_rate = rate
        elif chunk_id == b"data":
            if sample_rate is None:
                raise TruncatedData("data chunk precedes fmt chunk")
            return sample_rate, size
        else:
            _read_exact(fp, size + (size & 1), f"chunk {chunk_id!r}")


def read_wav(path: str | Path) -> AudioClip:
    path = Path(path)
    with open(path, "rb") as fp:
        rate, size = read_wav_header(fp)
        data = fp.read(size)
    if len(data) != size:
        raise TruncatedData(
            f"{path}: header declares {size} data bytes, file holds {len(data)}"
        )
    return AudioClip(decode_pcm16(data), rate, source_id=str(path))


def encode_wav(clip: AudioClip) -> bytes:
    pcm = quantize_pcm16(clip.samples).tobytes()
    fmt = struct.pack(
        "<HHIIHH", _PCM_FORMAT, 1, clip.sample_rate_hz, clip.sample_rate_hz * 2, 2, 16
    )
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(pcm)) + pcm
    return b"RIFF" + struct.pack("<I", len(body)) + body


def write_wav(clip: AudioClip, path: str | Path) -> None:
    Path(path).write_bytes(encode_wav(clip))
