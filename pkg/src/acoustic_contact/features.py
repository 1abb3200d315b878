"""Log-power Mel spectrograms with optional high-frequency emphasis.

Pipeline for one window: framed STFT power -> (optional) gain on bins above a
fraction of Nyquist -> triangular Mel filterbank -> ``log(max(x, eps_floor))``.
Mel scale is the HTK convention ``2595 * log10(1 + f / 700)``; logs are natural.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from typing import BinaryIO, Iterable, Iterator

import numpy as np

from .audio_io import AudioClip
from .errors import (
    InvalidBand,
    InvalidConfig,
    NegativeFrequency,
    TooManyBands,
    WindowTooShort,
)
from .framing import CLASSIFY_FRAMING, STREAM_FRAMING, FramingConfig, Window, segment

WINDOW_FUNCTIONS = ("hann", "rectangular")
DEFAULT_EPS_FLOOR = 1e-10


def hz_to_mel(f):
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise NegativeFrequency(f"frequency must be non-negative, got {f.min()}")
    out = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    out = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 2048
    hop_length: int = 512
    window_fn: str = "hann"

    def __post_init__(self) -> None:
        n = self.n_fft
        if n < 1 or n & (n - 1):
            raise InvalidConfig(f"n_fft must be a positive power of two, got {n}")
        if not 0 < self.hop_length <= n:
            raise InvalidConfig(f"hop_length must be in [1, n_fft], got {self.hop_length}")
        if self.window_fn not in WINDOW_FUNCTIONS:
            raise InvalidConfig(f"window_fn must be one of {WINDOW_FUNCTIONS}")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def window(self) -> np.ndarray:
        if self.window_fn == "rectangular":
            return np.ones(self.n_fft)
        # periodic Hann
        n = np.arange(self.n_fft)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.n_fft)


@dataclass(frozen=True)
class EmphasisConfig:
    nyquist_fraction: float = 0.3
    gain: float = 2.0
    enabled: bool = False

    def __post_init__(self) -> None:
        if not 0 < self.nyquist_fraction <= 1:
            raise InvalidConfig(f"nyquist_fraction must be in (0, 1], got {self.nyquist_fraction}")
        if not self.gain > 0:
            raise InvalidConfig(f"emphasis gain must be positive, got {self.gain}")

    def cutoff_hz(self, fs: float) -> float:
        return self.nyquist_fraction * fs / 2.0

    def power_gains(self, fs: float, n_fft: int) -> np.ndarray:
        """Per-bin multiplier on power; gain applies to magnitude, hence squared."""
        freqs = np.arange(n_fft // 2 + 1) * fs / n_fft
        gains = np.ones_like(freqs)
        if self.enabled:
            gains[freqs > self.cutoff_hz(fs)] = self.gain**2
        return gains


@dataclass(frozen=True)
class MelFilterbank:
    n_mels: int
    f_min_hz: float
    f_max_hz: float
    fs: int
    n_fft: int
    weights: np.ndarray = field(repr=False, compare=False)

    @property
    def center_hz(self) -> np.ndarray:
        return self.edges_hz[1:-1]

    @property
    def edges_hz(self) -> np.ndarray:
        mels = np.linspace(hz_to_mel(self.f_min_hz), hz_to_mel(self.f_max_hz), self.n_mels + 2)
        return mel_to_hz(mels)

    def params(self) -> dict:
        return {
            "n_mels": self.n_mels,
            "f_min_hz": float(self.f_min_hz),
            "f_max_hz": float(self.f_max_hz),
            "fs": int(self.fs),
            "n_fft": int(self.n_fft),
        }


def build_mel_filterbank(
    fs: int, stft: StftConfig, n_mels: int, f_min: float, f_max: float
) -> MelFilterbank:
    if n_mels < 1:
        raise InvalidConfig(f"n_mels must be >= 1, got {n_mels}")
    if f_min < 0:
        raise NegativeFrequency(f"f_min must be non-negative, got {f_min}")
    if f_min >= f_max:
        raise InvalidBand(f"f_min ({f_min}) must be below f_max ({f_max})")
    if f_max > fs / 2:
        raise InvalidBand(f"f_max ({f_max}) exceeds Nyquist ({fs / 2})")
    if stft.n_bins < n_mels + 2:
        raise TooManyBands(f"{n_mels} bands need at least {n_mels + 2} FFT bins, have {stft.n_bins}")

    mels = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2)
    edges = mel_to_hz(mels)
    freqs = np.arange(stft.n_bins) * fs / stft.n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(rising, falling))

    empty = np.flatnonzero(~(weights > 0).any(axis=1))
    if empty.size:
        raise TooManyBands(
            f"bands {empty.tolist()} contain no FFT bin at n_fft={stft.n_fft}, fs={fs}; "
            "use fewer bands, a larger n_fft, or a higher f_min"
        )
    weights.setflags(write=False)
    return MelFilterbank(n_mels, float(f_min), float(f_max), int(fs), stft.n_fft, weights)


def stft_power(window: Window | np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Power spectrogram, shape ``(n_fft // 2 + 1, n_frames)``."""
    x = np.asarray(window.samples if isinstance(window, Window) else window, dtype=np.float64)
    if len(x) < cfg.n_fft:
        raise WindowTooShort(f"window has {len(x)} samples, n_fft is {cfg.n_fft}")
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.n_fft)[:: cfg.hop_length]
    spec = np.fft.rfft(frames * cfg.window(), axis=1)
    return (spec.real**2 + spec.imag**2).T


@dataclass(frozen=True)
class MelSpectrogram:
    data: np.ndarray
    config_digest: str = ""

    @property
    def n_mels(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]


def config_digest(stft: StftConfig, bank: MelFilterbank, emph: EmphasisConfig, eps_floor: float) -> str:
    payload = {
        "stft": asdict(stft),
        "mel": bank.params(),
        "emphasis": asdict(emph),
        "eps_floor": eps_floor,
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def mel_spectrogram(
    window: Window | np.ndarray,
    fs: int,
    stft: StftConfig,
    bank: MelFilterbank,
    emph: EmphasisConfig,
    eps_floor: float = DEFAULT_EPS_FLOOR,
) -> MelSpectrogram:
    if bank.fs != fs or bank.n_fft != stft.n_fft:
        raise InvalidConfig("filterbank was built for a different sample rate or FFT size")
    power = stft_power(window, stft)
    if emph.enabled:
        power = power * emph.power_gains(fs, stft.n_fft)[:, None]
    mel = np.log(np.maximum(bank.weights @ power, eps_floor))
    return MelSpectrogram(mel, config_digest(stft, bank, emph, eps_floor))


@dataclass(frozen=True)
class FeatureConfig:
    """Everything needed to turn a clip into a sequence of spectrograms."""

    framing: FramingConfig = CLASSIFY_FRAMING
    stft: StftConfig = StftConfig()
    n_mels: int = 64
    f_min_hz: float = 20.0
    f_max_hz: float | None = None  # None -> fs / 2
    emphasis: EmphasisConfig = EmphasisConfig()
    eps_floor: float = DEFAULT_EPS_FLOOR

    def to_dict(self) -> dict:
        return {
            "framing": asdict(self.framing),
            "stft": asdict(self.stft),
            "n_mels": self.n_mels,
            "f_min_hz": self.f_min_hz,
            "f_max_hz": self.f_max_hz,
            "emphasis": asdict(self.emphasis),
            "eps_floor": self.eps_floor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        return cls(
            framing=FramingConfig(**d["framing"]),
            stft=StftConfig(**d["stft"]),
            n_mels=int(d["n_mels"]),
            f_min_hz=float(d["f_min_hz"]),
            f_max_hz=None if d["f_max_hz"] is None else float(d["f_max_hz"]),
            emphasis=EmphasisConfig(**d["emphasis"]),
            eps_floor=float(d["eps_floor"]),
        )

    def featurizer(self, fs: int) -> "Featurizer":
        return Featurizer(self, fs)


def classification_config(n_mels: int = 64) -> FeatureConfig:
    return FeatureConfig(CLASSIFY_FRAMING, StftConfig(2048, 512, "hann"), n_mels, 20.0)


def streaming_config(n_mels: int = 32) -> FeatureConfig:
    return FeatureConfig(
        STREAM_FRAMING,
        StftConfig(1024, 480, "hann"),
        n_mels,
        20.0,
        emphasis=EmphasisConfig(0.3, 2.0, enabled=True),
    )


class Featurizer:
    """A FeatureConfig bound to one sample rate, with its filterbank cached."""

    def __init__(self, cfg: FeatureConfig, fs: int):
        self.cfg = cfg
        self.fs = int(fs)
        f_max = cfg.f_max_hz if cfg.f_max_hz is not None else fs / 2
        self.bank = build_mel_filterbank(self.fs, cfg.stft, cfg.n_mels, cfg.f_min_hz, f_max)
        self.digest = config_digest(cfg.stft, self.bank, cfg.emphasis, cfg.eps_floor)

    def __call__(self, window: Window | np.ndarray) -> MelSpectrogram:
        return mel_spectrogram(window, self.fs, self.cfg.stft, self.bank, self.cfg.emphasis, self.cfg.eps_floor)

    def windows(self, clip: AudioClip) -> list[Window]:
        if clip.sample_rate_hz != self.fs:
            raise InvalidConfig(f"clip is {clip.sample_rate_hz} Hz, featurizer expects {self.fs} Hz")
        return segment(clip, self.cfg.framing)

    def clip(self, clip: AudioClip) -> list[MelSpectrogram]:
        return [self(w) for w in self.windows(clip)]


def featurize_clip(clip: AudioClip, cfg: FeatureConfig) -> list[MelSpectrogram]:
    return Featurizer(cfg, clip.sample_rate_hz).clip(clip)


# Feature dump: per window "MELF", u32 n_mels, u32 n_frames, f64 eps_floor, then f32 row-major.
_DUMP_MAGIC = b"MELF"
_DUMP_HEADER = struct.Struct("<4sIId")


def write_feature_dump(fp: BinaryIO, specs: Iterable[MelSpectrogram], eps_floor: float) -> int:
    n = 0
    for spec in specs:
        fp.write(_DUMP_HEADER.pack(_DUMP_MAGIC, spec.n_mels, spec.n_frames, eps_floor))
        fp.write(np.ascontiguousarray(spec.data, dtype="<f4").tobytes())
        n += 1
    return n


def read_feature_dump(fp: BinaryIO) -> Iterator[tuple[np.ndarray, float]]:
    while True:
        head = fp.read(_DUMP_HEADER.size)
        if not head:
            return
        if len(head) < _DUMP_HEADER.size:
            raise ValueError("truncated feature record header")
        magic, n_mels, n_frames, eps = _DUMP_HEADER.unpack(head)
        if magic != _DUMP_MAGIC:
            raise ValueError(f"bad feature record magic {magic!r}")
        nbytes = 4 * n_mels * n_frames
        body = fp.read(nbytes)
        if len(body) != nbytes:
            raise ValueError("truncated feature record payload")
        yield np.frombuffer(body, dtype="<f4").reshape(n_mels, n_frames), eps
