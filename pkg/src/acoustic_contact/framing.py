"""Fixed-length windowing of audio clips.

Two regimes are used: non-overlapping 1 s classification windows and 0.2 s
streaming frames advanced every 0.04 s. Seconds are converted to samples once
with ``round(x * fs)``; everything after that is integer arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .audio_io import AudioClip
from .errors import InvalidConfig


@dataclass(frozen=True)
class FramingConfig:
    window_len_s: float = 1.0
    hop_s: float = 1.0

    def __post_init__(self) -> None:
        if not (self.window_len_s > 0 and self.hop_s > 0):
            raise InvalidConfig(
                f"window_len_s and hop_s must be positive "
                f"(got {self.window_len_s}, {self.hop_s})"
            )
        if self.hop_s > self.window_len_s:
            raise InvalidConfig(
                f"hop_s ({self.hop_s}) must not exceed window_len_s ({self.window_len_s})"
            )

    @property
    def overlap(self) -> float:
        # decimal fractions so that (0.2, 0.04) gives exactly 0.8
        ratio = Fraction(repr(self.hop_s)) / Fraction(repr(self.window_len_s))
        return float(1 - ratio)

    def window_samples(self, fs: int) -> int:
        return int(round(self.window_len_s * fs))

    def hop_samples(self, fs: int) -> int:
        return int(round(self.hop_s * fs))

    def to_dict(self) -> dict:
        return {"window_len_s": self.window_len_s, "hop_s": self.hop_s}


CLASSIFY_FRAMING = FramingConfig(1.0, 1.0)
STREAM_FRAMING = FramingConfig(0.2, 0.04)


@dataclass(frozen=True)
class Window:
    start_sample: int
    samples: np.ndarray

    def __len__(self) -> int:
        return len(self.samples)


def window_count(n_samples: int, window: int, hop: int) -> int:
    if n_samples < window:
        return 0
    return (n_samples - window) // hop + 1


def segment(clip: AudioClip, cfg: FramingConfig) -> list[Window]:
    fs = clip.sample_rate_hz
    W, H = cfg.window_samples(fs), cfg.hop_samples(fs)
    if W < 1 or H < 1:
        raise InvalidConfig(f"window ({W}) and hop ({H}) must be at least one sample at {fs} Hz")
    if H > W:
        raise InvalidConfig(f"hop ({H} samples) exceeds window ({W} samples) at {fs} Hz")
    n = window_count(len(clip.samples), W, H)
    return [Window(k * H, clip.samples[k * H : k * H + W]) for k in range(n)]
