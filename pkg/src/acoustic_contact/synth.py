"""Procedural contact-sound corpus.

Each material is a handful of exponentially decaying modes plus a friction
noise band. Impacts (tap, knock) excite the modes; presses and drags are
mostly shaped band noise. One interaction event is placed in every second of
a clip so that each 1 s classification window carries contact.
"""

from __future__ import annotations

import csv
import enum
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import AudioClip, write_wav
from .classify import BLANK
from .errors import InvalidConfig, InvalidDuration

PEAK_LIMIT = 0.99
BLANK_DBFS = -60.0


class InteractionKind(str, enum.Enum):
    TAP = "tap"
    KNOCK = "knock"
    SLOW = "slow"
    DRAG = "drag"
    BLANK = "blank"


CONTACT_KINDS = (InteractionKind.TAP, InteractionKind.KNOCK, InteractionKind.SLOW, InteractionKind.DRAG)


@dataclass(frozen=True)
class MaterialProfile:
    name: str
    modal_freqs_hz: tuple[float, ...]
    decay_rates_per_s: tuple[float, ...]
    noise_band_hz: tuple[float, float]
    brightness: float

    def __post_init__(self) -> None:
        f = np.asarray(self.modal_freqs_hz, dtype=float)
        if not 2 <= len(f) <= 5:
            raise InvalidConfig(f"{self.name}: need 2-5 modal frequencies, got {len(f)}")
        if len(self.decay_rates_per_s) != len(f):
            raise InvalidConfig(f"{self.name}: one decay rate per mode required")
        if np.any(np.diff(f) <= 0) or f[0] <= 0:
            raise InvalidConfig(f"{self.name}: modal frequencies must be positive and strictly increasing")
        if any(d <= 0 for d in self.decay_rates_per_s):
            raise InvalidConfig(f"{self.name}: decay rates must be positive")
        lo, hi = self.noise_band_hz
        if not 0 <= lo < hi:
            raise InvalidConfig(f"{self.name}: noise band must satisfy 0 <= low < high")
        if not 0 <= self.brightness <= 1:
            raise InvalidConfig(f"{self.name}: brightness must be in [0, 1]")


# Rigid objects ring at high frequencies with slow decay; soft ones are
# low, heavily damped and dominated by friction noise.
DEFAULT_PROFILES = (
    MaterialProfile("plastic_lid", (850.0, 2100.0, 3900.0), (30.0, 45.0, 60.0), (1500.0, 6000.0), 0.5),
    MaterialProfile("glass_cup", (1850.0, 4650.0, 7400.0), (4.0, 6.0, 9.0), (3000.0, 10000.0), 0.8),
    MaterialProfile("ceramic_mug", (1250.0, 3300.0, 5600.0), (9.0, 14.0, 20.0), (2000.0, 8000.0), 0.6),
    MaterialProfile("steel_tumbler", (2600.0, 3700.0, 6100.0), (2.5, 3.5, 5.0), (4000.0, 12000.0), 0.9),
    MaterialProfile("wooden_table", (320.0, 780.0, 1450.0), (35.0, 50.0, 70.0), (400.0, 3000.0), 0.3),
    MaterialProfile("leather_case", (250.0, 700.0), (70.0, 95.0), (900.0, 2800.0), 0.15),
    MaterialProfile("plush_toy", (100.0, 260.0), (110.0, 150.0), (60.0, 600.0), 0.05),
    MaterialProfile("notebook", (380.0, 950.0, 1700.0), (55.0, 75.0, 100.0), (2000.0, 6000.0), 0.2),
    MaterialProfile("human_skin", (170.0, 470.0), (90.0, 120.0), (300.0, 1200.0), 0.1),
)


@dataclass(frozen=True)
class Jitter:
    freq: float = 0.10  # +/- fraction of each modal frequency
    amplitude: float = 0.20  # +/- fraction of event amplitude
    onset_s: float = 0.030  # +/- seconds around the nominal onset


@dataclass(frozen=True)
class CorpusSpec:
    profiles: tuple[MaterialProfile, ...] = DEFAULT_PROFILES
    interactions: tuple[InteractionKind, ...] = CONTACT_KINDS
    clips_per_cell: int = 5
    blank_clips: int = 20
    clip_duration_s: float = 2.0
    fs: int = 48000
    master_seed: int = 0
    jitter: Jitter = field(default_factory=Jitter)

    def __post_init__(self) -> None:
        names = [p.name for p in self.profiles]
        if len(set(names)) != len(names):
            raise InvalidConfig("profile names must be unique")
        if BLANK in names:
            raise InvalidConfig(f"{BLANK!r} is reserved for the no-contact class")
        if InteractionKind.BLANK in self.interactions:
            raise InvalidConfig("blank clips are controlled by blank_clips, not interactions")
        if self.clips_per_cell < 0 or self.blank_clips < 0:
            raise InvalidConfig("clip counts must be non-negative")


def clip_seed(master_seed: int, class_name: str, index: int) -> int:
    digest = hashlib.sha256(f"{master_seed}:{class_name}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _band_noise(rng: np.random.Generator, n: int, fs: int, band: tuple[float, float]) -> np.ndarray:
    """Unit-RMS white noise restricted to ``band`` by FFT masking."""
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    lo, hi = band[0], min(band[1], fs / 2)
    spec[(freqs < lo) | (freqs > hi)] = 0
    x = np.fft.irfft(spec, n)
    rms = np.sqrt(np.mean(x**2))
    return x / rms if rms > 0 else x


def _modes(profile: MaterialProfile, fs: int, rng: np.random.Generator, jitter: Jitter):
    scale = 1.0 + rng.uniform(-jitter.freq, jitter.freq)
    freqs, decays, amps = [], [], []
    for i, (f, d) in enumerate(zip(profile.modal_freqs_hz, profile.decay_rates_per_s)):
        f = f * scale * (1.0 + rng.uniform(-0.02, 0.02))
        if f >= 0.95 * fs / 2:
            continue  # mode would alias at this rate
        freqs.append(f)
        decays.append(d)
        amps.append((0.3 + 0.7 * profile.brightness) ** i)
    return np.array(freqs), np.array(decays), np.array(amps)


def _ring(t: np.ndarray, freqs, decays, amps, damping: float, rng) -> np.ndarray:
    phases = rng.uniform(0, 2 * np.pi, size=len(freqs))
    out = np.zeros_like(t)
    for f, d, a, ph in zip(freqs, decays, amps, phases):
        out += a * np.exp(-d * damping * t) * np.sin(2 * np.pi * f * t + ph)
    return out


def synth_clip(
    profile: MaterialProfile | None,
    kind: InteractionKind | str,
    duration_s: float,
    fs: int,
    seed: int,
    jitter: Jitter = Jitter(),
) -> AudioClip:
    kind = InteractionKind(kind)
    if duration_s < 0.25:
        raise InvalidDuration(f"clip duration must be >= 0.25 s, got {duration_s}")
    if fs < 8000:
        raise InvalidConfig(f"sample rate must be >= 8000 Hz, got {fs}")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * fs))

    if kind is InteractionKind.BLANK:
        sigma = 10 ** (BLANK_DBFS / 20)
        x = sigma * rng.standard_normal(n)
        return AudioClip(_limit(x), fs, source_id=f"{BLANK}/{seed}")
    if profile is None:
        raise InvalidConfig(f"{kind.value} clips need a material profile")

    # every clip carries the same -60 dBFS sensor floor as the blank class
    x = 10 ** (BLANK_DBFS / 20) * rng.standard_normal(n)
    n_events = max(1, int(np.ceil(duration_s - 1e-9)))
    for k in range(n_events):
        onset = k + 0.06 + rng.uniform(-jitter.onset_s, jitter.onset_s)
        start = int(round(onset * fs))
        if start >= n:
            break
        span = min(n, (k + 1) * fs) - start
        t = np.arange(span) / fs
        gain = 1.0 + rng.uniform(-jitter.amplitude, jitter.amplitude)
        x[start : start + span] += gain * _event(profile, kind, t, fs, rng, jitter)
    return AudioClip(_limit(x), fs, source_id=f"{profile.name}/{kind.value}/{seed}")


def _event(profile, kind, t, fs, rng, jitter) -> np.ndarray:
    freqs, decays, amps = _modes(profile, fs, rng, jitter)
    n = len(t)
    band = profile.noise_band_hz
    click = _band_noise(rng, n, fs, band) * np.exp(-t / 0.004)
    if kind is InteractionKind.TAP:
        body = _ring(t, freqs, decays, amps, damping=2.0, rng=rng)
        return 0.15 * body + 0.08 * click
    if kind is InteractionKind.KNOCK:
        body = _ring(t, freqs, decays, amps, damping=1.0, rng=rng)
        return 0.45 * body + 0.15 * click
    if kind is InteractionKind.SLOW:
        ramp = np.clip(t / 0.3, 0, 1) * np.clip((t[-1] - t) / 0.05, 0, 1)
        noise = _band_noise(rng, n, fs, band)
        body = _ring(t, freqs, decays, amps, damping=2.0, rng=rng)
        return 0.04 * ramp * noise + 0.02 * body
    if kind is InteractionKind.DRAG:
        rate = rng.uniform(5.0, 15.0)
        flutter = 0.6 + 0.4 * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
        edge = np.clip(t / 0.02, 0, 1) * np.clip((t[-1] - t) / 0.02, 0, 1)
        noise = _band_noise(rng, n, fs, band)
        sparkle = _ring(t, freqs, decays, amps, damping=4.0, rng=rng)
        return 0.10 * edge * flutter * noise + 0.03 * sparkle
    raise ValueError(f"unhandled interaction {kind}")


def _limit(x: np.ndarray) -> np.ndarray:
    peak = np.max(np.abs(x)) if x.size else 0.0
    return x * (PEAK_LIMIT / peak) if peak > PEAK_LIMIT else x


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    class_name: str
    interaction: str
    seed: int


def corpus_plan(spec: CorpusSpec) -> list[tuple[str, MaterialProfile | None, InteractionKind, int, str]]:
    """(class, profile, kind, seed, relative path) for every clip, in order."""
    plan = []
    for profile in spec.profiles:
        index = 0
        for kind in spec.interactions:
            for j in range(spec.clips_per_cell):
                seed = clip_seed(spec.master_seed, profile.name, index)
                plan.append((profile.name, profile, kind, seed, f"{profile.name}/{kind.value}_{j:03d}.wav"))
                index += 1
    for j in range(spec.blank_clips):
        seed = clip_seed(spec.master_seed, BLANK, j)
        plan.append((BLANK, None, InteractionKind.BLANK, seed, f"{BLANK}/blank_{j:03d}.wav"))
    return plan


def generate_corpus(spec: CorpusSpec, out_dir: str | Path) -> list[ManifestEntry]:
    out_dir = Path(out_dir)
    manifest = []
    for cls, profile, kind, seed, rel in corpus_plan(spec):
        clip = synth_clip(profile, kind, spec.clip_duration_s, spec.fs, seed, spec.jitter)
        path = out_dir / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        write_wav(clip, path)
        manifest.append(ManifestEntry(rel, cls, kind.value, seed))
    with open(out_dir / "manifest.csv", "w", newline="") as fp:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(["path", "class", "interaction", "seed"])
        for e in manifest:
            w.writerow([e.path, e.class_name, e.interaction, e.seed])
    return manifest


# Plain-text spec files: TOML with [corpus], [jitter] and [[profiles]] tables.
_CORPUS_KEYS = {"interactions", "clips_per_cell", "blank_clips", "clip_duration_s", "fs", "master_seed"}
_JITTER_KEYS = {"freq", "amplitude", "onset_s"}
_PROFILE_KEYS = {"name", "modal_freqs_hz", "decay_rates_per_s", "noise_band_hz", "brightness"}


def _check_keys(section: str, got: dict, allowed: set) -> None:
    unknown = sorted(set(got) - allowed)
    if unknown:
        raise InvalidConfig(f"unknown key(s) in [{section}]: {', '.join(unknown)}")


def corpus_spec_from_dict(d: dict, master_seed: int | None = None) -> CorpusSpec:
    _check_keys("top level", d, {"corpus", "jitter", "profiles"})
    corpus = dict(d.get("corpus", {}))
    _check_keys("corpus", corpus, _CORPUS_KEYS)
    jit = dict(d.get("jitter", {}))
    _check_keys("jitter", jit, _JITTER_KEYS)
    kwargs: dict = {}
    if "profiles" in d:
        profiles = []
        for p in d["profiles"]:
            _check_keys("profiles", p, _PROFILE_KEYS)
            missing = sorted(_PROFILE_KEYS - set(p))
            if missing:
                raise InvalidConfig(f"profile is missing key(s): {', '.join(missing)}")
            profiles.append(
                MaterialProfile(
                    p["name"],
                    tuple(float(v) for v in p["modal_freqs_hz"]),
                    tuple(float(v) for v in p["decay_rates_per_s"]),
                    (float(p["noise_band_hz"][0]), float(p["noise_band_hz"][1])),
                    float(p["brightness"]),
                )
            )
        kwargs["profiles"] = tuple(profiles)
    if "interactions" in corpus:
        kwargs["interactions"] = tuple(InteractionKind(k) for k in corpus.pop("interactions"))
    kwargs.update(corpus)
    if jit:
        kwargs["jitter"] = Jitter(**jit)
    if master_seed is not None:
        kwargs["master_seed"] = master_seed
    return CorpusSpec(**kwargs)
