"""Real-time featurizer: PCM in, JSONL frame events out.

An ingest thread decodes little-endian int16 bytes into a ring buffer and,
every hop, snapshots the newest window into a bounded queue. The calling
thread drains the queue, featurizes (and optionally classifies) each frame
and hands a :class:`FrameEvent` to the sink. Time is derived from the sample
count, never from the wall clock, so replays are deterministic.
"""

from __future__ import annotations

import json
import sys
import threading
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Callable, TextIO

import numpy as np

from .audio_io import DECODE_SCALE, read_wav_header
from .classify import DEFAULT_TAU, decide
from .errors import DigestMismatch, MalformedPcm, SourceEnded
from .features import FeatureConfig, Featurizer, streaming_config
from .nn import Checkpoint, load_checkpoint, softmax

DROP_POLICIES = ("drop_oldest", "block")


@dataclass(frozen=True)
class StreamConfig:
    features: FeatureConfig = field(default_factory=streaming_config)
    sample_rate_hz: int = 48000
    checkpoint_path: str | None = None
    queue_capacity: int = 64
    drop_policy: str = "drop_oldest"
    tau: float = DEFAULT_TAU
    full_matrix: bool = False
    read_size: int = 8192  # bytes per source read

    def __post_init__(self) -> None:
        if self.drop_policy not in DROP_POLICIES:
            raise ValueError(f"drop_policy must be one of {DROP_POLICIES}, got {self.drop_policy!r}")
        if self.queue_capacity < 1:
            raise ValueError("queue_capacity must be at least 1")

    @property
    def framing(self):
        return self.features.framing


@dataclass(frozen=True)
class FrameEvent:
    seq: int
    t_s: float
    mel: np.ndarray  # (n_mels,) time-averaged, or (n_mels, n_frames) with full_matrix
    class_name: str | None = None
    probs: np.ndarray | None = None
    contact: bool | None = None

    @property
    def has_prediction(self) -> bool:
        return self.class_name is not None


@dataclass
class StreamStats:
    frames_emitted: int = 0
    frames_dropped: int = 0
    samples_read: int = 0

    @property
    def frames_produced(self) -> int:
        return self.frames_emitted + self.frames_dropped

    def to_dict(self) -> dict:
        return {
            "frames_emitted": self.frames_emitted,
            "frames_dropped": self.frames_dropped,
            "frames_produced": self.frames_produced,
            "samples_read": self.samples_read,
        }


class RingBuffer:
    """Fixed-capacity sample history."""

    def __init__(self, capacity: int):
        self._buf = np.zeros(capacity)
        self._pos = 0  # next write index
        self.total = 0

    @property
    def capacity(self) -> int:
        return len(self._buf)

    def write(self, x: np.ndarray) -> None:
        cap = self.capacity
        if len(x) >= cap:
            self._buf[:] = x[-cap:]
            self._pos = 0
        else:
            end = self._pos + len(x)
            if end <= cap:
                self._buf[self._pos : end] = x
            else:
                k = cap - self._pos
                self._buf[self._pos :] = x[:k]
                self._buf[: end - cap] = x[k:]
            self._pos = end % cap
        self.total += len(x)

    def latest(self) -> np.ndarray:
        """Copy of the buffer contents, oldest sample first."""
        return np.concatenate([self._buf[self._pos :], self._buf[: self._pos]])


class BoundedQueue:
    """Single-producer/single-consumer queue with a drop-oldest or blocking policy."""

    def __init__(self, capacity: int, policy: str = "drop_oldest"):
        self.capacity = capacity
        self.policy = policy
        self.dropped = 0
        self._items: deque = deque()
        self._cond = threading.Condition()
        self._closed = False

    def put(self, item) -> bool:
        """Enqueue ``item``; False if the queue was closed by the consumer."""
        with self._cond:
            if self._closed:
                return False
            if self.policy == "block":
                while len(self._items) >= self.capacity and not self._closed:
                    self._cond.wait()
            elif len(self._items) >= self.capacity:
                self._items.popleft()
                self.dropped += 1
            if self._closed:
                return False
            self._items.append(item)
            self._cond.notify_all()
            return True

    def get(self):
        """Next item, or raise SourceEnded once closed and drained."""
        with self._cond:
            while not self._items:
                if self._closed:
                    raise SourceEnded()
                self._cond.wait()
            item = self._items.popleft()
            self._cond.notify_all()
            return item

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    def __len__(self) -> int:
        with self._cond:
            return len(self._items)


def _ingest(source: BinaryIO, cfg: StreamConfig, q: BoundedQueue, stats: StreamStats, errors: list) -> None:
    fs = cfg.sample_rate_hz
    W = cfg.framing.window_samples(fs)
    H = cfg.framing.hop_samples(fs)
    ring = RingBuffer(W)
    next_end = W  # sample count at which the next frame completes
    seq = 0
    carry = b""
    try:
        while True:
            chunk = source.read(cfg.read_size)
            if not chunk:
                break
            data = carry + chunk
            usable = len(data) - (len(data) & 1)
            carry = data[usable:]
            x = np.frombuffer(data[:usable], dtype="<i2").astype(np.float64) / DECODE_SCALE
            while len(x):
                take = min(len(x), next_end - ring.total)
                ring.write(x[:take])
                x = x[take:]
                if ring.total == next_end:
                    if not q.put((seq, next_end, ring.latest())):
                        return  # consumer gave up
                    seq += 1
                    next_end += H
            stats.samples_read = ring.total
        if carry:
            raise MalformedPcm("PCM stream ended on an odd byte")
    except BaseException as exc:  # surfaced by the consumer thread
        errors.append(exc)
    finally:
        q.close()


def _load_model(cfg: StreamConfig, featurizer: Featurizer, checkpoint: Checkpoint | None):
    if checkpoint is None and cfg.checkpoint_path:
        checkpoint = load_checkpoint(cfg.checkpoint_path)
    if checkpoint is None:
        return None
    if checkpoint.featurization_digest != featurizer.digest:
        raise DigestMismatch(
            f"checkpoint featurization {checkpoint.featurization_digest} differs from "
            f"stream featurization {featurizer.digest}"
        )
    return checkpoint


def run_stream(
    source: BinaryIO,
    cfg: StreamConfig,
    sink: Callable[[FrameEvent], None],
    checkpoint: Checkpoint | None = None,
) -> StreamStats:
    fs = cfg.sample_rate_hz
    featurizer = Featurizer(cfg.features, fs)
    ckpt = _load_model(cfg, featurizer, checkpoint)
    names = ckpt.class_names if ckpt is not None else []
    blank_id = names.index("blank") if "blank" in names else 0

    stats = StreamStats()
    q = BoundedQueue(cfg.queue_capacity, cfg.drop_policy)
    errors: list[BaseException] = []
    producer = threading.Thread(target=_ingest, args=(source, cfg, q, stats, errors), daemon=True)
    producer.start()
    try:
        while True:
            try:
                seq, end, samples = q.get()
            except SourceEnded:
                break
            spec = featurizer(samples)
            mel = spec.data if cfg.full_matrix else spec.data.mean(axis=1)
            event = FrameEvent(seq, end / fs, mel)
            if ckpt is not None:
                model = ckpt.model
                logits = model.forward(spec.data[None, None].astype(model.dtype), "eval")[0][0]
                probs = softmax(logits.astype(np.float64))
                cid, contact = decide(probs, blank_id, cfg.tau)
                name = names[cid] if cid < len(names) else str(cid)
                event = FrameEvent(seq, end / fs, mel, name, probs, contact)
            sink(event)
            stats.frames_emitted += 1
    finally:
        q.close()
        producer.join()
    stats.frames_dropped = q.dropped
    if errors:
        raise errors[0]
    return stats


def batch_frame_features(samples: np.ndarray, cfg: StreamConfig) -> list[np.ndarray]:
    """Offline counterpart of :func:`run_stream`'s per-frame mel vectors."""
    from .audio_io import AudioClip

    featurizer = Featurizer(cfg.features, cfg.sample_rate_hz)
    clip = AudioClip(samples, cfg.sample_rate_hz)
    return [featurizer(w).data.mean(axis=1) for w in featurizer.windows(clip)]


def _sig6(x: float) -> float:
    return float(f"{x:.6g}")


def _round_nested(a: np.ndarray):
    if a.ndim == 1:
        return [_sig6(v) for v in a.tolist()]
    return [_round_nested(row) for row in a]


def event_to_dict(ev: FrameEvent) -> dict:
    out = {"seq": ev.seq, "t_s": _sig6(ev.t_s), "mel": _round_nested(np.asarray(ev.mel))}
    if ev.has_prediction:
        out["class"] = ev.class_name
        out["probs"] = [_sig6(p) for p in np.asarray(ev.probs).tolist()]
        out["contact"] = bool(ev.contact)
    return out


def write_event(ev: FrameEvent, sink: TextIO) -> None:
    sink.write(json.dumps(event_to_dict(ev), allow_nan=False) + "\n")


class JsonlSink:
    def __init__(self, fp: TextIO, flush: bool = False):
        self.fp = fp
        self.flush = flush

    def __call__(self, ev: FrameEvent) -> None:
        write_event(ev, self.fp)
        if self.flush:
            self.fp.flush()


class _Limited:
    """Reader that stops after ``limit`` bytes."""

    def __init__(self, fp: BinaryIO, limit: int):
        self.fp = fp
        self.remaining = limit

    def read(self, n: int = -1) -> bytes:
        if self.remaining <= 0:
            return b""
        n = self.remaining if n < 0 else min(n, self.remaining)
        data = self.fp.read(n)
        self.remaining -= len(data)
        return data


def open_source(path: str, wav: bool | None = None) -> tuple[BinaryIO, int | None]:
    """Open a PCM source. ``-`` means standard input.

    WAV input (detected by suffix unless ``wav`` is given) has its header
    consumed and its declared rate returned; raw input returns ``None`` for
    the rate, which the caller must supply.
    """
    fp = sys.stdin.buffer if path == "-" else open(path, "rb")
    is_wav = wav if wav is not None else Path(path).suffix.lower() == ".wav"
    if not is_wav:
        return fp, None
    rate, size = read_wav_header(fp)
    if 0 < size < 0xFFFFFFFF:
        return _Limited(fp, size), rate  # type: ignore[return-value]
    return fp, rate


def frame_times(n_events: int, cfg: StreamConfig) -> list[float]:
    fs = cfg.sample_rate_hz
    W, H = cfg.framing.window_samples(fs), cfg.framing.hop_samples(fs)
    return [(W + k * H) / fs for k in range(n_events)]


def expected_frames(n_samples: int, cfg: StreamConfig) -> int:
    fs = cfg.sample_rate_hz
    W, H = cfg.framing.window_samples(fs), cfg.framing.hop_samples(fs)
    return 0 if n_samples < W else (n_samples - W) // H + 1
