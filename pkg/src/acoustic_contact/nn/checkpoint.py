"""Binary checkpoint container.

Layout::

    b"ACCKPT01" | u32 header_len | header (UTF-8 JSON) | tensors | u32 crc32

Tensors are little-endian float32, concatenated in the order of the header's
``tensors`` manifest. The CRC covers every byte before it.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import BadMagic, ChecksumMismatch, VersionMismatch
from .model import Model, ModelSpec
from .optim import AdamState

MAGIC = b"ACCKPT01"
FORMAT_VERSION = 1
_ADAM_PREFIX = ("adam.m.", "adam.v.")


@dataclass
class Checkpoint:
    model: Model
    featurization_digest: str = ""
    metadata: dict = field(default_factory=dict)
    adam: AdamState | None = None

    @property
    def n_classes(self) -> int:
        return self.model.spec.n_classes

    @property
    def class_names(self) -> list[str]:
        return list(self.metadata.get("class_names", []))


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    tensors: list[tuple[str, np.ndarray]] = list(ckpt.model.state().items())
    adam_header = None
    if ckpt.adam is not None:
        a = ckpt.adam
        adam_header = {"t": a.t, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps}
        for name in sorted(a.m):
            tensors.append((f"adam.m.{name}", a.m[name]))
            tensors.append((f"adam.v.{name}", a.v[name]))
    header = {
        "format_version": FORMAT_VERSION,
        "topology": ckpt.model.spec.to_dict(),
        "n_classes": ckpt.n_classes,
        "featurization_digest": ckpt.featurization_digest,
        "metadata": ckpt.metadata,
        "adam": adam_header,
        "tensors": [{"name": n, "dtype": "f32", "shape": list(t.shape)} for n, t in tensors],
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = bytearray(MAGIC + struct.pack("<I", len(head)) + head)
    for _, t in tensors:
        body += np.ascontiguousarray(t, dtype="<f4").tobytes()
    body += struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    return bytes(body)


def decode_checkpoint(blob: bytes) -> Checkpoint:
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise BadMagic("not a checkpoint file (bad magic)")
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != crc:
        raise ChecksumMismatch("checkpoint CRC32 does not match its contents")
    pos = len(MAGIC)
    (head_len,) = struct.unpack("<I", blob[pos : pos + 4])
    pos += 4
    header = json.loads(blob[pos : pos + head_len].decode("utf-8"))
    pos += head_len
    if header.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(
            f"checkpoint format {header.get('format_version')}, reader supports {FORMAT_VERSION}"
        )

    arrays = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        arrays[entry["name"]] = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * n
    if pos != len(blob) - 4:
        raise ChecksumMismatch("checkpoint payload length disagrees with its manifest")

    model = Model.init(ModelSpec.from_dict(header["topology"]), seed=0, dtype=np.float32)
    model.load_state({k: v for k, v in arrays.items() if not k.startswith(_ADAM_PREFIX)})

    adam = None
    if header.get("adam") is not None:
        a = header["adam"]
        adam = AdamState(beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], t=a["t"])
        for k, v in arrays.items():
            if k.startswith("adam.m."):
                adam.m[k[len("adam.m.") :]] = v
            elif k.startswith("adam.v."):
                adam.v[k[len("adam.v.") :]] = v
    return Checkpoint(model, header["featurization_digest"], header["metadata"], adam)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt))


def load_checkpoint(path: str | Path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
