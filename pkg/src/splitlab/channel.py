"""Device-to-server transit: wire frames, capture files, and channel taps.

Frame layout, all little-endian:

    magic   4 bytes  b"ADVR"
    version u8       1
    dtype   u8       0 (float32)
    ndim    u8
    shape   ndim * u32
    payload product(shape) * f32, row-major

A capture file is frames back to back, conventionally named "*.advr".
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ChannelIntegrityError, DataError, WireFormatError
from .models import ActivationTensor

MAGIC = b"ADVR"
WIRE_VERSION = 1
DTYPE_FLOAT32 = 0
CAPTURE_SUFFIX = ".advr"


def serialize(h: ActivationTensor) -> bytes:
    if not h.is_finite():
        raise DataError("refusing to serialize NaN/Inf activation")
    values = np.ascontiguousarray(h.values, dtype="<f4")
    ndim = values.ndim
    if ndim < 1 or ndim > 255:
        raise DataError(f"unsupported tensor rank {ndim}")
    header = MAGIC + struct.pack("<BBB", WIRE_VERSION, DTYPE_FLOAT32, ndim)
    header += struct.pack(f"<{ndim}I", *values.shape)
    return header + values.tobytes()


def _parse_frame(buf: bytes, offset: int) -> tuple[ActivationTensor, int]:
    if buf[offset:offset + 4] != MAGIC:
        raise WireFormatError(
            f"bad magic {buf[offset:offset + 4]!r} at offset {offset}")
    fixed_end = offset + 7
    if len(buf) < fixed_end:
        raise WireFormatError("truncated frame header")
    version, dtype, ndim = struct.unpack("<BBB", buf[offset + 4:fixed_end])
    if version != WIRE_VERSION:
        raise WireFormatError(f"unsupported wire version {version}")
    if dtype != DTYPE_FLOAT32:
        raise WireFormatError(f"unsupported dtype code {dtype}")
    if ndim == 0:
        raise WireFormatError("zero-rank tensor frame")
    shape_end = fixed_end + 4 * ndim
    if len(buf) < shape_end:
        raise WireFormatError("truncated shape header")
    shape = struct.unpack(f"<{ndim}I", buf[fixed_end:shape_end])
    count = int(np.prod(shape, dtype=np.int64))
    payload_end = shape_end + 4 * count
    if len(buf) < payload_end:
        raise WireFormatError(
            f"payload truncated: need {4 * count} bytes, "
            f"have {len(buf) - shape_end}")
    values = np.frombuffer(buf[shape_end:payload_end], dtype="<f4")
    return ActivationTensor(values.reshape(shape).copy()), payload_end


def deserialize(buf: bytes) -> ActivationTensor:
    tensor, end = _parse_frame(buf, 0)
    if end != len(buf):
        raise WireFormatError(f"{len(buf) - end} trailing bytes after frame")
    return tensor


@dataclass
class EavesdropDataset:
    """What the attacker holds: shapes and values only.

    provenance carries unknown-flags, not identities; there is no field
    for labels or source images anywhere in this type.
    """

    samples: list[ActivationTensor]
    provenance: tuple[str, str] = ("model-id-unknown", "cut-index-unknown")

    def __post_init__(self):
        shapes = {s.shape for s in self.samples}
        if len(shapes) > 1:
            raise DataError(f"mixed activation shapes in dataset: {shapes}")
        for s in self.samples:
            s.source_layer = None

    @property
    def count(self) -> int:
        return len(self.samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def shape(self) -> tuple[int, ...]:
        if not self.samples:
            raise DataError("empty dataset has no shape")
        return self.samples[0].shape

    def stacked(self) -> np.ndarray:
        return np.stack([s.values for s in self.samples])

    def take(self, n: int) -> "EavesdropDataset":
        if n > len(self.samples):
            raise DataError(f"asked for {n} of {len(self.samples)} samples")
        return EavesdropDataset(self.samples[:n], self.provenance)


class ChannelTap:
    """Observer on the activation channel.

    Passive taps log a copy of every frame and forward it untouched.
    Active taps forward transform(h) and must preserve the shape.
    """

    def __init__(self, mode: str = "passive", transform=None):
        if mode not in ("passive", "active"):
            raise ChannelIntegrityError(f"unknown tap mode {mode!r}")
        if mode == "active" and transform is None:
            raise ChannelIntegrityError("active tap requires a transform")
        self.mode = mode
        self.transform = transform
        self._log: list[ActivationTensor] = []
        self._lock = threading.Lock()

    @property
    def log(self) -> tuple[ActivationTensor, ...]:
        with self._lock:
            return tuple(self._log)

    def log_size(self) -> int:
        with self._lock:
            return len(self._log)


def transmit(tap: ChannelTap, h: ActivationTensor) -> ActivationTensor:
    if tap.mode == "passive":
        with tap._lock:
            tap._log.append(ActivationTensor(h.values.copy()))
        return h
    out = tap.transform(h)
    if not isinstance(out, ActivationTensor):
        out = ActivationTensor(np.asarray(out))
    if out.shape != h.shape:
        raise ChannelIntegrityError(
            f"active transform changed shape {h.shape} -> {out.shape}")
    return out


def collect(tap: ChannelTap, n_samples: int) -> EavesdropDataset:
    """First n_samples logged frames as the attacker's dataset."""
    if tap.mode != "passive":
        raise ChannelIntegrityError("collect requires a passive tap")
    if n_samples < 0:
        raise DataError("negative sample count")
    frames = tap.log
    if len(frames) < n_samples:
        raise DataError(
            f"tap logged {len(frames)} frames, cannot collect {n_samples}")
    samples = [ActivationTensor(f.values.copy()) for f in frames[:n_samples]]
    return EavesdropDataset(samples)


def write_capture(samples, path) -> Path:
    """Concatenated frames on disk; accepts any iterable of activations."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        for sample in samples:
            fh.write(serialize(sample))
    return path


def read_capture(path) -> EavesdropDataset:
    path = Path(path)
    buf = path.read_bytes()
    samples = []
    offset = 0
    while offset < len(buf):
        tensor, offset = _parse_frame(buf, offset)
        samples.append(tensor)
    return EavesdropDataset(samples)
