"""CWF1 binary dataset format: simulated wave fields + masks + crack descriptors.

Layout (little-endian):
  magic "CWF1", version u16,
  n_samples u32, n_steps u32, n_sensors u32, n_channels u32,
  label_h u16, label_w u16, flags u32,
  then per sample:
    field   float32[n_steps * n_sensors * n_channels]  (time, sensor, channel)
    mask    u8[label_h * label_w]
    crack   float32[6] = p0x, p0y, p1x, p1y, width, size
    present u8
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .util import mix_seed
from .wavesim import CrackSampler, CrackSpec, LatticeConfig, SourceSpec, synthesize_sample

MAGIC = b"CWF1"
VERSION = 1
_HEADER = struct.Struct("<4sHIIIIHHI")


class FormatError(ValueError):
    pass


@dataclass
class DatasetFile:
    fields: np.ndarray   # (n, n_steps, n_sensors, n_channels) float32
    masks: np.ndarray    # (n, label_h, label_w) uint8
    cracks: list[CrackSpec]
    sizes: np.ndarray    # (n,) float32 crack lengths, 0 where absent

    @property
    def n_samples(self) -> int:
        return self.fields.shape[0]


def sample_record_bytes(n_steps: int, n_sensors: int, n_channels: int, label_h: int, label_w: int) -> int:
    return 4 * n_steps * n_sensors * n_channels + label_h * label_w + 4 * 6 + 1


def header_bytes() -> int:
    return _HEADER.size


def write_cwf1(path, fields, masks, cracks) -> None:
    """Write samples atomically (temp file + rename)."""
    fields = np.ascontiguousarray(np.asarray(fields, dtype="<f4"))
    masks = np.ascontiguousarray(np.asarray(masks, dtype=np.uint8))
    n, n_steps, n_sensors, n_channels = fields.shape
    label_h, label_w = masks.shape[1:]
    if len(cracks) != n or masks.shape[0] != n:
        raise ValueError("fields, masks, cracks must have equal sample counts")

    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".cwf1.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, n, n_steps, n_sensors, n_channels,
                                  label_h, label_w, 0))
            for i in range(n):
                fh.write(fields[i].tobytes())
                fh.write(masks[i].tobytes())
                c = cracks[i]
                desc = np.array(
                    [c.p0[0], c.p0[1], c.p1[0], c.p1[1], c.width,
                     c.crack_size if c.present else 0.0],
                    dtype="<f4",
                )
                fh.write(desc.tobytes())
                fh.write(struct.pack("<B", 1 if c.present else 0))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_cwf1(path) -> DatasetFile:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise FormatError("truncated CWF1 header")
        magic, version, n, n_steps, n_sensors, n_channels, label_h, label_w, _flags = _HEADER.unpack(head)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"unsupported CWF1 version {version}")

        fields = np.empty((n, n_steps, n_sensors, n_channels), dtype=np.float32)
        masks = np.empty((n, label_h, label_w), dtype=np.uint8)
        cracks: list[CrackSpec] = []
        sizes = np.empty(n, dtype=np.float32)
        field_count = n_steps * n_sensors * n_channels
        for i in range(n):
            buf = fh.read(4 * field_count)
            if len(buf) < 4 * field_count:
                raise FormatError(f"truncated field data in sample {i}")
            fields[i] = np.frombuffer(buf, dtype="<f4").reshape(n_steps, n_sensors, n_channels)
            tail = fh.read(label_h * label_w + 25)
            if len(tail) < label_h * label_w + 25:
                raise FormatError(f"truncated mask/crack data in sample {i}")
            masks[i] = np.frombuffer(tail[: label_h * label_w], dtype=np.uint8).reshape(
                label_h, label_w)
            desc = np.frombuffer(tail[label_h * label_w:-1], dtype="<f4")
            present = tail[-1] != 0
            cracks.append(
                CrackSpec(
                    p0=(float(desc[0]), float(desc[1])),
                    p1=(float(desc[2]), float(desc[3])),
                    width=float(desc[4]),
                    present=present,
                )
            )
            sizes[i] = desc[5]
    return DatasetFile(fields=fields, masks=masks, cracks=cracks, sizes=sizes)


def generate_dataset(
    n: int,
    cfg: LatticeConfig,
    sampler: CrackSampler,
    path,
    source: SourceSpec | None = None,
) -> DatasetFile:
    """Simulate n samples (deterministic in cfg.seed) and write them as CWF1.

    Each sample draws from its own sub-seeded RNG, so generation is
    order-independent and could be parallelized across samples; writes stay
    serialized in sample order.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    fields = np.empty((n, cfg.n_steps, 81, 2), dtype=np.float32)
    masks = np.empty((n, cfg.label_h, cfg.label_w), dtype=np.uint8)
    cracks: list[CrackSpec] = []
    sizes = np.empty(n, dtype=np.float32)
    for i in range(n):
        sample = synthesize_sample(cfg, sampler, mix_seed(cfg.seed, i), source)
        fields[i] = sample.field.astype(np.float32)
        masks[i] = sample.mask
        cracks.append(sample.crack)
        sizes[i] = sample.crack.crack_size if sample.crack.present else 0.0
    write_cwf1(path, fields, masks, cracks)
    return DatasetFile(fields=fields, masks=masks, cracks=cracks, sizes=sizes)
