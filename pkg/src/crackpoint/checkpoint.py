"""MCPN checkpoint files plus a plain-text key=value config sidecar.

Layout (little-endian): magic "MCPN", version u16, layer count u32; then per
layer node: kind tag (u16 length + ascii), n_param u16, n_state u16, and for
each buffer (params then state): ndim u8, dims u32 each, float32 data.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .model import Model, ModelConfig

MAGIC = b"MCPN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _atomic_write(path, data: bytes):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_kv(path, entries: dict):
    lines = [f"{k} = {v}" for k, v in entries.items()]
    _atomic_write(path, ("\n".join(lines) + "\n").encode())


def read_kv(path) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected 'key = value', got {line!r}")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def sidecar_path(path) -> str:
    return str(path) + ".cfg"


def _pack_buffer(buf: np.ndarray) -> bytes:
    parts = [struct.pack("<B", buf.ndim)]
    for d in buf.shape:
        parts.append(struct.pack("<I", d))
    parts.append(np.ascontiguousarray(buf, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(model: Model, path, extras: dict | None = None):
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(model.sub_layers()))]
    for layer in model.sub_layers():
        kind = layer.kind.encode()
        chunks.append(struct.pack("<H", len(kind)))
        chunks.append(kind)
        chunks.append(struct.pack("<HH", len(layer.params), len(layer.state)))
        for buf in list(layer.params) + list(layer.state):
            chunks.append(_pack_buffer(buf))
    _atomic_write(path, b"".join(chunks))

    entries = {f"model.{k}": v for k, v in model.cfg.to_dict().items()}
    for k, v in (extras or {}).items():
        entries[k] = v
    write_kv(sidecar_path(path), entries)


def load_checkpoint(path, dtype=np.float32) -> tuple[Model, dict]:
    """Rebuild the model from the sidecar config and restore all buffers."""
    side = read_kv(sidecar_path(path))
    cfg = ModelConfig.from_dict(
        {k[len("model."):]: v for k, v in side.items() if k.startswith("model.")})
    model = Model(cfg, dtype=dtype)

    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path}: bad checkpoint magic")
        version, n_layers = struct.unpack("<HI", fh.read(6))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        layers = model.sub_layers()
        if n_layers != len(layers):
            raise CheckpointError(
                f"checkpoint has {n_layers} layer nodes, model has {len(layers)}")
        for i, layer in enumerate(layers):
            klen = struct.unpack("<H", fh.read(2))[0]
            kind = fh.read(klen).decode()
            if kind != layer.kind:
                raise CheckpointError(f"layer {i}: checkpoint kind {kind!r} != model {layer.kind!r}")
            n_param, n_state = struct.unpack("<HH", fh.read(4))
            if n_param != len(layer.params) or n_state != len(layer.state):
                raise CheckpointError(f"layer {i} ({kind}): buffer count mismatch")
            for buf in list(layer.params) + list(layer.state):
                ndim = struct.unpack("<B", fh.read(1))[0]
                dims = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
                if dims != buf.shape:
                    raise CheckpointError(
                        f"layer {i} ({kind}): buffer shape {dims} != expected {buf.shape}")
                data = np.frombuffer(fh.read(4 * buf.size), dtype="<f4").reshape(dims)
                buf[...] = data.astype(buf.dtype)
    return model, side
