"""Wide multi-branch regression network for crack keypoint boxes.

Input (time, sensor, channel) wave fields pass through a temporal max pool,
four inception-style blocks (each followed by self-attention and 2x2 max
pooling), a time-collapsing convolution, two small reduction convolutions,
and a dense head with 4 linear outputs (x_min, y_min, x_max, y_max).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .labels import KeypointBox
from .util import make_rng, mix_seed


@dataclass
class ModelConfig:
    base_filters: int = 16
    n_blocks: int = 4
    pool_after_block: tuple[int, int] = (2, 2)
    dense_widths: tuple[int, ...] = (128, 64)
    output_dim: int = 4
    dropout_rate: float = 0.3
    bn_momentum: float = 0.99
    attention_axis: str = "width"
    input_shape: tuple[int, int, int] = (2000, 81, 2)
    time_pool: int = 4
    head_filters: tuple[int, int, int] = (128, 16, 8)
    seed: int = 0

    def __post_init__(self):
        if self.output_dim != 4:
            raise ValueError("output_dim must be 4 (one keypoint box)")
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        if self.base_filters % 4 != 0:
            raise ValueError("base_filters must be divisible by 4")

    def block_filters(self, index: int) -> int:
        return self.base_filters * (2 ** index)

    def to_dict(self) -> dict:
        return {
            "base_filters": self.base_filters,
            "n_blocks": self.n_blocks,
            "pool_after_block": ",".join(map(str, self.pool_after_block)),
            "dense_widths": ",".join(map(str, self.dense_widths)),
            "output_dim": self.output_dim,
            "dropout_rate": self.dropout_rate,
            "bn_momentum": self.bn_momentum,
            "attention_axis": self.attention_axis,
            "input_shape": ",".join(map(str, self.input_shape)),
            "time_pool": self.time_pool,
            "head_filters": ",".join(map(str, self.head_filters)),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        def ints(s):
            return tuple(int(v) for v in str(s).split(","))

        kw = {}
        for key in ("base_filters", "n_blocks", "output_dim", "time_pool", "seed"):
            if key in d:
                kw[key] = int(d[key])
        if "dropout_rate" in d:
            kw["dropout_rate"] = float(d["dropout_rate"])
        if "bn_momentum" in d:
            kw["bn_momentum"] = float(d["bn_momentum"])
        if "attention_axis" in d:
            kw["attention_axis"] = str(d["attention_axis"])
        for key in ("pool_after_block", "dense_widths", "input_shape", "head_filters"):
            if key in d:
                kw[key] = ints(d[key])
        return cls(**kw)


class Model:
    """Static layer graph with a construction-time validated shape trace."""

    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        rng = make_rng(cfg.seed)
        layers: list[L.Layer] = []
        trace: list[tuple[str, tuple]] = [("input", cfg.input_shape)]
        shape = cfg.input_shape

        def add(name: str, layer: L.Layer):
            nonlocal shape
            shape = layer.out_shape(shape)
            layers.append(layer)
            trace.append((name, shape))

        add("time_pool", L.MaxPool1D(cfg.time_pool))
        cin = shape[-1]
        for b in range(cfg.n_blocks):
            filters = cfg.block_filters(b)
            add(f"block{b + 1}", L.InceptionBlock(cin, filters, rng=rng, dtype=dtype,
                                                  bn_momentum=cfg.bn_momentum))
            cin = shape[-1]
            add(f"pool{b + 1}", L.MaxPool2D(cfg.pool_after_block))
            add(f"attention{b + 1}",
                L.SelfAttention(cin, axis=cfg.attention_axis, rng=rng, dtype=dtype))

        t, w, c = shape
        f31, f3, f4 = cfg.head_filters
        add("time_collapse_conv", L.Conv2D(t, 1, c, f31, padding="valid", rng=rng, dtype=dtype))
        add("channels_to_spatial", L.Reshape((shape[1], shape[2], 1)))
        add("reduce_conv_3x3", L.Conv2D(3, 3, 1, f3, padding="valid", rng=rng, dtype=dtype))
        add("reduce_relu_1", L.ReLU())
        add("reduce_conv_4x4", L.Conv2D(4, 4, f3, f4, padding="same", stride=(1, 4),
                                        rng=rng, dtype=dtype))
        add("reduce_relu_2", L.ReLU())
        add("flatten", L.Flatten())
        n_in = shape[0]
        for i, width in enumerate(cfg.dense_widths):
            add(f"dense{i + 1}", L.Dense(n_in, width, rng=rng, dtype=dtype))
            add(f"dense{i + 1}_relu", L.ReLU())
            add(f"dropout{i + 1}", L.Dropout(cfg.dropout_rate, seed=mix_seed(cfg.seed, 1000 + i)))
            n_in = width
        add("output", L.Dense(n_in, cfg.output_dim, rng=rng, dtype=dtype))

        self.net = L.Sequential(layers)
        self.trace = trace
        self.named_layers = list(zip([t[0] for t in trace[1:]], layers))

    # -- execution ---------------------------------------------------------

    def forward(self, batch: np.ndarray, training: bool = False) -> np.ndarray:
        if batch.ndim != 4 or batch.shape[1:] != self.cfg.input_shape:
            raise L.ShapeError(
                f"expected batch of shape (B, {self.cfg.input_shape}), got {batch.shape}")
        return self.net.forward(batch.astype(self.dtype, copy=False), training)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return self.net.backward(grad_out)

    def predict(self, batch: np.ndarray, chunk: int = 32) -> np.ndarray:
        """Inference-mode forward in chunks; returns raw (B, 4) outputs."""
        outs = [self.forward(batch[i:i + chunk]) for i in range(0, batch.shape[0], chunk)]
        return np.concatenate(outs, axis=0)

    # -- bookkeeping -------------------------------------------------------

    def sub_layers(self) -> list[L.Layer]:
        return self.net.sub_layers()

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.sub_layers() for p in layer.params]

    def gradients(self) -> list[np.ndarray]:
        return [g for layer in self.sub_layers() for g in layer.grads]

    def zero_grads(self):
        for layer in self.sub_layers():
            layer.zero_grads()

    def count_params(self) -> tuple[int, int]:
        trainable = sum(layer.n_params for layer in self.sub_layers())
        non_trainable = sum(layer.n_state for layer in self.sub_layers())
        return trainable, non_trainable

    @property
    def n_layer_nodes(self) -> int:
        return len(self.sub_layers())

    def format_trace(self) -> str:
        return "\n".join(f"{name:22s} {shape}" for name, shape in self.trace)


def build_model(cfg: ModelConfig | None = None, dtype=np.float32) -> Model:
    return Model(cfg or ModelConfig(), dtype=dtype)


def raw_to_box(raw: np.ndarray) -> KeypointBox:
    """Clamp a raw 4-vector to [0,1] and reorder so min <= max per axis."""
    r = np.clip(np.asarray(raw, dtype=float), 0.0, 1.0)
    x0, x1 = sorted((r[0], r[2]))
    y0, y1 = sorted((r[1], r[3]))
    return KeypointBox(x_min=x0, y_min=y0, x_max=x1, y_max=y1)


def predict_box(model: Model, sample_field: np.ndarray) -> KeypointBox:
    raw = model.forward(sample_field[None, ...])[0]
    return raw_to_box(raw)
