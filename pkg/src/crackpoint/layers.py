"""Differentiable layers on dense numpy arrays, channel-last layout.

Every layer owns its parameters, mirrored gradient buffers, and the forward
cache its backward pass needs. Backward passes set (not accumulate) the
gradient buffers and return the gradient with respect to the layer input.
Training runs in float32; gradient verification builds float64 layers.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .util import make_rng


class ShapeError(ValueError):
    pass


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: list[np.ndarray] = []
        self.grads: list[np.ndarray] = []
        self.state: list[np.ndarray] = []
        self._cache = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def out_shape(self, shape: tuple) -> tuple:
        """Per-sample output shape for a per-sample input shape."""
        return shape

    def sub_layers(self) -> list["Layer"]:
        return [self]

    def zero_grads(self):
        for g in self.grads:
            g[...] = 0.0

    def _init_grads(self):
        self.grads = [np.zeros_like(p) for p in self.params]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    @property
    def n_state(self) -> int:
        return sum(s.size for s in self.state)


class Sequential(Layer):
    kind = "sequential"

    def __init__(self, layers: list[Layer]):
        super().__init__()
        self.layers = layers

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, g):
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def out_shape(self, shape):
        for layer in self.layers:
            shape = layer.out_shape(shape)
        return shape

    def sub_layers(self):
        out = []
        for layer in self.layers:
            out.extend(layer.sub_layers())
        return out


def _same_pad(size: int, k: int, s: int) -> tuple[int, int]:
    total = max((int(np.ceil(size / s)) - 1) * s + k - size, 0)
    return total // 2, total - total // 2


class Conv2D(Layer):
    """Cross-correlation over (B, H, W, Cin) -> (B, Ho, Wo, Cout)."""

    kind = "conv2d"

    def __init__(self, kh, kw, cin, cout, padding="valid", stride=(1, 1),
                 rng=None, dtype=np.float32, use_bias=True):
        super().__init__()
        if padding not in ("same", "valid"):
            raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
        self.kh, self.kw, self.cin, self.cout = kh, kw, cin, cout
        self.padding = padding
        self.stride = tuple(stride)
        self.use_bias = use_bias
        rng = rng if rng is not None else make_rng(0)
        limit = np.sqrt(6.0 / (kh * kw * cin))
        w = rng.uniform(-limit, limit, size=(kh, kw, cin, cout)).astype(dtype)
        self.params = [w] + ([np.zeros(cout, dtype=dtype)] if use_bias else [])
        self._init_grads()

    def out_shape(self, shape):
        h, w, c = shape
        if c != self.cin:
            raise ShapeError(f"conv2d expects {self.cin} input channels, got {c}")
        sh, sw = self.stride
        if self.padding == "same":
            return (int(np.ceil(h / sh)), int(np.ceil(w / sw)), self.cout)
        if h < self.kh or w < self.kw:
            raise ShapeError(
                f"conv2d kernel ({self.kh},{self.kw}) does not fit valid input ({h},{w})")
        return ((h - self.kh) // sh + 1, (w - self.kw) // sw + 1, self.cout)

    def _pads(self, h, w):
        if self.padding == "valid":
            return (0, 0), (0, 0)
        sh, sw = self.stride
        return _same_pad(h, self.kh, sh), _same_pad(w, self.kw, sw)

    def _cols(self, xp, ho, wo):
        sh, sw = self.stride
        win = sliding_window_view(xp, (self.kh, self.kw), axis=(1, 2))
        win = win[:, ::sh, ::sw]  # (B, Ho, Wo, C, kh, kw)
        b = xp.shape[0]
        return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(
            b * ho * wo, self.kh * self.kw * self.cin)

    @property
    def _pointwise(self) -> bool:
        return self.kh == 1 and self.kw == 1 and self.stride == (1, 1)

    def forward(self, x, training=False):
        if x.shape[-1] != self.cin:
            raise ShapeError(f"conv2d expects {self.cin} input channels, got {x.shape[-1]}")
        bsz, h, w, _ = x.shape
        ho, wo, _ = self.out_shape(x.shape[1:])
        if self._pointwise:
            cols = x.reshape(-1, self.cin)
            xp_shape, pads = x.shape, (0, 0, 0, 0)
        else:
            (pt, pb), (pl, pr) = self._pads(h, w)
            xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if pt + pb + pl + pr else x
            cols = self._cols(xp, ho, wo)
            xp_shape, pads = xp.shape, (pt, pb, pl, pr)
        wmat = self.params[0].reshape(-1, self.cout)
        out = cols @ wmat
        if self.use_bias:
            out += self.params[1]
        self._cache = (cols, xp_shape, pads, x.shape, ho, wo)
        return out.reshape(bsz, ho, wo, self.cout)

    def backward(self, g):
        if self._cache is None:
            raise RuntimeError("conv2d backward called without a cached forward")
        cols, xp_shape, (pt, pb, pl, pr), x_shape, ho, wo = self._cache
        bsz = x_shape[0]
        wt = self.params[0]
        g2 = g.reshape(bsz * ho * wo, self.cout)
        self.grads[0][...] = (cols.T @ g2).reshape(wt.shape)
        if self.use_bias:
            self.grads[1][...] = g2.sum(axis=0)
        if self._pointwise:
            return (g2 @ wt.reshape(self.cin, self.cout).T).reshape(x_shape)
        # grad wrt input: one small gemm per kernel offset, scattered back
        gxp = np.zeros(xp_shape, dtype=g.dtype)
        sh, sw = self.stride
        for dh in range(self.kh):
            for dw in range(self.kw):
                part = (g2 @ wt[dh, dw].T).reshape(bsz, ho, wo, self.cin)
                gxp[:, dh:dh + ho * sh:sh, dw:dw + wo * sw:sw, :] += part
        h, w = x_shape[1], x_shape[2]
        return gxp[:, pt:pt + h, pl:pl + w, :]


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in, n_out, rng=None, dtype=np.float32):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        rng = rng if rng is not None else make_rng(0)
        limit = np.sqrt(6.0 / n_in)
        w = rng.uniform(-limit, limit, size=(n_in, n_out)).astype(dtype)
        self.params = [w, np.zeros(n_out, dtype=dtype)]
        self._init_grads()

    def out_shape(self, shape):
        if shape != (self.n_in,):
            raise ShapeError(f"dense expects ({self.n_in},), got {shape}")
        return (self.n_out,)

    def forward(self, x, training=False):
        if x.shape[1] != self.n_in:
            raise ShapeError(f"dense expects {self.n_in} features, got {x.shape[1]}")
        self._cache = x
        return x @ self.params[0] + self.params[1]

    def backward(self, g):
        x = self._cache
        self.grads[0][...] = x.T @ g
        self.grads[1][...] = g.sum(axis=0)
        return g @ self.params[0].T


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, g):
        return g * self._cache


class BatchNorm(Layer):
    """Per-channel batch normalization over all leading axes."""

    kind = "batchnorm"

    def __init__(self, channels, momentum=0.99, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.params = [np.ones(channels, dtype=dtype), np.zeros(channels, dtype=dtype)]
        self.state = [np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype)]
        self._init_grads()

    def out_shape(self, shape):
        if shape[-1] != self.channels:
            raise ShapeError(f"batchnorm expects {self.channels} channels, got {shape[-1]}")
        return shape

    def forward(self, x, training=False):
        if x.shape[-1] != self.channels:
            raise ShapeError(f"batchnorm expects {self.channels} channels, got {x.shape[-1]}")
        axes = tuple(range(x.ndim - 1))
        count = x.size // self.channels
        if training:
            if count == 0:
                raise RuntimeError("batchnorm training forward on an empty batch")
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.state[0][...] = self.momentum * self.state[0] + (1 - self.momentum) * mu
            self.state[1][...] = self.momentum * self.state[1] + (1 - self.momentum) * var
        else:
            mu = self.state[0]
            var = self.state[1]
        ivar = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * ivar
        self._cache = (xhat, ivar, count, training)
        return self.params[0] * xhat + self.params[1]

    def backward(self, g):
        xhat, ivar, count, training = self._cache
        axes = tuple(range(g.ndim - 1))
        self.grads[0][...] = (g * xhat).sum(axis=axes)
        self.grads[1][...] = g.sum(axis=axes)
        gxhat = g * self.params[0]
        if not training:
            return gxhat * ivar
        return (ivar / count) * (
            count * gxhat
            - gxhat.sum(axis=axes)
            - xhat * (gxhat * xhat).sum(axis=axes)
        )


class Dropout(Layer):
    """Inverted dropout: identity at inference, kept units scaled by 1/(1-rate)."""

    kind = "dropout"

    def __init__(self, rate=0.3, seed=0):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate
        self.reset_rng(seed)

    def reset_rng(self, seed):
        self.seed = seed
        self.rng = make_rng(seed)

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._cache = None
            return x
        mask = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        mask = mask.astype(x.dtype)
        self._cache = mask
        return x * mask

    def backward(self, g):
        if self._cache is None:
            return g
        return g * self._cache


class MaxPool1D(Layer):
    """Max over non-overlapping windows along axis 1 (time), floor semantics."""

    kind = "maxpool1d"

    def __init__(self, pool=4):
        super().__init__()
        self.pool = pool

    def out_shape(self, shape):
        if shape[0] < self.pool:
            raise ShapeError(f"maxpool1d window {self.pool} exceeds axis size {shape[0]}")
        return (shape[0] // self.pool,) + tuple(shape[1:])

    def forward(self, x, training=False):
        t = x.shape[1]
        if t < self.pool:
            raise ShapeError(f"maxpool1d window {self.pool} exceeds axis size {t}")
        to = t // self.pool
        xr = x[:, :to * self.pool].reshape(x.shape[0], to, self.pool, *x.shape[2:])
        idx = xr.argmax(axis=2)
        out = np.take_along_axis(xr, idx[:, :, None], axis=2)[:, :, 0]
        self._cache = (idx, x.shape)
        return out

    def backward(self, g):
        idx, x_shape = self._cache
        to = x_shape[1] // self.pool
        gxr = np.zeros((x_shape[0], to, self.pool) + x_shape[2:], dtype=g.dtype)
        np.put_along_axis(gxr, idx[:, :, None], g[:, :, None], axis=2)
        gx = np.zeros(x_shape, dtype=g.dtype)
        gx[:, :to * self.pool] = gxr.reshape(x_shape[0], to * self.pool, *x_shape[2:])
        return gx


class MaxPool2D(Layer):
    """Strided 2-D max pooling with stride = pool (floor semantics)."""

    kind = "maxpool2d"

    def __init__(self, pool=(2, 2)):
        super().__init__()
        self.pool = tuple(pool)

    def out_shape(self, shape):
        h, w, c = shape
        ph, pw = self.pool
        if h < ph or w < pw:
            raise ShapeError(f"maxpool2d window {self.pool} exceeds input ({h},{w})")
        return (h // ph, w // pw, c)

    def forward(self, x, training=False):
        b, h, w, c = x.shape
        ph, pw = self.pool
        ho, wo = h // ph, w // pw
        xr = x[:, :ho * ph, :wo * pw].reshape(b, ho, ph, wo, pw, c)
        win = xr.transpose(0, 1, 3, 5, 2, 4).reshape(b, ho, wo, c, ph * pw)
        idx = win.argmax(axis=-1)
        out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        self._cache = (idx, x.shape)
        return out

    def backward(self, g):
        idx, x_shape = self._cache
        b, h, w, c = x_shape
        ph, pw = self.pool
        ho, wo = h // ph, w // pw
        gwin = np.zeros((b, ho, wo, c, ph * pw), dtype=g.dtype)
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
        gxr = gwin.reshape(b, ho, wo, c, ph, pw).transpose(0, 1, 4, 2, 5, 3)
        gx = np.zeros(x_shape, dtype=g.dtype)
        gx[:, :ho * ph, :wo * pw] = gxr.reshape(b, ho * ph, wo * pw, c)
        return gx


class MaxPool2DSame3x3(Layer):
    """3x3 max pooling, stride 1, 'same' padding (-inf fill); shape-preserving."""

    kind = "maxpool2d_3x3_s1"

    def forward(self, x, training=False):
        pad_val = np.array(-np.inf, dtype=x.dtype)
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)), constant_values=pad_val)
        win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (B, H, W, C, 3, 3)
        flat = win.reshape(win.shape[:4] + (9,))
        idx = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        self._cache = (idx, x.shape)
        return out

    def backward(self, g):
        idx, x_shape = self._cache
        b, h, w, c = x_shape
        gxp = np.zeros((b, h + 2, w + 2, c), dtype=g.dtype)
        for k in range(9):
            dh, dw = divmod(k, 3)
            gxp[:, dh:dh + h, dw:dw + w, :] += np.where(idx == k, g, 0.0)
        return gxp[:, 1:h + 1, 1:w + 1, :]


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, training=False):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._cache)


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, target):
        super().__init__()
        self.target = tuple(target)

    def out_shape(self, shape):
        if int(np.prod(shape)) != int(np.prod(self.target)):
            raise ShapeError(f"cannot reshape {shape} to {self.target}")
        return self.target

    def forward(self, x, training=False):
        self._cache = x.shape
        return x.reshape((x.shape[0],) + self.target)

    def backward(self, g):
        return g.reshape(self._cache)


def _softmax_lastaxis(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class SelfAttention(Layer):
    """Scaled dot-product self-attention with a residual add.

    Sequence positions run along the width (sensor) axis, independently per
    time row with projections shared across rows; axis='full' attends over all
    H*W positions (only sensible for small maps). Output = x + softmax(QK^T /
    sqrt(C)) V with learned C x C projections Q, K, V.
    """

    kind = "self_attention"

    def __init__(self, channels, axis="width", rng=None, dtype=np.float32):
        super().__init__()
        if axis not in ("width", "full"):
            raise ValueError(f"attention axis must be 'width' or 'full', got {axis!r}")
        self.channels = channels
        self.axis = axis
        rng = rng if rng is not None else make_rng(0)
        limit = np.sqrt(6.0 / channels)
        self.params = [
            rng.uniform(-limit, limit, size=(channels, channels)).astype(dtype)
            for _ in range(3)
        ]
        self._init_grads()

    def out_shape(self, shape):
        if shape[-1] != self.channels:
            raise ShapeError(f"attention expects {self.channels} channels, got {shape[-1]}")
        return shape

    def _to_seq(self, x):
        b, h, w, c = x.shape
        if self.axis == "width":
            return x.reshape(b * h, w, c)
        return x.reshape(b, h * w, c)

    def forward(self, x, training=False):
        if x.shape[-1] != self.channels:
            raise ShapeError(f"attention expects {self.channels} channels, got {x.shape[-1]}")
        s = self._to_seq(x)
        wq, wk, wv = self.params
        q = s @ wq
        k = s @ wk
        v = s @ wv
        scale = 1.0 / np.sqrt(self.channels)
        att = _softmax_lastaxis((q @ k.transpose(0, 2, 1)) * scale)
        out = s + att @ v
        self._cache = (s, q, k, v, att, x.shape)
        return out.reshape(x.shape)

    def backward(self, g):
        s, q, k, v, att, x_shape = self._cache
        wq, wk, wv = self.params
        scale = 1.0 / np.sqrt(self.channels)
        g3 = g.reshape(s.shape)
        gv = att.transpose(0, 2, 1) @ g3
        gatt = g3 @ v.transpose(0, 2, 1)
        gscores = (gatt - (gatt * att).sum(axis=-1, keepdims=True)) * att
        gq = (gscores @ k) * scale
        gk = (gscores.transpose(0, 2, 1) @ q) * scale
        s2 = s.reshape(-1, self.channels)
        self.grads[0][...] = s2.T @ gq.reshape(-1, self.channels)
        self.grads[1][...] = s2.T @ gk.reshape(-1, self.channels)
        self.grads[2][...] = s2.T @ gv.reshape(-1, self.channels)
        gs = g3 + gq @ wq.T + gk @ wk.T + gv @ wv.T
        return gs.reshape(x_shape)


class InceptionBlock(Layer):
    """Four parallel branches, channel-concatenated.

    With F total conv filters: 1x1 branch F/4, 3x3 branch F/2, 5x5 branch F/4,
    plus a pool branch (3x3 stride-1 max pool then 1x1 conv) with F/4 filters;
    every conv is followed by batch norm and ReLU, so the output carries 5F/4
    channels.
    """

    kind = "inception_block"

    def __init__(self, cin, filters, rng=None, dtype=np.float32, bn_momentum=0.99):
        super().__init__()
        if filters % 4 != 0:
            raise ValueError("block filter count must be divisible by 4")
        f1, f3, f5, fp = filters // 4, filters // 2, filters // 4, filters // 4
        rng = rng if rng is not None else make_rng(0)

        def conv_bn_relu(kh, kw, ci, co, padding):
            # batch norm absorbs any constant shift, so the conv carries no bias
            return [Conv2D(kh, kw, ci, co, padding=padding, rng=rng, dtype=dtype,
                           use_bias=False),
                    BatchNorm(co, momentum=bn_momentum, dtype=dtype), ReLU()]

        self.branches = [
            Sequential(conv_bn_relu(1, 1, cin, f1, "same")),
            Sequential(conv_bn_relu(3, 3, cin, f3, "same")),
            Sequential(conv_bn_relu(5, 5, cin, f5, "same")),
            Sequential([MaxPool2DSame3x3()] + conv_bn_relu(1, 1, cin, fp, "same")),
        ]
        self.cin = cin
        self.cout = f1 + f3 + f5 + fp
        self._splits = np.cumsum([f1, f3, f5, fp])[:-1]

    def out_shape(self, shape):
        shapes = [br.out_shape(shape) for br in self.branches]
        if len({s[:2] for s in shapes}) != 1:
            raise ShapeError(f"branch spatial shapes disagree: {shapes}")
        return shapes[0][:2] + (self.cout,)

    def forward(self, x, training=False):
        return np.concatenate([br.forward(x, training) for br in self.branches], axis=-1)

    def backward(self, g):
        # split views are non-contiguous on the channel axis; copy once here
        # rather than paying strided access in every branch op
        parts = [np.ascontiguousarray(p) for p in np.split(g, self._splits, axis=-1)]
        gx = self.branches[0].backward(parts[0])
        for br, part in zip(self.branches[1:], parts[1:]):
            gx = gx + br.backward(part)
        return gx

    def sub_layers(self):
        out = []
        for br in self.branches:
            out.extend(br.sub_layers())
        return out
