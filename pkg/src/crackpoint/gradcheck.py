"""Central finite-difference verification of analytic layer gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .util import make_rng


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    tolerance: float
    per_tensor: list[tuple[str, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    na = float(np.linalg.norm(analytic.ravel()))
    nn = float(np.linalg.norm(numeric.ravel()))
    diff = float(np.linalg.norm((analytic - numeric).ravel()))
    denom = max(na, nn, 1e-12)
    return diff / denom


def numeric_gradient(f, arr: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar f() with respect to every entry of arr."""
    g = np.zeros_like(arr, dtype=np.float64)
    flat = arr.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return g


def grad_check(
    layer: L.Layer,
    input_shape: tuple,
    batch: int = 2,
    tolerance: float = 1e-6,
    seed: int = 0,
    step: float = 1e-5,
    training: bool = True,
    condition=None,
    name: str | None = None,
) -> GradCheckResult:
    """Compare layer.backward against central differences on params and input.

    Uses the weighted-output scalar sum(out * R) with a fixed random R so
    every output entry contributes. `condition` may adjust the random input
    (e.g. to keep ReLU probes away from its kink).
    """
    rng = make_rng(seed)
    x = rng.standard_normal((batch,) + tuple(input_shape))
    if condition is not None:
        x = condition(x)

    out_ref = _run(layer, x, training)
    r = rng.standard_normal(out_ref.shape)

    def loss():
        return float(np.sum(_run(layer, x, training) * r))

    loss()  # populate caches for the analytic pass
    gx = layer.backward(r.copy())

    per_tensor = []
    params = []
    analytic = []
    for li, sub in enumerate(layer.sub_layers()):
        for pi, p in enumerate(sub.params):
            params.append((f"{sub.kind}[{li}].param[{pi}]", p, sub.grads[pi].copy()))
    for pname, p, ga in params:
        gn = numeric_gradient(loss, p, step)
        per_tensor.append((pname, _rel_err(ga.astype(np.float64), gn)))
    gn_x = numeric_gradient(loss, x, step)
    per_tensor.append(("input", _rel_err(gx.astype(np.float64), gn_x)))

    max_err = max(e for _, e in per_tensor)
    return GradCheckResult(
        name=name or layer.kind, max_rel_err=max_err,
        tolerance=tolerance, per_tensor=per_tensor,
    )


def _run(layer: L.Layer, x: np.ndarray, training: bool) -> np.ndarray:
    # Dropout draws a fresh mask per forward; reset so every FD probe sees the
    # same mask as the analytic pass.
    for sub in layer.sub_layers():
        if isinstance(sub, L.Dropout):
            sub.reset_rng(sub.seed)
    return layer.forward(x, training)


def _away_from_zero(margin):
    def cond(x):
        return x + margin * np.where(x >= 0, 1.0, -1.0)
    return cond


def standard_checks() -> dict:
    """Named small-shape gradient checks covering every layer kind.

    Returns {name: zero-arg callable -> GradCheckResult}; all run in float64.
    """
    f64 = np.float64

    def conv2d():
        return grad_check(L.Conv2D(3, 3, 2, 3, padding="same", rng=make_rng(1), dtype=f64),
                          (4, 4, 2), name="conv2d")

    def conv2d_strided():
        return grad_check(
            L.Conv2D(4, 4, 2, 3, padding="same", stride=(1, 4), rng=make_rng(2), dtype=f64),
            (3, 9, 2), name="conv2d_strided")

    def dense():
        return grad_check(L.Dense(6, 4, rng=make_rng(3), dtype=f64), (6,),
                          tolerance=1e-8, name="dense")

    def relu():
        return grad_check(L.ReLU(), (5, 4), condition=_away_from_zero(0.25), name="relu")

    def batchnorm():
        return grad_check(L.BatchNorm(3, dtype=f64), (4, 4, 3), batch=3, name="batchnorm")

    def maxpool1d():
        return grad_check(L.MaxPool1D(4), (8, 3, 2), name="maxpool1d")

    def maxpool2d():
        return grad_check(L.MaxPool2D((2, 2)), (6, 5, 2), name="maxpool2d")

    def maxpool2d_3x3_s1():
        return grad_check(L.MaxPool2DSame3x3(), (5, 5, 2), name="maxpool2d_3x3_s1")

    def self_attention():
        return grad_check(L.SelfAttention(2, rng=make_rng(4), dtype=f64), (3, 4, 2),
                          name="self_attention")

    def dropout():
        return grad_check(L.Dropout(0.3, seed=11), (6, 4), name="dropout")

    def block():
        return grad_check(
            L.InceptionBlock(2, 8, rng=make_rng(5), dtype=f64), (6, 5, 2),
            condition=_away_from_zero(0.1), name="block")

    return {
        "conv2d": conv2d,
        "conv2d_strided": conv2d_strided,
        "dense": dense,
        "relu": relu,
        "batchnorm": batchnorm,
        "maxpool1d": maxpool1d,
        "maxpool2d": maxpool2d,
        "maxpool2d_3x3_s1": maxpool2d_3x3_s1,
        "self_attention": self_attention,
        "dropout": dropout,
        "block": block,
    }


def run_all(names=None) -> list[GradCheckResult]:
    checks = standard_checks()
    if names is None:
        names = list(checks)
    unknown = [n for n in names if n not in checks]
    if unknown:
        raise KeyError(f"unknown gradcheck layer(s): {unknown}; known: {sorted(checks)}")
    return [checks[n]() for n in names]
