"""Regression losses (value + gradient w.r.t. predictions).

All three reduce by the mean over every element (batch * 4 coordinates), so
loss scale is independent of batch size.
"""

from __future__ import annotations

import numpy as np


def _validate(y: np.ndarray, y_hat: np.ndarray) -> int:
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_hat.shape}")
    n = y.size
    if n == 0:
        raise ValueError("empty loss batch")
    return n


def mse(y: np.ndarray, y_hat: np.ndarray) -> tuple[float, np.ndarray]:
    """(1/N) sum (y - y_hat)^2 with gradient 2 (y_hat - y) / N."""
    n = _validate(y, y_hat)
    diff = y_hat - y
    return float(np.sum(diff * diff) / n), (2.0 / n) * diff


def mae(y: np.ndarray, y_hat: np.ndarray) -> tuple[float, np.ndarray]:
    """(1/N) sum |y - y_hat| with subgradient sign(y_hat - y) / N (0 at ties)."""
    n = _validate(y, y_hat)
    diff = y_hat - y
    return float(np.sum(np.abs(diff)) / n), np.sign(diff) / n


def huber(y: np.ndarray, y_hat: np.ndarray, delta: float = 1.0) -> tuple[float, np.ndarray]:
    """Mean of x^2/2 for |x| <= delta else delta (|x| - delta/2), x = y - y_hat."""
    if delta <= 0.0:
        raise ValueError("huber delta must be > 0")
    n = _validate(y, y_hat)
    diff = y_hat - y
    a = np.abs(diff)
    quad = a <= delta
    vals = np.where(quad, 0.5 * diff * diff, delta * (a - 0.5 * delta))
    grad = np.where(quad, diff, delta * np.sign(diff)) / n
    return float(vals.sum() / n), grad


def get_loss(name: str, huber_delta: float = 1.0):
    """Loss selected by config key; returns fn(y, y_hat) -> (value, grad)."""
    name = name.lower()
    if name == "mse":
        return mse
    if name == "mae":
        return mae
    if name == "huber":
        return lambda y, y_hat: huber(y, y_hat, huber_delta)
    raise ValueError(f"unknown loss {name!r}; expected mse, mae, or huber")
