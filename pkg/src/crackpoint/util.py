"""Shared small helpers: seed mixing and geometry primitives."""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def mix_seed(seed: int, stream: int) -> int:
    """Derive an independent 64-bit sub-seed from (seed, stream).

    splitmix64 finalizer applied to seed + stream * golden-ratio increment, so
    neighbouring streams decorrelate fully.
    """
    z = (seed + (stream + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(mix_seed(seed, stream)))


def _cross2(ax, ay, bx, by):
    return ax * by - ay * bx


def point_segment_distance(px, py, ax, ay, bx, by):
    """Distance from points (px,py) to segments (a,b); all args broadcastable."""
    abx = bx - ax
    aby = by - ay
    apx = px - ax
    apy = py - ay
    denom = abx * abx + aby * aby
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(denom > 0.0, (apx * abx + apy * aby) / np.where(denom > 0, denom, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    dx = apx - t * abx
    dy = apy - t * aby
    return np.hypot(dx, dy)


def segment_segment_distance(p0, p1, q0, q1):
    """Distance between segments p0->p1 (arrays (n,2)) and one segment q0->q1.

    Returns an (n,) array; 0 where the segments intersect.
    """
    p0 = np.atleast_2d(np.asarray(p0, dtype=float))
    p1 = np.atleast_2d(np.asarray(p1, dtype=float))
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)

    d1 = _cross2(q1[0] - q0[0], q1[1] - q0[1], p0[:, 0] - q0[0], p0[:, 1] - q0[1])
    d2 = _cross2(q1[0] - q0[0], q1[1] - q0[1], p1[:, 0] - q0[0], p1[:, 1] - q0[1])
    d3 = _cross2(p1[:, 0] - p0[:, 0], p1[:, 1] - p0[:, 1], q0[0] - p0[:, 0], q0[1] - p0[:, 1])
    d4 = _cross2(p1[:, 0] - p0[:, 0], p1[:, 1] - p0[:, 1], q1[0] - p0[:, 0], q1[1] - p0[:, 1])
    proper = (d1 * d2 < 0.0) & (d3 * d4 < 0.0)

    d = np.minimum(
        np.minimum(
            point_segment_distance(p0[:, 0], p0[:, 1], q0[0], q0[1], q1[0], q1[1]),
            point_segment_distance(p1[:, 0], p1[:, 1], q0[0], q0[1], q1[0], q1[1]),
        ),
        np.minimum(
            point_segment_distance(q0[0], q0[1], p0[:, 0], p0[:, 1], p1[:, 0], p1[:, 1]),
            point_segment_distance(q1[0], q1[1], p0[:, 0], p0[:, 1], p1[:, 0], p1[:, 1]),
        ),
    )
    return np.where(proper, 0.0, d)


def segment_rect_distance(q0, q1, x0, y0, x1, y1):
    """Distance between segment q0->q1 and axis-aligned rectangles.

    x0, y0, x1, y1 are broadcastable arrays of rectangle bounds. Returns 0 where
    the segment touches or enters a rectangle.
    """
    x0, y0, x1, y1 = np.broadcast_arrays(
        np.asarray(x0, float), np.asarray(y0, float), np.asarray(x1, float), np.asarray(y1, float)
    )
    shape = x0.shape
    x0f, y0f, x1f, y1f = (a.ravel() for a in (x0, y0, x1, y1))
    n = x0f.size

    inside = (
        (q0[0] >= x0f) & (q0[0] <= x1f) & (q0[1] >= y0f) & (q0[1] <= y1f)
    ) | ((q1[0] >= x0f) & (q1[0] <= x1f) & (q1[1] >= y0f) & (q1[1] <= y1f))

    corners = [
        (np.stack([x0f, y0f], 1), np.stack([x1f, y0f], 1)),
        (np.stack([x1f, y0f], 1), np.stack([x1f, y1f], 1)),
        (np.stack([x1f, y1f], 1), np.stack([x0f, y1f], 1)),
        (np.stack([x0f, y1f], 1), np.stack([x0f, y0f], 1)),
    ]
    d = np.full(n, np.inf)
    for a, b in corners:
        d = np.minimum(d, segment_segment_distance(a, b, q0, q1))
    d = np.where(inside, 0.0, d)
    return d.reshape(shape)
