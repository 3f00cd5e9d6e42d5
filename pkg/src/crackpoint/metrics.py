"""Box localization metrics: IoU, Purity, Integrity, and size-binned reports."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .labels import KeypointBox


def overlap_area(a: KeypointBox, b: KeypointBox) -> float:
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    return max(0.0, w) * max(0.0, h)


def iou(predicted: KeypointBox, truth: KeypointBox) -> float:
    """Overlap area over union area; 0 when both boxes are degenerate."""
    inter = overlap_area(predicted, truth)
    union = predicted.area + truth.area - inter
    return inter / union if union > 0.0 else 0.0


def purity(predicted: KeypointBox, truth: KeypointBox) -> float:
    """Overlap over predicted area (localization precision); 0 if degenerate."""
    a = predicted.area
    return overlap_area(predicted, truth) / a if a > 0.0 else 0.0


def integrity(predicted: KeypointBox, truth: KeypointBox) -> float:
    """Overlap over ground-truth area (coverage completeness); 0 if degenerate."""
    a = truth.area
    return overlap_area(predicted, truth) / a if a > 0.0 else 0.0


def rasterized_iou(predicted: KeypointBox, truth: KeypointBox, resolution: int = 1000) -> float:
    """Pixel-count IoU on a resolution^2 grid; oracle for the analytic form."""
    from .labels import keypoints_to_mask

    ma = keypoints_to_mask(predicted, resolution, resolution).astype(bool)
    mb = keypoints_to_mask(truth, resolution, resolution).astype(bool)
    union = np.logical_or(ma, mb).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(ma, mb).sum() / union)


DEFAULT_THRESHOLDS = (0.0, 0.0010, 0.0020, 0.0030, 0.0040)


@dataclass
class EvalRow:
    threshold: float
    mean_iou: Optional[float]
    mean_purity: Optional[float]
    mean_integrity: Optional[float]
    count: int


@dataclass
class EvalReport:
    rows: list[EvalRow]
    mse: Optional[float] = None
    mae: Optional[float] = None
    huber: Optional[float] = None
    extras: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        lines = ["threshold,iou,purity,integrity,count"]
        for r in self.rows:
            def fmt(v):
                return "" if v is None else f"{v:.6f}"
            lines.append(
                f"{r.threshold:g},{fmt(r.mean_iou)},{fmt(r.mean_purity)},"
                f"{fmt(r.mean_integrity)},{r.count}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        lines = [f"{'Crack Size':>12s} {'IoU':>10s} {'Purity':>10s} {'Integrity':>10s} {'Count':>7s}"]
        for r in self.rows:
            def fmt(v):
                return "-" if v is None else f"{v:.6f}"
            lines.append(
                f"{'>' + format(r.threshold, 'g'):>12s} {fmt(r.mean_iou):>10s} "
                f"{fmt(r.mean_purity):>10s} {fmt(r.mean_integrity):>10s} {r.count:7d}")
        if self.mse is not None:
            lines.append("")
            lines.append(f"MSE   {self.mse:.6f}")
            lines.append(f"MAE   {self.mae:.6f}")
            lines.append(f"Huber {self.huber:.6f}")
        return "\n".join(lines) + "\n"


def binned_report(
    pairs: list[tuple[KeypointBox, KeypointBox]],
    crack_sizes,
    thresholds=DEFAULT_THRESHOLDS,
) -> EvalReport:
    """Mean IoU/Purity/Integrity over samples with crack_size > threshold.

    `pairs` holds (predicted, truth) boxes. Thresholds must be strictly
    increasing; an empty bin yields a row with count 0 and blank means.
    """
    if len(pairs) == 0:
        raise ValueError("binned_report needs at least one pair")
    thresholds = tuple(thresholds)
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be strictly increasing")
    sizes = np.asarray(crack_sizes, dtype=float)
    if sizes.size != len(pairs):
        raise ValueError("crack_sizes must match pairs")

    ious = np.array([iou(p, t) for p, t in pairs])
    purs = np.array([purity(p, t) for p, t in pairs])
    ints = np.array([integrity(p, t) for p, t in pairs])

    rows = []
    for thr in thresholds:
        sel = sizes > thr
        n = int(sel.sum())
        if n == 0:
            rows.append(EvalRow(thr, None, None, None, 0))
        else:
            rows.append(EvalRow(
                thr,
                float(ious[sel].mean()),
                float(purs[sel].mean()),
                float(ints[sel].mean()),
                n,
            ))
    return EvalReport(rows=rows)
