"""Per-pixel confusion counting and precision/recall/F-score against ground truth.

Ground-truth labels follow the CDnet convention: 255 foreground, 0 background,
anything else (shadow 50, outside-ROI 85, unknown 170) excluded from scoring
unless an explicit ignore set says otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionMismatchError(ValueError):
    """Mask and ground truth shapes differ."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp,
            self.tn + other.tn, self.fn + other.fn,
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class Score:
    precision: float
    recall: float
    fscore: float


def _split_labels(gt: np.ndarray, ignore):
    """Boolean (positive, negative, ignored) planes for a ground-truth image.

    ignore=None ignores every label outside {0, 255}; an explicit set ignores
    exactly those labels (e.g. {85, 170} makes shadow 50 count as background).
    """
    positive = gt == 255
    if ignore is None:
        ignored = ~positive & (gt != 0)
    else:
        ignored = np.isin(gt, list(ignore)) & ~positive
    negative = ~positive & ~ignored
    return positive, negative, ignored


def confusion(mask: np.ndarray, gt: np.ndarray, ignore=None) -> ConfusionCounts:
    """Count TP/FP/TN/FN of a binary mask (1 = foreground) against gt labels."""
    mask = np.asarray(mask)
    gt = np.asarray(gt)
    if mask.shape != gt.shape:
        raise DimensionMismatchError(f"mask {mask.shape} vs gt {gt.shape}")
    fg = mask != 0
    positive, negative, _ = _split_labels(gt, ignore)
    return ConfusionCounts(
        tp=int(np.count_nonzero(fg & positive)),
        fp=int(np.count_nonzero(fg & negative)),
        tn=int(np.count_nonzero(~fg & negative)),
        fn=int(np.count_nonzero(~fg & positive)),
    )


def f_measure(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def score(c: ConfusionCounts) -> Score:
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    return Score(precision, recall, f_measure(precision, recall))


def fitness(s: Score) -> float:
    """Search loss: 1 - F, in [0, 1], 0 only for a perfect mask."""
    return 1.0 - s.fscore


DIFF_COLORS = {
    "tp": (255, 255, 255),
    "tn": (0, 0, 0),
    "fp": (255, 0, 0),
    "fn": (0, 255, 0),
    "ignored": (128, 128, 128),
}


def render_diff(mask: np.ndarray, gt: np.ndarray, ignore=None) -> np.ndarray:
    """Color-coded comparison image: TP white, TN black, FP red, FN green, ignored gray."""
    mask = np.asarray(mask)
    gt = np.asarray(gt)
    if mask.shape != gt.shape:
        raise DimensionMismatchError(f"mask {mask.shape} vs gt {gt.shape}")
    fg = mask != 0
    positive, negative, ignored = _split_labels(gt, ignore)
    out = np.zeros(mask.shape + (3,), dtype=np.uint8)
    out[fg & positive] = DIFF_COLORS["tp"]
    out[~fg & negative] = DIFF_COLORS["tn"]
    out[fg & negative] = DIFF_COLORS["fp"]
    out[~fg & positive] = DIFF_COLORS["fn"]
    out[ignored] = DIFF_COLORS["ignored"]
    return out
