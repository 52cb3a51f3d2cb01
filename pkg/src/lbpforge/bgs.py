"""Texture background-subtraction model.

Each pixel carries K weighted code histograms.  A new frame's per-pixel
region histogram is matched against the pixel's model by histogram
intersection; the pixel is background iff it matches one of the
highest-weight ("background") histograms, and the model is then updated:
the best-matching histogram is blended in on a match, otherwise the
lowest-weight histogram is replaced.  Classification always happens on the
pre-update model.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .lbp import LbpDescriptor, lbp_image, region_histograms_all


class BinMismatchError(ValueError):
    """Histogram operands have different bin counts."""


class DimensionMismatchError(ValueError):
    """Frame size does not match the model grid."""


@dataclass(frozen=True)
class BgsParams:
    k: int = 3
    t_p: float = 0.65
    t_b: float = 0.8
    alpha_b: float = 0.01
    alpha_w: float = 0.01
    initial_weight: float = 0.01
    region_radius: int = 4

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("K must be >= 1")
        for name in ("t_p", "t_b", "alpha_b", "alpha_w", "initial_weight"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.region_radius < 0:
            raise ValueError("region_radius must be >= 0")


@dataclass
class PixelModel:
    """One pixel's model: histograms (K, bins) and weights (K,), both normalized."""

    histograms: np.ndarray
    weights: np.ndarray

    @classmethod
    def empty(cls, k: int, n_bins: int) -> "PixelModel":
        return cls(np.zeros((k, n_bins)), np.zeros(k))

    def copy(self) -> "PixelModel":
        return PixelModel(self.histograms.copy(), self.weights.copy())


def histogram_intersection(h1: np.ndarray, h2: np.ndarray) -> float:
    """Proximity of two normalized histograms: sum of bin-wise minima, in [0, 1]."""
    h1 = np.asarray(h1)
    h2 = np.asarray(h2)
    if h1.shape != h2.shape:
        raise BinMismatchError(f"{h1.shape} vs {h2.shape}")
    return float(np.minimum(h1, h2).sum())


def select_background(pm: PixelModel, t_b: float) -> list[int]:
    """Indices of the background histograms.

    Histograms are ranked by weight descending (ties: lower index first); the
    shortest prefix whose cumulative weight exceeds t_b is selected, always at
    least one.
    """
    order = np.argsort(-pm.weights, kind="stable")
    cum = np.cumsum(pm.weights[order])
    above = np.nonzero(cum > t_b)[0]
    n = int(above[0]) + 1 if above.size else len(order)
    return [int(i) for i in order[:max(n, 1)]]


def classify_pixel(pm: PixelModel, h: np.ndarray, params: BgsParams) -> bool:
    """True iff the pixel is foreground under the current (pre-update) model."""
    for b in select_background(pm, params.t_b):
        if histogram_intersection(h, pm.histograms[b]) >= params.t_p:
            return False
    return True


def update_pixel(pm: PixelModel, h: np.ndarray, params: BgsParams) -> PixelModel:
    """Model update for one observed histogram; returns the updated model."""
    h = np.asarray(h, dtype=np.float64)
    out = pm.copy()
    prox = np.minimum(out.histograms, h[None, :]).sum(axis=1)
    best = int(prox.argmax())
    if prox[best] < params.t_p:
        slot = int(out.weights.argmin())
        out.histograms[slot] = h
        out.weights[slot] = params.initial_weight
    else:
        blended = params.alpha_b * h + (1.0 - params.alpha_b) * out.histograms[best]
        out.histograms[best] = blended / blended.sum()
        out.weights *= 1.0 - params.alpha_w
        out.weights[best] += params.alpha_w
    out.weights /= out.weights.sum()
    return out


@dataclass
class BackgroundModel:
    """Grid of pixel models over the code-map (interior) region of a scene."""

    descriptor: LbpDescriptor
    params: BgsParams
    grid_shape: tuple[int, int]
    histograms: np.ndarray = field(init=False)
    weights: np.ndarray = field(init=False)
    frame_count: int = field(init=False, default=0)

    def __post_init__(self):
        h, w = self.grid_shape
        k = self.params.k
        self.histograms = np.zeros((h, w, k, self.descriptor.code_count))
        self.weights = np.zeros((h, w, k))

    @classmethod
    def for_frame_shape(cls, descriptor: LbpDescriptor, params: BgsParams,
                        frame_shape: tuple[int, int]) -> "BackgroundModel":
        m = descriptor.neighborhood.margin
        h, w = frame_shape
        return cls(descriptor, params, (h - 2 * m, w - 2 * m))

    def pixel_model(self, y: int, x: int) -> PixelModel:
        return PixelModel(self.histograms[y, x].copy(), self.weights[y, x].copy())

    def observed_histograms(self, frame: np.ndarray) -> np.ndarray:
        codes = lbp_image(self.descriptor, frame)
        if codes.shape != self.grid_shape:
            raise DimensionMismatchError(
                f"frame maps to {codes.shape}, model grid is {self.grid_shape}"
            )
        return region_histograms_all(
            codes, self.params.region_radius, self.descriptor.code_count
        )

    def process_frame(self, frame: np.ndarray) -> np.ndarray:
        """Classify then update every pixel; returns the binary foreground mask."""
        obs = self.observed_histograms(frame)
        p = self.params
        if self.frame_count == 0:
            self.histograms[:, :, 0] = obs
            self.weights[:, :, 0] = 1.0
            self.frame_count = 1
            return np.zeros(self.grid_shape, dtype=np.uint8)

        prox = np.minimum(self.histograms, obs[:, :, None, :]).sum(axis=-1)

        # background set: weight-descending prefix with cumulative weight > T_B
        order = np.argsort(-self.weights, axis=-1, kind="stable")
        cum = np.take_along_axis(self.weights, order, axis=-1).cumsum(axis=-1)
        n_bg = np.maximum((cum > p.t_b).argmax(axis=-1) + 1, 1)
        ranks = np.empty_like(order)
        np.put_along_axis(
            ranks, order, np.broadcast_to(np.arange(p.k), order.shape).copy(), axis=-1
        )
        in_bg = ranks < n_bg[:, :, None]
        mask = ~np.any(in_bg & (prox >= p.t_p), axis=-1)

        # update (classification above used the pre-update state)
        best = prox.argmax(axis=-1)
        best_prox = np.take_along_axis(prox, best[:, :, None], axis=-1)[:, :, 0]
        matched = best_prox >= p.t_p

        my, mx = np.nonzero(matched)
        if my.size:
            bk = best[my, mx]
            blended = (p.alpha_b * obs[my, mx]
                       + (1.0 - p.alpha_b) * self.histograms[my, mx, bk])
            self.histograms[my, mx, bk] = blended / blended.sum(axis=-1, keepdims=True)
            w = self.weights[my, mx]
            w *= 1.0 - p.alpha_w
            w[np.arange(bk.size), bk] += p.alpha_w
            self.weights[my, mx] = w / w.sum(axis=-1, keepdims=True)

        uy, ux = np.nonzero(~matched)
        if uy.size:
            slot = self.weights[uy, ux].argmin(axis=-1)
            self.histograms[uy, ux, slot] = obs[uy, ux]
            w = self.weights[uy, ux]
            w[np.arange(slot.size), slot] = p.initial_weight
            self.weights[uy, ux] = w / w.sum(axis=-1, keepdims=True)

        self.frame_count += 1
        return mask.astype(np.uint8)


def process_frame_reference(model: BackgroundModel, frame: np.ndarray) -> np.ndarray:
    """Slow per-pixel path used to pin down the vectorized implementation."""
    obs = model.observed_histograms(frame)
    h, w = model.grid_shape
    mask = np.zeros((h, w), dtype=np.uint8)
    if model.frame_count == 0:
        model.histograms[:, :, 0] = obs
        model.weights[:, :, 0] = 1.0
        model.frame_count = 1
        return mask
    for y in range(h):
        for x in range(w):
            pm = PixelModel(model.histograms[y, x], model.weights[y, x])
            mask[y, x] = classify_pixel(pm, obs[y, x], model.params)
            updated = update_pixel(pm, obs[y, x], model.params)
            model.histograms[y, x] = updated.histograms
            model.weights[y, x] = updated.weights
    model.frame_count += 1
    return mask
