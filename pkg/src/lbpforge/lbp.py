"""Texture operators built from equations.

A descriptor binds an equation to a circular neighborhood and turns gray
images into integer code maps: code = sum_p s(eq(g_p, g_c, a)) * 2^p with
s(x) = 1 iff x >= 0.  The center-symmetric variant (cs_lbp) instead
thresholds opposite-neighbor differences and yields 2^(P/2) codes.

Conventions (fixed so oracle tests are reproducible):
  - neighbor p sits at (x_c + R*cos(2*pi*p/P), y_c - R*sin(2*pi*p/P)),
    i.e. p=0 east, counterclockwise with y pointing down;
  - codes are only defined for centers at least ceil(R) away from every
    border; code maps cover that interior region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .expr import Expression, evaluate, parse

SAMPLING_MODES = ("bilinear", "nearest")


class OutOfBoundsError(ValueError):
    """Center pixel too close to the image border for the neighborhood radius."""


class ImageTooSmallError(ValueError):
    """Image cannot host a single interior LBP center."""


class EmptyRegionError(ValueError):
    """Requested histogram region does not intersect the code map."""


@dataclass(frozen=True)
class NeighborhoodSpec:
    p: int = 8
    r: float = 1.0
    sampling: str = "bilinear"

    def __post_init__(self):
        if self.p < 2:
            raise ValueError("neighbor count P must be >= 2")
        if self.r <= 0:
            raise ValueError("radius R must be > 0")
        if self.sampling not in SAMPLING_MODES:
            raise ValueError(f"sampling must be one of {SAMPLING_MODES}")

    @property
    def margin(self) -> int:
        return math.ceil(self.r)


@dataclass(frozen=True)
class LbpDescriptor:
    """An equation plus neighborhood geometry; the unit the search evaluates."""

    expression: Expression
    a: float = 0.0
    neighborhood: NeighborhoodSpec = field(default_factory=NeighborhoodSpec)
    variant: str = "generalized"
    cs_threshold: float = 0.01

    def __post_init__(self):
        if self.variant not in ("generalized", "cs_lbp"):
            raise ValueError("variant must be 'generalized' or 'cs_lbp'")
        if self.variant == "cs_lbp" and self.neighborhood.p % 2 != 0:
            raise ValueError("cs_lbp requires an even neighbor count P")

    @property
    def code_count(self) -> int:
        p = self.neighborhood.p
        return 2 ** (p // 2) if self.variant == "cs_lbp" else 2**p


def original_lbp(neighborhood: NeighborhoodSpec | None = None) -> LbpDescriptor:
    """Classic descriptor: threshold g_p - g_c."""
    return LbpDescriptor(parse("g_p - g_c"), a=0.0,
                         neighborhood=neighborhood or NeighborhoodSpec())


def modified_lbp(a: float, neighborhood: NeighborhoodSpec | None = None) -> LbpDescriptor:
    """Offset variant: threshold (g_p - g_c) + a, robust on flat regions."""
    return LbpDescriptor(parse("(g_p - g_c) + a"), a=a,
                         neighborhood=neighborhood or NeighborhoodSpec())


def cs_lbp(threshold: float = 0.01,
           neighborhood: NeighborhoodSpec | None = None) -> LbpDescriptor:
    """Center-symmetric variant comparing opposite neighbors; 2^(P/2) codes."""
    return LbpDescriptor(parse("g_p - g_c"), a=0.0,
                         neighborhood=neighborhood or NeighborhoodSpec(),
                         variant="cs_lbp", cs_threshold=threshold)


def _offsets(spec: NeighborhoodSpec) -> list[tuple[float, float]]:
    """(dy, dx) for each neighbor; values within 1e-9 of an integer are snapped
    so trig noise cannot shift floor/round decisions."""
    out = []
    for p in range(spec.p):
        angle = 2.0 * math.pi * p / spec.p
        dx = spec.r * math.cos(angle)
        dy = -spec.r * math.sin(angle)
        if abs(dx - round(dx)) < 1e-9:
            dx = float(round(dx))
        if abs(dy - round(dy)) < 1e-9:
            dy = float(round(dy))
        out.append((dy, dx))
    return out


def sample_neighbors(img: np.ndarray, x_c: int, y_c: int,
                     spec: NeighborhoodSpec) -> np.ndarray:
    """Gray values of the P circle neighbors of (x_c, y_c)."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    m = spec.margin
    if not (m <= x_c <= w - 1 - m and m <= y_c <= h - 1 - m):
        raise OutOfBoundsError(
            f"center ({x_c},{y_c}) closer than ceil(R)={m} to the border of {w}x{h}"
        )
    vals = np.empty(spec.p, dtype=np.float64)
    for p, (dy, dx) in enumerate(_offsets(spec)):
        y = y_c + dy
        x = x_c + dx
        if spec.sampling == "nearest":
            vals[p] = img[int(round(y)), int(round(x))]
        else:
            y0 = math.floor(y)
            x0 = math.floor(x)
            fy = y - y0
            fx = x - x0
            y1 = y0 + 1 if fy > 0 else y0
            x1 = x0 + 1 if fx > 0 else x0
            top = img[y0, x0] + fx * (img[y0, x1] - img[y0, x0])
            bot = img[y1, x0] + fx * (img[y1, x1] - img[y1, x0])
            vals[p] = top + fy * (bot - top)
    return vals


def lbp_code(d: LbpDescriptor, img: np.ndarray, x_c: int, y_c: int) -> int:
    """Texture code of a single pixel."""
    samples = sample_neighbors(img, x_c, y_c, d.neighborhood)
    center = float(np.asarray(img, dtype=np.float64)[y_c, x_c])
    if d.variant == "cs_lbp":
        half = d.neighborhood.p // 2
        diffs = (samples[:half] - samples[half:]) / 255.0
        bits = diffs > d.cs_threshold
    else:
        vals = evaluate(d.expression, samples, center, d.a)
        bits = np.asarray(vals) >= 0
    return int(np.sum(bits.astype(np.int64) << np.arange(len(bits))))


def _neighbor_planes(img: np.ndarray, spec: NeighborhoodSpec) -> tuple[np.ndarray, np.ndarray]:
    """Stacked neighbor images over the interior region.

    Returns (planes, center) where planes has shape (P, H-2m, W-2m) and
    center is the interior view of the image itself.
    """
    h, w = img.shape
    m = spec.margin
    oh, ow = h - 2 * m, w - 2 * m
    planes = np.empty((spec.p, oh, ow), dtype=np.float64)
    for p, (dy, dx) in enumerate(_offsets(spec)):
        if spec.sampling == "nearest":
            iy = int(round(dy))
            ix = int(round(dx))
            planes[p] = img[m + iy:m + iy + oh, m + ix:m + ix + ow]
        else:
            iy0 = math.floor(dy)
            ix0 = math.floor(dx)
            fy = dy - iy0
            fx = dx - ix0
            iy1 = iy0 + 1 if fy > 0 else iy0
            ix1 = ix0 + 1 if fx > 0 else ix0

            def view(oy, ox):
                return img[m + oy:m + oy + oh, m + ox:m + ox + ow]

            top = view(iy0, ix0) + fx * (view(iy0, ix1) - view(iy0, ix0))
            bot = view(iy1, ix0) + fx * (view(iy1, ix1) - view(iy1, ix0))
            planes[p] = top + fy * (bot - top)
    center = img[m:m + oh, m:m + ow]
    return planes, center


def lbp_image(d: LbpDescriptor, img: np.ndarray) -> np.ndarray:
    """Code map over the interior region (border of width ceil(R) excluded)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("expected a single-channel image")
    h, w = img.shape
    m = d.neighborhood.margin
    if h < 2 * m + 1 or w < 2 * m + 1:
        raise ImageTooSmallError(f"{w}x{h} image cannot host radius {d.neighborhood.r}")
    planes, center = _neighbor_planes(img, d.neighborhood)
    if d.variant == "cs_lbp":
        half = d.neighborhood.p // 2
        diffs = (planes[:half] - planes[half:]) / 255.0
        bits = diffs > d.cs_threshold
    else:
        vals = evaluate(d.expression, planes, center[None, :, :], d.a)
        bits = vals >= 0
    weights = (1 << np.arange(bits.shape[0], dtype=np.int64))[:, None, None]
    return (bits.astype(np.int64) * weights).sum(axis=0).astype(np.int32)


def region_histogram(codes: np.ndarray, center: tuple[int, int],
                     region_radius: int, n_bins: int) -> np.ndarray:
    """Normalized histogram of the (2r+1)^2 window around ``center``, clipped to the map."""
    cy, cx = center
    h, w = codes.shape
    y0 = max(cy - region_radius, 0)
    y1 = min(cy + region_radius + 1, h)
    x0 = max(cx - region_radius, 0)
    x1 = min(cx + region_radius + 1, w)
    if y0 >= y1 or x0 >= x1:
        raise EmptyRegionError(f"region around {center} misses the {w}x{h} code map")
    region = codes[y0:y1, x0:x1]
    counts = np.bincount(region.ravel(), minlength=n_bins).astype(np.float64)
    return counts / counts.sum()


def region_histograms_all(codes: np.ndarray, region_radius: int, n_bins: int,
                          bin_chunk: int = 64) -> np.ndarray:
    """Normalized region histogram of every pixel at once; shape (H, W, n_bins).

    Windows near the map edge are clipped, matching region_histogram.  Uses
    per-bin integral images, chunked to bound peak memory.
    """
    h, w = codes.shape
    r = region_radius
    y = np.arange(h)
    x = np.arange(w)
    ylo = np.clip(y - r, 0, h)
    yhi = np.clip(y + r + 1, 0, h)
    xlo = np.clip(x - r, 0, w)
    xhi = np.clip(x + r + 1, 0, w)
    area = (yhi - ylo)[:, None] * (xhi - xlo)[None, :]

    out = np.empty((h, w, n_bins), dtype=np.float64)
    for b0 in range(0, n_bins, bin_chunk):
        b1 = min(b0 + bin_chunk, n_bins)
        one_hot = codes[:, :, None] == np.arange(b0, b1)[None, None, :]
        ii = np.zeros((h + 1, w + 1, b1 - b0), dtype=np.float64)
        ii[1:, 1:, :] = one_hot.cumsum(axis=0, dtype=np.float64).cumsum(axis=1)
        counts = (ii[yhi[:, None], xhi[None, :]]
                  - ii[ylo[:, None], xhi[None, :]]
                  - ii[yhi[:, None], xlo[None, :]]
                  + ii[ylo[:, None], xlo[None, :]])
        out[:, :, b0:b1] = counts
    out /= area[:, :, None]
    return out
