"""Synthetic scene generation for tests, demos, and the acceptance suite.

Scenes are a static textured background with an optional rigid textured
square translating across it.  Ground truth is known by construction: the
square footprint is foreground (255) and a thin ring around it is marked
unknown (170), mirroring the boundary-uncertainty convention of real
change-detection ground truth, since codes within the neighborhood radius
plus histogram window of the object boundary are genuinely mixed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .imgio import write_gray

UNKNOWN_LABEL = 170


@dataclass(frozen=True)
class SyntheticSceneSpec:
    height: int = 64
    width: int = 64
    n_frames: int = 60
    square: int | None = 16
    speed: int = 2
    seed: int = 0
    flat_level: float | None = None   # None: random texture background
    noise: float = 0.0                # per-frame uniform noise amplitude
    ignore_ring: int = 2


def _bounce(pos: int, lo: int, hi: int) -> int:
    span = hi - lo
    if span <= 0:
        return lo
    q = (pos - lo) % (2 * span)
    return lo + (q if q <= span else 2 * span - q)


def synthetic_scene(spec: SyntheticSceneSpec = SyntheticSceneSpec()):
    """Returns (frames, gts): float gray frames and uint8 ground-truth labels."""
    rng = np.random.default_rng(spec.seed)
    if spec.flat_level is None:
        background = rng.integers(0, 256, (spec.height, spec.width)).astype(np.float64)
    else:
        background = np.full((spec.height, spec.width), float(spec.flat_level))
    frames = []
    gts = []
    s = spec.square
    texture = rng.integers(0, 256, (s, s)).astype(np.float64) if s else None
    margin = 2
    for t in range(spec.n_frames):
        frame = background.copy()
        gt = np.zeros((spec.height, spec.width), dtype=np.uint8)
        if s:
            x = _bounce(margin + spec.speed * t, margin, spec.width - s - margin)
            y = _bounce(margin + (spec.speed * t) // 2, margin, spec.height - s - margin)
            frame[y:y + s, x:x + s] = texture
            gt[y:y + s, x:x + s] = 255
            if spec.ignore_ring > 0:
                r = spec.ignore_ring
                y0, y1 = max(y - r, 0), min(y + s + r, spec.height)
                x0, x1 = max(x - r, 0), min(x + s + r, spec.width)
                ring = np.zeros_like(gt, dtype=bool)
                ring[y0:y1, x0:x1] = True
                ring[y:y + s, x:x + s] = False
                gt[ring] = UNKNOWN_LABEL
        if spec.noise > 0:
            frame = frame + rng.uniform(-spec.noise, spec.noise, frame.shape)
        frames.append(np.clip(frame, 0.0, 255.0))
        gts.append(gt)
    return frames, gts


def write_cdnet_scene(root, frames, gts, first_eval_frame: int | None = None) -> str:
    """Write a scene in the on-disk layout the pipeline ingests.

    Creates <root>/input/in%06d.png and <root>/groundtruth/gt%06d.png, plus
    temporalROI.txt when an evaluated-range start is given.  Returns root.
    """
    root = str(root)
    input_dir = os.path.join(root, "input")
    gt_dir = os.path.join(root, "groundtruth")
    os.makedirs(input_dir, exist_ok=True)
    os.makedirs(gt_dir, exist_ok=True)
    for i, (frame, gt) in enumerate(zip(frames, gts), start=1):
        write_gray(os.path.join(input_dir, f"in{i:06d}.png"), frame)
        write_gray(os.path.join(gt_dir, f"gt{i:06d}.png"), gt)
    if first_eval_frame is not None:
        with open(os.path.join(root, "temporalROI.txt"), "w") as fh:
            fh.write(f"{first_eval_frame} {len(frames)}\n")
    return root
