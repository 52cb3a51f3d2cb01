"""Command-line pipeline: dataset ingestion, segmentation runs, reports.

Scene directories follow the change-detection layout::

    <scene>/input/*.png|jpg|pgm      gray or color frames
    <scene>/groundtruth/*.png        labels: 0 bg, 255 fg, other = auxiliary
    <scene>/temporalROI.txt          optional "first last" evaluated range

Subcommands: parse, mutate, sample, segment, evaluate, discover.
Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from .bgs import BackgroundModel, BgsParams
from .expr import (
    EquationSyntaxError,
    ExhaustionError,
    GrammarSamplerConfig,
    enumerate_mutations,
    grammar_sample,
    parse as parse_equation,
    render,
)
from .imgio import (
    FRAME_EXTENSIONS,
    DecodeError,
    downscale_box2,
    downscale_nearest,
    read_gray,
    write_gray,
    write_rgb,
)
from .lbp import LbpDescriptor, NeighborhoodSpec, cs_lbp, modified_lbp, original_lbp
from .metrics import ConfusionCounts, confusion, render_diff, score
from .search import (
    SceneEvaluation,
    SearchConfig,
    discover,
    resolve_workers,
)


class MissingFrameError(FileNotFoundError):
    pass


class PairMismatchError(ValueError):
    pass


DATA_ERRORS = (
    MissingFrameError,
    PairMismatchError,
    DecodeError,
    EquationSyntaxError,
    ExhaustionError,
    OSError,
    ValueError,
)


# ---------------------------------------------------------------------------
# Dataset loading
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SceneDataset:
    name: str
    input_dir: str
    gt_dir: str
    first: int  # 1-based, inclusive
    last: int
    downscale: bool


def _listing(directory: str) -> list[str]:
    if not os.path.isdir(directory):
        raise MissingFrameError(f"missing directory {directory}")
    names = sorted(
        f for f in os.listdir(directory)
        if os.path.splitext(f)[1].lower() in FRAME_EXTENSIONS
    )
    if not names:
        raise MissingFrameError(f"no frames found in {directory}")
    return [os.path.join(directory, f) for f in names]


def _temporal_roi(scene_dir: str):
    path = os.path.join(scene_dir, "temporalROI.txt")
    if not os.path.isfile(path):
        return None
    with open(path) as fh:
        parts = fh.read().split()
    if len(parts) < 2:
        raise PairMismatchError(f"temporalROI.txt in {scene_dir} needs two integers")
    return int(parts[0]), int(parts[1])


def load_scene(scene_dir: str, first: int | None = None, last: int | None = None,
               downscale: bool = False, use_temporal_roi: bool = True):
    """Load a scene directory into (SceneDataset, frames, gts).

    Frames are float gray images, ground truth stays uint8.  The frame range
    defaults to the temporal ROI file when present, else the whole sequence.
    """
    frame_paths = _listing(os.path.join(scene_dir, "input"))
    gt_paths = _listing(os.path.join(scene_dir, "groundtruth"))
    if len(frame_paths) != len(gt_paths):
        raise PairMismatchError(
            f"{len(frame_paths)} frames vs {len(gt_paths)} ground-truth images"
        )
    n = len(frame_paths)
    roi = _temporal_roi(scene_dir) if use_temporal_roi else None
    lo = first if first is not None else (roi[0] if roi else 1)
    hi = last if last is not None else (roi[1] if roi else n)
    if not 1 <= lo <= hi <= n:
        raise PairMismatchError(f"frame range [{lo}, {hi}] outside available 1..{n}")
    frames = []
    gts = []
    for fp, gp in zip(frame_paths[lo - 1:hi], gt_paths[lo - 1:hi]):
        frame = read_gray(fp)
        gt = read_gray(gp).astype(np.uint8)
        if downscale:
            frame = downscale_box2(frame)
            gt = downscale_nearest(gt)
        frames.append(frame)
        gts.append(gt)
    ds = SceneDataset(
        name=os.path.basename(os.path.normpath(scene_dir)),
        input_dir=os.path.join(scene_dir, "input"),
        gt_dir=os.path.join(scene_dir, "groundtruth"),
        first=lo, last=hi, downscale=downscale,
    )
    return ds, frames, gts


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def emit_report(rows: list[dict], out_dir: str, formats=("csv", "json")) -> list[str]:
    """Write Table-3-shaped report rows (scene, descriptor, P/R/F at 4 decimals)."""
    if not rows:
        raise ValueError("no results to report")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    fields = ["scene", "descriptor", "precision", "recall", "fscore"]
    if "csv" in formats:
        path = os.path.join(out_dir, "report.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(fields)
            for row in rows:
                writer.writerow([
                    row["scene"], row["descriptor"],
                    f"{row['precision']:.4f}", f"{row['recall']:.4f}",
                    f"{row['fscore']:.4f}",
                ])
        written.append(path)
    if "json" in formats:
        path = os.path.join(out_dir, "report.json")
        doc = [
            {
                "scene": row["scene"],
                "descriptor": row["descriptor"],
                "precision": round(row["precision"], 4),
                "recall": round(row["recall"], 4),
                "fscore": round(row["fscore"], 4),
            }
            for row in rows
        ]
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# Argument plumbing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _add_scene_args(p):
    p.add_argument("--scene", required=True, help="scene directory (change-detection layout)")
    p.add_argument("--first", type=int, default=None, help="first frame (1-based)")
    p.add_argument("--last", type=int, default=None, help="last frame (inclusive)")
    p.add_argument("--downscale", action="store_true", help="halve resolution before processing")
    p.add_argument("--no-temporal-roi", action="store_true",
                   help="ignore temporalROI.txt")
    p.add_argument("--burn-in", type=int, default=0,
                   help="frames processed but excluded from scoring")


def _add_bgs_args(p):
    p.add_argument("--histograms", type=int, default=3, metavar="K")
    p.add_argument("--tp", type=float, default=0.65, help="proximity threshold")
    p.add_argument("--tb", type=float, default=0.8, help="background weight threshold")
    p.add_argument("--alpha-b", type=float, default=0.01)
    p.add_argument("--alpha-w", type=float, default=0.01)
    p.add_argument("--initial-weight", type=float, default=0.01)
    p.add_argument("--region-radius", type=int, default=4)


def _add_neighborhood_args(p):
    p.add_argument("--neighbors", type=int, default=8, metavar="P")
    p.add_argument("--radius", type=float, default=1.0, metavar="R")
    p.add_argument("--sampling", choices=("bilinear", "nearest"), default="bilinear")


def _bgs_params(args) -> BgsParams:
    return BgsParams(
        k=args.histograms, t_p=args.tp, t_b=args.tb, alpha_b=args.alpha_b,
        alpha_w=args.alpha_w, initial_weight=args.initial_weight,
        region_radius=args.region_radius,
    )


def _neighborhood(args) -> NeighborhoodSpec:
    return NeighborhoodSpec(p=args.neighbors, r=args.radius, sampling=args.sampling)


def _all_dests(parser) -> set[str]:
    dests = set()
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                dests |= _all_dests(sub)
        elif action.dest != argparse.SUPPRESS:
            dests.add(action.dest)
    return dests


def _apply_config_defaults(parser, argv):
    """--config JSON supplies defaults; explicit CLI flags override them."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config", default=None)
    known, _ = probe.parse_known_args(argv)
    if known.config:
        with open(known.config) as fh:
            cfg = json.load(fh)
        unknown = set(cfg) - _all_dests(parser)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        parser.set_defaults(**cfg)


def _named_descriptors(args, neighborhood) -> list[tuple[str, LbpDescriptor]]:
    out = []
    for name in args.descriptor or []:
        if name == "original":
            out.append(("Original LBP", original_lbp(neighborhood)))
        elif name == "modified":
            out.append((f"Modified LBP (a={args.a:g})",
                        modified_lbp(args.a, neighborhood)))
        elif name == "cs":
            out.append((f"CS-LBP (T={args.cs_threshold:g})",
                        cs_lbp(args.cs_threshold, neighborhood)))
    if args.equation:
        e = parse_equation(args.equation)
        out.append((f"{render(e)} (a={args.a:g})",
                    LbpDescriptor(e, a=args.a, neighborhood=neighborhood)))
    if getattr(args, "corpus", None):
        for line in _read_corpus(args.corpus):
            e = parse_equation(line)
            out.append((f"{render(e)} (a={args.a:g})",
                        LbpDescriptor(e, a=args.a, neighborhood=neighborhood)))
    if not out:
        raise ValueError("no descriptor given: use --descriptor/--equation/--corpus")
    return out


def _read_corpus(path: str) -> list[str]:
    with open(path) as fh:
        return [line.strip() for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_parse(args) -> int:
    if args.equation is None and args.file is None:
        raise ValueError("give an equation or --file")
    if args.equation is not None:
        print(render(parse_equation(args.equation)))
        return 0
    lines = (sys.stdin.read().splitlines() if args.file == "-"
             else _read_corpus(args.file))
    failures = 0
    for line in lines:
        if not line.strip():
            continue
        try:
            print(f"ok\t{render(parse_equation(line))}")
        except EquationSyntaxError as exc:
            failures += 1
            print(f"error\t{exc.offset}\t{exc}")
    return 2 if failures else 0


def _cmd_mutate(args) -> int:
    for e in enumerate_mutations(parse_equation(args.equation), args.cap):
        print(render(e))
    return 0


def _cmd_sample(args) -> int:
    exclude = set()
    if args.exclude:
        exclude = {render(parse_equation(t)) for t in _read_corpus(args.exclude)}
    cfg = GrammarSamplerConfig(max_depth=args.max_depth, seed=args.seed,
                               count=args.count)
    lines = [render(e) for e in grammar_sample(cfg, exclude)]
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    else:
        for line in lines:
            print(line)
    return 0


def _scene_evaluation(args) -> tuple[SceneDataset, SceneEvaluation]:
    ds, frames, gts = load_scene(
        args.scene, first=args.first, last=args.last, downscale=args.downscale,
        use_temporal_roi=not args.no_temporal_roi,
    )
    scene = SceneEvaluation(
        frames, gts, bgs_params=_bgs_params(args),
        neighborhood=_neighborhood(args), burn_in=args.burn_in,
    )
    return ds, scene


def _cmd_segment(args) -> int:
    ds, scene = _scene_evaluation(args)
    named = _named_descriptors(args, scene.neighborhood)
    if len(named) != 1:
        raise ValueError("segment takes exactly one descriptor")
    name, descriptor = named[0]
    mask_dir = os.path.join(args.out, "masks")
    diff_dir = os.path.join(args.out, "diff")
    os.makedirs(mask_dir, exist_ok=True)
    os.makedirs(diff_dir, exist_ok=True)
    model = BackgroundModel.for_frame_shape(descriptor, scene.bgs_params,
                                            scene.frames[0].shape)
    m = descriptor.neighborhood.margin
    total = ConfusionCounts()
    for i, frame in enumerate(scene.frames):
        mask = model.process_frame(frame)
        gt = scene.gts[i][m:frame.shape[0] - m, m:frame.shape[1] - m]
        full = np.zeros(frame.shape, dtype=np.uint8)
        full[m:frame.shape[0] - m, m:frame.shape[1] - m] = mask * 255
        write_gray(os.path.join(mask_dir, f"mask{ds.first + i:06d}.png"), full)
        write_rgb(os.path.join(diff_dir, f"diff{ds.first + i:06d}.png"),
                  render_diff(mask, gt))
        if i >= args.burn_in:
            total = total + confusion(mask, gt)
    s = score(total)
    print(f"{ds.name} {name}: precision={s.precision:.4f} recall={s.recall:.4f} "
          f"fscore={s.fscore:.4f}")
    emit_report([{
        "scene": ds.name, "descriptor": name, "precision": s.precision,
        "recall": s.recall, "fscore": s.fscore,
    }], args.out)
    return 0


def _cmd_evaluate(args) -> int:
    ds, scene = _scene_evaluation(args)
    rows = []
    for name, descriptor in _named_descriptors(args, scene.neighborhood):
        s = scene.evaluate_descriptor(descriptor)
        rows.append({
            "scene": ds.name, "descriptor": name, "precision": s.precision,
            "recall": s.recall, "fscore": s.fscore,
        })
        print(f"{ds.name} {name}: precision={s.precision:.4f} "
              f"recall={s.recall:.4f} fscore={s.fscore:.4f}")
    emit_report(rows, args.out)
    return 0


def _cmd_discover(args) -> int:
    ds, scene = _scene_evaluation(args)
    equations = []
    rejected = 0
    for line in _read_corpus(args.corpus):
        try:
            equations.append(parse_equation(line))
        except EquationSyntaxError:
            rejected += 1
    if rejected:
        sys.stderr.write(
            f"lbpforge: skipped {rejected} unparseable corpus line(s)\n"
        )
    if not equations:
        raise ValueError(f"no valid equations in {args.corpus}")
    cfg = SearchConfig(
        mode=args.mode, mutation_cap=args.cap, a_budget=args.a_budget,
        candidate_budget=args.budget, seed=args.seed,
        workers=resolve_workers(args.workers),
        baseline_fitness=args.baseline_fitness,
    )
    started = time.monotonic()
    result = discover(equations, scene, cfg)
    elapsed = time.monotonic() - started
    os.makedirs(args.out, exist_ok=True)
    manifest = {
        "scene": ds.name,
        "seed": cfg.seed,
        "config": {
            "mode": cfg.mode,
            "mutation_cap": cfg.mutation_cap,
            "a_bounds": list(cfg.a_bounds),
            "a_budget": cfg.a_budget,
            "candidate_budget": cfg.candidate_budget,
            "baseline_fitness": cfg.baseline_fitness,
            "inject_baselines": cfg.inject_baselines,
            "burn_in": args.burn_in,
        },
        "bgs_passes": result.bgs_passes,
        "stopped_early": result.stopped_early,
        "best": result.best.to_row(),
        "candidates": [c.to_row() for c in result.ranked],
    }
    manifest_path = os.path.join(args.out, "manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    # wall times live outside the manifest so reruns stay byte-identical
    with open(os.path.join(args.out, "timings.json"), "w") as fh:
        json.dump({"total_seconds": elapsed, "bgs_passes": result.bgs_passes}, fh,
                  indent=2)
        fh.write("\n")
    best = result.best
    print(f"best equation: {best.equation} (a={best.a:.6g}, "
          f"fscore={best.score.fscore:.4f})")
    print(f"manifest: {manifest_path}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="lbpforge", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="validate/canonicalize equation text")
    p.add_argument("equation", nargs="?", default=None)
    p.add_argument("--file", default=None, help="newline-delimited equations ('-' = stdin)")
    p.set_defaults(fn=_cmd_parse)

    p = sub.add_parser("mutate", help="print operator mutations of an equation")
    p.add_argument("--equation", required=True)
    p.add_argument("--cap", type=int, default=1024)
    p.set_defaults(fn=_cmd_mutate)

    p = sub.add_parser("sample", help="sample equations from the grammar")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-depth", type=int, default=5)
    p.add_argument("--exclude", default=None, help="corpus file to exclude")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_sample)

    for cmd, fn in (("segment", _cmd_segment), ("evaluate", _cmd_evaluate)):
        p = sub.add_parser(cmd, help=f"{cmd} a scene with fixed descriptors")
        p.add_argument("--config", default=None, help="JSON file with flag defaults")
        _add_scene_args(p)
        _add_bgs_args(p)
        _add_neighborhood_args(p)
        p.add_argument("--descriptor", action="append",
                       choices=("original", "modified", "cs"),
                       help="named baseline descriptor (repeatable)")
        p.add_argument("--equation", default=None, help="equation text descriptor")
        p.add_argument("--a", type=float, default=0.0)
        p.add_argument("--cs-threshold", type=float, default=0.01)
        if cmd == "evaluate":
            p.add_argument("--corpus", default=None,
                           help="evaluate every equation in this file")
        p.add_argument("--out", default=".", help="output directory")
        p.set_defaults(fn=fn)

    p = sub.add_parser("discover", help="search equation mutations on a scene")
    p.add_argument("--config", default=None, help="JSON file with flag defaults")
    _add_scene_args(p)
    _add_bgs_args(p)
    _add_neighborhood_args(p)
    p.add_argument("--corpus", required=True, help="equation pool file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("exhaustive", "cmaes"), default="exhaustive")
    p.add_argument("--cap", type=int, default=1024, help="mutations per equation")
    p.add_argument("--a-budget", type=int, default=8)
    p.add_argument("--budget", type=int, default=None, help="global BGS pass cap")
    p.add_argument("--baseline-fitness", type=float, default=None,
                   help="stop once a candidate beats this fitness")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(fn=_cmd_discover)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_defaults(parser, argv)
        args = parser.parse_args(argv)
        return args.fn(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    except DATA_ERRORS as exc:
        sys.stderr.write(f"lbpforge: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
