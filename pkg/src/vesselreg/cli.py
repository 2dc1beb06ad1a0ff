"""Command-line entry point: ``vesselreg <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


from . import io as rio
from .core import InvalidArgument, RoiBox
from .evaluate import UndefinedSimilarity, evaluate_chain
from .mumford_shah import MsConfig
from .phantom import InvalidSpec, PhantomSpec, generate
from .pipeline import (DEFAULT_CONFIG, compose_with_global, load_config, load_segmentation,
                       read_global_transforms, run_pipeline, stage_align_global,
                       stage_preprocess, stage_register, stage_segment, write_json)
from .preprocess import BlankSlide, PreprocessConfig
from .roi_register import RegistrationChain
from .sift import SiftConfig, detect_and_describe, match_features

log = logging.getLogger("vesselreg")

EXIT_INPUT = 3
EXIT_BLANK = 4
EXIT_ARGUMENT = 5


def _sift_cfg(args) -> SiftConfig:
    return SiftConfig(layers_per_octave=args.layers, beta=args.beta, max_matches=args.top_matches)


def cmd_preprocess(args) -> None:
    paths, images = rio.read_stack(args.input)
    stage_preprocess(paths, images, args.out, PreprocessConfig(args.sigma, args.morph_radius),
                     args.threads)


def cmd_segment(args) -> None:
    paths, images = rio.read_stack(args.input)
    cfg = MsConfig(phases=args.phases, lam=args.lam, sweeps=args.sweeps, seed=args.seed)
    stage_segment(paths, images, args.out, cfg, args.threads)


def cmd_align_global(args) -> None:
    paths, images = rio.read_stack(args.input)
    labs = load_segmentation(args.ms, paths)
    grid_args = {"theta_max_deg": args.theta_max, "theta_step_deg": args.theta_step,
                 "refine_factor": args.refine_factor}
    stage_align_global(paths, images, labs, args.out, grid_args, args.level)


def cmd_register(args) -> None:
    paths, images = rio.read_stack(args.input)
    chain, _ = stage_register(paths, images, RoiBox.parse(args.roi), args.levels,
                              _sift_cfg(args), args.out)
    if args.global_transforms is not None:
        chain = compose_with_global(chain, read_global_transforms(args.global_transforms))
    write_json(args.report, chain.to_json())


def cmd_evaluate(args) -> None:
    mask_paths = rio.list_slices(args.masks)
    masks = [rio.read_mask(p) for p in mask_paths]
    rio.check_uniform(mask_paths, [m.shape for m in masks])
    chain = RegistrationChain.from_json(json.loads(Path(args.chain).read_text()))
    report = evaluate_chain(masks, chain, args.window)
    write_json(args.out, report.to_json())
    print(f"mean similarity {report.mean:.4f} +- {report.std:.4f} over {len(report.pairs)} pairs")


def cmd_phantom(args) -> None:
    data = json.loads(Path(args.spec).read_text()) if args.spec else {}
    spec = PhantomSpec.from_dict(data)
    ph = generate(spec)
    out = Path(args.out)
    (out / "slices").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    width = len(str(spec.slices - 1))
    for i, (img, mask) in enumerate(zip(ph.slices, ph.lumen_masks)):
        rio.write_rgb(out / "slices" / f"slice_{i:0{max(width, 3)}d}.png", img)
        rio.write_mask(out / "masks" / f"mask_{i:0{max(width, 3)}d}.png", mask)
    roi = ph.roi()
    write_json(out / "truth.json", {
        "spec": spec.to_dict(),
        "truth": [t.as_dict() for t in ph.truth],
        "roi": roi.as_list(),
        "distractor_rois": [ph.distractor_roi(k).as_list()
                            for k in range(len(ph.distractor_centers))],
    })
    print(f"roi {','.join(f'{v:.1f}' for v in roi.as_list())}")


def cmd_run(args) -> None:
    overrides = {
        "pipeline.input": args.input, "pipeline.output": args.out, "pipeline.roi": args.roi,
        "pipeline.masks": args.masks, "pipeline.seed": args.seed,
        "pipeline.threads": args.threads, "register.levels": args.levels,
    }
    cfg = load_config(args.config, overrides)
    manifest = run_pipeline(cfg, resume=args.resume)
    if manifest["mean_similarity"] is not None:
        print(f"mean similarity {manifest['mean_similarity']:.4f}")
    if manifest["fallback_pairs"]:
        print(f"fallback pairs: {manifest['fallback_pairs']}")


def cmd_sift_inspect(args) -> None:
    roi = RoiBox.parse(args.roi)
    cfg = _sift_cfg(args)
    a = detect_and_describe(rio.read_gray(args.img), roi, cfg)
    out = {"roi": roi.as_list(), "keypoints": [_kp_json(f) for f in a]}
    if args.img2:
        b = detect_and_describe(rio.read_gray(args.img2), roi, cfg)
        out["keypoints2"] = [_kp_json(f) for f in b]
        out["matches"] = [{"a": m.index_a, "b": m.index_b, "distance": m.distance}
                          for m in match_features(a, b, cfg)]
    write_json(args.out, out)


def _kp_json(f) -> dict:
    k = f.keypoint
    return {"x": k.x, "y": k.y, "scale": k.scale, "orientation": k.orientation,
            "response": k.response}


def cmd_config(args) -> None:
    sys.stdout.write(DEFAULT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vesselreg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def sift_flags(p):
        p.add_argument("--layers", type=int, default=10, help="SIFT layers per octave")
        p.add_argument("--beta", type=float, default=0.5, help="spatial descriptor weight")
        p.add_argument("--top-matches", type=int, default=8)

    p = sub.add_parser("preprocess", help="remove debris outside the tissue hull")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--sigma", type=float, default=10.0)
    p.add_argument("--morph-radius", type=int, default=20)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("segment", help="piecewise-constant Mumford-Shah segmentation")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--phases", type=int, default=4)
    p.add_argument("--lambda", dest="lam", type=float, default=500.0)
    p.add_argument("--sweeps", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("align-global", help="whole-tissue rigid alignment")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--ms", type=Path, required=True, help="output directory of 'segment'")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--theta-max", type=float, default=30.0, help="degrees")
    p.add_argument("--theta-step", type=float, default=3.0, help="degrees")
    p.add_argument("--refine-factor", type=int, default=6)
    p.add_argument("--level", type=int, default=2)
    p.set_defaults(func=cmd_align_global)

    p = sub.add_parser("register", help="multi-resolution ROI registration")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--roi", required=True, help="cx,cy,w,h at full resolution")
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--out", type=Path)
    p.add_argument("--report", type=Path, required=True)
    p.add_argument("--global-transforms", type=Path,
                   help="transforms.json from align-global; the chain then maps raw slices")
    sift_flags(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("evaluate", help="lumen-mask similarity after registration")
    p.add_argument("--masks", type=Path, required=True)
    p.add_argument("--chain", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--window", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("phantom", help="generate a synthetic stack with ground truth")
    p.add_argument("--spec", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("run", help="full pipeline")
    p.add_argument("--config", type=Path)
    p.add_argument("--in", dest="input")
    p.add_argument("--roi")
    p.add_argument("--out")
    p.add_argument("--masks")
    p.add_argument("--seed", type=int)
    p.add_argument("--levels", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sift-inspect", help="dump keypoints and matches for an ROI")
    p.add_argument("--img", type=Path, required=True)
    p.add_argument("--img2", type=Path)
    p.add_argument("--roi", required=True)
    p.add_argument("--out", type=Path, required=True)
    sift_flags(p)
    p.set_defaults(func=cmd_sift_inspect)

    p = sub.add_parser("config", help="print the default configuration file")
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (rio.RasterError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except BlankSlide as exc:
        print(f"blank slide: {exc}", file=sys.stderr)
        return EXIT_BLANK
    except (InvalidArgument, InvalidSpec, UndefinedSimilarity, ValueError) as exc:
        print(f"invalid argument: {exc}", file=sys.stderr)
        return EXIT_ARGUMENT
    return 0


if __name__ == "__main__":
    sys.exit(main())
