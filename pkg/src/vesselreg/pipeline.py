"""End-to-end pipeline: clean -> segment -> whole-tissue align -> ROI register -> evaluate.

Every stage persists its output under the run directory so stages can be run
on their own or resumed from earlier results.
"""

from __future__ import annotations

import configparser
import json
import logging
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import io as rio
from .core import InvalidArgument, RigidTransform, RoiBox, compose, warp_image
from .evaluate import evaluate_chain
from .global_align import SearchGrid, align_whole_tissue
from .mumford_shah import LabelImage, MsConfig, mc_segment, render_ms
from .preprocess import BlankSlide, PreprocessConfig, clean_tissue
from .roi_register import RegistrationChain, register_stack
from .sift import SiftConfig

log = logging.getLogger(__name__)

DEFAULT_CONFIG = """\
# vesselreg pipeline configuration. Keys may be overridden by command-line flags.

[pipeline]
input =
masks =
output =
# cx,cy,width,height of the vessel box in slice 0, full-resolution pixels
roi =
seed = 0
threads = 1

[preprocess]
# Gaussian blur before mean thresholding (published setting: 10 px)
sigma = 10
# disk radius for closing then opening (published setting: 20 px)
morph_radius = 20
# contours scoring at least this fraction of the best contour are kept
keep_fraction = 0.25

[segment]
phases = 4
lambda = 500
sweeps = 20
t_start = 1000
t_end = 0.1
levels = 3

[align_global]
theta_max = 30
theta_step = 3
refine_factor = 6
# estimation runs on images downsampled by 2**level
level = 2

[register]
# coarsest pyramid level; four levels in total (published setting)
levels = 3
# SIFT layers per octave (published setting: 10)
layers_per_octave = 10
# at most this many matches feed the triple enumeration (published setting: 8)
top_matches = 8
# weight of the appended ROI-normalised keypoint coordinates; 0 disables
beta = 0.5
ratio = 0.75

[evaluate]
window = 1
"""


@dataclass
class PipelineConfig:
    input: Path
    output: Path
    roi: RoiBox
    masks: Path | None = None
    seed: int = 0
    threads: int = 1
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    segment: MsConfig = field(default_factory=MsConfig)
    theta_max_deg: float = 30.0
    theta_step_deg: float = 3.0
    refine_factor: int = 6
    global_level: int = 2
    register_levels: int = 3
    sift: SiftConfig = field(default_factory=SiftConfig)
    window: int = 1

    def to_json(self) -> dict:
        return {
            "input": str(self.input), "output": str(self.output),
            "masks": str(self.masks) if self.masks else None,
            "roi": self.roi.as_list(), "seed": self.seed, "threads": self.threads,
            "preprocess": asdict(self.preprocess), "segment": asdict(self.segment),
            "align_global": {"theta_max": self.theta_max_deg, "theta_step": self.theta_step_deg,
                             "refine_factor": self.refine_factor, "level": self.global_level},
            "register": {"levels": self.register_levels, "sift": asdict(self.sift)},
            "evaluate": {"window": self.window},
        }


def load_config(path: Path | None, overrides: dict | None = None) -> PipelineConfig:
    """Read an INI config (defaults filled from ``DEFAULT_CONFIG``) and apply overrides.

    ``overrides`` maps ``"section.key"`` to a string value.
    """
    cp = configparser.ConfigParser()
    cp.read_string(DEFAULT_CONFIG)
    if path is not None:
        if not Path(path).is_file():
            raise FileNotFoundError(f"config file {path} not found")
        cp.read(path)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        section, name = key.split(".", 1)
        cp.set(section, name, str(value))

    p = cp["pipeline"]
    missing = [k for k in ("input", "output", "roi") if not p.get(k)]
    if missing:
        raise InvalidArgument(f"config is missing required pipeline keys: {', '.join(missing)}")
    seed = p.getint("seed")
    s, g, r = cp["segment"], cp["align_global"], cp["register"]
    return PipelineConfig(
        input=Path(p["input"]),
        output=Path(p["output"]),
        roi=RoiBox.parse(p["roi"]),
        masks=Path(p["masks"]) if p.get("masks") else None,
        seed=seed,
        threads=max(1, p.getint("threads")),
        preprocess=PreprocessConfig(cp.getfloat("preprocess", "sigma"),
                                    cp.getint("preprocess", "morph_radius"),
                                    cp.getfloat("preprocess", "keep_fraction")),
        segment=MsConfig(s.getint("phases"), s.getfloat("lambda"), s.getint("sweeps"),
                         s.getfloat("t_start"), s.getfloat("t_end"), s.getint("levels"), seed),
        theta_max_deg=g.getfloat("theta_max"),
        theta_step_deg=g.getfloat("theta_step"),
        refine_factor=g.getint("refine_factor"),
        global_level=g.getint("level"),
        register_levels=r.getint("levels"),
        sift=SiftConfig(layers_per_octave=r.getint("layers_per_octave"),
                        max_matches=r.getint("top_matches"), beta=r.getfloat("beta"),
                        ratio=r.getfloat("ratio")),
        window=cp.getint("evaluate", "window"),
    )


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def transform_list_json(pairs: list[RigidTransform], cumulative: list[RigidTransform]) -> dict:
    return {
        "pairs": [{"pair": [i, i + 1], **t.as_dict()} for i, t in enumerate(pairs)],
        "cumulative": [{"index": i, **t.as_dict()} for i, t in enumerate(cumulative)],
    }


def compose_with_global(chain: RegistrationChain, global_cumulative: list[RigidTransform]
                        ) -> RegistrationChain:
    """Chain mapping raw slices to the output frame: ROI transforms after the whole-tissue ones."""
    if len(global_cumulative) != len(chain.cumulative):
        raise InvalidArgument(f"{len(global_cumulative)} whole-tissue transforms for a chain of "
                              f"{len(chain.cumulative)} slices")
    total = [compose(r, g) for r, g in zip(chain.cumulative, global_cumulative)]
    pairwise = [compose(b, a.inverse()) for a, b in zip(total, total[1:])]
    return RegistrationChain(total, pairwise, chain.levels, chain.config)


def read_global_transforms(path: Path) -> list[RigidTransform]:
    data = json.loads(Path(path).read_text())
    items = sorted(data["cumulative"], key=lambda c: c["index"])
    return [RigidTransform(c["theta"], c["dx"], c["dy"]) for c in items]


def write_json(path: Path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# --- stages -----------------------------------------------------------------

def stage_preprocess(paths: list[Path], images: list[np.ndarray], out: Path,
                     cfg: PreprocessConfig, threads: int = 1) -> list[np.ndarray]:
    out.mkdir(parents=True, exist_ok=True)

    def one(item):
        path, img = item
        try:
            cleaned = clean_tissue(img, cfg)
        except BlankSlide as exc:
            raise BlankSlide(f"{path}: {exc}") from exc
        rio.write_gray(out / f"{path.stem}.png", cleaned)
        return cleaned

    return _map(one, list(zip(paths, images)), threads)


def stage_segment(paths: list[Path], images: list[np.ndarray], out: Path, cfg: MsConfig,
                  threads: int = 1) -> list[LabelImage]:
    (out / "render").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)

    def one(item):
        i, img = item
        return mc_segment(img, replace(cfg, seed=cfg.seed + i))

    labs = _map(one, list(enumerate(images)), threads)
    means = {}
    for path, lab in zip(paths, labs):
        rio.write_gray(out / "render" / f"{path.stem}.png", render_ms(lab))
        rio.write_labels(out / "labels" / f"{path.stem}.png", lab.labels)
        means[path.stem] = [float(m) for m in lab.phase_means]
    write_json(out / "means.json", means)
    return labs


def load_segmentation(directory: Path, paths: list[Path]) -> list[LabelImage]:
    means = json.loads((directory / "means.json").read_text())
    labs = []
    for p in paths:
        if p.stem not in means:
            raise rio.RasterError(f"no segmentation for slice {p.name} in {directory}")
        labels = rio.read_labels(directory / "labels" / f"{p.stem}.png")
        labs.append(LabelImage(labels, np.asarray(means[p.stem], dtype=float)))
    return labs


def stage_align_global(paths, cleaned, labs, out: Path, grid_args: dict, level: int):
    out.mkdir(parents=True, exist_ok=True)
    h, w = cleaned[0].shape
    s = 2 ** level
    grid = SearchGrid.default(-(-w // s), -(-h // s), **grid_args)
    result = align_whole_tissue(cleaned, labs, grid, level)
    for p, img in zip(paths, result.registered):
        rio.write_gray(out / f"{p.stem}.png", img)
    write_json(out / "transforms.json", transform_list_json(result.pair_transforms, result.cumulative))
    return result


def stage_register(paths, stack, roi: RoiBox, k: int, sift_cfg: SiftConfig, out: Path | None):
    chain, registered = register_stack(stack, roi, k, sift_cfg)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        for p, img in zip(paths, registered):
            rio.write_gray(out / f"{p.stem}.png", img)
    return chain, registered


def _stage_done(path: Path) -> bool:
    return path.exists()


def run_pipeline(cfg: PipelineConfig, resume: bool = False) -> dict:
    """Run every stage in order; returns the manifest written next to the outputs."""
    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    timings = {}

    t0 = time.perf_counter()
    paths, raw = rio.read_stack(cfg.input)
    if len(paths) < 2:
        raise InvalidArgument(f"need at least two slices in {cfg.input}")
    masks = None
    if cfg.masks is not None:
        mask_paths = rio.list_slices(cfg.masks)
        if len(mask_paths) != len(paths):
            raise rio.RasterError(f"{len(mask_paths)} masks in {cfg.masks} for {len(paths)} slices")
        masks = [rio.read_mask(p) for p in mask_paths]
        rio.check_uniform(paths + mask_paths, [m.shape for m in raw] + [m.shape for m in masks])
    timings["load"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    clean_dir = out / "cleaned"
    if resume and all(_stage_done(clean_dir / f"{p.stem}.png") for p in paths):
        cleaned = [rio.read_gray(clean_dir / f"{p.stem}.png") for p in paths]
    else:
        cleaned = stage_preprocess(paths, raw, clean_dir, cfg.preprocess, cfg.threads)
    timings["preprocess"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ms_dir = out / "segment"
    if resume and _stage_done(ms_dir / "means.json"):
        labs = load_segmentation(ms_dir, paths)
    else:
        labs = stage_segment(paths, cleaned, ms_dir, cfg.segment, cfg.threads)
    timings["segment"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    grid_args = {"theta_max_deg": cfg.theta_max_deg, "theta_step_deg": cfg.theta_step_deg,
                 "refine_factor": cfg.refine_factor}
    glob = stage_align_global(paths, cleaned, labs, out / "align_global", grid_args,
                              cfg.global_level)
    timings["align_global"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    chain, _ = stage_register(paths, glob.registered, cfg.roi, cfg.register_levels, cfg.sift, None)
    full_chain = compose_with_global(chain, glob.cumulative)
    total = full_chain.cumulative
    reg_dir = out / "registered"
    reg_dir.mkdir(parents=True, exist_ok=True)
    for p, img, t in zip(paths, cleaned, total):
        rio.write_gray(reg_dir / f"{p.stem}.png", warp_image(img, t))
    write_json(out / "chain.json", full_chain.to_json())
    timings["register"] = time.perf_counter() - t0

    report = None
    if masks is not None:
        t0 = time.perf_counter()
        report = evaluate_chain(masks, full_chain, cfg.window)
        write_json(out / "report.json", report.to_json())
        timings["evaluate"] = time.perf_counter() - t0

    manifest = {
        "config": cfg.to_json(),
        "slices": [p.name for p in paths],
        "seeds": {"segment": [cfg.segment.seed + i for i in range(len(paths))]},
        "versions": _versions(),
        "wall_time_s": timings,
        "fallback_pairs": full_chain.fallback_pairs(),
        "mean_similarity": report.mean if report else None,
    }
    write_json(out / "manifest.json", manifest)
    return manifest


def _versions() -> dict:
    import PIL
    import scipy
    import skimage

    return {"vesselreg": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__,
            "scikit-image": skimage.__version__, "pillow": PIL.__version__}
