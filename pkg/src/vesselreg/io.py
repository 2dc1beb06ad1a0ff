"""Flat raster I/O for slice stacks (PNG and single-page TIFF)."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

from .preprocess import to_grayscale

RASTER_SUFFIXES = (".png", ".tif", ".tiff")


class RasterError(RuntimeError):
    """An input raster is missing, unreadable or inconsistent with its stack."""


def read_rgb_or_gray(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("RGB", "RGBA", "P", "CMYK"):
                return np.asarray(im.convert("RGB"))
            return np.asarray(im.convert("L"))
    except (OSError, ValueError) as exc:
        raise RasterError(f"cannot read raster {path}: {exc}") from exc


def read_gray(path: Path) -> np.ndarray:
    """Load a raster as float grayscale; RGB input goes through luminance conversion."""
    data = read_rgb_or_gray(Path(path))
    if data.ndim == 3:
        return to_grayscale(data)
    return data.astype(float)


def read_mask(path: Path) -> np.ndarray:
    """Nonzero pixels of an 8-bit mask raster are foreground."""
    data = read_rgb_or_gray(Path(path))
    if data.ndim == 3:
        data = data[..., 0]
    return data > 0


def write_gray(path: Path, img: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(img, dtype=float)), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def write_rgb(path: Path, img: np.ndarray) -> None:
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="RGB").save(path)


def write_mask(path: Path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path)


def write_labels(path: Path, labels: np.ndarray) -> None:
    Image.fromarray(np.asarray(labels, dtype=np.uint8), mode="L").save(path)


def read_labels(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")).astype(np.intp)


def _slice_key(path: Path):
    digits = re.findall(r"\d+", path.stem)
    return (int(digits[-1]) if digits else -1, path.name)


def list_slices(directory: Path) -> list[Path]:
    """Raster files in ``directory`` ordered by their trailing slice number."""
    directory = Path(directory)
    if not directory.is_dir():
        raise RasterError(f"input directory {directory} does not exist")
    files = [p for p in directory.iterdir() if p.suffix.lower() in RASTER_SUFFIXES]
    if not files:
        raise RasterError(f"no PNG/TIFF slices found in {directory}")
    return sorted(files, key=_slice_key)


def check_uniform(paths: list[Path], shapes: list[tuple[int, ...]]) -> None:
    ref = shapes[0][:2]
    for p, s in zip(paths, shapes):
        if s[:2] != ref:
            raise RasterError(f"{p} has dimensions {s[:2]}, expected {ref} like {paths[0]}")


def read_stack(directory: Path) -> tuple[list[Path], list[np.ndarray]]:
    paths = list_slices(directory)
    images = [read_gray(p) for p in paths]
    check_uniform(paths, [im.shape for im in images])
    return paths, images
