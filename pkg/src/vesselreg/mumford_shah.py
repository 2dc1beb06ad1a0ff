"""Piecewise-constant Mumford-Shah segmentation by multi-resolution Metropolis sampling.

The energy of a labelling ``l`` with phase means ``c`` on image ``I`` is::

    E = sum_p (I(p) - c[l(p)])**2 + lam * #{4-neighbour pairs (p, q) : l(p) != l(q)}

Sampling starts on a coarse copy of the image, anneals with single-pixel label
flips, refits the phase means, and carries the labels down to the next finer
level. The best full-resolution labelling seen is returned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InvalidArgument, build_pyramid


@dataclass(frozen=True)
class MsConfig:
    phases: int = 4
    lam: float = 500.0
    sweeps: int = 20
    t_start: float = 1000.0
    t_end: float = 0.1
    levels: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.phases < 2:
            raise InvalidArgument("need at least two phases")
        if self.lam < 0:
            raise InvalidArgument("boundary weight must be non-negative")
        if not (self.t_start >= self.t_end > 0):
            raise InvalidArgument("temperatures must satisfy t_start >= t_end > 0")
        if self.sweeps < 1 or self.levels < 1:
            raise InvalidArgument("sweeps and levels must be >= 1")


@dataclass
class LabelImage:
    labels: np.ndarray       # (h, w) integer phase indices
    phase_means: np.ndarray  # (P,) ascending

    @property
    def phases(self) -> int:
        return len(self.phase_means)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


def boundary_pairs(labels: np.ndarray) -> int:
    labels = np.asarray(labels)
    return int(np.count_nonzero(labels[:, 1:] != labels[:, :-1])
               + np.count_nonzero(labels[1:, :] != labels[:-1, :]))


def _energy(img, labels, means, lam) -> float:
    d = img - means[labels]
    return float(np.sum(d * d)) + lam * boundary_pairs(labels)


def ms_energy(img: np.ndarray, lab: LabelImage, lam: float) -> float:
    img = np.asarray(img, dtype=float)
    if img.shape != lab.labels.shape:
        raise InvalidArgument(f"image {img.shape} and labels {lab.labels.shape} differ")
    return _energy(img, lab.labels, np.asarray(lab.phase_means, dtype=float), lam)


def render_ms(lab: LabelImage) -> np.ndarray:
    """Piecewise-constant image: every pixel takes its phase mean, rounded."""
    return np.floor(np.asarray(lab.phase_means, dtype=float)[lab.labels] + 0.5)


def initial_means(img: np.ndarray, phases: int) -> np.ndarray:
    q = (np.arange(phases) + 0.5) / phases
    means = np.quantile(img, q)
    if np.any(np.diff(means) <= 0):
        # heavily skewed histograms collapse quantiles onto one value
        lo, hi = float(img.min()), float(img.max())
        means = lo + q * (hi - lo)
    return means.astype(float)


def nearest_labels(img: np.ndarray, means: np.ndarray) -> np.ndarray:
    return np.argmin(np.abs(img[..., None] - means[None, None, :]), axis=-1)


def update_means(img: np.ndarray, labels: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Per-phase mean intensity; phases without pixels keep their previous value."""
    p = len(means)
    counts = np.bincount(labels.ravel(), minlength=p)
    sums = np.bincount(labels.ravel(), weights=img.ravel(), minlength=p)
    out = means.copy()
    nz = counts > 0
    out[nz] = sums[nz] / counts[nz]
    return out


def _checkerboard(shape):
    yy, xx = np.indices(shape)
    return (yy + xx) % 2 == 0


def _same_label_neighbours(labels: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Count of 4-neighbours whose label equals ``query`` at each pixel."""
    h, w = labels.shape
    padded = np.full((h + 2, w + 2), -1, dtype=labels.dtype)
    padded[1:-1, 1:-1] = labels
    count = (padded[:-2, 1:-1] == query).astype(np.int8)
    count += padded[2:, 1:-1] == query
    count += padded[1:-1, :-2] == query
    count += padded[1:-1, 2:] == query
    return count


def metropolis_sweep(img, labels, means, lam, temperature, rng, colours) -> None:
    """One in-place sweep of single-pixel flip proposals.

    Pixels of one checkerboard colour share no 4-neighbours, so their flips
    are evaluated together against a frozen other colour.
    """
    p = len(means)
    for colour in colours:
        proposal = (labels + rng.integers(1, p, size=labels.shape)) % p
        d_old = img - means[labels]
        d_new = img - means[proposal]
        delta = d_new * d_new - d_old * d_old
        delta += lam * (_same_label_neighbours(labels, labels)
                        - _same_label_neighbours(labels, proposal))
        u = rng.random(labels.shape)
        accept = colour & ((delta <= 0) | (u < np.exp(-np.maximum(delta, 0.0) / temperature)))
        labels[accept] = proposal[accept]


def _upsample_labels(labels: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    up = np.repeat(np.repeat(labels, 2, axis=0), 2, axis=1)
    return np.ascontiguousarray(up[:shape[0], :shape[1]])


def _canonical(labels: np.ndarray, means: np.ndarray) -> LabelImage:
    order = np.argsort(means, kind="stable")
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    return LabelImage(labels=remap[labels], phase_means=means[order].copy())


def mc_segment(img: np.ndarray, cfg: MsConfig = MsConfig()) -> LabelImage:
    img = np.asarray(img, dtype=float)
    if img.size == 0:
        raise InvalidArgument("empty image")
    rng = np.random.default_rng(cfg.seed)
    depth = cfg.levels - 1
    while depth > 0 and min(img.shape) < 2 ** depth:
        depth -= 1
    pyramid = build_pyramid(img, depth)

    means = initial_means(img, cfg.phases)
    start = nearest_labels(img, means)
    best_energy = _energy(img, start, means, cfg.lam)
    best = (start, means.copy())

    if cfg.sweeps > 1:
        temps = cfg.t_start * (cfg.t_end / cfg.t_start) ** (np.arange(cfg.sweeps) / (cfg.sweeps - 1))
    else:
        temps = np.array([cfg.t_end])

    labels = nearest_labels(pyramid[depth], means)
    for r in range(depth, -1, -1):
        level_img = pyramid[r]
        # fidelity scales with 4**r pixels per coarse pixel, boundaries with 2**r
        lam_r = cfg.lam / 2 ** r
        board = _checkerboard(level_img.shape)
        colours = (board, ~board)
        for t in temps:
            metropolis_sweep(level_img, labels, means, lam_r, t, rng, colours)
            if r == 0:
                e = _energy(img, labels, means, cfg.lam)
                if e < best_energy:
                    best_energy, best = e, (labels.copy(), means.copy())
        means = update_means(level_img, labels, means)
        if r > 0:
            labels = _upsample_labels(labels, pyramid[r - 1].shape)

    e = _energy(img, labels, means, cfg.lam)
    if e < best_energy:
        best = (labels, means)
    return _canonical(best[0], best[1])
