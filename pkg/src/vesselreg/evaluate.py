"""Registration accuracy from lumen-mask overlap.

Masks are only ever read here; nothing in the registration stages imports
this module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InvalidArgument, warp_mask
from .roi_register import RegistrationChain


class UndefinedSimilarity(ValueError):
    """Both masks are empty."""


def similarity_index(a: np.ndarray, b: np.ndarray) -> float:
    """Dice overlap ``2|A & B| / (|A| + |B|)`` of two foreground sets."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise InvalidArgument(f"mask shapes differ: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        raise UndefinedSimilarity("similarity of two empty masks is undefined")
    return 2.0 * int(np.count_nonzero(a & b)) / total


@dataclass
class PairScore:
    i: int
    j: int
    similarity: float
    fallback: bool


@dataclass
class EvalReport:
    pairs: list[PairScore]
    mean: float
    std: float  # population standard deviation
    fallback_pairs: list[int]
    mean_fallback: float | None
    mean_clean: float | None

    def to_json(self) -> dict:
        return {
            "pairs": [{"i": p.i, "j": p.j, "similarity": p.similarity, "fallback": p.fallback}
                      for p in self.pairs],
            "mean": self.mean,
            "std": self.std,
            "std_kind": "population",
            "fallback_pairs": self.fallback_pairs,
            "mean_fallback": self.mean_fallback,
            "mean_clean": self.mean_clean,
        }


def evaluate_chain(masks: list[np.ndarray], chain: RegistrationChain, window: int = 1
                   ) -> EvalReport:
    """Score every pair of warped masks at most ``window`` slices apart."""
    if len(masks) != len(chain.cumulative):
        raise InvalidArgument(f"{len(masks)} masks for a chain of {len(chain.cumulative)} slices")
    if window < 1:
        raise InvalidArgument("window must be >= 1")
    warped = [warp_mask(m, t) for m, t in zip(masks, chain.cumulative)]
    flagged = set(chain.fallback_pairs())
    pairs = []
    for i in range(len(warped)):
        for j in range(i + 1, min(i + window, len(warped) - 1) + 1):
            fb = any(k in flagged for k in range(i, j))
            pairs.append(PairScore(i, j, similarity_index(warped[i], warped[j]), fb))
    values = np.array([p.similarity for p in pairs])
    fb_vals = [p.similarity for p in pairs if p.fallback]
    ok_vals = [p.similarity for p in pairs if not p.fallback]
    return EvalReport(
        pairs=pairs,
        mean=float(values.mean()) if len(values) else float("nan"),
        std=float(values.std()) if len(values) else float("nan"),
        fallback_pairs=sorted(flagged),
        mean_fallback=float(np.mean(fb_vals)) if fb_vals else None,
        mean_clean=float(np.mean(ok_vals)) if ok_vals else None,
    )
