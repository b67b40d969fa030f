"""Seeded 2-point RANSAC with a global similarity model.

This is the traditional verifier the confidence module is benchmarked
against. Kept deliberately canonical: no local refits, the returned model is
the best raw hypothesis, so every reported inlier satisfies the threshold
under it by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _accel
from .geometry import SimilarityTransform
from .matcher import MatchSet


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 1000
    inlier_threshold: float = 3.0
    min_inliers: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if self.inlier_threshold <= 0.0:
            raise ValueError("inlier_threshold must be positive")
        if self.min_inliers < 2:
            raise ValueError("min_inliers must be at least 2")


@dataclass
class RansacResult:
    inliers: MatchSet
    model: SimilarityTransform | None
    n_consensus: int
    no_consensus: bool


def _hypothesis_pairs(rng: np.random.Generator, iterations: int, m: int) -> np.ndarray:
    # one draw call so a longer run shares its prefix with a shorter one
    raw = rng.integers(0, np.iinfo(np.int64).max, size=(iterations, 2))
    i1 = raw[:, 0] % m
    i2 = (i1 + 1 + raw[:, 1] % (m - 1)) % m
    return np.column_stack([i1, i2])


def ransac_similarity(initial: MatchSet, kp_a, kp_b, cfg: RansacConfig) -> RansacResult:
    """Hypothesize-and-verify similarity fits over 2-match samples.

    Returns the maximal consensus set and its generating hypothesis.
    Deterministic per seed; a run with more iterations extends the same
    hypothesis stream, so the best consensus size never decreases.
    """
    m = len(initial)
    if m < 2:
        raise ValueError(f"RANSAC needs at least 2 matches, got {m}")
    src = np.asarray(kp_a, dtype=np.float64)[initial.i_idx]
    dst = np.asarray(kp_b, dtype=np.float64)[initial.j_idx]
    rng = np.random.default_rng(cfg.seed)
    pairs = _hypothesis_pairs(rng, cfg.iterations, m)
    best_iter, count, params = _accel.ransac_scan(src, dst, pairs, cfg.inlier_threshold)
    if best_iter < 0 or count < cfg.min_inliers:
        return RansacResult(
            inliers=initial.subset(np.zeros(m, dtype=bool)),
            model=None,
            n_consensus=int(count),
            no_consensus=True,
        )
    a, b, tx, ty = params
    pred = np.column_stack([a * src[:, 0] - b * src[:, 1] + tx, b * src[:, 0] + a * src[:, 1] + ty])
    mask = np.linalg.norm(pred - dst, axis=1) <= cfg.inlier_threshold
    model = SimilarityTransform(
        scale=float(np.hypot(a, b)),
        rotation=float(np.arctan2(b, a)),
        translation=np.array([tx, ty]),
    )
    return RansacResult(
        inliers=initial.subset(mask), model=model, n_consensus=int(mask.sum()), no_consensus=False
    )
