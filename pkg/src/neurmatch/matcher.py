"""Dual-softmax putative matching with a mutual-argmax consistency check."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .descriptors import DescriptorSet

DEFAULT_TEMPERATURE = 0.1
DEFAULT_MIN_SCORE = 0.2
MATCH_FORMAT_VERSION = 1


@dataclass
class MatchSet:
    """One-to-one scored correspondences between two keypoint sets."""

    i_idx: np.ndarray  # (M,) indices into set A
    j_idx: np.ndarray  # (M,) indices into set B
    scores: np.ndarray  # (M,) in [0, 1]
    n_a: int
    n_b: int

    def __post_init__(self):
        self.i_idx = np.asarray(self.i_idx, dtype=np.int64).reshape(-1)
        self.j_idx = np.asarray(self.j_idx, dtype=np.int64).reshape(-1)
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        m = self.i_idx.shape[0]
        if self.j_idx.shape[0] != m or self.scores.shape[0] != m:
            raise ValueError("index/score arrays disagree in length")
        if m:
            if self.i_idx.min() < 0 or self.i_idx.max() >= self.n_a:
                raise ValueError("A-side index out of range")
            if self.j_idx.min() < 0 or self.j_idx.max() >= self.n_b:
                raise ValueError("B-side index out of range")
            if np.unique(self.i_idx).size != m or np.unique(self.j_idx).size != m:
                raise ValueError("matches must be one-to-one")
            if self.scores.min() < 0.0 or self.scores.max() > 1.0:
                raise ValueError("scores must lie in [0, 1]")

    def __len__(self) -> int:
        return self.i_idx.shape[0]

    def subset(self, mask) -> "MatchSet":
        mask = np.asarray(mask)
        return MatchSet(self.i_idx[mask], self.j_idx[mask], self.scores[mask], self.n_a, self.n_b)

    def to_dict(self) -> dict:
        return {
            "format_version": MATCH_FORMAT_VERSION,
            "n_a": int(self.n_a),
            "n_b": int(self.n_b),
            "matches": [
                [int(i), int(j), float(s)] for i, j, s in zip(self.i_idx, self.j_idx, self.scores)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MatchSet":
        rows = d.get("matches", [])
        i = [r[0] for r in rows]
        j = [r[1] for r in rows]
        s = [r[2] for r in rows]
        return cls(np.array(i, dtype=np.int64), np.array(j, dtype=np.int64), np.array(s), int(d["n_a"]), int(d["n_b"]))


def empty_match_set(n_a: int, n_b: int) -> MatchSet:
    return MatchSet(np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0), n_a, n_b)


def save_matches(m: MatchSet, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(m.to_dict(), f, sort_keys=True)
        f.write("\n")


def load_matches(path) -> MatchSet:
    with open(path, "r", encoding="utf-8") as f:
        return MatchSet.from_dict(json.load(f))


def _softmax(s: np.ndarray, axis: int) -> np.ndarray:
    shifted = s - s.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _pick_descriptors(ds: DescriptorSet, mode: str) -> np.ndarray:
    if mode == "fused":
        if ds.fused is None:
            raise ValueError("fused descriptors requested but absent")
        return ds.fused
    if mode == "local":
        if ds.local is None:
            raise ValueError("local descriptors requested but absent")
        return ds.local
    if mode == "auto":
        if ds.fused is not None:
            return ds.fused
        if ds.local is not None:
            return ds.local
        raise ValueError("descriptor set has neither fused nor local descriptors")
    raise ValueError(f"unknown descriptor mode {mode!r}")


def dual_softmax_scores(sim: np.ndarray, temperature: float) -> np.ndarray:
    """Row-softmax times column-softmax of sim / temperature."""
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    scaled = np.asarray(sim, dtype=np.float64) / temperature
    return _softmax(scaled, axis=1) * _softmax(scaled, axis=0)


def match_initial(
    a: DescriptorSet,
    b: DescriptorSet,
    temperature: float = DEFAULT_TEMPERATURE,
    min_score: float = DEFAULT_MIN_SCORE,
    descriptor: str = "auto",
) -> MatchSet:
    """Scored one-to-one putative matches between two descriptor sets.

    score(i, j) is the product of the row- and column-softmax of the
    similarity matrix at temperature ``temperature``; a pair is kept iff it
    is the argmax of both its row and its column (ties broken toward the
    lowest index) and its score reaches ``min_score``.
    """
    if not (0.0 <= min_score <= 1.0):
        raise ValueError("min_score must lie in [0, 1]")
    if descriptor == "auto" and (a.fused is None or b.fused is None):
        descriptor = "local"
    da = _pick_descriptors(a, descriptor).astype(np.float64)
    db = _pick_descriptors(b, descriptor).astype(np.float64)
    if da.shape[1] != db.shape[1]:
        raise ValueError(f"descriptor dims differ: {da.shape[1]} vs {db.shape[1]}")
    n_a, n_b = da.shape[0], db.shape[0]
    if n_a == 0 or n_b == 0:
        return empty_match_set(n_a, n_b)
    scores = dual_softmax_scores(da @ db.T, temperature)
    row_best = scores.argmax(axis=1)
    col_best = scores.argmax(axis=0)
    rows = np.arange(n_a)
    mutual = col_best[row_best] == rows
    i_idx = rows[mutual]
    j_idx = row_best[mutual]
    s = scores[i_idx, j_idx]
    keep = s >= min_score
    return MatchSet(i_idx[keep], j_idx[keep], s[keep], n_a, n_b)


def apply_gt_labels(m: MatchSet, task) -> np.ndarray:
    """Boolean per-match labels: warped A keypoint lands within tolerance of B."""
    if len(m) == 0:
        return np.zeros(0, dtype=bool)
    tol = float(task.meta.get("gt_tolerance", 3.0))
    warped = task.gt_transform.apply(task.keypoints_a[m.i_idx])
    dist = np.linalg.norm(warped - task.keypoints_b[m.j_idx], axis=1)
    return dist <= tol
