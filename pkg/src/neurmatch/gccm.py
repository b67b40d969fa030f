"""Geometric consistency confidence filtering of putative matches.

Instead of fitting one global model (RANSAC), small subsets of K=4 matches
are scored by a trained classifier that sees only canonicalized coordinates;
each match's expected confidence is the mean score over the subsets it
appears in, and matches below the threshold tau are pruned.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _accel, nn
from .matcher import MatchSet

K_SUBSET = 4
DEFAULT_TAU = 0.5
DEFAULT_MIN_COVERAGE = 8
# default subset budget: 64 * |initial| / K draws before the coverage pass
SUBSETS_PER_MATCH = 64
GCCM_ARCH = (16, 64, 64, 1)
GCCM_ACTIVATIONS = ("relu", "relu", "sigmoid")
GCCM_FORMAT_VERSION = 1

CANONICALIZATION_SPEC = {
    "k": K_SUBSET,
    "member_order": "a-side x, then y",
    "center": "subset centroid per side",
    "scale": "subset rms radius per side (image half-diagonal below 1 px)",
    "clamp": 1.0,
}


class InsufficientMatchesError(ValueError):
    """Fewer than K matches: subset verification is undefined."""


@dataclass
class GccmModel:
    net: nn.DenseNet
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.net.input_dim != 4 * K_SUBSET or self.net.output_dim != 1:
            raise ValueError(
                f"GCCM net must map {4 * K_SUBSET} -> 1, got {self.net.input_dim} -> {self.net.output_dim}"
            )
        if self.net.layers[-1].activation != "sigmoid":
            raise ValueError("GCCM net must end in a sigmoid")


def init_gccm(seed: int = 0) -> GccmModel:
    return GccmModel(net=nn.init_net(GCCM_ARCH, GCCM_ACTIVATIONS, seed=seed))


def _half_diagonal(size) -> float:
    if np.isscalar(size):
        return float(np.hypot(size, size)) / 2.0
    w, h = size
    return float(np.hypot(w, h)) / 2.0


def canonicalize_subset(a_pts, b_pts, image_sizes) -> np.ndarray:
    """Feature vector for one K=4 subset of correspondences.

    Members are ordered by A-side x then y; each side is centered on its
    subset centroid and scaled by its RMS radius (image half-diagonal when
    the radius degenerates below 1 px); entries are clamped to [-1, 1].
    """
    a = np.asarray(a_pts, dtype=np.float64).reshape(K_SUBSET, 2)
    b = np.asarray(b_pts, dtype=np.float64).reshape(K_SUBSET, 2)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("subset coordinates must be finite")
    size_a, size_b = image_sizes if isinstance(image_sizes, tuple) and len(image_sizes) == 2 and not np.isscalar(image_sizes[0]) else (image_sizes, image_sizes)
    feats = _accel.canonical_subset_features(
        a[None, :, 0], a[None, :, 1], b[None, :, 0], b[None, :, 1],
        _half_diagonal(size_a), _half_diagonal(size_b),
    )
    return feats[0]


def canonicalize_batch(a_pts, b_pts, image_sizes) -> np.ndarray:
    """(S, 4, 2) coordinate stacks for both sides -> (S, 16) features."""
    a = np.asarray(a_pts, dtype=np.float64)
    b = np.asarray(b_pts, dtype=np.float64)
    size_a, size_b = image_sizes if isinstance(image_sizes, tuple) and len(image_sizes) == 2 and not np.isscalar(image_sizes[0]) else (image_sizes, image_sizes)
    return _accel.canonical_subset_features(
        a[:, :, 0], a[:, :, 1], b[:, :, 0], b[:, :, 1],
        _half_diagonal(size_a), _half_diagonal(size_b),
    )


def score_subset(model: GccmModel, features) -> float:
    return float(nn.forward(model.net, np.asarray(features, dtype=np.float64))[0])


def score_batch(model: GccmModel, features: np.ndarray) -> np.ndarray:
    return nn.forward(model.net, features)[:, 0]


@dataclass
class VerificationResult:
    matches: MatchSet  # the initial set the confidences index into
    confidence: np.ndarray  # (M,) expected confidence C per initial match
    subsets_seen: np.ndarray  # (M,) subsets each match participated in
    final: MatchSet
    tau: float
    n_subsets: int

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "n_subsets": int(self.n_subsets),
            "matches": [[int(i), int(j)] for i, j in zip(self.matches.i_idx, self.matches.j_idx)],
            "confidence": [float(c) for c in self.confidence],
            "subsets_seen": [int(c) for c in self.subsets_seen],
            "final": self.final.to_dict(),
        }


def _distinct_rows(rng: np.random.Generator, n_rows: int, m: int, k: int) -> np.ndarray:
    """Seeded (n_rows, k) index draws, distinct within each row."""
    draws = rng.integers(0, m, size=(n_rows, k))
    while True:
        srt = np.sort(draws, axis=1)
        bad = (srt[:, 1:] == srt[:, :-1]).any(axis=1)
        if not bad.any():
            return draws
        draws[bad] = rng.integers(0, m, size=(int(bad.sum()), k))


def sample_subsets(
    m: int, n_subsets: int, seed: int, min_coverage: int = DEFAULT_MIN_COVERAGE
) -> np.ndarray:
    """Uniform K-subsets of range(m) plus a coverage top-up pass.

    The top-up guarantees every match index appears in at least
    ``min_coverage`` subsets, so every expected confidence is a mean over a
    nonempty, adequately sized sample.
    """
    if m < K_SUBSET:
        raise InsufficientMatchesError(f"need at least {K_SUBSET} matches, got {m}")
    rng = np.random.default_rng(seed)
    base = _distinct_rows(rng, n_subsets, m, K_SUBSET)
    coverage = np.bincount(base.ravel(), minlength=m)
    deficits = np.maximum(min_coverage - coverage, 0)
    extras = []
    for idx in np.flatnonzero(deficits):
        rows = _distinct_rows(rng, int(deficits[idx]), m - 1, K_SUBSET - 1)
        rows = rows + (rows >= idx)  # reindex around the forced member
        extras.append(np.column_stack([np.full(rows.shape[0], idx, dtype=np.int64), rows]))
    if extras:
        base = np.vstack([base] + extras)
    return base


def verify(
    model: GccmModel,
    initial: MatchSet,
    kp_a: np.ndarray,
    kp_b: np.ndarray,
    image_sizes,
    n_subsets: int | None = None,
    tau: float = DEFAULT_TAU,
    seed: int = 0,
    min_coverage: int = DEFAULT_MIN_COVERAGE,
) -> VerificationResult:
    """Subset-sample, score, aggregate, and prune an initial match set.

    C(i, j) is the mean classifier score over all sampled subsets containing
    (i, j); the final set keeps matches with C > tau (strict) and coverage of
    at least ``min_coverage``.
    """
    m = len(initial)
    if m < K_SUBSET:
        raise InsufficientMatchesError(f"need at least {K_SUBSET} matches, got {m}")
    if not (0.0 <= tau <= 1.0):
        raise ValueError("tau must lie in [0, 1]")
    if n_subsets is None:
        n_subsets = SUBSETS_PER_MATCH * m // K_SUBSET
    if n_subsets < 1:
        raise ValueError("n_subsets must be positive")
    subsets = sample_subsets(m, n_subsets, seed, min_coverage)
    pa = np.asarray(kp_a, dtype=np.float64)[initial.i_idx]
    pb = np.asarray(kp_b, dtype=np.float64)[initial.j_idx]
    feats = canonicalize_batch(pa[subsets], pb[subsets], image_sizes)
    scores = score_batch(model, feats)
    sums = np.bincount(subsets.ravel(), weights=np.repeat(scores, K_SUBSET), minlength=m)
    counts = np.bincount(subsets.ravel(), minlength=m)
    confidence = sums / counts
    keep = (confidence > tau) & (counts >= min_coverage)
    return VerificationResult(
        matches=initial,
        confidence=confidence,
        subsets_seen=counts,
        final=initial.subset(keep),
        tau=tau,
        n_subsets=subsets.shape[0],
    )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def make_gccm_training_set(tasks, n_pos: int, n_neg: int, corruption: float, seed: int):
    """Balanced labeled subset features from ground-truth task correspondences.

    Positives are K-subsets of gt matches. Negatives corrupt 1-4 members of a
    positive, half by retargeting to a wrong B keypoint and half by jittering
    the B coordinate by ``corruption`` pixels (which must be at least 10x the
    gt tolerance so negatives unambiguously violate it).
    """
    tol = max(float(t.gt_tolerance) for t in tasks) if tasks else 3.0
    if corruption < 10.0 * tol:
        raise ValueError(
            f"corruption displacement {corruption} too small: negatives must violate "
            f"10x the gt tolerance ({10.0 * tol})"
        )
    usable = []
    for t in tasks:
        if t.gt_matches.shape[0] < K_SUBSET:
            warnings.warn(f"task {t.task_id} has fewer than {K_SUBSET} gt matches; skipped")
            continue
        usable.append(t)
    if not usable:
        raise ValueError("no task with enough gt matches")
    rng = np.random.default_rng(seed)
    feats = np.empty((n_pos + n_neg, 4 * K_SUBSET))
    labels = np.concatenate([np.ones(n_pos), np.zeros(n_neg)])

    def draw_subset(task):
        rows = task.gt_matches[rng.choice(task.gt_matches.shape[0], size=K_SUBSET, replace=False)]
        pa = task.keypoints_a[rows[:, 0]]
        pb = task.keypoints_b[rows[:, 1]]
        return pa.copy(), pb.copy(), rows

    for s in range(n_pos):
        task = usable[int(rng.integers(len(usable)))]
        pa, pb, _ = draw_subset(task)
        assert np.linalg.norm(task.gt_transform.apply(pa) - pb, axis=1).max() <= task.gt_tolerance
        feats[s] = canonicalize_subset(pa, pb, task.image_size)

    for s in range(n_neg):
        task = usable[int(rng.integers(len(usable)))]
        pa, pb, rows = draw_subset(task)
        warped = task.gt_transform.apply(pa)
        n_corrupt = int(rng.integers(1, K_SUBSET + 1))
        members = rng.choice(K_SUBSET, size=n_corrupt, replace=False)
        for mem in members:
            if rng.random() < 0.5 and len(task.keypoints_b) > K_SUBSET:
                # retarget to a wrong B keypoint, far enough to violate tolerance
                for _ in range(100):
                    j = int(rng.integers(len(task.keypoints_b)))
                    cand = task.keypoints_b[j]
                    if np.linalg.norm(cand - warped[mem]) > task.gt_tolerance:
                        pb[mem] = cand
                        break
                else:
                    raise RuntimeError("could not draw a violating wrong-index negative")
            else:
                angle = rng.uniform(0.0, 2.0 * np.pi)
                mag = rng.uniform(corruption, 2.0 * corruption)
                pb[mem] = pb[mem] + mag * np.array([np.cos(angle), np.sin(angle)])
        assert np.linalg.norm(task.gt_transform.apply(pa) - pb, axis=1).max() > task.gt_tolerance
        feats[n_pos + s] = canonicalize_subset(pa, pb, task.image_size)

    return feats, labels


def train_gccm(
    features: np.ndarray,
    labels: np.ndarray,
    cfg: nn.TrainConfig,
    init_model: GccmModel | None = None,
    val_fraction: float = 0.2,
    min_per_class: int = 100,
):
    """Binary cross-entropy training with a seeded 80/20 holdout split."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if min(n_pos, n_neg) < min_per_class:
        raise ValueError(f"need at least {min_per_class} samples per class, got {n_pos}/{n_neg}")
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(y))
    n_val = max(1, int(round(val_fraction * len(y))))
    val, trn = order[:n_val], order[n_val:]
    net = init_model.net.copy() if init_model is not None else init_gccm(cfg.seed).net
    trained, curve = nn.train(net, x[trn], y[trn], cfg, loss="bce")
    val_pred = nn.forward(trained, x[val])[:, 0] > 0.5
    accuracy = float(np.mean(val_pred == (y[val] > 0.5)))
    model = GccmModel(
        net=trained,
        meta={
            "seed": int(cfg.seed),
            "n_train": int(len(trn)),
            "n_val": int(len(val)),
            "holdout_accuracy": accuracy,
            "finetuned_from": init_model.meta.get("seed") if init_model else None,
        },
    )
    metrics = {
        "loss_curve": curve,
        "holdout_accuracy": accuracy,
        "n_train": int(len(trn)),
        "n_val": int(len(val)),
    }
    return model, metrics


def holdout_accuracy(model: GccmModel, features: np.ndarray, labels: np.ndarray) -> float:
    pred = score_batch(model, np.asarray(features, dtype=np.float64)) > 0.5
    return float(np.mean(pred == (np.asarray(labels).reshape(-1) > 0.5)))


# ---------------------------------------------------------------------------
# model file
# ---------------------------------------------------------------------------


def save_gccm(model: GccmModel, path) -> None:
    payload = {
        "format_version": GCCM_FORMAT_VERSION,
        "gccm": {"canonicalization": CANONICALIZATION_SPEC, "trained_on": model.meta},
        "net": nn.net_to_dict(model.net),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True)
        f.write("\n")


def load_gccm(path) -> GccmModel:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    if payload.get("format_version") != GCCM_FORMAT_VERSION:
        raise ValueError(f"unsupported gccm format version {payload.get('format_version')!r}")
    return GccmModel(net=nn.net_from_dict(payload["net"]), meta=payload["gccm"].get("trained_on", {}))
