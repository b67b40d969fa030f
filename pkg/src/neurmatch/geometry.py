"""2-D point transforms: least-squares similarity and thin-plate splines.

Points are plain float64 arrays of shape (2,) or (N, 2), x first. The affine
part of a spline is stored as a 2x3 row-major matrix ``[[m00, m01, t0],
[m10, m11, t1]]`` acting on homogeneous ``[x, y, 1]``; the same layout is
used in the JSON transform format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import _accel

DEGENERACY_RTOL = 1e-10


class DegenerateConfigurationError(ValueError):
    """The source configuration is rank-deficient for the requested fit."""


def as_points(pts, name: str = "points") -> np.ndarray:
    """Coerce to a finite (N, 2) float64 array."""
    arr = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name} must have shape (N, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class SimilarityTransform:
    """scale * R(rotation) @ p + translation, scale > 0."""

    scale: float
    rotation: float
    translation: np.ndarray

    def __post_init__(self):
        if not (self.scale > 0.0 and np.isfinite(self.scale)):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(2))

    @property
    def matrix(self) -> np.ndarray:
        c = self.scale * np.cos(self.rotation)
        s = self.scale * np.sin(self.rotation)
        return np.array([[c, -s, self.translation[0]], [s, c, self.translation[1]]])

    def apply(self, pts) -> np.ndarray:
        pts = as_points(pts)
        m = self.matrix
        return pts @ m[:, :2].T + m[:, 2]

    def inverse(self) -> "SimilarityTransform":
        inv_scale = 1.0 / self.scale
        c = inv_scale * np.cos(-self.rotation)
        s = inv_scale * np.sin(-self.rotation)
        t = self.translation
        return SimilarityTransform(
            scale=inv_scale,
            rotation=-self.rotation,
            translation=np.array([-(c * t[0] - s * t[1]), -(s * t[0] + c * t[1])]),
        )


def similarity_fit(source, target) -> SimilarityTransform:
    """Closed-form least-squares similarity (no reflection) from point pairs.

    Raises DegenerateConfigurationError when the source points coincide or the
    best fit collapses to zero scale.
    """
    src = as_points(source, "source")
    dst = as_points(target, "target")
    if src.shape != dst.shape:
        raise ValueError(f"source/target size mismatch: {src.shape} vs {dst.shape}")
    if src.shape[0] < 2:
        raise ValueError("similarity fit needs at least 2 point pairs")
    src_c = src.mean(axis=0)
    dst_c = dst.mean(axis=0)
    ds = src - src_c
    dd = dst - dst_c
    denom = float(np.sum(ds * ds))
    extent = max(float(np.abs(src).max()), 1.0)
    if denom <= (1e-12 * extent) ** 2:
        raise DegenerateConfigurationError("source points are (nearly) coincident")
    a_num = float(np.sum(ds[:, 0] * dd[:, 0] + ds[:, 1] * dd[:, 1]))
    b_num = float(np.sum(ds[:, 0] * dd[:, 1] - ds[:, 1] * dd[:, 0]))
    scale = float(np.hypot(a_num, b_num)) / denom
    if scale <= 0.0:
        raise DegenerateConfigurationError("target points collapse to a point; scale is zero")
    rotation = float(np.arctan2(b_num, a_num))
    c, s = scale * np.cos(rotation), scale * np.sin(rotation)
    translation = dst_c - np.array([c * src_c[0] - s * src_c[1], s * src_c[0] + c * src_c[1]])
    return SimilarityTransform(scale=scale, rotation=rotation, translation=translation)


@dataclass(frozen=True)
class ThinPlateSpline:
    """TPS with U(r) = r^2 log r; maps p -> affine(p) + sum_i w_i U(|p - c_i|)."""

    control_points: np.ndarray
    affine: np.ndarray
    weights: np.ndarray
    lam: float = 0.0

    def __post_init__(self):
        cp = as_points(self.control_points, "control_points")
        aff = np.asarray(self.affine, dtype=np.float64).reshape(2, 3)
        w = np.asarray(self.weights, dtype=np.float64).reshape(cp.shape[0], 2)
        if not (np.all(np.isfinite(aff)) and np.all(np.isfinite(w))):
            raise ValueError("non-finite TPS coefficients")
        if self.lam < 0.0:
            raise ValueError("lambda must be nonnegative")
        object.__setattr__(self, "control_points", cp)
        object.__setattr__(self, "affine", aff)
        object.__setattr__(self, "weights", w)

    def apply(self, pts) -> np.ndarray:
        pts = as_points(pts)
        u = _accel.tps_kernel_matrix(pts, self.control_points)
        return pts @ self.affine[:, :2].T + self.affine[:, 2] + u @ self.weights

    def apply_point(self, p) -> np.ndarray:
        return self.apply(np.asarray(p, dtype=np.float64).reshape(1, 2))[0]

    def side_condition_residual(self) -> float:
        """Max abs residual of sum(w) = 0 and first-moment conditions."""
        w = self.weights
        cp = self.control_points
        res = np.concatenate([w.sum(axis=0), (cp.T @ w).ravel()])
        return float(np.abs(res).max())


def tps_fit(source, target, lam: float = 0.0) -> ThinPlateSpline:
    """Fit the bending-energy-regularized interpolating spline source -> target.

    lam = 0 interpolates the targets exactly; lam > 0 trades fidelity for
    smoothness through the standard (K + lam I) system. The system is solved
    in centroid/RMS-normalized source coordinates for conditioning (which
    also makes lam scale-free) and converted back: the TPS family is closed
    under that reparameterization, so the returned transform is an exact
    raw-coordinate spline.
    """
    src = as_points(source, "source")
    dst = as_points(target, "target")
    if src.shape != dst.shape:
        raise ValueError(f"source/target size mismatch: {src.shape} vs {dst.shape}")
    n = src.shape[0]
    if n < 3:
        raise ValueError("TPS fit needs at least 3 control points")
    if lam < 0.0:
        raise ValueError("lambda must be nonnegative")
    mu = src.mean(axis=0)
    sigma = float(np.sqrt(np.mean(np.sum((src - mu) ** 2, axis=1))))
    if sigma <= 0.0 or not np.isfinite(sigma):
        raise DegenerateConfigurationError("all control points coincide")
    srcn = (src - mu) / sigma
    k = _accel.tps_kernel_matrix(srcn, srcn)
    p = np.column_stack([np.ones(n), srcn])
    l = np.zeros((n + 3, n + 3))
    l[:n, :n] = k + lam * np.eye(n)
    l[:n, n:] = p
    l[n:, :n] = p.T
    sv = np.linalg.svd(l, compute_uv=False)
    if sv[-1] < DEGENERACY_RTOL * sv[0]:
        raise DegenerateConfigurationError(
            f"degenerate control configuration (condition {sv[0] / max(sv[-1], 1e-300):.3g})"
        )
    rhs = np.zeros((n + 3, 2))
    rhs[:n] = dst
    sol = np.linalg.solve(l, rhs)
    wn = sol[:n]  # weights against the normalized kernel
    coef = sol[n:]  # rows: constant, x', y'
    # convert to raw coordinates: U(r/s) = U(r)/s^2 - (log s / s^2) r^2, and
    # the side conditions collapse the r^2 term to a constant
    weights = wn / sigma**2
    kappa = wn.T @ np.sum(src**2, axis=1)
    affine = np.empty((2, 3))
    affine[:, 0] = coef[1] / sigma
    affine[:, 1] = coef[2] / sigma
    affine[:, 2] = coef[0] - (coef[1] * mu[0] + coef[2] * mu[1]) / sigma - (np.log(sigma) / sigma**2) * kappa
    return ThinPlateSpline(control_points=src, affine=affine, weights=weights, lam=float(lam))


# ---------------------------------------------------------------------------
# JSON transform format
# ---------------------------------------------------------------------------


def transform_to_dict(t) -> dict:
    if isinstance(t, ThinPlateSpline):
        return {
            "type": "tps",
            "control_points": t.control_points.tolist(),
            "affine": t.affine.ravel().tolist(),
            "weights": t.weights.tolist(),
            "lambda": t.lam,
        }
    if isinstance(t, SimilarityTransform):
        return {
            "type": "similarity",
            "scale": t.scale,
            "rotation": t.rotation,
            "translation": t.translation.tolist(),
        }
    raise TypeError(f"unsupported transform type {type(t).__name__}")


def transform_from_dict(d: dict):
    kind = d.get("type")
    if kind == "tps":
        return ThinPlateSpline(
            control_points=np.asarray(d["control_points"], dtype=np.float64),
            affine=np.asarray(d["affine"], dtype=np.float64).reshape(2, 3),
            weights=np.asarray(d["weights"], dtype=np.float64),
            lam=float(d.get("lambda", 0.0)),
        )
    if kind == "similarity":
        return SimilarityTransform(
            scale=float(d["scale"]),
            rotation=float(d["rotation"]),
            translation=np.asarray(d["translation"], dtype=np.float64),
        )
    raise ValueError(f"unknown transform type {kind!r}")


def save_transform(t, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(transform_to_dict(t), f, sort_keys=True)
        f.write("\n")


def load_transform(path):
    with open(path, "r", encoding="utf-8") as f:
        return transform_from_dict(json.load(f))
