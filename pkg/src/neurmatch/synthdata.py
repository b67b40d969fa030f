"""Synthetic matching tasks: blob scenes, modality styles, TPS deformations.

Real paired microscopy is not available here, so scenes are fields of
Gaussian blobs whose centers double as keypoints, warped by sampled
thin-plate splines with exact ground-truth correspondences. Two fixed
appearance styles simulate the cross-modality gap (blur, signal-dependent
noise, gamma, contrast remap).

All generators are pure functions of (config, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from . import _accel, descriptors, geometry

GT_TOLERANCE = 3.0
TASK_FORMAT_VERSION = 1

# displacement draws are rejection-resampled beyond this many sigmas
MAX_DISPLACEMENT_SIGMAS = 4.0


@dataclass(frozen=True)
class SceneConfig:
    image_size: int = 512
    n_neurons: int = 50
    blob_radius_range: tuple = (1.5, 4.0)
    blob_aspect_range: tuple = (1.0, 2.5)
    intensity_range: tuple = (0.3, 1.0)
    seed: int = 0
    min_separation: float = 12.0

    def __post_init__(self):
        if self.image_size < 16:
            raise ValueError("image_size must be at least 16")
        if self.n_neurons < 1:
            raise ValueError("n_neurons must be positive")
        lo, hi = self.blob_radius_range
        if not (0.0 < lo <= hi):
            raise ValueError("blob_radius_range must be a positive nondecreasing interval")
        lo, hi = self.blob_aspect_range
        if not (1.0 <= lo <= hi):
            raise ValueError("blob_aspect_range must be >= 1 and nondecreasing")
        lo, hi = self.intensity_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError("intensity_range must lie within (0, 1]")
        if self.min_separation < 2.0:
            raise ValueError("min_separation below the 2 px duplicate-rejection floor")


@dataclass(frozen=True)
class ModalityStyle:
    blur_sigma: float = 0.0
    noise: float = 0.0
    gamma: float = 1.0
    gain: float = 1.0
    offset: float = 0.0


# documented appearance constants for the two simulated modalities
MODALITY_A = ModalityStyle(blur_sigma=1.0, noise=0.02, gamma=0.9, gain=1.0, offset=0.0)
MODALITY_B = ModalityStyle(blur_sigma=2.5, noise=0.05, gamma=1.7, gain=0.8, offset=0.08)

STYLES = {"modality_a": MODALITY_A, "modality_b": MODALITY_B, "identity": ModalityStyle()}


@dataclass(frozen=True)
class DeformConfig:
    grid: int = 4
    displacement_sigma: float = 12.0
    max_rotation: float = 0.0
    max_scale_jitter: float = 0.0

    def __post_init__(self):
        if self.grid < 2:
            raise ValueError("grid must have at least 2 control points per axis")
        if self.displacement_sigma < 0.0:
            raise ValueError("displacement_sigma must be nonnegative")
        if not (0.0 <= self.max_scale_jitter < 1.0):
            raise ValueError("max_scale_jitter must lie in [0, 1)")


@dataclass
class PairTask:
    """One matching problem: two keypoint sets, ground truth, descriptors."""

    keypoints_a: np.ndarray
    keypoints_b: np.ndarray
    gt_transform: geometry.ThinPlateSpline
    gt_matches: np.ndarray  # (M, 2) int64 pairs (index into A, index into B)
    meta: dict
    desc_a: descriptors.DescriptorSet | None = None
    desc_b: descriptors.DescriptorSet | None = None
    map_a: descriptors.FeatureMap | None = None
    map_b: descriptors.FeatureMap | None = None
    image_a: np.ndarray | None = None
    image_b: np.ndarray | None = None

    def __post_init__(self):
        self.keypoints_a = geometry.as_points(self.keypoints_a, "keypoints_a")
        self.keypoints_b = (
            np.zeros((0, 2)) if len(self.keypoints_b) == 0 else geometry.as_points(self.keypoints_b, "keypoints_b")
        )
        self.gt_matches = np.asarray(self.gt_matches, dtype=np.int64).reshape(-1, 2)
        if self.gt_matches.size:
            if self.gt_matches[:, 0].max() >= len(self.keypoints_a) or self.gt_matches[:, 0].min() < 0:
                raise ValueError("gt match A index out of range")
            if self.gt_matches[:, 1].max() >= len(self.keypoints_b) or self.gt_matches[:, 1].min() < 0:
                raise ValueError("gt match B index out of range")

    @property
    def task_id(self) -> str:
        return self.meta["task_id"]

    @property
    def image_size(self) -> int:
        return int(self.meta["image_size"])

    @property
    def gt_tolerance(self) -> float:
        return float(self.meta.get("gt_tolerance", GT_TOLERANCE))

    def gt_residuals(self) -> np.ndarray:
        if self.gt_matches.size == 0:
            return np.zeros(0)
        warped = self.gt_transform.apply(self.keypoints_a[self.gt_matches[:, 0]])
        return np.linalg.norm(warped - self.keypoints_b[self.gt_matches[:, 1]], axis=1)


def _subseeds(kind_tag: int, seed: int, count: int) -> np.ndarray:
    return np.random.SeedSequence([kind_tag, int(seed)]).generate_state(count, dtype=np.uint64)


def _sample_positions(rng: np.random.Generator, cfg: SceneConfig) -> np.ndarray:
    margin = cfg.blob_radius_range[1] * cfg.blob_aspect_range[1] + 2.0
    lo, hi = margin, cfg.image_size - 1 - margin
    if hi <= lo:
        raise ValueError("image too small for the configured blob radii")
    accepted = np.empty((cfg.n_neurons, 2))
    count = 0
    attempts = 0
    while count < cfg.n_neurons:
        attempts += 1
        if attempts > 10000 * cfg.n_neurons:
            raise RuntimeError("could not place blobs with the requested separation")
        cand = rng.uniform(lo, hi, size=2)
        if count and np.min(np.linalg.norm(accepted[:count] - cand, axis=1)) < cfg.min_separation:
            continue
        accepted[count] = cand
        count += 1
    return accepted


def _sample_blobs(rng: np.random.Generator, cfg: SceneConfig):
    """Blob geometry: centers plus anisotropic-Gaussian shape parameters."""
    centers = _sample_positions(rng, cfg)
    minor = rng.uniform(*cfg.blob_radius_range, size=cfg.n_neurons)
    aspect = rng.uniform(*cfg.blob_aspect_range, size=cfg.n_neurons)
    angle = rng.uniform(0.0, np.pi, size=cfg.n_neurons)
    amps = rng.uniform(*cfg.intensity_range, size=cfg.n_neurons)
    major = minor * aspect
    cos, sin = np.cos(angle), np.sin(angle)
    inv_major = 1.0 / (2.0 * major**2)
    inv_minor = 1.0 / (2.0 * minor**2)
    quad = np.column_stack(
        [
            cos**2 * inv_major + sin**2 * inv_minor,
            cos * sin * (inv_major - inv_minor),
            sin**2 * inv_major + cos**2 * inv_minor,
        ]
    )
    support = 4.0 * major
    return centers, quad, amps, support


def generate_scene(cfg: SceneConfig):
    """Render a blob scene; returns (image in [0,1], keypoints = blob centers)."""
    rng = np.random.default_rng(cfg.seed)
    centers, quad, amps, support = _sample_blobs(rng, cfg)
    img = _accel.render_blobs(cfg.image_size, centers, quad, amps, support)
    np.clip(img, 0.0, 1.0, out=img)
    return img, centers


def render_modality(image, style: ModalityStyle, seed: int) -> np.ndarray:
    """Apply one modality's appearance: blur, gamma, contrast remap, noise."""
    out = np.asarray(image, dtype=np.float64)
    if style.blur_sigma > 0.0:
        out = gaussian_filter(out, style.blur_sigma, mode="nearest")
    if style.gamma != 1.0:
        out = np.clip(out, 0.0, 1.0) ** style.gamma
    if style.gain != 1.0 or style.offset != 0.0:
        out = style.gain * out + style.offset
    if style.noise > 0.0:
        rng = np.random.default_rng(seed)
        sigma = style.noise * np.sqrt(np.clip(out, 0.0, 1.0) + 0.05)
        out = out + rng.normal(size=out.shape) * sigma
    return np.clip(out, 0.0, 1.0)


def _rotation_about_center(angle: float, scale: float, size: int) -> geometry.SimilarityTransform:
    c = (size - 1) / 2.0
    cos, sin = scale * np.cos(angle), scale * np.sin(angle)
    tx = c - (cos * c - sin * c)
    ty = c - (sin * c + cos * c)
    return geometry.SimilarityTransform(scale=scale, rotation=angle, translation=np.array([tx, ty]))


def sample_deformation(cfg: DeformConfig, image_size: int, seed: int) -> geometry.ThinPlateSpline:
    """Random plausible warp: control grid + similarity jitter + truncated Gaussian displacements."""
    rng = np.random.default_rng(seed)
    axis = np.linspace(0.0, image_size - 1.0, cfg.grid)
    gx, gy = np.meshgrid(axis, axis)
    src = np.column_stack([gx.ravel(), gy.ravel()])
    angle = rng.uniform(-cfg.max_rotation, cfg.max_rotation)
    scale = 1.0 + rng.uniform(-cfg.max_scale_jitter, cfg.max_scale_jitter)
    tgt = _rotation_about_center(angle, scale, image_size).apply(src)
    if cfg.displacement_sigma > 0.0:
        disp = rng.normal(0.0, cfg.displacement_sigma, size=src.shape)
        limit = MAX_DISPLACEMENT_SIGMAS * cfg.displacement_sigma
        while True:
            bad = np.linalg.norm(disp, axis=1) > limit
            if not bad.any():
                break
            disp[bad] = rng.normal(0.0, cfg.displacement_sigma, size=(int(bad.sum()), 2))
        tgt = tgt + disp
    return geometry.tps_fit(src, tgt, 0.0)


def _warp_side_b(keypoints: np.ndarray, transform: geometry.ThinPlateSpline, size: int):
    """Warp A keypoints; keep the in-bounds ones as side B with identity pairing."""
    warped = transform.apply(keypoints)
    inside = (
        (warped[:, 0] >= 0.0)
        & (warped[:, 0] <= size - 1.0)
        & (warped[:, 1] >= 0.0)
        & (warped[:, 1] <= size - 1.0)
    )
    kp_b = warped[inside]
    a_idx = np.flatnonzero(inside)
    gt = np.column_stack([a_idx, np.arange(len(kp_b))]).astype(np.int64)
    return warped, kp_b, gt


def _build_descriptors(image, keypoints, with_semantic: bool):
    ds = descriptors.compute_patch_descriptor(image, keypoints)
    fmap = None
    if with_semantic:
        fmap = descriptors.compute_semantic_map(image)
        ds = descriptors.attach_semantic(ds, fmap)
    return ds, fmap


def make_pretrain_task(
    scene_cfg: SceneConfig,
    deform_cfg: DeformConfig,
    seed: int,
    with_descriptors: bool = True,
    with_semantic: bool = False,
    gt_tolerance: float = GT_TOLERANCE,
) -> PairTask:
    """Single-modality image and its warped twin, identity ground truth."""
    sub = _subseeds(1, seed, 5)
    scene = replace(scene_cfg, seed=int(sub[0]))
    deform_seed = int(sub[1])
    rng_scene = np.random.default_rng(scene.seed)
    centers, quad, amps, support = _sample_blobs(rng_scene, scene)
    transform = sample_deformation(deform_cfg, scene.image_size, deform_seed)
    warped_all, kp_b, gt = _warp_side_b(centers, transform, scene.image_size)
    meta = {
        "task_id": f"pt-{seed:08d}",
        "kind": "pretrain",
        "seed": int(seed),
        "image_size": scene.image_size,
        "gt_tolerance": gt_tolerance,
        "modality_a": "modality_a",
        "modality_b": "modality_a",
        "displacement_sigma": deform_cfg.displacement_sigma,
        "format_version": TASK_FORMAT_VERSION,
    }
    task = PairTask(
        keypoints_a=centers,
        keypoints_b=kp_b,
        gt_transform=transform,
        gt_matches=gt,
        meta=meta,
    )
    if with_descriptors:
        raw_a = np.clip(_accel.render_blobs(scene.image_size, centers, quad, amps, support), 0.0, 1.0)
        raw_b = np.clip(_accel.render_blobs(scene.image_size, warped_all, quad, amps, support), 0.0, 1.0)
        task.image_a = render_modality(raw_a, MODALITY_A, int(sub[2]))
        task.image_b = render_modality(raw_b, MODALITY_A, int(sub[3]))
        task.desc_a, task.map_a = _build_descriptors(task.image_a, centers, with_semantic)
        task.desc_b, task.map_b = _build_descriptors(task.image_b, kp_b, with_semantic)
    assert task.gt_residuals().max(initial=0.0) <= gt_tolerance
    return task


def _aug_grid(aug) -> tuple:
    if isinstance(aug, tuple):
        rotations, contrasts = aug
    else:
        n = int(aug)
        if n < 1:
            raise ValueError("aug count must be positive")
        rotations, contrasts = (n // 5, 5) if n % 5 == 0 and n >= 5 else (n, 1)
    if rotations < 1 or contrasts < 1:
        raise ValueError("augmentation grid must be at least 1 x 1")
    return rotations, contrasts


# widest augmentation rotation; sessions differ by moderate in-plane turns
MAX_AUG_ROTATION = np.pi / 6


def _aug_angle(index: int, count: int, max_rotation: float = MAX_AUG_ROTATION) -> float:
    """Rotation #index of #count: 0 first, then alternating +/- steps."""
    if index == 0:
        return 0.0
    half = max(count // 2, 1)
    magnitude = (index + 1) // 2 / half
    return (magnitude if index % 2 == 1 else -magnitude) * max_rotation


def contrast_variant(style: ModalityStyle, index: int, count: int) -> ModalityStyle:
    """Deterministic contrast/gamma perturbation #index of #count (0 = base)."""
    if count == 1 or index == 0:
        return style
    # nonzero factors alternate +/- and grow with the index: 0.5, -0.5, 1, -1
    half = max(count // 2, 1)
    magnitude = (index + 1) // 2 / half
    f = magnitude if index % 2 == 1 else -magnitude
    return replace(
        style,
        gamma=style.gamma * (1.0 + 0.25 * f),
        gain=style.gain * (1.0 - 0.15 * f),
        offset=max(style.offset * (1.0 + 0.5 * f), 0.0),
    )


def make_crossmodal_task(
    scene_cfg: SceneConfig,
    deform_cfg: DeformConfig,
    aug,
    seed: int,
    with_descriptors: bool = True,
    with_semantic: bool = True,
    gt_tolerance: float = GT_TOLERANCE,
) -> list:
    """One scene rendered under both modalities, expanded over rotations x contrasts.

    ``aug`` is either a (rotations, contrasts) pair or a total count (counts
    divisible by 5 use 5 contrast variants, matching the default 50 = 10 x 5).
    """
    rotations, contrasts = _aug_grid(aug)
    sub = _subseeds(2, seed, 4 + 2 * rotations * contrasts)
    scene = replace(scene_cfg, seed=int(sub[0]))
    rng_scene = np.random.default_rng(scene.seed)
    centers, quad, amps, support = _sample_blobs(rng_scene, scene)
    base = sample_deformation(deform_cfg, scene.image_size, int(sub[1]))
    desc_a = map_a = image_a = None
    if with_descriptors:
        raw_a = np.clip(_accel.render_blobs(scene.image_size, centers, quad, amps, support), 0.0, 1.0)
        image_a = render_modality(raw_a, MODALITY_A, int(sub[2]))
        desc_a, map_a = _build_descriptors(image_a, centers, with_semantic)
    tasks = []
    for r in range(rotations):
        angle = _aug_angle(r, rotations)
        rot = _rotation_about_center(angle, 1.0, scene.image_size)
        # left-composing an affine with a TPS is again a TPS on the same
        # control points, so refitting the rotated targets is exact
        ctrl_tgt = rot.apply(base.apply(base.control_points))
        transform = geometry.tps_fit(base.control_points, ctrl_tgt, 0.0) if r else base
        warped_all, kp_b, gt = _warp_side_b(centers, transform, scene.image_size)
        for c in range(contrasts):
            style_b = contrast_variant(MODALITY_B, c, contrasts)
            meta = {
                "task_id": f"cm-{seed:08d}-r{r:02d}-c{c:02d}",
                "kind": "crossmodal",
                "seed": int(seed),
                "rotation_index": r,
                "contrast_index": c,
                "rotation": angle,
                "image_size": scene.image_size,
                "gt_tolerance": gt_tolerance,
                "modality_a": "modality_a",
                "modality_b": "modality_b",
                "displacement_sigma": deform_cfg.displacement_sigma,
                "format_version": TASK_FORMAT_VERSION,
            }
            task = PairTask(
                keypoints_a=centers,
                keypoints_b=kp_b,
                gt_transform=transform,
                gt_matches=gt,
                meta=meta,
                desc_a=desc_a,
                map_a=map_a,
                image_a=image_a,
            )
            if with_descriptors:
                raw_b = np.clip(
                    _accel.render_blobs(scene.image_size, warped_all, quad, amps, support), 0.0, 1.0
                )
                noise_seed = int(sub[4 + 2 * (r * contrasts + c)])
                task.image_b = render_modality(raw_b, style_b, noise_seed)
                task.desc_b, task.map_b = _build_descriptors(task.image_b, kp_b, with_semantic)
            assert task.gt_residuals().max(initial=0.0) <= gt_tolerance
            tasks.append(task)
    return tasks


# ---------------------------------------------------------------------------
# persistence: one directory per task
# ---------------------------------------------------------------------------


def _write_png16(path: Path, img: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 65535.0), 0, 65535).astype(np.uint16)
    Image.fromarray(arr).save(path)


def _read_png16(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im, dtype=np.float64)
    return arr / 65535.0


def save_task(task: PairTask, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "meta.json", "w", encoding="utf-8") as f:
        json.dump(task.meta, f, sort_keys=True, indent=1)
        f.write("\n")
    geometry.save_transform(task.gt_transform, d / "transform.json")
    with open(d / "gt_matches.json", "w", encoding="utf-8") as f:
        json.dump(
            {"pairs": task.gt_matches.tolist(), "tolerance": task.gt_tolerance},
            f,
            sort_keys=True,
        )
        f.write("\n")
    kp_only_a = descriptors.DescriptorSet(keypoints=task.keypoints_a)
    kp_only_b = descriptors.DescriptorSet(keypoints=task.keypoints_b)
    descriptors.write_descriptors(task.desc_a if task.desc_a is not None else kp_only_a, d / "desc_a.nmds")
    descriptors.write_descriptors(task.desc_b if task.desc_b is not None else kp_only_b, d / "desc_b.nmds")
    if task.map_a is not None:
        descriptors.write_feature_map(task.map_a, d / "map_a.nmfm")
    if task.map_b is not None:
        descriptors.write_feature_map(task.map_b, d / "map_b.nmfm")
    if task.image_a is not None:
        _write_png16(d / "image_a.png", task.image_a)
    if task.image_b is not None:
        _write_png16(d / "image_b.png", task.image_b)


def load_task(directory, with_images: bool = False) -> PairTask:
    d = Path(directory)
    with open(d / "meta.json", "r", encoding="utf-8") as f:
        meta = json.load(f)
    transform = geometry.load_transform(d / "transform.json")
    with open(d / "gt_matches.json", "r", encoding="utf-8") as f:
        gt = np.asarray(json.load(f)["pairs"], dtype=np.int64).reshape(-1, 2)
    desc_a = descriptors.read_descriptors(d / "desc_a.nmds")
    desc_b = descriptors.read_descriptors(d / "desc_b.nmds")
    task = PairTask(
        keypoints_a=desc_a.keypoints,
        keypoints_b=desc_b.keypoints,
        gt_transform=transform,
        gt_matches=gt,
        meta=meta,
        desc_a=desc_a if desc_a.local is not None else None,
        desc_b=desc_b if desc_b.local is not None else None,
    )
    if (d / "map_a.nmfm").exists():
        task.map_a = descriptors.read_feature_map(d / "map_a.nmfm")
    if (d / "map_b.nmfm").exists():
        task.map_b = descriptors.read_feature_map(d / "map_b.nmfm")
    if with_images:
        if (d / "image_a.png").exists():
            task.image_a = _read_png16(d / "image_a.png")
        if (d / "image_b.png").exists():
            task.image_b = _read_png16(d / "image_b.png")
    return task
