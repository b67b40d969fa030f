"""Keypoint descriptor sets, semantic feature maps, fusion, and file formats.

Two binary interchange formats live here (little-endian throughout):

  NMDS  magic "NMDS", u16 version=1, u32 N, u32 D_local, u32 D_sem,
        u32 D_fused (zero widths mean the matrix is absent), N x 2 float64
        keypoints, then each present matrix row-major float32.
  NMFM  magic "NMFM", u16 version=1, u32 H, u32 W, u32 C, float32 stride,
        H x W x C row-major float32 data.

The built-in extractors (patch descriptors, multi-scale context maps) stand
in for external detector/backbone models so the whole pipeline runs offline;
externally produced files with the same layout drop in transparently.
"""

from __future__ import annotations

import io
import json
import struct
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from . import _accel, nn

NMDS_MAGIC = b"NMDS"
NMFM_MAGIC = b"NMFM"
NMDS_VERSION = 1
NMFM_VERSION = 1

DEFAULT_PATCH = 15
DEFAULT_FUSED_DIM = 128
DEFAULT_FUSION_HIDDEN = 256
SEMANTIC_STRIDE = 4.0


class FormatError(ValueError):
    """Malformed interchange file; ``offset`` is the failing byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


@dataclass
class DescriptorSet:
    keypoints: np.ndarray  # (N, 2) float64
    local: np.ndarray | None = None  # (N, D_local) float32
    semantic: np.ndarray | None = None  # (N, D_sem) float32
    fused: np.ndarray | None = None  # (N, D_fused) float32, rows unit-L2
    source: str = "external"

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 2)
        n = self.keypoints.shape[0]
        for name in ("local", "semantic", "fused"):
            mat = getattr(self, name)
            if mat is None:
                continue
            mat = np.asarray(mat, dtype=np.float32)
            if mat.ndim != 2 or mat.shape[0] != n:
                raise ValueError(f"{name} matrix must have {n} rows, got shape {mat.shape}")
            setattr(self, name, mat)
        if self.fused is not None and n > 0:
            norms = np.linalg.norm(self.fused.astype(np.float64), axis=1)
            bad = np.abs(norms[norms > 0] - 1.0) > 1e-6
            if np.any(bad):
                raise ValueError("fused rows must be unit-L2-normalized")

    def __len__(self) -> int:
        return self.keypoints.shape[0]


@dataclass
class FeatureMap:
    data: np.ndarray  # (H, W, C) float32
    stride: float

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValueError(f"feature map data must be (H, W, C), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("feature map contains non-finite entries")
        if self.stride < 1.0:
            raise ValueError(f"stride must be >= 1, got {self.stride}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def bilinear_sample(fmap: FeatureMap, p) -> np.ndarray:
    """Channel vector interpolated at image position p (x, y)."""
    return bilinear_sample_many(fmap, np.asarray(p, dtype=np.float64).reshape(1, 2))[0]


def bilinear_sample_many(fmap: FeatureMap, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    xs = pts[:, 0] / fmap.stride
    ys = pts[:, 1] / fmap.stride
    # constant extension is allowed within half a cell of the border
    if np.any(xs < -0.5) or np.any(xs > fmap.width - 0.5) or np.any(ys < -0.5) or np.any(ys > fmap.height - 0.5):
        raise ValueError("keypoint outside feature map bounds")
    return _accel.bilinear_many(fmap.data, xs, ys)


# ---------------------------------------------------------------------------
# built-in extractors
# ---------------------------------------------------------------------------


def compute_patch_descriptor(image, keypoints, patch: int = DEFAULT_PATCH) -> DescriptorSet:
    """Mean-subtracted, L2-normalized pixel patches around each keypoint.

    Invariant to global affine intensity changes; border patches use
    reflected padding. Constant patches normalize to zero vectors (a
    degenerate-descriptor warning is emitted).
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("image must be 2-D grayscale")
    if patch % 2 != 1 or patch < 3:
        raise ValueError("patch size must be odd and >= 3")
    kps = np.asarray(keypoints, dtype=np.float64).reshape(-1, 2)
    half = patch // 2
    padded = np.pad(img, half, mode="reflect")
    out = np.empty((kps.shape[0], patch * patch), dtype=np.float32)
    degenerate = 0
    for idx, (x, y) in enumerate(kps):
        cx = int(np.clip(np.rint(x), 0, img.shape[1] - 1))
        cy = int(np.clip(np.rint(y), 0, img.shape[0] - 1))
        window = padded[cy : cy + patch, cx : cx + patch].ravel()
        centered = window - window.mean()
        norm = np.linalg.norm(centered)
        if norm < 1e-12:
            out[idx] = 0.0
            degenerate += 1
        else:
            out[idx] = (centered / norm).astype(np.float32)
    if degenerate:
        warnings.warn(f"{degenerate} constant patch(es) produced degenerate zero descriptors")
    return DescriptorSet(keypoints=kps, local=out, source="builtin-patch")


def compute_semantic_map(image, stride: float = SEMANTIC_STRIDE) -> FeatureMap:
    """Multi-scale context features standing in for a pretrained backbone.

    Channels: Gaussian pyramid levels, difference-of-Gaussian band responses,
    coarse gradient magnitudes, and a local-contrast channel, each
    standardized over the image so the map is robust to global gain/gamma
    shifts between modalities.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("image must be 2-D grayscale")
    # receptive fields must span several blob spacings so the channel values
    # encode the surrounding constellation, not the blob under the keypoint
    g = {s: gaussian_filter(img, s, mode="nearest") for s in (8.0, 16.0, 32.0, 64.0)}
    channels = [g[8.0], g[16.0], g[32.0], g[64.0]]
    channels += [g[8.0] - g[16.0], g[16.0] - g[32.0], g[32.0] - g[64.0]]
    for s in (16.0, 32.0, 64.0):
        gy, gx = np.gradient(g[s])
        channels.extend([gx * s, gy * s, np.hypot(gx, gy) * s])
    channels.append(np.sqrt(np.maximum(gaussian_filter((img - g[16.0]) ** 2, 16.0, mode="nearest"), 0.0)))
    step = int(stride)

    def grid_positions(extent: int) -> np.ndarray:
        # enough cells that every image pixel sits within half a cell of the
        # grid; the final cell clamps to the last pixel
        n = (extent - 1) // step + 1
        if (n - 0.5) * step < extent - 1:
            n += 1
        return np.minimum(np.arange(n) * step, extent - 1)

    rows = grid_positions(img.shape[0])
    cols = grid_positions(img.shape[1])
    data = np.empty((rows.size, cols.size, len(channels)), dtype=np.float32)
    for ci, ch in enumerate(channels):
        mu = ch.mean()
        sd = ch.std()
        normed = (ch - mu) / (sd if sd > 1e-12 else 1.0)
        data[:, :, ci] = normed[np.ix_(rows, cols)].astype(np.float32)
    return FeatureMap(data=data, stride=float(stride))


def attach_semantic(ds: DescriptorSet, fmap: FeatureMap) -> DescriptorSet:
    """Sample the feature map at the set's keypoints into the semantic slot."""
    sem = bilinear_sample_many(fmap, ds.keypoints).astype(np.float32)
    return replace(ds, semantic=sem)


# ---------------------------------------------------------------------------
# fusion
# ---------------------------------------------------------------------------


@dataclass
class FusionNet:
    net: nn.DenseNet

    @property
    def input_dim(self) -> int:
        return self.net.input_dim

    @property
    def output_dim(self) -> int:
        return self.net.output_dim


def make_fusion_net(
    d_local: int,
    d_sem: int,
    d_fused: int = DEFAULT_FUSED_DIM,
    hidden: int = DEFAULT_FUSION_HIDDEN,
    seed: int = 0,
) -> FusionNet:
    net = nn.init_net([d_local + d_sem, hidden, d_fused], ["relu", "none"], seed=seed)
    return FusionNet(net=net)


def _normalize_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    return mat / np.where(norms > 1e-12, norms, 1.0)


def fuse(ds: DescriptorSet, fusion: FusionNet) -> DescriptorSet:
    """Run [local ; semantic] rows through the fusion net and L2-normalize."""
    if ds.local is None or ds.semantic is None:
        raise ValueError("fuse requires both local and semantic descriptors")
    joint = np.concatenate([ds.local, ds.semantic], axis=1).astype(np.float64)
    if joint.shape[1] != fusion.input_dim:
        raise ValueError(
            f"descriptor width {joint.shape[1]} does not match fusion input {fusion.input_dim}"
        )
    if joint.shape[0] == 0:
        fused = np.zeros((0, fusion.output_dim), dtype=np.float32)
    else:
        fused = _normalize_rows(nn.forward(fusion.net, joint)).astype(np.float32)
    return replace(ds, fused=fused)


def train_fusion(
    pairs_a: np.ndarray,
    pairs_b: np.ndarray,
    cfg: nn.TrainConfig,
    d_fused: int = DEFAULT_FUSED_DIM,
    hidden: int = DEFAULT_FUSION_HIDDEN,
    margin: float = 0.2,
):
    """Train the fusion perceptron so corresponding rows embed nearby.

    pairs_a/pairs_b are aligned (P, D_local + D_sem) matrices of concatenated
    descriptors for ground-truth corresponding keypoints from the two
    modalities. Positives pull cosine similarity toward 1; shuffled partners
    are pushed below ``margin``. Returns (FusionNet, per-epoch loss curve).
    """
    xa = np.asarray(pairs_a, dtype=np.float64)
    xb = np.asarray(pairs_b, dtype=np.float64)
    if xa.shape != xb.shape or xa.ndim != 2:
        raise ValueError("paired descriptor matrices must share an identical 2-D shape")
    n, din = xa.shape
    if n < 2:
        raise ValueError("need at least 2 pairs to form negatives")
    fusion = make_fusion_net(din, 0, d_fused=d_fused, hidden=hidden, seed=cfg.seed)
    net = fusion.net
    rng = np.random.default_rng(cfg.seed)
    adam = nn.AdamState(net, cfg)
    curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            sel = order[lo : lo + cfg.batch_size]
            if sel.size < 2:
                continue
            za = nn.forward(net, xa[sel])
            zb = nn.forward(net, xb[sel])
            na = np.linalg.norm(za, axis=1, keepdims=True)
            nb = np.linalg.norm(zb, axis=1, keepdims=True)
            na = np.where(na > 1e-12, na, 1.0)
            nb = np.where(nb > 1e-12, nb, 1.0)
            ua = za / na
            ub = zb / nb
            # negatives: pair each row of A with the next row's B (cyclic shift)
            neg = np.roll(np.arange(sel.size), -1)
            cos_pos = np.sum(ua * ub, axis=1)
            cos_neg = np.sum(ua * ub[neg], axis=1)
            hinge = np.maximum(cos_neg - margin, 0.0)
            loss = float(np.mean(1.0 - cos_pos) + np.mean(hinge**2))
            if not np.isfinite(loss):
                raise nn.DivergenceError(f"non-finite fusion loss at epoch {epoch}", epoch=epoch)
            total += loss * sel.size
            b = sel.size
            dua = -ub / b
            dub = -ua / b
            coeff = (2.0 * hinge / b)[:, None]
            dua += coeff * ub[neg]
            dub_neg = coeff * ua
            np.add.at(dub, neg, dub_neg)
            # back through the row normalization: (I - u u^T) / |z|
            ga = (dua - ua * np.sum(dua * ua, axis=1, keepdims=True)) / na
            gb = (dub - ub * np.sum(dub * ub, axis=1, keepdims=True)) / nb
            grads_a = nn.backward(net, xa[sel], ga)
            grads_b = nn.backward(net, xb[sel], gb)
            grads = [(gwa + gwb, gba + gbb) for (gwa, gba), (gwb, gbb) in zip(grads_a, grads_b)]
            adam.step(net, grads)
        curve.append(total / n)
    return FusionNet(net=net), curve


FUSION_FORMAT_VERSION = 1


def save_fusion(fusion: FusionNet, path) -> None:
    payload = {
        "format_version": FUSION_FORMAT_VERSION,
        "fusion": {"input_dim": fusion.input_dim, "output_dim": fusion.output_dim},
        "net": nn.net_to_dict(fusion.net),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True)
        f.write("\n")


def load_fusion(path) -> FusionNet:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    if payload.get("format_version") != FUSION_FORMAT_VERSION:
        raise ValueError(f"unsupported fusion format version {payload.get('format_version')!r}")
    return FusionNet(net=nn.net_from_dict(payload["net"]))


# ---------------------------------------------------------------------------
# interchange formats
# ---------------------------------------------------------------------------


def _read_exact(f, count: int, offset: int, what: str) -> bytes:
    buf = f.read(count)
    if len(buf) != count:
        raise FormatError(f"truncated file while reading {what}", offset + len(buf))
    return buf


def write_descriptors(ds: DescriptorSet, path) -> None:
    n = len(ds)
    d_local = ds.local.shape[1] if ds.local is not None else 0
    d_sem = ds.semantic.shape[1] if ds.semantic is not None else 0
    d_fused = ds.fused.shape[1] if ds.fused is not None else 0
    own = isinstance(path, (str, bytes)) or hasattr(path, "__fspath__")
    f = open(path, "wb") if own else path
    try:
        f.write(struct.pack("<4sHIIII", NMDS_MAGIC, NMDS_VERSION, n, d_local, d_sem, d_fused))
        f.write(np.ascontiguousarray(ds.keypoints, dtype="<f8").tobytes())
        for mat in (ds.local, ds.semantic, ds.fused):
            if mat is not None:
                f.write(np.ascontiguousarray(mat, dtype="<f4").tobytes())
    finally:
        if own:
            f.close()


def read_descriptors(path) -> DescriptorSet:
    own = isinstance(path, (str, bytes)) or hasattr(path, "__fspath__")
    f = open(path, "rb") if own else path
    try:
        header = _read_exact(f, 22, 0, "NMDS header")
        magic, version, n, d_local, d_sem, d_fused = struct.unpack("<4sHIIII", header)
        if magic != NMDS_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {NMDS_MAGIC!r}", 0)
        if version != NMDS_VERSION:
            raise FormatError(f"unsupported NMDS version {version}", 4)
        offset = 22
        kp_bytes = _read_exact(f, n * 16, offset, "keypoints")
        keypoints = np.frombuffer(kp_bytes, dtype="<f8").reshape(n, 2).copy()
        offset += n * 16
        mats = {}
        for name, width in (("local", d_local), ("semantic", d_sem), ("fused", d_fused)):
            if width == 0:
                mats[name] = None
                continue
            raw = _read_exact(f, n * width * 4, offset, f"{name} matrix")
            mats[name] = np.frombuffer(raw, dtype="<f4").reshape(n, width).copy()
            offset += n * width * 4
        trailing = f.read(1)
        if trailing:
            raise FormatError("unexpected trailing bytes", offset)
        return DescriptorSet(keypoints=keypoints, source="external", **mats)
    finally:
        if own:
            f.close()


def write_feature_map(fmap: FeatureMap, path) -> None:
    own = isinstance(path, (str, bytes)) or hasattr(path, "__fspath__")
    f = open(path, "wb") if own else path
    try:
        f.write(
            struct.pack(
                "<4sHIIIf", NMFM_MAGIC, NMFM_VERSION, fmap.height, fmap.width, fmap.channels, fmap.stride
            )
        )
        f.write(np.ascontiguousarray(fmap.data, dtype="<f4").tobytes())
    finally:
        if own:
            f.close()


def read_feature_map(path) -> FeatureMap:
    own = isinstance(path, (str, bytes)) or hasattr(path, "__fspath__")
    f = open(path, "rb") if own else path
    try:
        header = _read_exact(f, 22, 0, "NMFM header")
        magic, version, h, w, c, stride = struct.unpack("<4sHIIIf", header)
        if magic != NMFM_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {NMFM_MAGIC!r}", 0)
        if version != NMFM_VERSION:
            raise FormatError(f"unsupported NMFM version {version}", 4)
        offset = 22
        raw = _read_exact(f, h * w * c * 4, offset, "feature data")
        data = np.frombuffer(raw, dtype="<f4").reshape(h, w, c).copy()
        offset += h * w * c * 4
        if f.read(1):
            raise FormatError("unexpected trailing bytes", offset)
        return FeatureMap(data=data, stride=float(stride))
    finally:
        if own:
            f.close()


def descriptors_to_bytes(ds: DescriptorSet) -> bytes:
    buf = io.BytesIO()
    write_descriptors(ds, buf)
    return buf.getvalue()


def descriptors_from_bytes(raw: bytes) -> DescriptorSet:
    return read_descriptors(io.BytesIO(raw))
