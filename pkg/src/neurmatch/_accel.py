"""Hot numeric kernels: numba-jitted loops with a pure-numpy fallback.

The backend is picked once at import time from the ``NEURMATCH_BACKEND``
environment variable: ``numba`` (default when numba imports cleanly) or
``numpy``. Both backends implement the same arithmetic; results agree to
floating-point noise (see tests/test_accel.py) and can be timed against
each other with ``neurmatch bench --suite kernels``.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency, but degrade gracefully
    numba = None
    HAVE_NUMBA = False

_ENV_VAR = "NEURMATCH_BACKEND"
_VALID_BACKENDS = ("numba", "numpy")


def _resolve_backend() -> str:
    requested = os.environ.get(_ENV_VAR, "").strip().lower()
    if requested and requested not in _VALID_BACKENDS:
        raise ValueError(f"{_ENV_VAR} must be one of {_VALID_BACKENDS}, got {requested!r}")
    if requested == "numba" and not HAVE_NUMBA:
        raise ImportError(f"{_ENV_VAR}=numba but numba is not importable")
    if requested:
        return requested
    return "numba" if HAVE_NUMBA else "numpy"


BACKEND = _resolve_backend()


# ---------------------------------------------------------------------------
# loop implementations (numba-compilable; also runnable as plain python)
# ---------------------------------------------------------------------------


def _render_blobs_loops(size, centers, quad, amps, support):
    img = np.zeros((size, size), dtype=np.float64)
    n = centers.shape[0]
    for k in range(n):
        cx = centers[k, 0]
        cy = centers[k, 1]
        qa = quad[k, 0]
        qb = quad[k, 1]
        qc = quad[k, 2]
        a = amps[k]
        # support covers ~4 sigma along the major axis; the tail beyond
        # contributes < 4e-4 of the peak
        r = support[k]
        x0 = int(np.floor(cx - r))
        x1 = int(np.ceil(cx + r))
        y0 = int(np.floor(cy - r))
        y1 = int(np.ceil(cy + r))
        if x0 < 0:
            x0 = 0
        if y0 < 0:
            y0 = 0
        if x1 > size - 1:
            x1 = size - 1
        if y1 > size - 1:
            y1 = size - 1
        for y in range(y0, y1 + 1):
            dy = y - cy
            for x in range(x0, x1 + 1):
                dx = x - cx
                img[y, x] += a * np.exp(-(qa * dx * dx + 2.0 * qb * dx * dy + qc * dy * dy))
    return img


def _render_blobs_numpy(size, centers, quad, amps, support):
    img = np.zeros((size, size), dtype=np.float64)
    for k in range(centers.shape[0]):
        cx, cy = centers[k]
        qa, qb, qc = quad[k]
        r = support[k]
        x0 = max(int(np.floor(cx - r)), 0)
        x1 = min(int(np.ceil(cx + r)), size - 1)
        y0 = max(int(np.floor(cy - r)), 0)
        y1 = min(int(np.ceil(cy + r)), size - 1)
        ys = np.arange(y0, y1 + 1, dtype=np.float64) - cy
        xs = np.arange(x0, x1 + 1, dtype=np.float64) - cx
        dx = xs[None, :]
        dy = ys[:, None]
        field = amps[k] * np.exp(-(qa * dx * dx + 2.0 * qb * dx * dy + qc * dy * dy))
        img[y0 : y1 + 1, x0 : x1 + 1] += field
    return img


def _tps_kernel_matrix_loops(pts, ctrl):
    m = pts.shape[0]
    n = ctrl.shape[0]
    out = np.empty((m, n), dtype=np.float64)
    for i in range(m):
        px = pts[i, 0]
        py = pts[i, 1]
        for j in range(n):
            dx = px - ctrl[j, 0]
            dy = py - ctrl[j, 1]
            d2 = dx * dx + dy * dy
            if d2 > 0.0:
                # r^2 log r written as d2 * log(d2) / 2 to avoid the sqrt
                out[i, j] = 0.5 * d2 * np.log(d2)
            else:
                out[i, j] = 0.0
    return out


def _tps_kernel_matrix_numpy(pts, ctrl):
    dx = pts[:, None, 0] - ctrl[None, :, 0]
    dy = pts[:, None, 1] - ctrl[None, :, 1]
    d2 = dx * dx + dy * dy
    safe = np.where(d2 > 0.0, d2, 1.0)
    return np.where(d2 > 0.0, 0.5 * d2 * np.log(safe), 0.0)


def _bilinear_many_loops(data, xs, ys):
    h = data.shape[0]
    w = data.shape[1]
    c = data.shape[2]
    n = xs.shape[0]
    out = np.empty((n, c), dtype=np.float64)
    for k in range(n):
        x = xs[k]
        y = ys[k]
        x0 = int(np.floor(x))
        y0 = int(np.floor(y))
        fx = x - x0
        fy = y - y0
        x0c = min(max(x0, 0), w - 1)
        x1c = min(max(x0 + 1, 0), w - 1)
        y0c = min(max(y0, 0), h - 1)
        y1c = min(max(y0 + 1, 0), h - 1)
        w00 = (1.0 - fx) * (1.0 - fy)
        w01 = fx * (1.0 - fy)
        w10 = (1.0 - fx) * fy
        w11 = fx * fy
        for ch in range(c):
            out[k, ch] = (
                w00 * data[y0c, x0c, ch]
                + w01 * data[y0c, x1c, ch]
                + w10 * data[y1c, x0c, ch]
                + w11 * data[y1c, x1c, ch]
            )
    return out


def _bilinear_many_numpy(data, xs, ys):
    h, w = data.shape[0], data.shape[1]
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = (xs - x0)[:, None]
    fy = (ys - y0)[:, None]
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    d = data.astype(np.float64, copy=False)
    return (
        (1.0 - fx) * (1.0 - fy) * d[y0c, x0c]
        + fx * (1.0 - fy) * d[y0c, x1c]
        + (1.0 - fx) * fy * d[y1c, x0c]
        + fx * fy * d[y1c, x1c]
    )


def _ransac_scan_loops(src, dst, pairs, thresh2):
    n = src.shape[0]
    t_iters = pairs.shape[0]
    best_count = 0
    best_iter = -1
    best = np.zeros(4, dtype=np.float64)
    for t in range(t_iters):
        i = pairs[t, 0]
        j = pairs[t, 1]
        dpx = src[j, 0] - src[i, 0]
        dpy = src[j, 1] - src[i, 1]
        den = dpx * dpx + dpy * dpy
        if den < 1e-24:
            continue
        dqx = dst[j, 0] - dst[i, 0]
        dqy = dst[j, 1] - dst[i, 1]
        # complex ratio (dq / dp) gives scale*rotation as a + ib
        a = (dqx * dpx + dqy * dpy) / den
        b = (dqy * dpx - dqx * dpy) / den
        tx = dst[i, 0] - (a * src[i, 0] - b * src[i, 1])
        ty = dst[i, 1] - (b * src[i, 0] + a * src[i, 1])
        count = 0
        for m in range(n):
            rx = a * src[m, 0] - b * src[m, 1] + tx - dst[m, 0]
            ry = b * src[m, 0] + a * src[m, 1] + ty - dst[m, 1]
            if rx * rx + ry * ry <= thresh2:
                count += 1
        if count > best_count:
            best_count = count
            best_iter = t
            best[0] = a
            best[1] = b
            best[2] = tx
            best[3] = ty
    return best_iter, best_count, best


def _ransac_scan_numpy(src, dst, pairs, thresh2):
    i = pairs[:, 0]
    j = pairs[:, 1]
    dp = src[j] - src[i]
    dq = dst[j] - dst[i]
    den = dp[:, 0] ** 2 + dp[:, 1] ** 2
    valid = den >= 1e-24
    den_safe = np.where(valid, den, 1.0)
    a = (dq[:, 0] * dp[:, 0] + dq[:, 1] * dp[:, 1]) / den_safe
    b = (dq[:, 1] * dp[:, 0] - dq[:, 0] * dp[:, 1]) / den_safe
    tx = dst[i, 0] - (a * src[i, 0] - b * src[i, 1])
    ty = dst[i, 1] - (b * src[i, 0] + a * src[i, 1])
    counts = np.zeros(pairs.shape[0], dtype=np.int64)
    # chunk the (iters, n) residual grid to bound memory
    chunk = max(1, int(4_000_000 // max(src.shape[0], 1)))
    for lo in range(0, pairs.shape[0], chunk):
        hi = min(lo + chunk, pairs.shape[0])
        rx = (
            a[lo:hi, None] * src[None, :, 0]
            - b[lo:hi, None] * src[None, :, 1]
            + tx[lo:hi, None]
            - dst[None, :, 0]
        )
        ry = (
            b[lo:hi, None] * src[None, :, 0]
            + a[lo:hi, None] * src[None, :, 1]
            + ty[lo:hi, None]
            - dst[None, :, 1]
        )
        counts[lo:hi] = np.sum(rx * rx + ry * ry <= thresh2, axis=1)
    counts[~valid] = 0
    best_count = int(counts.max()) if counts.size else 0
    if best_count <= 0:
        return -1, 0, np.zeros(4, dtype=np.float64)
    best_iter = int(np.argmax(counts))
    best = np.array([a[best_iter], b[best_iter], tx[best_iter], ty[best_iter]])
    return best_iter, best_count, best


def _canonical_subset_features_loops(ax, ay, bx, by, fallback_a, fallback_b):
    s = ax.shape[0]
    k = ax.shape[1]
    out = np.empty((s, 4 * k), dtype=np.float64)
    order = np.empty(k, dtype=np.int64)
    for r in range(s):
        for m in range(k):
            order[m] = m
        # stable insertion sort on (ax, ay)
        for m in range(1, k):
            cur = order[m]
            pos = m - 1
            while pos >= 0 and (
                ax[r, order[pos]] > ax[r, cur]
                or (ax[r, order[pos]] == ax[r, cur] and ay[r, order[pos]] > ay[r, cur])
            ):
                order[pos + 1] = order[pos]
                pos -= 1
            order[pos + 1] = cur
        # accumulate in canonical order so the result is exactly
        # permutation-invariant at the bit level
        cax = 0.0
        cay = 0.0
        cbx = 0.0
        cby = 0.0
        for m in range(k):
            o = order[m]
            cax += ax[r, o]
            cay += ay[r, o]
            cbx += bx[r, o]
            cby += by[r, o]
        cax /= k
        cay /= k
        cbx /= k
        cby /= k
        ra = 0.0
        rb = 0.0
        for m in range(k):
            o = order[m]
            ra += (ax[r, o] - cax) ** 2 + (ay[r, o] - cay) ** 2
            rb += (bx[r, o] - cbx) ** 2 + (by[r, o] - cby) ** 2
        ra = np.sqrt(ra / k)
        rb = np.sqrt(rb / k)
        if ra < 1.0:
            ra = fallback_a
        if rb < 1.0:
            rb = fallback_b
        for m in range(k):
            o = order[m]
            vax = (ax[r, o] - cax) / ra
            vay = (ay[r, o] - cay) / ra
            vbx = (bx[r, o] - cbx) / rb
            vby = (by[r, o] - cby) / rb
            out[r, 4 * m + 0] = min(max(vax, -1.0), 1.0)
            out[r, 4 * m + 1] = min(max(vay, -1.0), 1.0)
            out[r, 4 * m + 2] = min(max(vbx, -1.0), 1.0)
            out[r, 4 * m + 3] = min(max(vby, -1.0), 1.0)
    return out


def _canonical_subset_features_numpy(ax, ay, bx, by, fallback_a, fallback_b):
    s, k = ax.shape
    order = np.lexsort((ay, ax), axis=-1)
    axs = np.take_along_axis(ax, order, axis=1)
    ays = np.take_along_axis(ay, order, axis=1)
    bxs = np.take_along_axis(bx, order, axis=1)
    bys = np.take_along_axis(by, order, axis=1)
    cax = axs.mean(axis=1, keepdims=True)
    cay = ays.mean(axis=1, keepdims=True)
    cbx = bxs.mean(axis=1, keepdims=True)
    cby = bys.mean(axis=1, keepdims=True)
    dax = axs - cax
    day = ays - cay
    dbx = bxs - cbx
    dby = bys - cby
    ra = np.sqrt((dax**2 + day**2).mean(axis=1, keepdims=True))
    rb = np.sqrt((dbx**2 + dby**2).mean(axis=1, keepdims=True))
    ra = np.where(ra < 1.0, fallback_a, ra)
    rb = np.where(rb < 1.0, fallback_b, rb)
    out = np.empty((s, 4 * k), dtype=np.float64)
    out[:, 0::4] = np.clip(dax / ra, -1.0, 1.0)
    out[:, 1::4] = np.clip(day / ra, -1.0, 1.0)
    out[:, 2::4] = np.clip(dbx / rb, -1.0, 1.0)
    out[:, 3::4] = np.clip(dby / rb, -1.0, 1.0)
    return out


_NUMPY_IMPLS = {
    "render_blobs": _render_blobs_numpy,
    "tps_kernel_matrix": _tps_kernel_matrix_numpy,
    "bilinear_many": _bilinear_many_numpy,
    "ransac_scan": _ransac_scan_numpy,
    "canonical_subset_features": _canonical_subset_features_numpy,
}

_LOOP_IMPLS = {
    "render_blobs": _render_blobs_loops,
    "tps_kernel_matrix": _tps_kernel_matrix_loops,
    "bilinear_many": _bilinear_many_loops,
    "ransac_scan": _ransac_scan_loops,
    "canonical_subset_features": _canonical_subset_features_loops,
}

_impl_cache: dict[str, dict] = {}


def get_impls(backend: str) -> dict:
    """Return the kernel table for ``backend`` ('numba' or 'numpy')."""
    if backend not in _VALID_BACKENDS:
        raise ValueError(f"unknown backend {backend!r}")
    if backend in _impl_cache:
        return _impl_cache[backend]
    if backend == "numpy":
        table = dict(_NUMPY_IMPLS)
    else:
        if not HAVE_NUMBA:
            raise ImportError("numba backend requested but numba is not importable")
        jit = numba.njit(cache=True, fastmath=False)
        table = {name: jit(fn) for name, fn in _LOOP_IMPLS.items()}
    _impl_cache[backend] = table
    return table


_ACTIVE = get_impls(BACKEND)


def render_blobs(
    size: int, centers: np.ndarray, quad: np.ndarray, amps: np.ndarray, support: np.ndarray
) -> np.ndarray:
    """Accumulate anisotropic Gaussian blobs onto a size x size float64 grid.

    quad holds per-blob inverse-covariance coefficients (qa, qb, qc) of the
    exponent qa dx^2 + 2 qb dx dy + qc dy^2; support is the per-blob window
    half-width in pixels.
    """
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    quad = np.ascontiguousarray(quad, dtype=np.float64)
    amps = np.ascontiguousarray(amps, dtype=np.float64)
    support = np.ascontiguousarray(support, dtype=np.float64)
    return _ACTIVE["render_blobs"](size, centers, quad, amps, support)


def tps_kernel_matrix(pts: np.ndarray, ctrl: np.ndarray) -> np.ndarray:
    """Pairwise thin-plate kernel U(r) = r^2 log r, with U(0) = 0."""
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    ctrl = np.ascontiguousarray(ctrl, dtype=np.float64)
    return _ACTIVE["tps_kernel_matrix"](pts, ctrl)


def bilinear_many(data: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear samples of an (H, W, C) grid at fractional (x, y) positions."""
    data = np.ascontiguousarray(data)
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    return _ACTIVE["bilinear_many"](data, xs, ys)


def ransac_scan(src: np.ndarray, dst: np.ndarray, pairs: np.ndarray, thresh: float):
    """Evaluate 2-point similarity hypotheses; returns (best_iter, count, a,b,tx,ty)."""
    src = np.ascontiguousarray(src, dtype=np.float64)
    dst = np.ascontiguousarray(dst, dtype=np.float64)
    pairs = np.ascontiguousarray(pairs, dtype=np.int64)
    return _ACTIVE["ransac_scan"](src, dst, pairs, float(thresh) ** 2)


def canonical_subset_features(
    ax: np.ndarray,
    ay: np.ndarray,
    bx: np.ndarray,
    by: np.ndarray,
    fallback_a: float,
    fallback_b: float,
) -> np.ndarray:
    """Centroid/RMS-normalized, A-side-sorted subset coordinates, clamped to [-1, 1]."""
    ax = np.ascontiguousarray(ax, dtype=np.float64)
    ay = np.ascontiguousarray(ay, dtype=np.float64)
    bx = np.ascontiguousarray(bx, dtype=np.float64)
    by = np.ascontiguousarray(by, dtype=np.float64)
    return _ACTIVE["canonical_subset_features"](ax, ay, bx, by, float(fallback_a), float(fallback_b))
