"""Micro-benchmark of the accelerated kernels: numba backend vs numpy fallback."""

from __future__ import annotations

import time

import numpy as np

from . import _accel


def _inputs(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    centers = rng.uniform(10, 500, size=(60, 2))
    sigmas = rng.uniform(2, 6, size=60)
    quad = np.column_stack([1.0 / (2 * sigmas**2), np.zeros(60), 1.0 / (2 * sigmas**2)])
    support = 4.0 * sigmas
    amps = rng.uniform(0.3, 1.0, size=60)
    pts = rng.uniform(0, 511, size=(2000, 2))
    ctrl = rng.uniform(0, 511, size=(64, 2))
    fmap = rng.normal(size=(128, 128, 12)).astype(np.float32)
    xs = rng.uniform(0, 127, size=5000)
    ys = rng.uniform(0, 127, size=5000)
    src = rng.uniform(0, 511, size=(800, 2))
    dst = src + rng.normal(0, 2, size=(800, 2))
    pairs = rng.integers(0, 800, size=(1500, 2))
    pairs[:, 1] = (pairs[:, 0] + 1 + pairs[:, 1] % 799) % 800
    coords = rng.uniform(0, 511, size=(4, 8000, 4))
    return {
        "render_blobs": (512, centers, quad, amps, support),
        "tps_kernel_matrix": (pts, ctrl),
        "bilinear_many": (fmap, xs, ys),
        "ransac_scan": (src, dst, pairs, 9.0),
        "canonical_subset_features": (*coords, 362.0, 362.0),
    }


def run_kernel_bench(repeats: int = 5, seed: int = 0) -> dict:
    """Time each kernel under every available backend; returns a report dict."""
    backends = ["numpy"]
    if _accel.HAVE_NUMBA:
        backends.insert(0, "numba")
    inputs = _inputs(seed)
    rows = []
    for name, args in inputs.items():
        row = {"kernel": name}
        for backend in backends:
            fn = _accel.get_impls(backend)[name]
            fn(*args)  # warm-up (jit compile / cache load)
            best = float("inf")
            for _ in range(repeats):
                t0 = time.perf_counter()
                fn(*args)
                best = min(best, time.perf_counter() - t0)
            row[backend] = best
        if "numba" in row and "numpy" in row and row["numba"] > 0:
            row["speedup"] = row["numpy"] / row["numba"]
        rows.append(row)
    return {"active_backend": _accel.BACKEND, "backends": backends, "repeats": repeats, "rows": rows}


def format_kernel_report(report: dict) -> str:
    headers = ["kernel", *report["backends"]]
    if "numba" in report["backends"]:
        headers.append("speedup")
    lines = []
    rows = []
    for r in report["rows"]:
        row = [r["kernel"]]
        for b in report["backends"]:
            row.append(f"{r[b] * 1e3:.3f} ms")
        if "speedup" in r:
            row.append(f"{r['speedup']:.1f}x")
        rows.append(row)
    widths = [max(len(h), *(len(r[c]) for r in rows)) for c, h in enumerate(headers)]
    lines.append("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)))
    lines.append(f"active backend: {report['active_backend']}")
    return "\n".join(lines) + "\n"
