"""Backend equivalence: the numba kernels and the numpy fallbacks must agree."""

import numpy as np
import pytest

from neurmatch import _accel

pytestmark = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not available")


@pytest.fixture(scope="module")
def impls():
    return _accel.get_impls("numba"), _accel.get_impls("numpy")


def test_render_blobs_backends_agree(impls):
    nb, npy = impls
    rng = np.random.default_rng(0)
    centers = rng.uniform(5, 120, size=(15, 2))
    sig = rng.uniform(1.5, 5.0, size=15)
    quad = np.column_stack([1 / (2 * sig**2), np.zeros(15), 1 / (2 * sig**2)])
    amps = rng.uniform(0.2, 1.0, size=15)
    support = 4 * sig
    a = nb["render_blobs"](128, centers, quad, amps, support)
    b = npy["render_blobs"](128, centers, quad, amps, support)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-14)


def test_tps_kernel_backends_agree(impls):
    nb, npy = impls
    rng = np.random.default_rng(1)
    pts = rng.uniform(0, 500, size=(60, 2))
    ctrl = rng.uniform(0, 500, size=(16, 2))
    ctrl[3] = pts[10]  # exercise the r = 0 branch
    a = nb["tps_kernel_matrix"](pts, ctrl)
    b = npy["tps_kernel_matrix"](pts, ctrl)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
    assert a[10, 3] == 0.0


def test_bilinear_backends_agree(impls):
    nb, npy = impls
    rng = np.random.default_rng(2)
    data = rng.normal(size=(32, 40, 7)).astype(np.float32)
    xs = rng.uniform(-0.49, 39.49, size=200)
    ys = rng.uniform(-0.49, 31.49, size=200)
    a = nb["bilinear_many"](data, xs, ys)
    b = npy["bilinear_many"](data, xs, ys)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_ransac_scan_backends_agree(impls):
    nb, npy = impls
    rng = np.random.default_rng(3)
    src = rng.uniform(0, 200, size=(50, 2))
    dst = src @ np.array([[0.9, -0.2], [0.2, 0.9]]).T + 5.0
    dst[::4] += rng.uniform(20, 60, size=(13, 2))
    pairs = rng.integers(0, 50, size=(300, 2))
    pairs[:, 1] = (pairs[:, 0] + 1 + pairs[:, 1] % 49) % 50
    ra = nb["ransac_scan"](src, dst, pairs, 9.0)
    rb = npy["ransac_scan"](src, dst, pairs, 9.0)
    assert ra[0] == rb[0]
    assert ra[1] == rb[1]
    assert np.allclose(ra[2], rb[2], rtol=1e-12)


def test_canonical_features_backends_agree(impls):
    nb, npy = impls
    rng = np.random.default_rng(4)
    coords = rng.uniform(0, 512, size=(4, 500, 4))
    a = nb["canonical_subset_features"](*coords, 362.0, 362.0)
    b = npy["canonical_subset_features"](*coords, 362.0, 362.0)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
    assert a.min() >= -1.0 and a.max() <= 1.0


def test_same_backend_bit_deterministic():
    rng = np.random.default_rng(5)
    pts = rng.uniform(0, 100, size=(30, 2))
    ctrl = rng.uniform(0, 100, size=(8, 2))
    a = _accel.tps_kernel_matrix(pts, ctrl)
    b = _accel.tps_kernel_matrix(pts, ctrl)
    assert np.array_equal(a, b)


def test_backend_env_validation(monkeypatch):
    monkeypatch.setenv(_accel._ENV_VAR, "cuda")
    with pytest.raises(ValueError):
        _accel._resolve_backend()
    monkeypatch.setenv(_accel._ENV_VAR, "numpy")
    assert _accel._resolve_backend() == "numpy"
