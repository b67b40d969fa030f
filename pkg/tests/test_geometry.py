import numpy as np
import pytest

from neurmatch import geometry
from neurmatch.geometry import (
    DegenerateConfigurationError,
    SimilarityTransform,
    similarity_fit,
    tps_fit,
    transform_from_dict,
    transform_to_dict,
)


def tps_oracle_eval(control, weights, affine, pts):
    """Independent straight-loop evaluation of the TPS closed form."""
    import math

    out = []
    for px, py in pts:
        vx = affine[0][0] * px + affine[0][1] * py + affine[0][2]
        vy = affine[1][0] * px + affine[1][1] * py + affine[1][2]
        for (cx, cy), (wx, wy) in zip(control, weights):
            r2 = (px - cx) ** 2 + (py - cy) ** 2
            u = 0.0 if r2 == 0.0 else 0.5 * r2 * math.log(r2)
            vx += wx * u
            vy += wy * u
        out.append((vx, vy))
    return np.array(out)


def solve_tps_dense_oracle(src, dst):
    """Independent dense assembly + solve of the interpolation system."""
    import math

    n = len(src)
    size = n + 3
    l = np.zeros((size, size))
    for i in range(n):
        for j in range(n):
            r2 = np.sum((src[i] - src[j]) ** 2)
            l[i, j] = 0.0 if r2 == 0.0 else 0.5 * r2 * math.log(r2)
        l[i, n] = 1.0
        l[i, n + 1] = src[i, 0]
        l[i, n + 2] = src[i, 1]
        l[n, i] = 1.0
        l[n + 1, i] = src[i, 0]
        l[n + 2, i] = src[i, 1]
    rhs = np.zeros((size, 2))
    rhs[:n] = dst
    sol = np.linalg.solve(l, rhs)
    weights = sol[:n]
    affine = np.array(
        [
            [sol[n + 1, 0], sol[n + 2, 0], sol[n, 0]],
            [sol[n + 1, 1], sol[n + 2, 1], sol[n, 1]],
        ]
    )
    return weights, affine


def test_tps_identity_interpolation():
    rng = np.random.default_rng(0)
    src = rng.uniform(0, 100, size=(9, 2))
    t = tps_fit(src, src, 0.0)
    pts = rng.uniform(-50, 150, size=(40, 2))
    assert np.allclose(t.apply(pts), pts, atol=1e-9)
    assert np.abs(t.weights).max() < 1e-9


def test_tps_apply_trivial_cases():
    src = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    ident = tps_fit(src, src, 0.0)
    assert np.allclose(ident.apply_point([3.5, -2.0]), [3.5, -2.0], atol=1e-9)
    shift = tps_fit(src, src + np.array([1.0, 2.0]), 0.0)
    assert np.allclose(shift.apply_point([0.0, 0.0]), [1.0, 2.0], atol=1e-9)


def test_tps_three_points_affine_annihilates_kernel():
    src = np.array([[0.0, 0.0], [8.0, 1.0], [2.0, 7.0]])
    a = np.array([[1.2, -0.3], [0.4, 0.8]])
    b = np.array([3.0, -1.0])
    dst = src @ a.T + b
    t = tps_fit(src, dst, 0.0)
    assert np.abs(t.weights).max() < 1e-9
    assert np.allclose(t.affine[:, :2], a, atol=1e-9)
    assert np.allclose(t.affine[:, 2], b, atol=1e-9)


def test_tps_three_point_system_matches_dense_oracle():
    rng = np.random.default_rng(7)
    src = np.array([[0.0, 0.0], [9.0, 2.0], [3.0, 8.0]])
    dst = src + rng.normal(0, 2.0, src.shape)
    weights, affine = solve_tps_dense_oracle(src, dst)
    t = tps_fit(src, dst, 0.0)
    probes = rng.uniform(-5, 15, size=(20, 2))
    expected = tps_oracle_eval(src.tolist(), weights.tolist(), affine.tolist(), probes)
    assert np.allclose(t.apply(probes), expected, atol=1e-8)


def test_tps_grid_exact_interpolation():
    rng = np.random.default_rng(3)
    axis = np.linspace(0.0, 511.0, 4)
    gx, gy = np.meshgrid(axis, axis)
    src = np.column_stack([gx.ravel(), gy.ravel()])
    dst = src + rng.normal(0, 20.0, src.shape)
    t = tps_fit(src, dst, 0.0)
    err = np.abs(t.apply(src) - dst)
    assert (err / np.maximum(np.abs(dst), 1.0)).max() < 1e-9


def test_tps_kernel_sum_matches_independent_formula():
    rng = np.random.default_rng(11)
    src = rng.uniform(0, 50, size=(4, 2))
    dst = src + rng.normal(0, 3, src.shape)
    t = tps_fit(src, dst, 0.0)
    probes = rng.uniform(0, 50, size=(10, 2))
    expected = tps_oracle_eval(
        t.control_points.tolist(), t.weights.tolist(), t.affine.tolist(), probes
    )
    assert np.allclose(t.apply(probes), expected, atol=1e-10)


def test_tps_side_conditions_after_fit():
    rng = np.random.default_rng(5)
    for trial in range(10):
        src = rng.uniform(0, 300, size=(12, 2))
        dst = src + rng.normal(0, 10, src.shape)
        t = tps_fit(src, dst, 0.0)
        assert t.side_condition_residual() < 1e-9


def test_tps_permutation_invariance():
    rng = np.random.default_rng(9)
    src = rng.uniform(0, 200, size=(10, 2))
    dst = src + rng.normal(0, 8, src.shape)
    perm = rng.permutation(10)
    t1 = tps_fit(src, dst, 0.0)
    t2 = tps_fit(src[perm], dst[perm], 0.0)
    pts = rng.uniform(0, 200, size=(30, 2))
    assert np.allclose(t1.apply(pts), t2.apply(pts), atol=1e-12 * 200)


def test_tps_lambda_zero_vs_smoothing():
    rng = np.random.default_rng(13)
    src = rng.uniform(0, 100, size=(16, 2))
    dst = src + rng.normal(0, 5, src.shape)
    exact = tps_fit(src, dst, 0.0)
    smooth = tps_fit(src, dst, 1.0)
    res_exact = np.linalg.norm(exact.apply(src) - dst, axis=1).max()
    res_smooth = np.linalg.norm(smooth.apply(src) - dst, axis=1).max()
    assert res_exact < 1e-9 * 100
    assert res_smooth > res_exact


def test_tps_degenerate_collinear():
    src = np.column_stack([np.arange(5.0), 2.0 * np.arange(5.0)])
    with pytest.raises(DegenerateConfigurationError):
        tps_fit(src, src + 1.0, 0.0)


def test_tps_argument_errors():
    src = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        tps_fit(src, src[:2], 0.0)
    with pytest.raises(ValueError):
        tps_fit(src[:2], src[:2], 0.0)
    with pytest.raises(ValueError):
        tps_fit(src, src, -1.0)
    with pytest.raises(ValueError):
        tps_fit(src * np.nan, src, 0.0)


def test_similarity_identity():
    pts = np.array([[0.0, 0.0], [3.0, 1.0], [2.0, 5.0]])
    t = similarity_fit(pts, pts)
    assert t.scale == pytest.approx(1.0, abs=1e-12)
    assert t.rotation == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(t.translation, 0.0, atol=1e-12)


def test_similarity_quarter_turn_case():
    src = np.array([[0.0, 0.0], [1.0, 0.0]])
    dst = np.array([[1.0, 1.0], [1.0, 2.0]])
    t = similarity_fit(src, dst)
    assert t.scale == pytest.approx(1.0, abs=1e-12)
    assert t.rotation == pytest.approx(np.pi / 2, abs=1e-12)
    assert np.allclose(t.translation, [1.0, 1.0], atol=1e-12)
    assert np.allclose(t.apply(src), dst, atol=1e-12)


def test_similarity_least_squares_outlier_sensitivity():
    rng = np.random.default_rng(2)
    src = rng.uniform(0, 100, size=(10, 2))
    truth = SimilarityTransform(scale=1.3, rotation=0.4, translation=np.array([5.0, -2.0]))
    dst = truth.apply(src)
    dst_bad = dst.copy()
    dst_bad[0] += 200.0
    fit = similarity_fit(src, dst_bad)
    clean_residual = np.linalg.norm(fit.apply(src[1:]) - dst[1:], axis=1)
    assert clean_residual.max() > 1e-3


def test_similarity_inverse_composition():
    rng = np.random.default_rng(4)
    src = rng.uniform(0, 50, size=(8, 2))
    truth = SimilarityTransform(scale=0.7, rotation=-1.1, translation=np.array([3.0, 9.0]))
    dst = truth.apply(src)
    fwd = similarity_fit(src, dst)
    bwd = similarity_fit(dst, src)
    assert fwd.scale * bwd.scale == pytest.approx(1.0, abs=1e-9)
    assert fwd.rotation + bwd.rotation == pytest.approx(0.0, abs=1e-9)
    roundtrip = bwd.apply(fwd.apply(src))
    assert np.allclose(roundtrip, src, atol=1e-9)


def test_similarity_inverse_method():
    t = SimilarityTransform(scale=2.0, rotation=0.3, translation=np.array([1.0, -4.0]))
    pts = np.random.default_rng(0).uniform(-10, 10, size=(7, 2))
    assert np.allclose(t.inverse().apply(t.apply(pts)), pts, atol=1e-12)


def test_similarity_degenerate_sources():
    src = np.zeros((3, 2))
    dst = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(DegenerateConfigurationError):
        similarity_fit(src, dst)


def test_similarity_needs_two_pairs():
    with pytest.raises(ValueError):
        similarity_fit(np.array([[0.0, 0.0]]), np.array([[1.0, 1.0]]))


def test_transform_json_roundtrip(tmp_path):
    rng = np.random.default_rng(6)
    src = rng.uniform(0, 100, size=(6, 2))
    t = tps_fit(src, src + rng.normal(0, 4, src.shape), 0.5)
    d = transform_to_dict(t)
    assert d["type"] == "tps" and len(d["affine"]) == 6
    t2 = transform_from_dict(d)
    pts = rng.uniform(0, 100, size=(12, 2))
    assert np.allclose(t.apply(pts), t2.apply(pts), atol=1e-12)
    s = SimilarityTransform(scale=1.5, rotation=0.2, translation=np.array([1.0, 2.0]))
    s2 = transform_from_dict(transform_to_dict(s))
    assert s2.scale == s.scale and s2.rotation == s.rotation
    path = tmp_path / "t.json"
    geometry.save_transform(t, path)
    t3 = geometry.load_transform(path)
    assert np.allclose(t.apply(pts), t3.apply(pts), atol=1e-12)


def test_scale_invariant_regularization():
    # the normalized system makes lambda behave the same at any image scale
    rng = np.random.default_rng(8)
    src = rng.uniform(0, 1, size=(16, 2))
    noise = rng.normal(0, 0.03, src.shape)
    small = tps_fit(src, src + noise, 0.5)
    big = tps_fit(512 * src, 512 * (src + noise), 0.5)
    res_small = np.linalg.norm(small.apply(src) - (src + noise), axis=1)
    res_big = np.linalg.norm(big.apply(512 * src) - 512 * (src + noise), axis=1)
    assert np.allclose(res_big / 512.0, res_small, atol=1e-9)
