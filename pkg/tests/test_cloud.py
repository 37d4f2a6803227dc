"""Cloud container, kNN graph vs a brute-force oracle, normalization, normals."""

import numpy as np
import pytest

from primseg.cloud import (
    CloudTransform,
    NeighborGraph,
    PointCloud,
    cloud_diameter,
    estimate_normals,
    farthest_point_subsample,
    knn_graph,
    normalize_cloud,
)


def brute_knn(pts, k):
    """Exhaustive ranking with (distance, index) lexicographic tie-break."""
    n = len(pts)
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k))
    for i in range(n):
        d = np.linalg.norm(pts - pts[i], axis=1)
        order = [j for j in np.lexsort((np.arange(n), d)) if j != i]
        idx[i] = order[:k]
        dist[i] = d[idx[i]]
    return idx, dist


def test_knn_matches_brute_force_random():
    rng = np.random.default_rng(0)
    for trial in range(6):
        n = int(rng.integers(10, 120))
        k = int(rng.integers(1, 9))
        pts = rng.uniform(-1, 1, (n, 3))
        g = knn_graph(PointCloud(pts), k)
        bi, bd = brute_knn(pts, k)
        assert np.array_equal(g.indices, bi), (trial, n, k)
        assert np.allclose(g.distances, bd, atol=1e-12)


def test_knn_handles_grid_ties():
    # integer grid: many exactly equal distances at the k-th place
    xs = np.arange(5)
    pts = np.stack(np.meshgrid(xs, xs, [0.0], indexing="ij"), -1).reshape(-1, 3).astype(float)
    for k in (1, 3, 4, 8):
        g = knn_graph(PointCloud(pts), k)
        bi, _ = brute_knn(pts, k)
        assert np.array_equal(g.indices, bi), k


def test_knn_handles_duplicate_points():
    rng = np.random.default_rng(1)
    base = rng.uniform(0, 1, (15, 3))
    pts = np.vstack([base, base[:5]])  # five exact duplicates
    for k in (1, 2, 6):
        g = knn_graph(PointCloud(pts), k)
        bi, _ = brute_knn(pts, k)
        assert np.array_equal(g.indices, bi), k


def test_knn_validation_and_clamping():
    pts = np.zeros((3, 3))
    pts[1, 0] = 1.0
    pts[2, 0] = 2.0
    g = knn_graph(PointCloud(pts), 10)  # k clamps to n - 1
    assert g.indices.shape == (3, 2)
    with pytest.raises(ValueError):
        knn_graph(PointCloud(pts), 0)
    with pytest.raises(ValueError):
        knn_graph(PointCloud(pts[:1]), 1)


def test_neighbor_graph_is_immutable():
    pts = np.random.default_rng(2).uniform(0, 1, (20, 3))
    g = knn_graph(PointCloud(pts), 4)
    with pytest.raises(ValueError):
        g.indices[0, 0] = 7


def test_cloud_diameter_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(5):
        pts = rng.standard_normal((60, 3))
        want = max(
            np.linalg.norm(pts[i] - pts[j]) for i in range(60) for j in range(i + 1, 60)
        )
        assert cloud_diameter(pts) == pytest.approx(want, abs=1e-12)
    assert cloud_diameter(np.zeros((1, 3))) == 0.0


def test_cloud_diameter_large_cloud():
    rng = np.random.default_rng(4)
    # the strided subsample always keeps the first and last index, so putting
    # the extreme pair there makes the approximation exact
    pts = rng.standard_normal((5000, 3))
    pts[0] = (-30.0, 0.0, 0.0)
    pts[-1] = (30.0, 0.0, 0.0)
    assert cloud_diameter(pts) == pytest.approx(60.0, abs=1e-9)
    # on a sphere every dense subsample nearly realizes the diameter
    d = rng.standard_normal((6000, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    from scipy.spatial.distance import pdist

    exact = float(pdist(d).max())
    approx = cloud_diameter(d)
    assert approx <= exact + 1e-12
    assert approx >= 0.99 * exact


def test_normalize_cloud_round_trip():
    rng = np.random.default_rng(5)
    pts = rng.uniform(-4, 3, (100, 3)) * np.array([5.0, 1.0, 0.2])
    cloud = PointCloud(pts)
    ncloud, t = normalize_cloud(cloud)
    assert cloud_diameter(ncloud.positions) == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(ncloud.positions.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(t.apply(pts), ncloud.positions)
    assert np.allclose(t.invert(ncloud.positions), pts, atol=1e-12)
    with pytest.raises(ValueError):
        normalize_cloud(PointCloud(np.zeros((5, 3))))


def test_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((4, 2)))
    with pytest.raises(ValueError):
        PointCloud(np.zeros((4, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 3)), np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0]]))
    c = PointCloud(np.zeros((2, 3)), np.array([[0.0, 0.0, 2.0], [0.0, 3.0, 0.0]]))
    assert np.allclose(np.linalg.norm(c.normals, axis=1), 1.0)
    with pytest.raises(ValueError):
        c.positions[0, 0] = 1.0


def test_farthest_point_subsample_matches_greedy_definition():
    rng = np.random.default_rng(6)
    pts = rng.uniform(0, 1, (80, 3))
    m = 12
    got = farthest_point_subsample(pts, m)
    # replay the greedy rule directly
    chosen = [0]
    d2 = np.sum((pts - pts[0]) ** 2, axis=1)
    for _ in range(1, m):
        nxt = int(np.argmax(d2))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((pts - pts[nxt]) ** 2, axis=1))
    assert np.array_equal(got, np.array(chosen))
    assert len(set(got.tolist())) == m
    assert np.array_equal(farthest_point_subsample(pts, 200), np.arange(80))


def test_estimate_normals_plane_is_exact_and_oriented():
    xs = np.linspace(0, 1, 12)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])
    cloud = PointCloud(pts)
    g = knn_graph(cloud, 8)
    n = estimate_normals(cloud, g)
    # one consistent orientation, flipped toward +z at the root
    assert np.allclose(n, np.array([0.0, 0.0, 1.0]), atol=1e-9)


def test_estimate_normals_sphere_points_radially():
    rng = np.random.default_rng(7)
    d = rng.standard_normal((400, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    cloud = PointCloud(2.0 * d)
    n = estimate_normals(cloud, knn_graph(cloud, 12))
    dots = np.abs(np.sum(n * d, axis=1))
    assert np.min(dots) > 0.98
    assert np.mean(dots) > 0.995
    # sign propagation keeps neighbors consistent: signed dots all agree
    signed = np.sum(n * d, axis=1)
    assert np.all(signed > 0) or np.all(signed < 0)
