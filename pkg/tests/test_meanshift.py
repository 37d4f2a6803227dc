"""Mean-shift clustering over assembled feature rows."""

import numpy as np
import pytest

from primseg.meanshift import ClusterResult, default_bandwidth, mean_shift


def _blobs(rng, centers, size, jitter=0.05):
    pts = [c + jitter * rng.standard_normal((size, len(c))) for c in centers]
    X = np.vstack(pts)
    labels = np.repeat(np.arange(len(centers)), size)
    return X, labels


def test_recovers_well_separated_blobs():
    rng = np.random.default_rng(0)
    centers = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0], [4.0, 4.0]])
    X, truth = _blobs(rng, centers, 40)
    res = mean_shift(X, bandwidth=0.5, min_size=5)
    assert res.n_clusters == 4
    assert res.sizes.sum() == len(X)
    # one-to-one relabeling between found and true clusters
    for c in range(4):
        vals = np.unique(res.labels[truth == c])
        assert len(vals) == 1
    assert len(np.unique(res.labels)) == 4
    # modes land near the blob centers (first-come order follows input order)
    d = np.linalg.norm(res.modes[:, None, :] - centers[None], axis=2)
    assert np.allclose(np.diag(d), 0.0, atol=0.1)


def test_min_size_dissolves_small_clusters():
    rng = np.random.default_rng(1)
    X = np.vstack(
        [
            0.02 * rng.standard_normal((60, 2)),
            np.array([4.0, 0.0]) + 0.02 * rng.standard_normal((3, 2)),
        ]
    )
    res = mean_shift(X, bandwidth=0.3, min_size=10)
    assert res.n_clusters == 1
    assert np.all(res.labels == 0)
    # with min_size low enough the outlier blob survives
    res = mean_shift(X, bandwidth=0.3, min_size=3)
    assert res.n_clusters == 2
    assert res.sizes.tolist() == [60, 3]


def test_min_size_never_dissolves_everything():
    # all clusters below min_size: keep them rather than return nothing
    rng = np.random.default_rng(2)
    X, _ = _blobs(rng, np.array([[0.0, 0], [6.0, 0]]), 4, jitter=0.01)
    res = mean_shift(X, bandwidth=0.5, min_size=50)
    assert res.n_clusters == 2
    assert res.sizes.sum() == 8


def test_single_cluster_and_validation():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((30, 3)) * 0.01
    res = mean_shift(X, bandwidth=1.0)
    assert res.n_clusters == 1
    with pytest.raises(ValueError):
        mean_shift(X, bandwidth=0.0)
    with pytest.raises(ValueError):
        mean_shift(np.zeros((0, 2)), bandwidth=1.0)
    with pytest.raises(ValueError):
        mean_shift(np.zeros(5), bandwidth=1.0)


def test_deterministic_labels_first_come_order():
    rng = np.random.default_rng(4)
    X, _ = _blobs(rng, np.array([[0.0, 0], [5.0, 0], [9.0, 3]]), 25)
    a = mean_shift(X, bandwidth=0.6, min_size=5)
    b = mean_shift(X, bandwidth=0.6, min_size=5)
    assert np.array_equal(a.labels, b.labels)
    assert np.array_equal(a.modes, b.modes)
    # first-come labeling: the first point's cluster is label 0
    assert a.labels[0] == 0
    assert a.labels[25] == 1
    assert a.labels[50] == 2


def test_block_indicator_embedding_rows():
    # rows of a block spectral embedding collapse to K distinct rows;
    # mean-shift at any bandwidth below the row gap must find exactly K
    rows = np.array([[0.5, 0.5], [0.5, -0.5], [-0.7, 0.1]])
    X = np.repeat(rows, 30, axis=0)
    res = mean_shift(X, bandwidth=0.2, min_size=10)
    assert res.n_clusters == 3
    assert np.allclose(res.modes, rows, atol=1e-9)


def test_cluster_result_validation():
    with pytest.raises(ValueError, match="sum to n"):
        ClusterResult(np.zeros(5, dtype=np.intp), np.zeros((1, 2)), np.array([4]))
    with pytest.raises(ValueError, match="one mode"):
        ClusterResult(np.zeros(5, dtype=np.intp), np.zeros((2, 2)), np.array([5]))


def test_default_bandwidth_median_rule():
    # four collinear points at spacing 1: pairwise distances 1,1,1,2,2,3
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    assert default_bandwidth(X, factor=0.25) == pytest.approx(0.25 * 1.5)
    assert default_bandwidth(X, factor=0.5) == pytest.approx(0.75)
    # degenerate inputs fall back to 1.0
    assert default_bandwidth(np.zeros((1, 3))) == 1.0
    assert default_bandwidth(np.zeros((10, 3))) == 1.0


def test_default_bandwidth_subsample_stability():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((3000, 4))
    full = default_bandwidth(X, sample_cap=3000)
    sub = default_bandwidth(X, sample_cap=1024)
    assert sub == pytest.approx(full, rel=0.1)
    assert default_bandwidth(X, sample_cap=1024) == sub  # seeded, reproducible
