"""Adjacency construction, eigensolvers, and the perturbation experiment."""

import numpy as np
import pytest
import scipy.sparse as sp

from primseg.attributes import DESCRIPTOR_DIM, AttributeSet
from primseg.cloud import PointCloud, knn_graph
from primseg.primitives import (
    PARAM_DIM,
    PrimitiveType,
    make_plane_params,
    make_sphere_params,
)
from primseg.spectral import (
    EigsolverError,
    SpectralEmbedding,
    build_consistency_matrix,
    build_smoothness_matrix,
    consistency_weight,
    corrupted_block_matrix,
    dk_bound,
    dk_experiment,
    jacobi_eigh,
    lanczos_topk,
    leading_eigs,
    procrustes_distance,
    select_embedding_dim,
)

SIGMAS = np.array([0.5, 0.5, 0.5, 0.5, 1.0, 1.0])


def _attrs_from(types, params):
    n = len(types)
    td = np.zeros((n, 6))
    td[np.arange(n), [int(t) for t in types]] = 1.0
    return AttributeSet(
        np.zeros((n, DESCRIPTOR_DIM)), td, np.asarray(params, dtype=np.float64),
        np.ones(n),
    )


def _point_attr(ptype, params):
    return _attrs_from([ptype], [params])[0]


def test_consistency_weight_hand_values():
    plane = make_plane_params(np.array([0.0, 0.0, 1.0]), 0.0)
    at = _point_attr(PrimitiveType.PLANE, plane)
    assert consistency_weight([0.3, -0.2, 0.0], at, SIGMAS) == pytest.approx(1.0)
    # d = 1 at sigma = 0.5: exp(-1 / (2 * 0.25)) = exp(-2)
    assert consistency_weight([0, 0, 1.0], at, SIGMAS) == pytest.approx(np.exp(-2.0))
    sph = make_sphere_params(np.zeros(3), 1.0)
    at = _point_attr(PrimitiveType.SPHERE, sph)
    assert consistency_weight([0, 0, 1.5], at, SIGMAS) == pytest.approx(np.exp(-0.5))
    # spline-typed attribute carries no usable surface
    at = _point_attr(PrimitiveType.BSPLINE_OPEN, np.zeros(PARAM_DIM))
    assert consistency_weight([0, 0, 0], at, SIGMAS) == 0.0


def test_consistency_matrix_two_plane_blocks():
    rng = np.random.default_rng(0)
    n_half = 12
    zs = (0.0, 4.0)
    pos = np.vstack(
        [
            np.column_stack([rng.uniform(-1, 1, (n_half, 2)), np.full(n_half, z)])
            for z in zs
        ]
    )
    cloud = PointCloud(pos)
    params = np.zeros((2 * n_half, PARAM_DIM))
    for b, z in enumerate(zs):
        params[b * n_half : (b + 1) * n_half] = make_plane_params(
            np.array([0.0, 0.0, 1.0]), z
        )
    attrs = _attrs_from([PrimitiveType.PLANE] * (2 * n_half), params)
    A = build_consistency_matrix(cloud, attrs, SIGMAS)
    assert np.allclose(A, A.T)
    assert np.array_equal(np.diag(A), np.ones(2 * n_half))
    assert np.all((A >= 0) & (A <= 1))
    within = A[:n_half, :n_half]
    cross = A[:n_half, n_half:]
    assert np.all(within == pytest.approx(1.0))
    # cross distance 4 at sigma 0.5: exp(-16/0.5) = exp(-32)
    assert np.all(cross == pytest.approx(np.exp(-32.0), rel=1e-9))


def test_consistency_matrix_validation():
    rng = np.random.default_rng(1)
    cloud = PointCloud(rng.uniform(0, 1, (8, 3)))
    attrs = _attrs_from(
        [PrimitiveType.PLANE] * 8,
        [make_plane_params(np.array([0.0, 0.0, 1.0]), 0.0)] * 8,
    )
    with pytest.raises(ValueError, match="dense cap"):
        build_consistency_matrix(cloud, attrs, SIGMAS, dense_cap=4)
    with pytest.raises(ValueError, match="sigma"):
        build_consistency_matrix(cloud, attrs, np.zeros(6))
    with pytest.raises(ValueError, match="does not match"):
        build_consistency_matrix(cloud, attrs_n7(), SIGMAS)


def attrs_n7():
    return _attrs_from(
        [PrimitiveType.PLANE] * 7,
        [make_plane_params(np.array([0.0, 0.0, 1.0]), 0.0)] * 7,
    )


def test_smoothness_matrix_hand_values():
    # three collinear points; middle normal perpendicular to the outer two
    pos = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
    nrm = np.array([[0.0, 0, 1], [1.0, 0, 0], [0.0, 0, 1]])
    cloud = PointCloud(pos, nrm)
    graph = knn_graph(cloud, 1)
    sigma_e = 0.5
    A = build_smoothness_matrix(cloud, graph, sigma_e).toarray()
    assert np.allclose(A, A.T)
    assert np.all(np.diag(A) == 0)
    # |dn|^2 = 2 between perpendicular unit normals: exp(-2/(2*0.25)) = exp(-4)
    assert A[0, 1] == pytest.approx(np.exp(-4.0))
    assert A[1, 2] == pytest.approx(np.exp(-4.0))
    # 0-2 not kNN neighbors (k=1) -> absent
    assert A[0, 2] == 0.0
    with pytest.raises(ValueError):
        build_smoothness_matrix(cloud, graph, 0.0)


def test_smoothness_matrix_max_symmetrization():
    # k=1 asymmetric adjacency: 2's nearest is 1 but 1's nearest is 0;
    # the max-symmetrized matrix keeps both directed edges
    pos = np.array([[0.0, 0, 0], [0.4, 0, 0], [1.0, 0, 0]])
    nrm = np.tile([0.0, 0.0, 1.0], (3, 1))
    cloud = PointCloud(pos, nrm)
    A = build_smoothness_matrix(cloud, knn_graph(cloud, 1), 0.25).toarray()
    assert A[1, 2] == pytest.approx(1.0)
    assert A[2, 1] == pytest.approx(1.0)


def test_jacobi_eigh_matches_numpy():
    rng = np.random.default_rng(2)
    M = rng.standard_normal((30, 30))
    A = 0.5 * (M + M.T)
    vals, vecs = jacobi_eigh(A)
    ref = np.sort(np.linalg.eigvalsh(A))[::-1]
    assert np.allclose(vals, ref, atol=1e-10)
    assert np.allclose(vecs.T @ vecs, np.eye(30), atol=1e-10)
    assert np.allclose(A @ vecs, vecs * vals[None, :], atol=1e-9)
    with pytest.raises(ValueError):
        jacobi_eigh(np.zeros((3, 4)))


def test_lanczos_matches_dense_eigh():
    rng = np.random.default_rng(3)
    n, k = 80, 7
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.sort(rng.uniform(0.1, 10.0, n))[::-1]
    A = (Q * lam[None, :]) @ Q.T
    vals, vecs, _ = lanczos_topk(lambda v: A @ v, n, k, seed=0, scale=np.linalg.norm(A))
    assert np.allclose(vals, lam[:k], atol=1e-8)
    assert np.allclose(np.abs(np.sum(vecs * Q[:, :k], axis=0)), 1.0, atol=1e-7)
    with pytest.raises(ValueError):
        lanczos_topk(lambda v: v, 5, 6)


def test_lanczos_sparse_operator():
    rng = np.random.default_rng(4)
    n = 120
    A = sp.random(n, n, density=0.05, random_state=7)
    A = A + A.T
    vals, vecs, _ = lanczos_topk(
        lambda v: A.dot(v), n, 4, seed=0, scale=np.sqrt((A.multiply(A)).sum())
    )
    ref = np.sort(np.linalg.eigvalsh(A.toarray()))[::-1][:4]
    assert np.allclose(vals, ref, atol=1e-8)


def test_leading_eigs_block_matrix():
    # two all-ones blocks of sizes 4 and 3: eigenvalues 4 and 3
    A = np.zeros((7, 7))
    A[:4, :4] = 1.0
    A[4:, 4:] = 1.0
    emb = leading_eigs(A, 2, seed=0)
    assert np.allclose(emb.eigenvalues, [4.0, 3.0], atol=1e-10)
    U = emb.U
    # paper scaling: first column untouched, second scaled by sqrt(4/3)
    assert np.allclose(np.linalg.norm(U[:, 0]), 1.0, atol=1e-10)
    assert np.allclose(np.linalg.norm(U[:, 1]), np.sqrt(4.0 / 3.0), atol=1e-10)
    inv = leading_eigs(A, 2, seed=0, scale_mode="inverse")
    assert np.allclose(np.linalg.norm(inv.U[:, 1]), np.sqrt(3.0 / 4.0), atol=1e-10)
    # rows are block-constant indicators
    assert np.allclose(U[:4, 0], U[0, 0], atol=1e-10)
    assert np.allclose(np.abs(U[0, 0]), 0.5, atol=1e-10)


def test_leading_eigs_drops_nonpositive():
    A = np.diag([3.0, 2.0, -1.0])
    emb = leading_eigs(A, 3, seed=0)
    assert emb.d == 2
    assert np.allclose(emb.eigenvalues, [3.0, 2.0])


def test_embedding_truncate_and_validation():
    emb = SpectralEmbedding(np.array([4.0, 1.0]), np.eye(3)[:, :2])
    t = emb.truncate(1)
    assert t.d == 1 and t.eigenvalues[0] == 4.0
    with pytest.raises(ValueError):
        emb.truncate(3)
    with pytest.raises(ValueError):
        SpectralEmbedding(np.array([1.0, 2.0]), np.eye(2))
    with pytest.raises(ValueError):
        SpectralEmbedding(np.array([2.0, 1.0]), np.eye(2), scale_mode="bogus")


def test_select_embedding_dim_enumerated():
    lam = [4.0, 4.0, 3.0, 0.1, 0.05]
    # gaps/lam1: d=2 -> 0.25, d=3 -> 0.725, d=4 -> 0.0125, d=5 -> 0.0125
    assert select_embedding_dim(lam, 1, 4) == 3
    assert select_embedding_dim(lam, 4, 5) == 4  # tie at 0.0125 -> smaller d
    assert select_embedding_dim([1.0, 1.0, 1.0], 1, 3) == 3  # trailing lam -> 0
    assert select_embedding_dim([2.0, 1.0, 1.0], 1, 3) == 1  # 0.5 tie -> smaller
    with pytest.raises(ValueError):
        select_embedding_dim(lam, 0, 3)
    with pytest.raises(ValueError):
        select_embedding_dim([1.0, -1.0], 2, 3)


def test_procrustes_distance_properties():
    rng = np.random.default_rng(5)
    U = rng.standard_normal((20, 4))
    Q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    assert procrustes_distance(U, U @ Q) < 1e-10
    # orthonormal columns rotated 90 degrees in a 1-dim embedding
    e1 = np.eye(2)[:, :1]
    e2 = np.eye(2)[:, 1:]
    assert procrustes_distance(e1, e2) == pytest.approx(np.sqrt(2.0))
    with pytest.raises(ValueError):
        procrustes_distance(U, U[:, :3])


def test_procrustes_distance_matches_scipy_oracle():
    from scipy.linalg import orthogonal_procrustes

    rng = np.random.default_rng(6)
    for _ in range(10):
        U = rng.standard_normal((15, 3))
        V = rng.standard_normal((15, 3))
        R, _ = orthogonal_procrustes(U, V)
        assert procrustes_distance(U, V) == pytest.approx(
            np.linalg.norm(U @ R - V), abs=1e-10
        )


def test_dk_bound_hand_values():
    assert dk_bound([1.0, 1.0, 0.0], np.zeros((3, 3)), 2) == 0.0
    E = np.full((3, 3), 0.1)
    assert dk_bound([4.0, 1.0, 0.0], E, 1) == pytest.approx(2.0 * 0.3 / 3.0)
    with pytest.raises(ValueError, match="degenerate"):
        dk_bound([1.0, 1.0, 1.0], E, 2)
    with pytest.raises(ValueError):
        dk_bound([1.0, 1.0], E, 2)


def test_corrupted_block_matrix_structure():
    rng = np.random.default_rng(7)
    Ag, A = corrupted_block_matrix(12, 3, 0.0, rng)
    assert np.array_equal(Ag, A)
    assert np.array_equal(np.diag(Ag), np.ones(12))
    Ag, A = corrupted_block_matrix(60, 4, 0.25, rng)
    assert np.allclose(A, A.T)
    assert np.array_equal(np.diag(A), np.ones(60))
    assert set(np.round(np.unique(A), 6)) <= {0.0, 0.5, 1.0}
    # every corrupted column differs; symmetrization spreads the change to
    # its partner blocks' columns, so at least round(rho*n) columns move
    changed_cols = np.count_nonzero(np.any(A != Ag, axis=0))
    assert changed_cols >= 15
    # but a single corrupted column only touches two blocks' worth of rows
    assert np.mean(A != Ag) <= 2 * 15 * (2 * 60 // 4) / 60**2


def test_dk_experiment_zero_corruption():
    reports = dk_experiment(36, 3, 0.0, trials=3, seed=0)
    assert len(reports) == 3
    for r in reports:
        assert r.frobenius_E == 0.0
        assert r.bound == 0.0
        assert r.relative_error < 1e-6
        assert r.eigengap == pytest.approx(12.0)  # block eigenvalue n/K - 0


def test_dk_experiment_bounded_error():
    reports = dk_experiment(120, 4, 0.2, trials=5, seed=1)
    for r in reports:
        assert r.procrustes_error <= r.bound + 1e-6
        assert r.procrustes_error > 0
    with pytest.raises(ValueError, match="divide"):
        dk_experiment(10, 3, 0.1, trials=1)
    with pytest.raises(ValueError, match="rho"):
        dk_experiment(12, 3, 1.0, trials=1)


def grid_dihedral(nx, ny, spacing=1.0):
    """Two flat nx-by-ny grids meeting along a sharp fold at x = z = 0."""
    xs = (np.arange(nx) + 1.0) * spacing
    ys = np.arange(ny) * spacing
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    a = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(nx * ny)])
    b = np.column_stack([np.zeros(nx * ny), gy.ravel(), gx.ravel()])
    nrm = np.zeros((2 * nx * ny, 3))
    nrm[: nx * ny, 2] = 1.0
    nrm[nx * ny :, 0] = 1.0
    side = np.r_[np.zeros(nx * ny, int), np.ones(nx * ny, int)]
    return PointCloud(np.vstack([a, b]), nrm), side


def test_smoothness_crease_separation_dihedral():
    # in the scaled smoothness embedding, neighbor pairs that cross the
    # fold separate more than same-plane neighbor pairs
    cloud, side = grid_dihedral(25, 20)
    graph = knn_graph(cloud, 50)
    A = build_smoothness_matrix(cloud, graph, 0.25)
    emb = leading_eigs(A, 11, seed=0)
    d = select_embedding_dim(emb.eigenvalues, 2, 10)
    U = emb.truncate(d).U
    i = np.repeat(np.arange(len(cloud)), graph.indices.shape[1])
    j = graph.indices.ravel()
    i, j = i[i < j], j[i < j]
    dist = np.linalg.norm(U[i] - U[j], axis=1)
    cross = side[i] != side[j]
    assert np.median(dist[cross]) > np.median(dist[~cross])
