"""Point-cloud container, normalization, and k-nearest-neighbor graphs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree
from scipy.spatial.distance import pdist

_UNIT_TOL = 1e-6


def _as_points(a, name: str) -> np.ndarray:
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2 or out.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {out.shape}")
    if out.shape[0] == 0:
        raise ValueError("empty input")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} must be finite")
    return out


@dataclass(frozen=True)
class PointCloud:
    """Immutable cloud of 3D points with optional unit normals.

    Normals are renormalized on construction; a zero-length normal is an
    error because no direction can be recovered from it.
    """

    positions: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        pos = _as_points(self.positions, "positions")
        pos.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        if self.normals is not None:
            nrm = _as_points(self.normals, "normals")
            if nrm.shape[0] != pos.shape[0]:
                raise ValueError("length mismatch between positions and normals")
            lengths = np.linalg.norm(nrm, axis=1)
            if np.any(lengths < _UNIT_TOL):
                raise ValueError("degenerate normal of near-zero length")
            nrm = nrm / lengths[:, None]
            nrm.flags.writeable = False
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def n(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class CloudTransform:
    """Similarity transform ``p -> (p + translation) * scale``."""

    translation: np.ndarray
    scale: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) + self.translation) * self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale - self.translation


def cloud_diameter(positions: np.ndarray) -> float:
    """Largest pairwise distance.

    Exact farthest pair for n <= 2048; beyond that the farthest pair over
    convex-hull vertices of an evenly strided 2048-point subsample (with a
    plain subsample fallback when the hull is degenerate).
    """
    pts = np.asarray(positions, dtype=np.float64)
    n = pts.shape[0]
    if n == 1:
        return 0.0
    if n > 2048:
        idx = np.linspace(0, n - 1, 2048).round().astype(int)
        pts = pts[np.unique(idx)]
        try:
            hull = ConvexHull(pts)
            pts = pts[hull.vertices]
        except QhullError:
            pass  # flat or collinear subsample: brute-force it below
    return float(pdist(pts).max())


def normalize_cloud(cloud: PointCloud) -> tuple[PointCloud, CloudTransform]:
    """Center a cloud at its mean and scale it to unit diameter.

    Returns the normalized cloud and the transform that maps input
    positions onto the output exactly.
    """
    mean = cloud.positions.mean(axis=0)
    diam = cloud_diameter(cloud.positions)
    if diam < 1e-12:
        raise ValueError("degenerate cloud: zero diameter")
    t = CloudTransform(translation=-mean, scale=1.0 / diam)
    return PointCloud(t.apply(cloud.positions), cloud.normals), t


@dataclass(frozen=True)
class NeighborGraph:
    """k-nearest-neighbor table: row i lists the neighbors of point i.

    Neighbor lists exclude the point itself and are sorted ascending by
    distance, ties broken toward the lower point index.
    """

    indices: np.ndarray
    distances: np.ndarray
    k: int

    def __post_init__(self):
        self.indices.flags.writeable = False
        self.distances.flags.writeable = False

    @property
    def n(self) -> int:
        return self.indices.shape[0]


def knn_graph(cloud: PointCloud, k: int) -> NeighborGraph:
    """Exact k-nearest-neighbor graph (k clamped to n - 1).

    Built on a k-d tree, with a per-row fixup pass so that equal-distance
    ties at the k-th position resolve to the lowest index, matching an
    exhaustive ranking.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    pts = cloud.positions
    n = pts.shape[0]
    if n < 2:
        raise ValueError("need at least 2 points for a neighbor graph")
    k_eff = min(k, n - 1)
    tree = cKDTree(pts)
    kq = min(n, k_eff + 2)
    dist, idx = tree.query(pts, k=kq)

    out_idx = np.empty((n, k_eff), dtype=np.int64)
    out_dist = np.empty((n, k_eff), dtype=np.float64)
    rows = np.arange(n)
    for i in rows:
        di, ii = dist[i], idx[i]
        keep = ii != i
        # Duplicate positions can push the self entry out of the query; in
        # that case drop one zero-distance candidate in its stead.
        if keep.all():
            j = int(np.argmin(di))
            keep[j] = False
        di, ii = di[keep], ii[keep]
        order = np.lexsort((ii, di))
        di, ii = di[order], ii[order]
        kth = di[k_eff - 1]
        suspect = kq < n and di[-1] <= kth * (1 + 1e-9) + 1e-300
        if suspect:
            r = kth * (1 + 1e-9)
            while True:
                cand = np.asarray(tree.query_ball_point(pts[i], r), dtype=np.int64)
                cand = cand[cand != i]
                if cand.size >= k_eff:
                    break
                r *= 1 + 1e-6
            dcand = np.linalg.norm(pts[cand] - pts[i], axis=1)
            order = np.lexsort((cand, dcand))
            di, ii = dcand[order], cand[order]
        out_idx[i] = ii[:k_eff]
        out_dist[i] = di[:k_eff]
    return NeighborGraph(indices=out_idx, distances=out_dist, k=k_eff)


def farthest_point_subsample(positions: np.ndarray, m: int) -> np.ndarray:
    """Deterministic farthest-point subsample of m indices (seeded at index 0)."""
    pts = np.asarray(positions, dtype=np.float64)
    n = pts.shape[0]
    if m >= n:
        return np.arange(n)
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = 0
    d2 = np.sum((pts - pts[0]) ** 2, axis=1)
    for j in range(1, m):
        nxt = int(np.argmax(d2))
        chosen[j] = nxt
        d2 = np.minimum(d2, np.sum((pts - pts[nxt]) ** 2, axis=1))
    return chosen


def estimate_normals(cloud: PointCloud, graph: NeighborGraph) -> np.ndarray:
    """Unit normals from local plane fits, oriented by BFS sign propagation.

    The root is the point with the largest z coordinate, flipped toward +z.
    """
    pts = cloud.positions
    n = pts.shape[0]
    nbr = pts[graph.indices]                      # (n, k, 3)
    ctr = nbr.mean(axis=1)
    d = nbr - ctr[:, None, :]
    cov = np.einsum("ika,ikb->iab", d, d)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]

    visited = np.zeros(n, dtype=bool)
    root = int(np.argmax(pts[:, 2]))
    if normals[root, 2] < 0:
        normals[root] = -normals[root]
    visited[root] = True
    queue = [root]
    while queue:
        i = queue.pop()
        for j in graph.indices[i]:
            if not visited[j]:
                if normals[j] @ normals[i] < 0:
                    normals[j] = -normals[j]
                visited[j] = True
                queue.append(int(j))
    # Disconnected components (rare): orient each leftover toward +z.
    left = ~visited
    flip = left & (normals[:, 2] < 0)
    normals[flip] = -normals[flip]
    return normals
