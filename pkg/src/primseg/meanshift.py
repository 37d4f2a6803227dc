"""Gaussian-kernel mean-shift over the assembled feature space.

Every point seeds an iteration toward the weighted mean of all points;
converged seeds merge into modes within half a bandwidth of each other
(first-come order, so the result is deterministic), and clusters below the
minimum size dissolve into the nearest surviving mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist


@dataclass
class ClusterResult:
    labels: np.ndarray  # (n,) ints in [0, C)
    modes: np.ndarray  # (C, M)
    sizes: np.ndarray  # (C,)

    def __post_init__(self):
        if self.sizes.sum() != self.labels.shape[0]:
            raise ValueError("cluster sizes must sum to n")
        if self.modes.shape[0] != self.sizes.shape[0]:
            raise ValueError("one mode per cluster required")

    @property
    def n_clusters(self) -> int:
        return int(self.sizes.shape[0])


def mean_shift(
    X: np.ndarray,
    bandwidth: float,
    max_iter: int = 300,
    tol: float | None = None,
    min_size: int = 20,
    merge_factor: float = 0.5,
) -> ClusterResult:
    """Cluster rows of X with Gaussian mean-shift at the given bandwidth.

    Seeds that have shifted less than ``tol`` (default 1e-4 * bandwidth)
    freeze; iteration stops when all seeds are frozen or after
    ``max_iter`` rounds.  Small clusters only dissolve when at least one
    cluster of ``min_size`` survives.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("X must be a non-empty (n, M) array")
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    h = float(bandwidth)
    if tol is None:
        tol = 1e-4 * h
    n = X.shape[0]

    Y = X.copy()
    active = np.ones(n, dtype=bool)
    inv = -1.0 / (2.0 * h * h)
    for _ in range(max_iter):
        ids = np.flatnonzero(active)
        if ids.size == 0:
            break
        W = np.exp(inv * cdist(Y[ids], X, "sqeuclidean"))
        Ynew = (W @ X) / W.sum(axis=1)[:, None]
        shift = np.linalg.norm(Ynew - Y[ids], axis=1)
        Y[ids] = Ynew
        active[ids] = shift >= tol

    # Merge converged seeds into modes, first seed wins.
    merge_r = merge_factor * h
    modes: list[np.ndarray] = []
    labels = np.empty(n, dtype=np.intp)
    for i in range(n):
        if modes:
            d = np.linalg.norm(np.asarray(modes) - Y[i], axis=1)
            j = int(np.argmin(d))
            if d[j] < merge_r:
                labels[i] = j
                continue
        modes.append(Y[i])
        labels[i] = len(modes) - 1
    mode_arr = np.asarray(modes)
    sizes = np.bincount(labels, minlength=len(modes))

    surviving = sizes >= min_size
    if surviving.any() and not surviving.all():
        # Each dissolved cluster joins the surviving mode nearest its own.
        surv_idx = np.flatnonzero(surviving)
        target = np.empty(len(modes), dtype=np.intp)
        target[surv_idx] = surv_idx
        for c in np.flatnonzero(~surviving):
            d = np.linalg.norm(mode_arr[surv_idx] - mode_arr[c], axis=1)
            target[c] = surv_idx[int(np.argmin(d))]
        labels = target[labels]
        mode_arr = mode_arr[surv_idx]
        # Relabel to a contiguous range, keeping first-come order.
        remap = {int(old): new for new, old in enumerate(surv_idx)}
        labels = np.asarray([remap[int(c)] for c in labels], dtype=np.intp)
        sizes = np.bincount(labels, minlength=mode_arr.shape[0])

    return ClusterResult(labels, mode_arr, sizes)


def default_bandwidth(X: np.ndarray, factor: float = 0.25, sample_cap: int = 2048, seed: int = 0) -> float:
    """factor x median pairwise row distance (subsampled above sample_cap)."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        return 1.0
    if n > sample_cap:
        rng = np.random.default_rng(seed)
        X = X[rng.choice(n, size=sample_cap, replace=False)]
    med = float(np.median(cdist(X, X)[np.triu_indices(X.shape[0], 1)]))
    return factor * med if med > 0 else 1.0
