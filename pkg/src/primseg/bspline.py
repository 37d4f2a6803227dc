"""Bicubic tensor-product B-spline patches: evaluation, closest point, fitting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline
from scipy.spatial.distance import cdist

DEGREE = 3


def open_knots(g: int) -> np.ndarray:
    """Clamped uniform knot vector for g cubic control points on [0, 1]."""
    if g < 4:
        raise ValueError("need at least 4 control points per direction")
    interior = np.arange(1, g - 3) / (g - 3)
    return np.concatenate([np.zeros(4), interior, np.ones(4)])


def periodic_knots(g: int) -> np.ndarray:
    """Uniform knot vector for a period-1 closed cubic with g distinct controls.

    The companion control net wraps the first 3 rows, giving g + 3 basis
    functions whose span covers [0, 1] exactly.
    """
    if g < 4:
        raise ValueError("need at least 4 control points per direction")
    return (np.arange(g + 7) - 3.0) / g


@dataclass(frozen=True)
class BSplinePatch:
    """Bicubic patch. ``closed_u`` wraps the u direction with period 1."""

    control_points: np.ndarray  # (gu, gv, 3)
    closed_u: bool = False

    def __post_init__(self):
        cp = np.asarray(self.control_points, dtype=np.float64)
        if cp.ndim != 3 or cp.shape[2] != 3 or cp.shape[0] < 4 or cp.shape[1] < 4:
            raise ValueError("control_points must have shape (gu >= 4, gv >= 4, 3)")
        if not np.all(np.isfinite(cp)):
            raise ValueError("control_points must be finite")
        cp.flags.writeable = False
        object.__setattr__(self, "control_points", cp)

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.control_points.shape[:2]


def _basis_rows(x: np.ndarray, g: int, closed: bool) -> np.ndarray:
    """Dense rows of cubic basis values at parameters x (already in-domain)."""
    t = periodic_knots(g) if closed else open_knots(g)
    return BSpline.design_matrix(x, t, DEGREE).toarray()


def _wrap_params(u: np.ndarray, closed: bool) -> np.ndarray:
    if closed:
        return np.mod(u, 1.0)
    return np.clip(u, 0.0, 1.0)


def bspline_eval_many(patch: BSplinePatch, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Surface points S(u_i, v_i) for paired parameter arrays."""
    u = _wrap_params(np.atleast_1d(np.asarray(u, dtype=np.float64)), patch.closed_u)
    v = np.clip(np.atleast_1d(np.asarray(v, dtype=np.float64)), 0.0, 1.0)
    if u.shape != v.shape:
        raise ValueError("u and v must have matching shapes")
    gu, gv = patch.grid_shape
    cp = patch.control_points
    if patch.closed_u:
        cp = np.concatenate([cp, cp[:3]], axis=0)
    Nu = _basis_rows(u, gu, patch.closed_u)
    Nv = _basis_rows(v, gv, False)
    return np.einsum("qi,ijc,qj->qc", Nu, cp, Nv)


def bspline_eval(patch: BSplinePatch, u: float, v: float) -> np.ndarray:
    """Single surface point S(u, v) with u, v in [0, 1]."""
    return bspline_eval_many(patch, [u], [v])[0]


def _param_grid(patch: BSplinePatch, m: int) -> tuple[np.ndarray, np.ndarray]:
    if patch.closed_u:
        us = np.arange(m) / m          # endpoint duplicates S(0)
    else:
        us = np.linspace(0.0, 1.0, m)
    vs = np.linspace(0.0, 1.0, m)
    return us, vs


def bspline_closest_distance(
    patch: BSplinePatch,
    points: np.ndarray,
    grid: int = 16,
    refine_iters: int = 15,
) -> np.ndarray:
    """Distance from each query point to the patch surface.

    A grid x grid coarse parameter sweep seeds a per-point Gauss-Newton
    refinement of (u, v); the reported distance never exceeds the coarse
    minimum because the best candidate so far is kept.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    us, vs = _param_grid(patch, grid)
    UU, VV = np.meshgrid(us, vs, indexing="ij")
    grid_pts = bspline_eval_many(patch, UU.ravel(), VV.ravel())
    D = cdist(pts, grid_pts)
    best_cell = np.argmin(D, axis=1)
    best_dist = D[np.arange(pts.shape[0]), best_cell]

    u = UU.ravel()[best_cell].copy()
    v = VV.ravel()[best_cell].copy()
    h = 1e-5
    for _ in range(refine_iters):
        S0 = bspline_eval_many(patch, u, v)
        Su = (bspline_eval_many(patch, u + h, v) - bspline_eval_many(patch, u - h, v)) / (2 * h)
        Sv = (bspline_eval_many(patch, u, v + h) - bspline_eval_many(patch, u, v - h)) / (2 * h)
        r = S0 - pts
        # 2x2 normal equations per point.
        a = np.sum(Su * Su, axis=1)
        b = np.sum(Su * Sv, axis=1)
        c = np.sum(Sv * Sv, axis=1)
        g1 = np.sum(Su * r, axis=1)
        g2 = np.sum(Sv * r, axis=1)
        det = a * c - b * b
        det = np.where(np.abs(det) < 1e-18, 1e-18, det)
        du = -(c * g1 - b * g2) / det
        dv = -(-b * g1 + a * g2) / det
        step = np.sqrt(du * du + dv * dv)
        scale = np.minimum(1.0, 0.25 / np.maximum(step, 1e-30))
        du *= scale
        dv *= scale
        alpha = np.ones_like(u)
        improved = np.zeros(u.shape, dtype=bool)
        for _ in range(12):
            uc = _wrap_params(u + alpha * du, patch.closed_u)
            vc = np.clip(v + alpha * dv, 0.0, 1.0)
            dc = np.linalg.norm(bspline_eval_many(patch, uc, vc) - pts, axis=1)
            gain = dc < best_dist - 1e-15
            take = gain & ~improved
            u[take], v[take] = uc[take], vc[take]
            best_dist[take] = dc[take]
            improved |= gain
            alpha = np.where(improved, alpha, alpha * 0.5)
            if improved.all():
                break
        if not improved.any():
            break
    return best_dist


def fit_bspline_patch(
    points: np.ndarray,
    uv: np.ndarray,
    grid_shape: tuple[int, int] = (20, 20),
    closed_u: bool = False,
    ridge: float = 1e-6,
) -> BSplinePatch:
    """Least-squares patch through parameterized points with Tikhonov damping."""
    pts = np.asarray(points, dtype=np.float64)
    uv = np.asarray(uv, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or uv.shape != (pts.shape[0], 2):
        raise ValueError("points must be (n, 3) and uv (n, 2)")
    gu, gv = grid_shape
    u = _wrap_params(uv[:, 0], closed_u)
    v = np.clip(uv[:, 1], 0.0, 1.0)
    Nu = _basis_rows(u, gu, closed_u)
    if closed_u:
        folded = np.zeros((Nu.shape[0], gu))
        for ie in range(gu + 3):
            folded[:, ie % gu] += Nu[:, ie]
        Nu = folded
    Nv = _basis_rows(v, gv, False)
    B = np.einsum("qi,qj->qij", Nu, Nv).reshape(pts.shape[0], gu * gv)
    A = B.T @ B + ridge * np.eye(gu * gv)
    X = np.linalg.solve(A, B.T @ pts)
    return BSplinePatch(X.reshape(gu, gv, 3), closed_u=closed_u)
