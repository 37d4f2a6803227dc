"""Per-point attributes: descriptors, type distributions, primitive params.

Each point gets a descriptor vector, a distribution over the six primitive
types, a 22-dim parameter vector with only the argmax type's block
populated, and a confidence score (inlier fraction of the best local fit).
The analytic type distribution is a soft-min over the four local fit
residuals; points whose best analytic residual is still poor shift most of
their mass onto one of the spline types, picked by whether the local
neighborhood boundary closes into a ring.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bspline import BSplinePatch, bspline_closest_distance, fit_bspline_patch
from .cloud import NeighborGraph, PointCloud, estimate_normals
from .fitting import (
    INLIER_THRESHOLD,
    FitError,
    FitResult,
    batched_cone_fit,
    batched_cylinder_fit,
    batched_plane_fit,
    batched_sphere_fit,
    fit_cone,
    fit_cylinder,
    fit_plane,
    fit_sphere,
)
from .primitives import (
    CONE_ANGLE,
    CONE_APEX,
    CONE_AXIS,
    CYLINDER_AXIS,
    CYLINDER_CENTER,
    CYLINDER_RADIUS,
    N_TYPES,
    PARAM_DIM,
    PLANE_NORMAL,
    PLANE_OFFSET,
    SPHERE_CENTER,
    SPHERE_RADIUS,
    PrimitiveType,
)

DESCRIPTOR_DIM = 16
SOFTMIN_TAU = 0.02
SPLINE_SHIFT_THRESHOLD = 0.02
SPLINE_SHIFT_MASS = 0.7


@dataclass
class PointAttributes:
    descriptor: np.ndarray
    type_dist: np.ndarray
    params: np.ndarray
    confidence: float

    @property
    def argmax_type(self) -> PrimitiveType:
        return PrimitiveType(int(np.argmax(self.type_dist)))


@dataclass
class AttributeSet:
    """Struct-of-arrays attribute container for a whole cloud."""

    descriptors: np.ndarray  # (n, m)
    type_dist: np.ndarray  # (n, 6)
    params: np.ndarray  # (n, 22)
    confidence: np.ndarray  # (n,)

    def __post_init__(self):
        n = self.descriptors.shape[0]
        if self.type_dist.shape != (n, N_TYPES):
            raise ValueError("type_dist shape mismatch")
        if self.params.shape != (n, PARAM_DIM):
            raise ValueError("params shape mismatch")
        if self.confidence.shape != (n,):
            raise ValueError("confidence shape mismatch")

    def __len__(self) -> int:
        return self.descriptors.shape[0]

    def point(self, i: int) -> PointAttributes:
        return PointAttributes(
            self.descriptors[i],
            self.type_dist[i],
            self.params[i],
            float(self.confidence[i]),
        )

    __getitem__ = point

    def argmax_types(self) -> np.ndarray:
        return np.argmax(self.type_dist, axis=1)


def _ring_closed(P: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Heuristic open/closed classification of neighborhoods.

    Projects the outer half of each neighborhood onto the local tangent
    plane; if the largest angular gap around the centroid stays below
    pi/2 the boundary closes into a ring (closed surface direction).
    P is (B, k, 3), normal (B, 3); returns (B,) bool.
    """
    B, k, _ = P.shape
    ctr = P.mean(axis=1)
    d = P - ctr[:, None, :]
    t = d - np.einsum("bki,bi->bk", d, normal)[..., None] * normal[:, None, :]
    pick = np.where(np.abs(normal[:, 2:3]) < 0.9, [[0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0]])
    e1 = np.cross(normal, pick)
    e1 /= np.maximum(np.linalg.norm(e1, axis=1, keepdims=True), 1e-12)
    e2 = np.cross(normal, e1)
    x = np.einsum("bki,bi->bk", t, e1)
    y = np.einsum("bki,bi->bk", t, e2)
    r = np.hypot(x, y)
    # Outer half of the neighborhood approximates its boundary.
    m = max(k // 2, 3)
    order = np.argsort(r, axis=1)[:, ::-1][:, :m]
    rows = np.arange(B)[:, None]
    ang = np.sort(np.arctan2(y[rows, order], x[rows, order]), axis=1)
    gaps = np.diff(ang, axis=1)
    wrap = 2 * np.pi - (ang[:, -1] - ang[:, 0])
    max_gap = np.maximum(gaps.max(axis=1) if m > 1 else wrap, wrap)
    return max_gap < np.pi / 2


def _estimate_core(P, N, nbr_dists, tau=SOFTMIN_TAU):
    """Shared batched estimator. P, N are (B, k, 3) neighborhoods
    (first entry = the point itself), nbr_dists (B, k-1)."""
    B, k, _ = P.shape
    plane = batched_plane_fit(P, N)
    sphere = batched_sphere_fit(P)
    cyl = batched_cylinder_fit(P, N)
    cone = batched_cone_fit(P, N)

    rms = np.stack([plane["rms"], sphere["rms"], cyl["rms"], cone["rms"]], axis=1)
    valid = np.isfinite(rms)
    any_valid = valid.any(axis=1)

    type_dist = np.zeros((B, N_TYPES))
    safe_rms = np.where(valid, rms, np.inf)
    best = np.min(np.where(valid, rms, np.inf), axis=1)
    z = np.where(valid, np.exp(-(safe_rms - best[:, None]) / tau), 0.0)
    zsum = z.sum(axis=1)
    rows = any_valid
    type_dist[rows, :4] = z[rows] / zsum[rows, None]
    type_dist[~rows] = 1.0 / N_TYPES

    # Poor best analytic fit -> shift mass to a spline type.
    shift = rows & (best > SPLINE_SHIFT_THRESHOLD)
    if np.any(shift):
        closed = _ring_closed(P[shift], plane["normal"][shift])
        spline_col = np.where(
            closed, int(PrimitiveType.BSPLINE_CLOSED), int(PrimitiveType.BSPLINE_OPEN)
        )
        type_dist[shift, :4] *= 1.0 - SPLINE_SHIFT_MASS
        type_dist[np.flatnonzero(shift), spline_col] = SPLINE_SHIFT_MASS

    arg = np.argmax(type_dist, axis=1)
    params = np.zeros((B, PARAM_DIM))
    sel = arg == PrimitiveType.PLANE
    params[np.ix_(sel, np.r_[PLANE_NORMAL])] = plane["normal"][sel]
    params[sel, PLANE_OFFSET] = plane["offset"][sel]
    sel = arg == PrimitiveType.SPHERE
    params[np.ix_(sel, np.r_[SPHERE_CENTER])] = sphere["center"][sel]
    params[sel, SPHERE_RADIUS] = sphere["radius"][sel]
    sel = arg == PrimitiveType.CYLINDER
    params[np.ix_(sel, np.r_[CYLINDER_AXIS])] = cyl["axis"][sel]
    params[np.ix_(sel, np.r_[CYLINDER_CENTER])] = cyl["center"][sel]
    params[sel, CYLINDER_RADIUS] = cyl["radius"][sel]
    sel = arg == PrimitiveType.CONE
    params[np.ix_(sel, np.r_[CONE_APEX])] = cone["apex"][sel]
    params[np.ix_(sel, np.r_[CONE_AXIS])] = cone["axis"][sel]
    params[sel, CONE_ANGLE] = cone["theta"][sel]

    # Confidence: inlier fraction of the best analytic fit.
    confidence = np.zeros(B)
    ids = np.flatnonzero(any_valid)
    if ids.size:
        best_type = np.argmin(safe_rms[ids], axis=1)
        dists = np.empty((ids.size, k))
        for code in range(4):
            sel = best_type == code
            if not np.any(sel):
                continue
            loc = ids[sel]
            Q = P[loc]
            if code == 0:
                d = np.abs(
                    np.einsum("bki,bi->bk", Q, plane["normal"][loc]) - plane["offset"][loc, None]
                )
            elif code == 1:
                d = np.abs(
                    np.linalg.norm(Q - sphere["center"][loc, None], axis=2)
                    - sphere["radius"][loc, None]
                )
            elif code == 2:
                a = cyl["axis"][loc]
                v = Q - cyl["center"][loc, None]
                t = np.einsum("bki,bi->bk", v, a)
                d = np.abs(
                    np.linalg.norm(v - t[..., None] * a[:, None, :], axis=2)
                    - cyl["radius"][loc, None]
                )
            else:
                u = Q - cone["apex"][loc, None]
                rho = np.linalg.norm(u, axis=2)
                c = np.clip(
                    np.einsum("bki,bi->bk", u, cone["axis"][loc])
                    / np.where(rho < 1e-12, 1.0, rho),
                    -1.0,
                    1.0,
                )
                d = rho * np.abs(np.sin(np.arccos(c) - cone["theta"][loc, None]))
            dists[sel] = d
        confidence[ids] = np.mean(dists < INLIER_THRESHOLD, axis=1)

    # Descriptor: position, normal, covariance shape ratios, local scale,
    # the four fit residuals (capped), normal variation, zero padding.
    desc = np.zeros((B, DESCRIPTOR_DIM))
    desc[:, 0:3] = P[:, 0]
    desc[:, 3:6] = N[:, 0]
    ev = plane["evals_desc"]
    lead = np.maximum(ev[:, 0], 1e-18)
    desc[:, 6] = ev[:, 1] / lead
    desc[:, 7] = np.maximum(ev[:, 2], 0.0) / lead
    desc[:, 8] = nbr_dists.mean(axis=1)
    desc[:, 9:13] = np.minimum(np.where(valid, rms, 1.0), 1.0)
    desc[:, 13] = np.linalg.norm(N - N[:, :1], axis=2).mean(axis=1)
    return desc, type_dist, params, confidence


def _gather_neighborhoods(cloud: PointCloud, graph: NeighborGraph, k_fit: int):
    n = len(cloud)
    k_use = min(k_fit, graph.indices.shape[1] + 1, n)
    if k_use < 6:
        raise ValueError("neighborhood too small: need k_fit >= 6")
    nbr = np.hstack([np.arange(n)[:, None], graph.indices[:, : k_use - 1]])
    normals = cloud.normals if cloud.normals is not None else estimate_normals(cloud, graph)
    return cloud.positions[nbr], normals[nbr], graph.distances[:, : k_use - 1]


def estimate_point_attributes(
    cloud: PointCloud, graph: NeighborGraph, k_fit: int = 64, tau: float = SOFTMIN_TAU
) -> AttributeSet:
    """Estimate attributes for every point from its k_fit-neighborhood.

    All four analytic fits run batched over the whole cloud; a point whose
    fits all fail gets a uniform type distribution and zero confidence
    rather than aborting the batch.
    """
    P, N, D = _gather_neighborhoods(cloud, graph, k_fit)
    desc, type_dist, params, conf = _estimate_core(P, N, D, tau)
    return AttributeSet(desc, type_dist, params, conf)


def handcrafted_descriptor(
    cloud: PointCloud, graph: NeighborGraph, index: int, k_fit: int = 64
) -> np.ndarray:
    """Descriptor of a single point; same machinery as the batch path."""
    P, N, D = _gather_neighborhoods(cloud, graph, k_fit)
    i = int(index)
    if not 0 <= i < len(cloud):
        raise IndexError("point index out of range")
    desc, _, _, _ = _estimate_core(P[i : i + 1], N[i : i + 1], D[i : i + 1])
    return desc[0]


# ---------------------------------------------------------------------------
# Attribute file interchange


def save_attributes(path, attrs: AttributeSet) -> None:
    """Plain-text interchange: 'n m' header, then n descriptor rows,
    n type rows, n param rows."""
    from .io import atomic_write_text

    n, m = attrs.descriptors.shape
    lines = [f"{n} {m}"]
    for block in (attrs.descriptors, attrs.type_dist, attrs.params):
        for row in block:
            lines.append(" ".join(format(v, ".17g") for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_attributes(path, expected_n: int | None = None) -> AttributeSet:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError("line 1: empty attribute file")
    head = lines[0].split()
    if len(head) != 2:
        raise ValueError("line 1: header must be 'n m'")
    try:
        n, m = int(head[0]), int(head[1])
    except ValueError as exc:
        raise ValueError(f"line 1: bad header: {exc}") from None
    if n < 1 or m < 1:
        raise ValueError("line 1: header counts must be positive")
    if expected_n is not None and n != expected_n:
        raise ValueError(f"line 1: attribute count {n} does not match cloud size {expected_n}")
    need = 1 + 3 * n
    if len([ln for ln in lines if ln.strip()]) < need:
        raise ValueError(f"line {len(lines)}: expected {need} lines, file is shorter")

    def parse_block(start, width, name):
        out = np.empty((n, width))
        for r in range(n):
            ln = start + r
            parts = lines[ln].split()
            if len(parts) != width:
                raise ValueError(f"line {ln + 1}: expected {width} {name} values, got {len(parts)}")
            try:
                out[r] = [float(p) for p in parts]
            except ValueError:
                raise ValueError(f"line {ln + 1}: non-numeric {name} value") from None
        return out

    desc = parse_block(1, m, "descriptor")
    tdist = parse_block(1 + n, N_TYPES, "type")
    params = parse_block(1 + 2 * n, PARAM_DIM, "param")
    sums = tdist.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > 1e-6)
    if bad.size:
        ln = 1 + n + int(bad[0]) + 1
        raise ValueError(f"line {ln}: type distribution sums to {sums[bad[0]]:.9g}, expected 1")
    if np.any(tdist < -1e-12):
        ln = 1 + n + int(np.flatnonzero((tdist < -1e-12).any(axis=1))[0]) + 1
        raise ValueError(f"line {ln}: negative type probability")
    return AttributeSet(desc, np.clip(tdist, 0.0, None), params, np.ones(n))


# ---------------------------------------------------------------------------
# Segment refits


_MIN_SEGMENT_SIZE = {
    PrimitiveType.PLANE: 3,
    PrimitiveType.SPHERE: 4,
    PrimitiveType.CYLINDER: 6,
    PrimitiveType.CONE: 6,
    PrimitiveType.BSPLINE_OPEN: 16,
    PrimitiveType.BSPLINE_CLOSED: 16,
}


def _spline_parameterization(P: np.ndarray, closed: bool) -> np.ndarray:
    ctr = P.mean(axis=0)
    d = P - ctr
    _, _, vt = np.linalg.svd(d, full_matrices=False)
    if closed:
        # Angle in the top-variance plane, height along the third axis.
        x, y = d @ vt[0], d @ vt[1]
        u = (np.arctan2(y, x) / (2 * np.pi)) % 1.0
        h = d @ vt[2]
    else:
        u, h = d @ vt[0], d @ vt[1]
        lo, hi = u.min(), u.max()
        u = (u - lo) / max(hi - lo, 1e-12)
    lo, hi = h.min(), h.max()
    v = (h - lo) / max(hi - lo, 1e-12)
    return np.stack([u, np.clip(v, 0.0, 1.0)], axis=1)


def refit_segment_primitive(
    cloud: PointCloud,
    indices: np.ndarray,
    ptype: PrimitiveType,
    grid_shape: tuple[int, int] = (20, 20),
) -> FitResult:
    """Refit one primitive of a known type on a point subset of the cloud."""
    idx = np.asarray(indices, dtype=np.intp)
    ptype = PrimitiveType(ptype)
    if idx.size < _MIN_SEGMENT_SIZE[ptype]:
        raise FitError(f"segment too small for {ptype.label}: {idx.size} points")
    P = cloud.positions[idx]
    if ptype in (PrimitiveType.CYLINDER, PrimitiveType.CONE):
        if cloud.normals is not None:
            N = cloud.normals[idx]
        else:
            sub = PointCloud(P)
            from .cloud import knn_graph

            N = estimate_normals(sub, knn_graph(sub, min(16, len(sub) - 1)))
        return fit_cylinder(P, N) if ptype == PrimitiveType.CYLINDER else fit_cone(P, N)
    if ptype == PrimitiveType.PLANE:
        return fit_plane(P, cloud.normals[idx] if cloud.normals is not None else None)
    if ptype == PrimitiveType.SPHERE:
        return fit_sphere(P)

    closed = ptype == PrimitiveType.BSPLINE_CLOSED
    uv = _spline_parameterization(P, closed)
    gu = min(grid_shape[0], max(4, idx.size // 4))
    gv = min(grid_shape[1], max(4, idx.size // 4))
    patch = fit_bspline_patch(P, uv, (gu, gv), closed_u=closed)
    d = bspline_closest_distance(patch, P)
    rms = float(np.sqrt(np.mean(d * d)))
    return FitResult(
        ptype,
        np.zeros(PARAM_DIM),
        rms,
        int(np.count_nonzero(d < INLIER_THRESHOLD)),
        patch=patch,
    )
