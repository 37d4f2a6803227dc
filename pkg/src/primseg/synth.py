"""Synthetic scene generation: typed primitives with exact normals and labels.

A scene spec is a list of primitives (packed parameter vector plus a
type-specific sampling extent), a per-primitive point budget, a noise sigma
applied to positions only, a corruption fraction rho for the true attribute
table, and a seed.  Everything downstream of the seed is deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .attributes import DESCRIPTOR_DIM, AttributeSet
from .bspline import BSplinePatch, bspline_eval_many
from .cloud import PointCloud
from .metrics import Segmentation
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


@dataclass
class PrimitiveSpec:
    ptype: PrimitiveType
    n_points: int
    params: np.ndarray  # (22,) packed; zeros for spline types
    extent: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ptype = PrimitiveType(self.ptype)
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (PARAM_DIM,):
            raise ValueError(f"params must have shape ({PARAM_DIM},)")
        if self.n_points < 1:
            raise ValueError("n_points must be positive")

    def patch(self) -> BSplinePatch | None:
        if self.ptype not in (PrimitiveType.BSPLINE_OPEN, PrimitiveType.BSPLINE_CLOSED):
            return None
        cp = np.asarray(self.extent["control_points"], dtype=np.float64)
        return BSplinePatch(cp, closed_u=self.ptype == PrimitiveType.BSPLINE_CLOSED)


@dataclass
class SceneSpec:
    primitives: list
    noise_sigma: float = 0.0
    rho: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.primitives:
            raise ValueError("scene needs at least one primitive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")

    def to_json(self) -> str:
        prims = []
        for p in self.primitives:
            extent = {
                k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in p.extent.items()
            }
            prims.append(
                {
                    "type": p.ptype.label,
                    "points": p.n_points,
                    "params": p.params.tolist(),
                    "extent": extent,
                }
            )
        doc = {
            "seed": self.seed,
            "noise_sigma": self.noise_sigma,
            "rho": self.rho,
            "primitives": prims,
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SceneSpec":
        doc = json.loads(text)
        try:
            prims = [
                PrimitiveSpec(
                    ptype=PrimitiveType.from_label(p["type"]),
                    n_points=int(p["points"]),
                    params=np.asarray(p["params"], dtype=np.float64),
                    extent=dict(p.get("extent", {})),
                )
                for p in doc["primitives"]
            ]
            return cls(
                primitives=prims,
                noise_sigma=float(doc.get("noise_sigma", 0.0)),
                rho=float(doc.get("rho", 0.0)),
                seed=int(doc.get("seed", 0)),
            )
        except KeyError as exc:
            raise ValueError(f"scene spec missing field {exc}") from exc


def _orthonormal_frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(a, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(a, e1)


def _sample_plane(spec: PrimitiveSpec, m: int, rng) -> tuple[np.ndarray, np.ndarray]:
    n = spec.params[PLANE_NORMAL]
    center = np.asarray(spec.extent["center"], dtype=np.float64)
    e1 = np.asarray(spec.extent["u_axis"], dtype=np.float64)
    e2 = np.asarray(spec.extent["v_axis"], dtype=np.float64)
    hu, hv = spec.extent["half_u"], spec.extent["half_v"]
    u = rng.uniform(-hu, hu, m)
    v = rng.uniform(-hv, hv, m)
    pts = center + u[:, None] * e1 + v[:, None] * e2
    return pts, np.tile(n, (m, 1))


def _sample_sphere(spec: PrimitiveSpec, m: int, rng) -> tuple[np.ndarray, np.ndarray]:
    c = spec.params[SPHERE_CENTER]
    r = spec.params[SPHERE_RADIUS]
    dirs = rng.normal(size=(m, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return c + r * dirs, dirs


def _sample_cylinder(spec: PrimitiveSpec, m: int, rng) -> tuple[np.ndarray, np.ndarray]:
    a = spec.params[CYLINDER_AXIS]
    o = spec.params[CYLINDER_CENTER]
    r = spec.params[CYLINDER_RADIUS]
    hh = spec.extent["half_height"]
    e1, e2 = _orthonormal_frame(a)
    phi = rng.uniform(0.0, 2.0 * np.pi, m)
    t = rng.uniform(-hh, hh, m)
    radial = np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2
    return o + t[:, None] * a + r * radial, radial


def _sample_cone(spec: PrimitiveSpec, m: int, rng) -> tuple[np.ndarray, np.ndarray]:
    apex = spec.params[CONE_APEX]
    a = spec.params[CONE_AXIS]
    theta = spec.params[CONE_ANGLE]
    s0, s1 = spec.extent["slant_range"]
    e1, e2 = _orthonormal_frame(a)
    # area element on the cone scales with slant distance s, so draw
    # s = sqrt(U) interpolated between the squared range endpoints
    s = np.sqrt(rng.uniform(s0 * s0, s1 * s1, m))
    phi = rng.uniform(0.0, 2.0 * np.pi, m)
    radial = np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2
    pts = apex + s[:, None] * (np.cos(theta) * a + np.sin(theta) * radial)
    normals = np.cos(theta) * radial - np.sin(theta) * a
    return pts, normals


def _sample_bspline(spec: PrimitiveSpec, m: int, rng) -> tuple[np.ndarray, np.ndarray]:
    patch = spec.patch()
    u = rng.uniform(0.0, 1.0, m)
    v = rng.uniform(0.0, 1.0, m)
    pts = bspline_eval_many(patch, u, v)
    h = 1e-4
    if patch.closed_u:
        du = bspline_eval_many(patch, u + h, v) - bspline_eval_many(patch, u - h, v)
    else:
        du = bspline_eval_many(patch, np.clip(u + h, 0, 1), v) - bspline_eval_many(
            patch, np.clip(u - h, 0, 1), v
        )
    dv = bspline_eval_many(patch, u, np.clip(v + h, 0, 1)) - bspline_eval_many(
        patch, u, np.clip(v - h, 0, 1)
    )
    normals = np.cross(du, dv)
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    normals /= np.maximum(norms, 1e-30)
    return pts, normals


_SAMPLERS = {
    PrimitiveType.PLANE: _sample_plane,
    PrimitiveType.SPHERE: _sample_sphere,
    PrimitiveType.CYLINDER: _sample_cylinder,
    PrimitiveType.CONE: _sample_cone,
    PrimitiveType.BSPLINE_OPEN: _sample_bspline,
    PrimitiveType.BSPLINE_CLOSED: _sample_bspline,
}


def sample_primitive_surface(spec: PrimitiveSpec, m: int, rng) -> np.ndarray:
    """Noise-free points on the true surface patch (for residual metrics)."""
    pts, _ = _SAMPLERS[spec.ptype](spec, m, rng)
    return pts


def corrupt_params(attrs: AttributeSet, rho: float, seed: int = 0) -> AttributeSet:
    """Overwrite the attribute rows of floor(rho * n) points with a donor's.

    Each corrupted point takes the parameter vector and one-hot type of a
    uniformly chosen *different* primitive, modeling confidently wrong local
    fits.  Grouping is recovered from identical (type, params) rows.
    """
    n = len(attrs)
    count = int(np.floor(rho * n))
    if count == 0:
        return attrs
    keys = np.concatenate(
        [attrs.type_dist.argmax(axis=1)[:, None].astype(np.float64), attrs.params], axis=1
    )
    _, group = np.unique(keys, axis=0, return_inverse=True)
    n_groups = group.max() + 1
    if n_groups < 2:
        raise ValueError("need at least two distinct primitives to corrupt")
    reps = np.array([np.flatnonzero(group == g)[0] for g in range(n_groups)])
    rng = np.random.default_rng(seed)
    victims = rng.choice(n, size=count, replace=False)
    offsets = rng.integers(1, n_groups, size=count)
    donors = reps[(group[victims] + offsets) % n_groups]
    params = attrs.params.copy()
    type_dist = attrs.type_dist.copy()
    params[victims] = attrs.params[donors]
    type_dist[victims] = attrs.type_dist[donors]
    return AttributeSet(
        descriptors=attrs.descriptors.copy(),
        type_dist=type_dist,
        params=params,
        confidence=attrs.confidence.copy(),
    )


def generate_scene(spec: SceneSpec) -> tuple[PointCloud, Segmentation, AttributeSet]:
    """Sample every primitive, attach exact normals, labels, true attributes.

    Noise perturbs positions only; the stored normals and attribute tables
    stay exact, and rho > 0 then corrupts a floor(rho * n) subset of the
    attribute rows.
    """
    rng = np.random.default_rng(spec.seed)
    all_pts, all_nrm, labels = [], [], []
    for k, prim in enumerate(spec.primitives):
        pts, nrm = _SAMPLERS[prim.ptype](prim, prim.n_points, rng)
        all_pts.append(pts)
        all_nrm.append(nrm)
        labels.append(np.full(prim.n_points, k, dtype=np.intp))
    P = np.concatenate(all_pts)
    N = np.concatenate(all_nrm)
    labels = np.concatenate(labels)
    if spec.noise_sigma > 0:
        P = P + rng.normal(0.0, spec.noise_sigma, P.shape)
    cloud = PointCloud(P, N)

    seg = Segmentation(
        labels=labels,
        segment_types=[p.ptype for p in spec.primitives],
        segment_params=[
            p.params.copy() if p.ptype.is_analytic else None for p in spec.primitives
        ],
        patches=[p.patch() for p in spec.primitives],
    )

    n = P.shape[0]
    desc = np.zeros((n, DESCRIPTOR_DIM))
    desc[:, 0:3] = P
    desc[:, 3:6] = N
    type_dist = np.zeros((n, N_TYPES))
    params = np.zeros((n, PARAM_DIM))
    for k, prim in enumerate(spec.primitives):
        mask = labels == k
        type_dist[mask, int(prim.ptype)] = 1.0
        params[mask] = prim.params
    attrs = AttributeSet(
        descriptors=desc,
        type_dist=type_dist,
        params=params,
        confidence=np.ones(n),
    )
    if spec.rho > 0:
        attrs = corrupt_params(attrs, spec.rho, seed=spec.seed + 1)
    return cloud, seg, attrs


def _random_unit(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _make_plane(center, rng) -> PrimitiveSpec:
    n = _random_unit(rng)
    params = np.zeros(PARAM_DIM)
    params[PLANE_NORMAL] = n
    params[PLANE_OFFSET] = n @ center
    e1, e2 = _orthonormal_frame(n)
    return PrimitiveSpec(
        PrimitiveType.PLANE,
        1,
        params,
        {
            "center": center.tolist(),
            "u_axis": e1.tolist(),
            "v_axis": e2.tolist(),
            "half_u": float(rng.uniform(0.12, 0.2)),
            "half_v": float(rng.uniform(0.12, 0.2)),
        },
    )


def _make_sphere(center, rng) -> PrimitiveSpec:
    params = np.zeros(PARAM_DIM)
    params[SPHERE_CENTER] = center
    params[SPHERE_RADIUS] = rng.uniform(0.08, 0.16)
    return PrimitiveSpec(PrimitiveType.SPHERE, 1, params, {})


def _make_cylinder(center, rng) -> PrimitiveSpec:
    params = np.zeros(PARAM_DIM)
    params[CYLINDER_AXIS] = _random_unit(rng)
    params[CYLINDER_CENTER] = center
    params[CYLINDER_RADIUS] = rng.uniform(0.06, 0.13)
    return PrimitiveSpec(
        PrimitiveType.CYLINDER, 1, params, {"half_height": float(rng.uniform(0.12, 0.2))}
    )


def _make_cone(center, rng) -> PrimitiveSpec:
    a = _random_unit(rng)
    theta = rng.uniform(0.3, 0.8)
    s1 = rng.uniform(0.18, 0.3)
    s0 = 0.25 * s1
    params = np.zeros(PARAM_DIM)
    params[CONE_AXIS] = a
    params[CONE_ANGLE] = theta
    # place the apex so the sampled band sits roughly on the cell center
    params[CONE_APEX] = center - a * (np.cos(theta) * 0.5 * (s0 + s1))
    return PrimitiveSpec(
        PrimitiveType.CONE, 1, params, {"slant_range": [float(s0), float(s1)]}
    )


def _make_bspline(center, rng, closed: bool) -> PrimitiveSpec:
    g = 6
    if closed:
        # perturbed cylinder control net, wrapped in u
        r = rng.uniform(0.08, 0.14)
        phi = 2 * np.pi * np.arange(g) / g
        ring = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
        z = np.linspace(-0.15, 0.15, g)
        cp = np.zeros((g, g, 3))
        cp[:, :, 0] = ring[:, 0][:, None]
        cp[:, :, 1] = ring[:, 1][:, None]
        cp[:, :, 2] = z[None, :]
        cp += rng.normal(0.0, 0.01, cp.shape)
    else:
        # perturbed plane: a height field over a regular grid
        xs = np.linspace(-0.18, 0.18, g)
        cp = np.zeros((g, g, 3))
        cp[:, :, 0], cp[:, :, 1] = np.meshgrid(xs, xs, indexing="ij")
        cp[:, :, 2] = rng.normal(0.0, 0.03, (g, g))
    R = np.linalg.qr(rng.normal(size=(3, 3)))[0]
    if np.linalg.det(R) < 0:
        R[:, 0] *= -1
    cp = cp @ R.T + center
    ptype = PrimitiveType.BSPLINE_CLOSED if closed else PrimitiveType.BSPLINE_OPEN
    return PrimitiveSpec(ptype, 1, np.zeros(PARAM_DIM), {"control_points": cp.tolist()})


def random_scene_spec(
    seed: int,
    n_primitives: int | None = None,
    points_per: tuple[int, int] = (256, 448),
    total_points: int | None = None,
    noise_sigma: float = 0.0,
    rho: float = 0.0,
    include_splines: bool = False,
    separation: float = 0.15,
    separation_tries: int = 60,
) -> SceneSpec:
    """Separable random scene: primitives on a jittered 2x2x2 cell grid.

    ``total_points`` overrides ``points_per`` with an even split (remainder
    spread over the first scenes) so a fixed cloud size can be requested.
    Poses are rejection-sampled until every surface keeps ``separation``
    distance from the other cells and primitives (best of
    ``separation_tries`` drawn candidates otherwise).
    """
    rng = np.random.default_rng(seed)
    K = int(n_primitives) if n_primitives is not None else int(rng.integers(4, 9))
    if not 1 <= K <= 8:
        raise ValueError("supports 1 to 8 primitives per scene")
    cells = np.array([[i, j, l] for i in (0, 1) for j in (0, 1) for l in (0, 1)], dtype=float)
    cells = (cells - 0.5) * 0.62
    rng.shuffle(cells)
    makers = [_make_plane, _make_sphere, _make_cylinder, _make_cone]
    if include_splines:
        makers = makers + [
            lambda c, r: _make_bspline(c, r, False),
            lambda c, r: _make_bspline(c, r, True),
        ]
    picks = list(rng.permutation(len(makers)))  # one of each type first, then repeats
    while len(picks) < K:
        picks.append(int(rng.integers(0, len(makers))))

    # Rejection-sample each pose so no (unbounded) surface comes close to
    # another cell or an already placed primitive: without this, a plane
    # sliced through a distant cell makes the scene genuinely ambiguous.
    prims, placed_samples = [], []
    for k in range(K):
        other_cells = np.array([cells[j] for j in range(K) if j != k])
        best, best_margin = None, -np.inf
        for _ in range(separation_tries):
            center = cells[k] + rng.uniform(-0.05, 0.05, 3)
            cand = makers[picks[k]](center, rng)
            samples = sample_primitive_surface(cand, 48, rng)
            margin = float(np.min(_prim_distance(cand, other_cells))) if K > 1 else np.inf
            for prev, prev_samples in zip(prims, placed_samples):
                margin = min(
                    margin,
                    float(np.min(_prim_distance(cand, prev_samples))),
                    float(np.min(_prim_distance(prev, samples))),
                )
            if margin > best_margin:
                best, best_margin = (cand, samples), margin
            if margin >= separation:
                break
        prim, samples = best
        if total_points is not None:
            prim.n_points = total_points // K + (1 if k < total_points % K else 0)
        else:
            prim.n_points = int(rng.integers(points_per[0], points_per[1] + 1))
        prims.append(prim)
        placed_samples.append(samples)
    return SceneSpec(primitives=prims, noise_sigma=noise_sigma, rho=rho, seed=seed)


def _prim_distance(prim: PrimitiveSpec, pts: np.ndarray) -> np.ndarray:
    from .primitives import distance_point_primitive

    analytic = prim.ptype.is_analytic
    return np.abs(
        distance_point_primitive(
            pts,
            prim.ptype,
            params=prim.params if analytic else None,
            patch=None if analytic else prim.patch(),
        )
    )
