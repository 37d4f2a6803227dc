"""Primitive types, the packed parameter vector, and point-to-surface distances."""

from __future__ import annotations

from enum import IntEnum

import numpy as np

PARAM_DIM = 22
N_TYPES = 6

# Packed parameter-vector layout. One analytic primitive occupies only its
# own slots; the rest stay zero.
PLANE_NORMAL = slice(0, 3)
PLANE_OFFSET = 3
SPHERE_CENTER = slice(4, 7)
SPHERE_RADIUS = 7
CYLINDER_AXIS = slice(8, 11)
CYLINDER_CENTER = slice(11, 14)
CYLINDER_RADIUS = 14
CONE_APEX = slice(15, 18)
CONE_AXIS = slice(18, 21)
CONE_ANGLE = 21

_UNIT_TOL = 1e-6


class PrimitiveType(IntEnum):
    PLANE = 0
    SPHERE = 1
    CYLINDER = 2
    CONE = 3
    BSPLINE_OPEN = 4
    BSPLINE_CLOSED = 5

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "PrimitiveType":
        try:
            return cls[label.upper()]
        except KeyError:
            raise ValueError(f"unknown primitive type {label!r}") from None

    @property
    def is_analytic(self) -> bool:
        return self in ANALYTIC_TYPES


ANALYTIC_TYPES = (
    PrimitiveType.PLANE,
    PrimitiveType.SPHERE,
    PrimitiveType.CYLINDER,
    PrimitiveType.CONE,
)


def _unit(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(v)
    if abs(norm - 1.0) > _UNIT_TOL:
        raise ValueError(f"{name} must be a unit vector (norm {norm:.3g})")
    return v


def make_plane_params(normal, offset: float) -> np.ndarray:
    v = np.zeros(PARAM_DIM)
    v[PLANE_NORMAL] = _unit(normal, "plane normal")
    v[PLANE_OFFSET] = float(offset)
    return v


def make_sphere_params(center, radius: float) -> np.ndarray:
    if radius <= 0:
        raise ValueError("sphere radius must be positive")
    v = np.zeros(PARAM_DIM)
    v[SPHERE_CENTER] = np.asarray(center, dtype=np.float64).reshape(3)
    v[SPHERE_RADIUS] = float(radius)
    return v


def make_cylinder_params(axis, center, radius: float) -> np.ndarray:
    if radius <= 0:
        raise ValueError("cylinder radius must be positive")
    v = np.zeros(PARAM_DIM)
    v[CYLINDER_AXIS] = _unit(axis, "cylinder axis")
    v[CYLINDER_CENTER] = np.asarray(center, dtype=np.float64).reshape(3)
    v[CYLINDER_RADIUS] = float(radius)
    return v


def make_cone_params(apex, axis, angle: float) -> np.ndarray:
    if not 0.0 < angle < np.pi / 2:
        raise ValueError("cone half-angle must lie in (0, pi/2)")
    v = np.zeros(PARAM_DIM)
    v[CONE_APEX] = np.asarray(apex, dtype=np.float64).reshape(3)
    v[CONE_AXIS] = _unit(axis, "cone axis")
    v[CONE_ANGLE] = float(angle)
    return v


def validate_params(ptype: PrimitiveType, params: np.ndarray) -> None:
    """Raise ValueError when the populated slots violate their invariants."""
    v = np.asarray(params, dtype=np.float64)
    if v.shape != (PARAM_DIM,):
        raise ValueError(f"parameter vector must have shape ({PARAM_DIM},)")
    if not np.all(np.isfinite(v)):
        raise ValueError("parameter vector must be finite")
    if ptype == PrimitiveType.PLANE:
        _unit(v[PLANE_NORMAL], "plane normal")
    elif ptype == PrimitiveType.SPHERE:
        if v[SPHERE_RADIUS] <= 0:
            raise ValueError("sphere radius must be positive")
    elif ptype == PrimitiveType.CYLINDER:
        _unit(v[CYLINDER_AXIS], "cylinder axis")
        if v[CYLINDER_RADIUS] <= 0:
            raise ValueError("cylinder radius must be positive")
    elif ptype == PrimitiveType.CONE:
        _unit(v[CONE_AXIS], "cone axis")
        if not 0.0 < v[CONE_ANGLE] < np.pi / 2:
            raise ValueError("cone half-angle must lie in (0, pi/2)")


def plane_distance(points: np.ndarray, normal: np.ndarray, offset: float) -> np.ndarray:
    return np.abs(np.asarray(points) @ normal - offset)


def sphere_distance(points: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    return np.abs(np.linalg.norm(np.asarray(points) - center, axis=-1) - radius)


def cylinder_distance(
    points: np.ndarray, axis: np.ndarray, center: np.ndarray, radius: float
) -> np.ndarray:
    d = np.asarray(points) - center
    along = d @ axis
    rad2 = np.maximum(np.sum(d * d, axis=-1) - along**2, 0.0)
    return np.abs(np.sqrt(rad2) - radius)


def cone_distance(
    points: np.ndarray,
    apex: np.ndarray,
    axis: np.ndarray,
    angle: float,
    paper_literal: bool = False,
) -> np.ndarray:
    """Distance to an infinite cone of half-angle ``angle``.

    The default form ``| |p - o| * sin(phi - theta) |`` measures the
    orthogonal offset from the slant surface; ``paper_literal`` switches to
    the cos form of the same construction. The apex itself is on the
    surface, so its distance is 0.
    """
    u = np.asarray(points, dtype=np.float64) - apex
    rho = np.linalg.norm(u, axis=-1)
    safe = np.where(rho > 0, rho, 1.0)
    cosphi = np.clip((u @ axis) / safe, -1.0, 1.0)
    phi = np.arccos(cosphi)
    if paper_literal:
        d = rho * np.cos(phi - angle)
    else:
        d = rho * np.sin(phi - angle)
    return np.where(rho > 0, np.abs(d), 0.0)


def distance_point_primitive(
    points: np.ndarray,
    ptype: PrimitiveType,
    params: np.ndarray | None = None,
    patch=None,
    *,
    cone_paper_literal: bool = False,
) -> np.ndarray | float:
    """Unsigned distance from one point (3,) or many (m, 3) to a primitive.

    Analytic types read their slots out of the packed parameter vector;
    B-spline types need an explicit ``patch``.
    """
    pts = np.asarray(points, dtype=np.float64)
    scalar = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if ptype in (PrimitiveType.BSPLINE_OPEN, PrimitiveType.BSPLINE_CLOSED):
        if patch is None:
            raise ValueError("B-spline distance needs a fitted patch")
        from .bspline import bspline_closest_distance

        out = bspline_closest_distance(patch, pts)
    else:
        v = np.asarray(params, dtype=np.float64)
        validate_params(ptype, v)
        if ptype == PrimitiveType.PLANE:
            out = plane_distance(pts, v[PLANE_NORMAL], v[PLANE_OFFSET])
        elif ptype == PrimitiveType.SPHERE:
            out = sphere_distance(pts, v[SPHERE_CENTER], v[SPHERE_RADIUS])
        elif ptype == PrimitiveType.CYLINDER:
            out = cylinder_distance(
                pts, v[CYLINDER_AXIS], v[CYLINDER_CENTER], v[CYLINDER_RADIUS]
            )
        else:
            out = cone_distance(
                pts,
                v[CONE_APEX],
                v[CONE_AXIS],
                v[CONE_ANGLE],
                paper_literal=cone_paper_literal,
            )
    return float(out[0]) if scalar else out


def transform_params(ptype: PrimitiveType, params: np.ndarray, R: np.ndarray, t) -> np.ndarray:
    """Parameter vector of the same primitive after the rigid motion p -> R p + t."""
    v = np.array(params, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64).reshape(3)
    if ptype == PrimitiveType.PLANE:
        n = R @ v[PLANE_NORMAL]
        v[PLANE_OFFSET] = v[PLANE_OFFSET] + n @ t
        v[PLANE_NORMAL] = n
    elif ptype == PrimitiveType.SPHERE:
        v[SPHERE_CENTER] = R @ v[SPHERE_CENTER] + t
    elif ptype == PrimitiveType.CYLINDER:
        v[CYLINDER_AXIS] = R @ v[CYLINDER_AXIS]
        v[CYLINDER_CENTER] = R @ v[CYLINDER_CENTER] + t
    elif ptype == PrimitiveType.CONE:
        v[CONE_APEX] = R @ v[CONE_APEX] + t
        v[CONE_AXIS] = R @ v[CONE_AXIS]
    return v
