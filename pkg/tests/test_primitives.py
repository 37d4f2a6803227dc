"""Distances, parameter packing, and rigid-motion behavior of the analytic types."""

import numpy as np
import pytest

from primseg.primitives import (
    CONE_ANGLE,
    CONE_APEX,
    CONE_AXIS,
    CYLINDER_AXIS,
    CYLINDER_CENTER,
    CYLINDER_RADIUS,
    PARAM_DIM,
    PLANE_NORMAL,
    PLANE_OFFSET,
    SPHERE_CENTER,
    SPHERE_RADIUS,
    PrimitiveType,
    cone_distance,
    cylinder_distance,
    distance_point_primitive,
    make_cone_params,
    make_cylinder_params,
    make_plane_params,
    make_sphere_params,
    plane_distance,
    sphere_distance,
    transform_params,
    validate_params,
)


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def _random_rotation(rng):
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def _orthobasis(axis, rng):
    """Two unit vectors completing ``axis`` to an orthonormal frame."""
    a = _unit(axis)
    h = rng.standard_normal(3)
    e1 = _unit(h - (h @ a) * a)
    return e1, np.cross(a, e1)


def surface_points(ptype, params, m, rng):
    """Independent on-surface sampler used as the distance oracle's witness."""
    if ptype == PrimitiveType.PLANE:
        n = params[PLANE_NORMAL]
        e1, e2 = _orthobasis(n, rng)
        uv = rng.uniform(-2, 2, (m, 2))
        return params[PLANE_OFFSET] * n + uv[:, :1] * e1 + uv[:, 1:] * e2
    if ptype == PrimitiveType.SPHERE:
        d = rng.standard_normal((m, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return params[SPHERE_CENTER] + params[SPHERE_RADIUS] * d
    if ptype == PrimitiveType.CYLINDER:
        a = params[CYLINDER_AXIS]
        e1, e2 = _orthobasis(a, rng)
        th = rng.uniform(0, 2 * np.pi, m)
        h = rng.uniform(-2, 2, m)
        rad = params[CYLINDER_RADIUS] * (np.cos(th)[:, None] * e1 + np.sin(th)[:, None] * e2)
        return params[CYLINDER_CENTER] + h[:, None] * a + rad
    if ptype == PrimitiveType.CONE:
        a = params[CONE_AXIS]
        e1, e2 = _orthobasis(a, rng)
        th = rng.uniform(0, 2 * np.pi, m)
        t = rng.uniform(0.05, 2.5, m)
        ang = params[CONE_ANGLE]
        slant = np.cos(ang) * a + np.sin(ang) * (
            np.cos(th)[:, None] * e1 + np.sin(th)[:, None] * e2
        )
        return params[CONE_APEX] + t[:, None] * slant
    raise AssertionError(ptype)


def random_params(ptype, rng):
    if ptype == PrimitiveType.PLANE:
        return make_plane_params(_unit(rng.standard_normal(3)), rng.uniform(-1, 1))
    if ptype == PrimitiveType.SPHERE:
        return make_sphere_params(rng.uniform(-1, 1, 3), rng.uniform(0.3, 2.0))
    if ptype == PrimitiveType.CYLINDER:
        return make_cylinder_params(
            _unit(rng.standard_normal(3)), rng.uniform(-1, 1, 3), rng.uniform(0.3, 2.0)
        )
    if ptype == PrimitiveType.CONE:
        return make_cone_params(
            rng.uniform(-1, 1, 3), _unit(rng.standard_normal(3)), rng.uniform(0.15, 1.2)
        )
    raise AssertionError(ptype)


ANALYTIC = [
    PrimitiveType.PLANE,
    PrimitiveType.SPHERE,
    PrimitiveType.CYLINDER,
    PrimitiveType.CONE,
]


# ---------------------------------------------------------------------------
# hand-checked values


def test_plane_distance_hand_values():
    assert plane_distance(np.array([1.0, 2.0, 3.0]), np.array([0.0, 0.0, 1.0]), 0.0) == 3.0
    # plane z = 2
    assert plane_distance(np.array([[0.0, 0.0, 5.0]]), np.array([0.0, 0.0, 1.0]), 2.0)[0] == 3.0


def test_sphere_distance_hand_values():
    c = np.array([1.0, 0.0, 0.0])
    assert sphere_distance(np.array([4.0, 0.0, 0.0]), c, 2.0) == pytest.approx(1.0)
    # inside the sphere
    assert sphere_distance(np.array([1.0, 0.0, 0.5]), c, 2.0) == pytest.approx(1.5)


def test_cylinder_distance_hand_values():
    a = np.array([0.0, 0.0, 1.0])
    o = np.zeros(3)
    assert cylinder_distance(np.array([2.0, 0.0, 7.0]), a, o, 1.0) == pytest.approx(1.0)
    assert cylinder_distance(np.array([0.0, 0.0, -3.0]), a, o, 1.0) == pytest.approx(1.0)


def test_cone_distance_hand_values():
    apex = np.zeros(3)
    a = np.array([0.0, 0.0, 1.0])
    theta = np.pi / 6
    # a point on the axis at height 1: offset from the slant is sin(theta)
    assert cone_distance(np.array([0.0, 0.0, 1.0]), apex, a, theta) == pytest.approx(0.5)
    # the apex itself is on the surface
    assert cone_distance(np.zeros(3), apex, a, theta) == 0.0
    # literal variant evaluates rho * cos(phi - theta) instead
    lit = cone_distance(np.array([0.0, 0.0, 1.0]), apex, a, theta, paper_literal=True)
    assert lit == pytest.approx(np.cos(theta))


def test_on_surface_points_have_zero_distance():
    rng = np.random.default_rng(7)
    for ptype in ANALYTIC:
        for _ in range(5):
            params = random_params(ptype, rng)
            pts = surface_points(ptype, params, 200, rng)
            d = distance_point_primitive(pts, ptype, params)
            assert np.max(np.abs(d)) < 1e-9, ptype


def test_distance_scalar_matches_batch():
    rng = np.random.default_rng(3)
    for ptype in ANALYTIC:
        params = random_params(ptype, rng)
        pts = rng.uniform(-2, 2, (10, 3))
        batch = distance_point_primitive(pts, ptype, params)
        for i in range(len(pts)):
            one = distance_point_primitive(pts[i], ptype, params)
            assert float(one) == pytest.approx(float(batch[i]), abs=1e-15)


def test_rigid_invariance():
    rng = np.random.default_rng(11)
    for ptype in ANALYTIC:
        for _ in range(5):
            params = random_params(ptype, rng)
            pts = rng.uniform(-2, 2, (50, 3))
            R = _random_rotation(rng)
            t = rng.uniform(-3, 3, 3)
            moved = transform_params(ptype, params, R, t)
            d0 = distance_point_primitive(pts, ptype, params)
            d1 = distance_point_primitive(pts @ R.T + t, ptype, moved)
            assert np.max(np.abs(d0 - d1)) < 1e-9, ptype


# ---------------------------------------------------------------------------
# packing and validation


def test_param_vectors_are_packed_into_disjoint_slots():
    rng = np.random.default_rng(0)
    for ptype in ANALYTIC:
        v = random_params(ptype, rng)
        assert v.shape == (PARAM_DIM,)
    v = make_plane_params(np.array([0.0, 0.0, 1.0]), 0.25)
    assert v[PLANE_OFFSET] == 0.25
    assert np.all(v[4:] == 0.0)
    v = make_cone_params(np.ones(3), np.array([1.0, 0.0, 0.0]), 0.5)
    assert v[CONE_ANGLE] == 0.5
    assert np.all(v[:15] == 0.0)


def test_make_params_reject_non_unit_directions():
    with pytest.raises(ValueError):
        make_plane_params(np.array([0.0, 0.0, 2.0]), 1.0)
    with pytest.raises(ValueError):
        make_cylinder_params(np.array([3.0, 0.0, 0.0]), np.zeros(3), 1.0)
    v = make_plane_params(np.array([0.0, 0.0, 1.0]), 1.0)
    assert np.linalg.norm(v[PLANE_NORMAL]) == pytest.approx(1.0)


def test_validate_params_rejects_bad_values():
    good = make_sphere_params(np.zeros(3), 1.0)
    validate_params(PrimitiveType.SPHERE, good)
    bad = good.copy()
    bad[SPHERE_RADIUS] = -1.0
    with pytest.raises(ValueError):
        validate_params(PrimitiveType.SPHERE, bad)
    with pytest.raises(ValueError):
        make_cone_params(np.zeros(3), np.array([0.0, 0.0, 1.0]), np.pi / 2 + 0.1)
    with pytest.raises(ValueError):
        make_cone_params(np.zeros(3), np.array([0.0, 0.0, 1.0]), 0.0)


def test_type_labels_round_trip():
    for ptype in PrimitiveType:
        assert PrimitiveType.from_label(ptype.label) is ptype
    assert PrimitiveType.PLANE.is_analytic
    assert not PrimitiveType.BSPLINE_OPEN.is_analytic
    with pytest.raises(ValueError):
        PrimitiveType.from_label("torus")


def test_spline_distance_requires_patch():
    with pytest.raises(ValueError):
        distance_point_primitive(np.zeros(3), PrimitiveType.BSPLINE_OPEN, np.zeros(PARAM_DIM))
