"""Least-squares primitive fitting: plane, sphere, cylinder, cone.

Every fit has a batched implementation operating on stacked neighborhoods
(B, k, 3); the public ``fit_*`` functions are batch-of-1 wrappers, so the
per-point estimator and the standalone fits can never drift apart.
Nonlinear refinement goes through one shared damped Gauss-Newton loop with
a step-halving line search, which keeps the residual monotone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .primitives import (
    PrimitiveType,
    cone_distance,
    cylinder_distance,
    make_cone_params,
    make_cylinder_params,
    make_plane_params,
    make_sphere_params,
    plane_distance,
    sphere_distance,
)

INLIER_THRESHOLD = 0.01

# Guards against absurd fits in normalized (unit-diameter) coordinates.
_MAX_RADIUS = 100.0
_MAX_APEX_DIST = 100.0


class FitError(ValueError):
    """A fit could not be produced from the given points."""


@dataclass
class FitResult:
    ptype: PrimitiveType
    params: np.ndarray
    rms_residual: float
    inlier_count: int
    patch: object | None = None


def _as_batch(points, name="points") -> np.ndarray:
    P = np.asarray(points, dtype=np.float64)
    if P.ndim == 2:
        P = P[None]
    if P.ndim != 3 or P.shape[2] != 3:
        raise ValueError(f"{name} must have shape (k, 3) or (B, k, 3)")
    return P


def _lex_sign(vecs: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Sign making each row lexicographically positive (first non-tiny entry > 0)."""
    s = np.where(
        np.abs(vecs[:, 0]) > tol,
        np.sign(vecs[:, 0]),
        np.where(np.abs(vecs[:, 1]) > tol, np.sign(vecs[:, 1]), np.sign(vecs[:, 2])),
    )
    return np.where(s == 0, 1.0, s)


# ---------------------------------------------------------------------------
# Batched Gauss-Newton


def batched_gauss_newton(
    x0: np.ndarray,
    residual,
    jacobian,
    project=None,
    max_iter: int = 50,
    max_halvings: int = 20,
    rtol: float = 1e-8,
):
    """Minimize mean squared residual per batch row.

    residual(x) -> (B, k); jacobian(x) -> (B, k, p). ``project`` maps
    iterates back onto their constraint set (unit axes, positive radii)
    before every evaluation. A candidate step is only accepted when it
    strictly decreases the cost, halving the step up to ``max_halvings``
    times, so the per-row cost sequence is non-increasing.

    Returns (x, rms, n_iter) with rms = sqrt(mean squared residual).
    """
    if project is None:
        project = lambda x: x
    x = project(np.array(x0, dtype=np.float64))
    r = residual(x)
    cost = np.nanmean(r * r, axis=1)
    cost = np.where(np.isfinite(cost), cost, np.inf)
    active = np.isfinite(cost)
    eye = np.eye(x.shape[1])
    n_iter = 0
    # The residual/jacobian closures capture per-row data, so all calls use
    # the full batch; ``active`` only gates which rows may move.
    for _ in range(max_iter):
        if not active.any():
            break
        n_iter += 1
        r = residual(x)
        J = jacobian(x)
        J = np.where(np.isfinite(J), J, 0.0)
        r = np.where(np.isfinite(r), r, 0.0)
        JtJ = np.einsum("bki,bkj->bij", J, J)
        g = np.einsum("bki,bk->bi", J, r)
        lam = 1e-10 * np.einsum("bii->b", JtJ) / x.shape[1] + 1e-14
        try:
            delta = -np.linalg.solve(JtJ + lam[:, None, None] * eye, g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            delta = -np.linalg.solve(JtJ + (1e-4 + lam)[:, None, None] * eye, g[..., None])[..., 0]
        delta = np.where(np.isfinite(delta), delta, 0.0)
        delta[~active] = 0.0

        cur = cost
        alpha = np.ones(x.shape[0])
        accepted = np.zeros(x.shape[0], dtype=bool)
        xn = x.copy()
        cn = cost.copy()
        for _h in range(max_halvings + 1):
            cand = project(x + alpha[:, None] * delta)
            rc = residual(cand)
            cc = np.nanmean(rc * rc, axis=1)
            cc = np.where(np.isfinite(cc), cc, np.inf)
            improve = (cc < cur) & active
            take = improve & ~accepted
            xn[take] = cand[take]
            cn[take] = cc[take]
            accepted |= improve
            if (accepted | ~active).all():
                break
            alpha = np.where(accepted, alpha, alpha * 0.5)
        rel = (cur - cn) / np.maximum(cur, 1e-300)
        x, cost = xn, cn
        active = active & accepted & (rel > rtol)
    rms = np.sqrt(np.maximum(cost, 0.0))
    return x, rms, n_iter


# ---------------------------------------------------------------------------
# Plane


def batched_plane_fit(P: np.ndarray, N: np.ndarray | None = None) -> dict:
    """Covariance plane fit per batch row.

    Returns normal, offset, rms, ok mask, and the descending covariance
    eigenvalues (reused by the descriptor).
    """
    B, k, _ = P.shape
    ctr = P.mean(axis=1)
    d = P - ctr[:, None, :]
    cov = np.einsum("bki,bkj->bij", d, d)
    evals, evecs = np.linalg.eigh(cov)
    normal = evecs[:, :, 0].copy()
    ok = evals[:, 1] > np.maximum(1e-10 * evals[:, 2], 1e-18)
    if N is not None:
        mean_n = N.mean(axis=1)
        s = np.sign(np.einsum("bi,bi->b", normal, mean_n))
        s = np.where(s == 0, _lex_sign(normal), s)
    else:
        s = _lex_sign(normal)
    normal *= s[:, None]
    offset = np.einsum("bi,bi->b", normal, ctr)
    rms = np.sqrt(np.maximum(evals[:, 0], 0.0) / k)
    return {
        "normal": normal,
        "offset": offset,
        "rms": np.where(ok, rms, np.inf),
        "ok": ok,
        "evals_desc": evals[:, ::-1],
        "centroid": ctr,
    }


def fit_plane(points, normals=None) -> FitResult:
    """Least-squares plane through >= 3 non-collinear points.

    The normal is the smallest-eigenvalue direction of the point
    covariance; its sign follows the mean input normal when normals are
    given, else the first non-tiny component is made positive.
    """
    P = _as_batch(points)
    if P.shape[1] < 3:
        raise FitError("need at least 3 points for a plane")
    N = _as_batch(normals, "normals") if normals is not None else None
    out = batched_plane_fit(P, N)
    if not out["ok"][0]:
        raise FitError("rank deficient: points are collinear")
    params = make_plane_params(out["normal"][0], out["offset"][0])
    res = plane_distance(P[0], out["normal"][0], out["offset"][0])
    return FitResult(
        PrimitiveType.PLANE,
        params,
        float(out["rms"][0]),
        int(np.count_nonzero(res < INLIER_THRESHOLD)),
    )


# ---------------------------------------------------------------------------
# Sphere


def _sphere_residual(P):
    def res(x):
        return np.linalg.norm(P - x[:, None, :3], axis=2) - x[:, 3:4]

    def jac(x):
        d = P - x[:, None, :3]
        norm = np.linalg.norm(d, axis=2)
        norm = np.where(norm < 1e-12, 1.0, norm)
        J = np.empty(P.shape[:2] + (4,))
        J[..., :3] = -d / norm[..., None]
        J[..., 3] = -1.0
        return J

    return res, jac


def batched_sphere_fit(P: np.ndarray, polish_iters: int = 8) -> dict:
    """Algebraic sphere fit (linear in center and r^2 - |o|^2) plus a
    Gauss-Newton polish on geometric residuals."""
    B, k, _ = P.shape
    ctr = P.mean(axis=1)
    Q = P - ctr[:, None, :]
    A = np.concatenate([2.0 * Q, np.ones((B, k, 1))], axis=2)
    b = np.einsum("bki,bki->bk", Q, Q)
    M = np.einsum("bki,bkj->bij", A, A)
    rhs = np.einsum("bki,bk->bi", A, b)
    w = np.linalg.eigvalsh(M)
    ok = w[:, 0] > np.maximum(1e-10 * w[:, 3], 1e-18)
    Msafe = M + np.where(ok, 0.0, 1.0)[:, None, None] * np.eye(4)
    sol = np.linalg.solve(Msafe, rhs[..., None])[..., 0]
    center = ctr + sol[:, :3]
    r2 = sol[:, 3] + np.einsum("bi,bi->b", sol[:, :3], sol[:, :3])
    ok &= (r2 > 0) & (r2 < _MAX_RADIUS**2)
    radius = np.sqrt(np.where(r2 > 0, r2, 1.0))

    x0 = np.concatenate([center, radius[:, None]], axis=1)
    res, jac = _sphere_residual(P)
    x, rms, _ = batched_gauss_newton(x0, res, jac, max_iter=polish_iters)
    ok &= (x[:, 3] > 0) & (x[:, 3] < _MAX_RADIUS)
    return {
        "center": x[:, :3],
        "radius": x[:, 3],
        "rms": np.where(ok, rms, np.inf),
        "ok": ok,
    }


def fit_sphere(points) -> FitResult:
    P = _as_batch(points)
    if P.shape[1] < 4:
        raise FitError("need at least 4 points for a sphere")
    out = batched_sphere_fit(P)
    if not out["ok"][0]:
        raise FitError("rank deficient: points are coplanar")
    params = make_sphere_params(out["center"][0], out["radius"][0])
    res = sphere_distance(P[0], out["center"][0], out["radius"][0])
    return FitResult(
        PrimitiveType.SPHERE,
        params,
        float(out["rms"][0]),
        int(np.count_nonzero(res < INLIER_THRESHOLD)),
    )


# ---------------------------------------------------------------------------
# Cylinder


def _unit_rows(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n < 1e-12, 1.0, n)


def _perp_frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal (e1, e2) spanning the plane perpendicular to each axis row."""
    pick = np.where(np.abs(axis[:, 2:3]) < 0.9, [[0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0]])
    e1 = _unit_rows(np.cross(axis, pick))
    e2 = np.cross(axis, e1)
    return e1, e2


def _cylinder_residual(P):
    def res(x):
        a = x[:, :3]
        d = P - x[:, None, 3:6]
        t = np.einsum("bki,bi->bk", d, a)
        w = d - t[..., None] * a[:, None, :]
        return np.linalg.norm(w, axis=2) - x[:, 6:7]

    def jac(x):
        a = x[:, :3]
        d = P - x[:, None, 3:6]
        t = np.einsum("bki,bi->bk", d, a)
        w = d - t[..., None] * a[:, None, :]
        wn = np.linalg.norm(w, axis=2)
        q = w / np.where(wn < 1e-12, 1.0, wn)[..., None]
        J = np.empty(P.shape[:2] + (7,))
        J[..., 0:3] = -t[..., None] * q
        J[..., 3:6] = -q
        J[..., 6] = -1.0
        return J

    return res, jac


def _cylinder_project(x):
    x = x.copy()
    x[:, :3] = _unit_rows(x[:, :3])
    x[:, 6] = np.abs(x[:, 6])
    return x


def batched_cylinder_fit(P: np.ndarray, N: np.ndarray) -> dict:
    """Axis from the normal second-moment matrix, circle fit in the
    axis-orthogonal projection, then Gauss-Newton on (a, o, r)."""
    B, k, _ = P.shape
    M2 = np.einsum("bki,bkj->bij", N, N)
    w, vecs = np.linalg.eigh(M2)
    axis = vecs[:, :, 0].copy()
    ok = w[:, 1] > np.maximum(1e-6 * w[:, 2], 1e-18)
    axis *= _lex_sign(axis)[:, None]

    ctr = P.mean(axis=1)
    e1, e2 = _perp_frame(axis)
    d = P - ctr[:, None, :]
    px = np.einsum("bki,bi->bk", d, e1)
    py = np.einsum("bki,bi->bk", d, e2)
    A = np.stack([2 * px, 2 * py, np.ones_like(px)], axis=2)
    b = px * px + py * py
    M = np.einsum("bki,bkj->bij", A, A)
    wc = np.linalg.eigvalsh(M)
    okc = wc[:, 0] > np.maximum(1e-10 * wc[:, 2], 1e-18)
    ok &= okc
    Msafe = M + np.where(ok, 0.0, 1.0)[:, None, None] * np.eye(3)
    sol = np.linalg.solve(Msafe, np.einsum("bki,bk->bi", A, b)[..., None])[..., 0]
    r2 = sol[:, 2] + sol[:, 0] ** 2 + sol[:, 1] ** 2
    ok &= (r2 > 0) & (r2 < _MAX_RADIUS**2)
    radius = np.sqrt(np.where(r2 > 0, r2, 1.0))
    center = ctr + sol[:, 0:1] * e1 + sol[:, 1:2] * e2

    x0 = np.concatenate([axis, center, radius[:, None]], axis=1)
    res, jac = _cylinder_residual(P)
    x, rms, _ = batched_gauss_newton(x0, res, jac, project=_cylinder_project)
    axis = x[:, :3] * _lex_sign(x[:, :3])[:, None]
    # Report the axis point closest to the centroid (gauge fix).
    center = x[:, 3:6]
    center = center + np.einsum("bi,bi->b", ctr - center, axis)[:, None] * axis
    ok &= (x[:, 6] > 0) & (x[:, 6] < _MAX_RADIUS) & np.isfinite(rms)
    return {
        "axis": axis,
        "center": center,
        "radius": x[:, 6],
        "rms": np.where(ok, rms, np.inf),
        "ok": ok,
    }


def fit_cylinder(points, normals) -> FitResult:
    if normals is None:
        raise FitError("normals required")
    P = _as_batch(points)
    N = _as_batch(normals, "normals")
    if P.shape[1] < 6:
        raise FitError("need at least 6 points for a cylinder")
    out = batched_cylinder_fit(P, _unit_rows(N))
    if not out["ok"][0]:
        raise FitError("degenerate axis covariance: normals are parallel")
    params = make_cylinder_params(out["axis"][0], out["center"][0], out["radius"][0])
    res = cylinder_distance(P[0], out["axis"][0], out["center"][0], out["radius"][0])
    return FitResult(
        PrimitiveType.CYLINDER,
        params,
        float(out["rms"][0]),
        int(np.count_nonzero(res < INLIER_THRESHOLD)),
    )


# ---------------------------------------------------------------------------
# Cone


def _cone_residual(P):
    # The axis enters only through its direction; normalizing it inside the
    # residual keeps the objective flat along the scale gauge, so the
    # renormalizing projection after each step cannot undo descent.
    def _parts(x):
        o = x[:, :3]
        na = np.linalg.norm(x[:, 3:6], axis=1)
        na = np.where(na < 1e-12, 1.0, na)
        a = x[:, 3:6] / na[:, None]
        u = P - o[:, None, :]
        rho = np.linalg.norm(u, axis=2)
        rho_safe = np.where(rho < 1e-12, 1.0, rho)
        c = np.clip(np.einsum("bki,bi->bk", u, a) / rho_safe, -1.0, 1.0)
        phi = np.arccos(c)
        return u, rho, rho_safe, c, phi, a, na

    def res(x):
        _, rho, _, _, phi, _, _ = _parts(x)
        return rho * np.sin(phi - x[:, 6:7])

    def jac(x):
        u, rho, rho_safe, c, phi, a, na = _parts(x)
        th = x[:, 6:7]
        sinphi = np.maximum(np.sqrt(np.maximum(1.0 - c * c, 0.0)), 1e-9)
        cosd = np.cos(phi - th)
        sind = np.sin(phi - th)
        J = np.empty(P.shape[:2] + (7,))
        un = u / rho_safe[..., None]
        J[..., 0:3] = -sind[..., None] * un + (
            cosd[..., None] * (a[:, None, :] - c[..., None] * un) / sinphi[..., None]
        )
        # d(cos phi)/d axis is tangential to the unit sphere.
        tang = u - (rho * c)[..., None] * a[:, None, :]
        J[..., 3:6] = -(cosd / sinphi)[..., None] * tang / na[:, None, None]
        J[..., 6] = -rho * cosd
        # Points at the apex carry no usable direction.
        J[rho < 1e-12] = 0.0
        return J

    return res, jac


def _cone_project(x):
    x = x.copy()
    x[:, 3:6] = _unit_rows(x[:, 3:6])
    x[:, 6] = np.clip(x[:, 6], 1e-4, np.pi / 2 - 1e-4)
    return x


def batched_cone_fit(P: np.ndarray, N: np.ndarray) -> dict:
    """Apex from tangent-plane intersection, axis and angle from apex-to-point
    directions, then Gauss-Newton on (o, a, theta)."""
    B, k, _ = P.shape
    M = np.einsum("bki,bkj->bij", N, N)
    rhs = np.einsum("bki,bk->bi", N, np.einsum("bki,bki->bk", N, P))
    w = np.linalg.eigvalsh(M)
    ok = w[:, 0] > np.maximum(1e-4 * w[:, 2], 1e-18)
    Msafe = M + np.where(ok, 0.0, 1.0)[:, None, None] * np.eye(3)
    apex = np.linalg.solve(Msafe, rhs[..., None])[..., 0]
    ctr = P.mean(axis=1)
    ok &= np.linalg.norm(apex - ctr, axis=1) < _MAX_APEX_DIST

    u = _unit_rows(P - apex[:, None, :])
    axis = _unit_rows(u.mean(axis=1))
    cosang = np.clip(np.einsum("bki,bi->bk", u, axis), -1.0, 1.0)
    theta = np.clip(np.arccos(cosang).mean(axis=1), 1e-2, np.pi / 2 - 1e-2)

    x0 = np.concatenate([apex, axis, theta[:, None]], axis=1)
    res, jac = _cone_residual(P)
    x, rms, _ = batched_gauss_newton(x0, res, jac, project=_cone_project)
    ok &= np.isfinite(rms)
    ok &= np.linalg.norm(x[:, :3] - ctr, axis=1) < _MAX_APEX_DIST
    return {
        "apex": x[:, :3],
        "axis": x[:, 3:6],
        "theta": x[:, 6],
        "rms": np.where(ok, rms, np.inf),
        "ok": ok,
    }


def fit_cone(points, normals) -> FitResult:
    if normals is None:
        raise FitError("normals required")
    P = _as_batch(points)
    N = _as_batch(normals, "normals")
    if P.shape[1] < 6:
        raise FitError("need at least 6 points for a cone")
    out = batched_cone_fit(P, _unit_rows(N))
    if not out["ok"][0]:
        raise FitError("apex at infinity: tangent planes are near-parallel")
    params = make_cone_params(out["apex"][0], out["axis"][0], out["theta"][0])
    res = cone_distance(P[0], out["apex"][0], out["axis"][0], out["theta"][0])
    return FitResult(
        PrimitiveType.CONE,
        params,
        float(out["rms"][0]),
        int(np.count_nonzero(res < INLIER_THRESHOLD)),
    )
