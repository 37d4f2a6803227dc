"""Consistency and smoothness adjacency matrices, their leading eigenvector
embeddings, and the eigenvector perturbation experiment.

The consistency matrix compares every point against every other point's
locally fitted primitive:  A_c(i,j) = (w(p_i,s_j) + w(p_j,s_i))/2  with
w(p,s) = exp(-d(p,s)^2 / (2 sigma_t^2)) and sigma_t per primitive type.
The smoothness matrix lives on the kNN graph with edge weight
exp(-||n_i - n_j||^2 / (2 sigma_e^2)), max-symmetrized.

Eigenpairs come from a hand-rolled Lanczos iteration with full
reorthogonalization and deflation restarts (a cyclic Jacobi sweep is the
dense fallback for small matrices when Lanczos stalls).  Only the small
projected tridiagonal problem is handed to LAPACK.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .attributes import AttributeSet
from .cloud import NeighborGraph, PointCloud, estimate_normals
from .primitives import (
    CONE_ANGLE,
    CONE_APEX,
    CONE_AXIS,
    CYLINDER_AXIS,
    CYLINDER_CENTER,
    CYLINDER_RADIUS,
    PLANE_NORMAL,
    PLANE_OFFSET,
    SPHERE_CENTER,
    SPHERE_RADIUS,
    PrimitiveType,
    distance_point_primitive,
)

DENSE_CAP = 4096


class EigsolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Adjacency construction


def consistency_weight(point, attrs, sigma_per_type, cone_paper_literal: bool = False) -> float:
    """Weight of one point against another point's fitted primitive."""
    sig = np.asarray(sigma_per_type, dtype=np.float64)
    t = attrs.argmax_type
    if t not in (
        PrimitiveType.PLANE,
        PrimitiveType.SPHERE,
        PrimitiveType.CYLINDER,
        PrimitiveType.CONE,
    ):
        return 0.0
    try:
        d = distance_point_primitive(
            np.asarray(point, dtype=np.float64),
            t,
            params=attrs.params,
            cone_paper_literal=cone_paper_literal,
        )
    except (ValueError, FloatingPointError):
        return 0.0
    if not np.isfinite(d):
        return 0.0
    s = float(sig[int(t)])
    return float(np.exp(-(float(d) ** 2) / (2.0 * s * s)))


def _chunk_distances(P, ptype, params, cone_paper_literal):
    """Distances of all n points to each of a chunk of primitives: (n, c)."""
    if ptype == PrimitiveType.PLANE:
        nrm = params[:, PLANE_NORMAL]
        off = params[:, PLANE_OFFSET]
        return np.abs(P @ nrm.T - off[None, :])
    if ptype == PrimitiveType.SPHERE:
        ctr = params[:, SPHERE_CENTER]
        r = params[:, SPHERE_RADIUS]
        d2 = (
            np.einsum("ni,ni->n", P, P)[:, None]
            - 2.0 * P @ ctr.T
            + np.einsum("ci,ci->c", ctr, ctr)[None, :]
        )
        return np.abs(np.sqrt(np.maximum(d2, 0.0)) - r[None, :])
    if ptype == PrimitiveType.CYLINDER:
        a = params[:, CYLINDER_AXIS]
        o = params[:, CYLINDER_CENTER]
        r = params[:, CYLINDER_RADIUS]
        v = P[:, None, :] - o[None, :, :]
        t = np.einsum("nci,ci->nc", v, a)
        w = v - t[..., None] * a[None, :, :]
        return np.abs(np.linalg.norm(w, axis=2) - r[None, :])
    if ptype == PrimitiveType.CONE:
        apex = params[:, CONE_APEX]
        a = params[:, CONE_AXIS]
        th = params[:, CONE_ANGLE]
        u = P[:, None, :] - apex[None, :, :]
        rho = np.linalg.norm(u, axis=2)
        c = np.clip(
            np.einsum("nci,ci->nc", u, a) / np.where(rho < 1e-12, 1.0, rho), -1.0, 1.0
        )
        phi = np.arccos(c)
        if cone_paper_literal:
            return rho * np.abs(np.cos(phi - th[None, :]))
        return rho * np.abs(np.sin(phi - th[None, :]))
    raise ValueError(f"no closed-form distance for {PrimitiveType(ptype).label}")


def build_consistency_matrix(
    cloud: PointCloud,
    attrs: AttributeSet,
    sigma_per_type,
    dense_cap: int = DENSE_CAP,
    cone_paper_literal: bool = False,
    chunk: int = 512,
) -> np.ndarray:
    """Dense symmetric consistency matrix, diagonal 1, entries in [0,1]."""
    n = len(cloud)
    if len(attrs) != n:
        raise ValueError("attribute count does not match cloud size")
    if n > dense_cap:
        raise ValueError(
            f"cloud of {n} points exceeds dense cap {dense_cap}: "
            "subsample before building the consistency matrix"
        )
    sig = np.asarray(sigma_per_type, dtype=np.float64)
    if sig.shape != (6,) or np.any(sig[:4] <= 0):
        raise ValueError("need six positive per-type sigmas")
    P = cloud.positions
    types = attrs.argmax_types()
    # Directed weights W[i, j] = w(p_i, s_j), built column-group by type.
    W = np.zeros((n, n))
    for t in (
        PrimitiveType.PLANE,
        PrimitiveType.SPHERE,
        PrimitiveType.CYLINDER,
        PrimitiveType.CONE,
    ):
        cols = np.flatnonzero(types == int(t))
        if cols.size == 0:
            continue
        s2 = 2.0 * sig[int(t)] ** 2
        for lo in range(0, cols.size, chunk):
            cc = cols[lo : lo + chunk]
            d = _chunk_distances(P, t, attrs.params[cc], cone_paper_literal)
            np.nan_to_num(d, copy=False, nan=np.inf)
            W[:, cc] = np.exp(-(d * d) / s2)
    # Spline-typed columns keep weight 0: no per-point patch to measure against.
    A = 0.5 * (W + W.T)
    np.fill_diagonal(A, 1.0)
    return A


def build_smoothness_matrix(
    cloud: PointCloud, graph: NeighborGraph, sigma_e: float
) -> sp.csr_matrix:
    """Sparse smoothness adjacency on the kNN graph, max-symmetrized, diag 0."""
    if sigma_e <= 0:
        raise ValueError("sigma_e must be positive")
    n = len(cloud)
    normals = cloud.normals if cloud.normals is not None else estimate_normals(cloud, graph)
    k = graph.indices.shape[1]
    rows = np.repeat(np.arange(n), k)
    cols = graph.indices.ravel()
    diff = normals[rows] - normals[cols]
    w = np.exp(-np.einsum("ei,ei->e", diff, diff) / (2.0 * sigma_e**2))
    M = sp.csr_matrix((w, (rows, cols)), shape=(n, n))
    A = M.maximum(M.T)
    A.setdiag(0.0)
    A.eliminate_zeros()
    return A


# ---------------------------------------------------------------------------
# Eigensolvers


def _frobenius(A) -> float:
    if sp.issparse(A):
        return float(np.sqrt((A.multiply(A)).sum()))
    return float(np.linalg.norm(A))


def jacobi_eigh(A: np.ndarray, tol: float = 1e-12, max_sweeps: int = 60):
    """Cyclic Jacobi rotations on a dense symmetric matrix.

    Returns all eigenpairs sorted by descending eigenvalue.
    """
    A = np.array(A, dtype=np.float64, copy=True)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    V = np.eye(n)
    frob = max(np.linalg.norm(A), 1e-300)

    def _offdiag_norm(M):
        # Summing the (tiny) off-diagonal squares directly avoids the
        # catastrophic cancellation of ||M||^2 - ||diag||^2.
        B = M.copy()
        np.fill_diagonal(B, 0.0)
        return float(np.linalg.norm(B))

    for _sweep in range(max_sweeps):
        if _offdiag_norm(A) <= tol * frob:
            break
        skip = tol * frob / (2.0 * n)
        for p in range(n - 1):
            row = A[p]
            for q in range(p + 1, n):
                apq = row[q]
                if abs(apq) <= skip:
                    continue
                tau = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.hypot(1.0, tau)) if tau != 0 else 1.0
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                cp = A[:, p].copy()
                cq = A[:, q].copy()
                A[:, p] = c * cp - s * cq
                A[:, q] = s * cp + c * cq
                cp = A[p, :].copy()
                cq = A[q, :].copy()
                A[p, :] = c * cp - s * cq
                A[q, :] = s * cp + c * cq
                cp = V[:, p].copy()
                cq = V[:, q].copy()
                V[:, p] = c * cp - s * cq
                V[:, q] = s * cp + c * cq
                row = A[p]
    else:
        if _offdiag_norm(A) > 1e-8 * frob:
            raise EigsolverError("eigensolver stalled: Jacobi sweeps did not converge")
    evals = np.einsum("ii->i", A).copy()
    order = np.argsort(evals)[::-1]
    return evals[order], V[:, order]


def lanczos_topk(
    matvec,
    n: int,
    k: int,
    *,
    seed: int = 0,
    tol: float = 1e-13,
    scale: float = 1.0,
    max_restarts: int | None = None,
    subspace: int | None = None,
):
    """Top-k eigenpairs (by algebraic value) of a symmetric operator.

    Krylov iteration with full reorthogonalization; converged Ritz pairs at
    either end of the spectrum are locked and deflated, and the iteration
    restarts with a fresh random vector until the top of the spectrum is
    decided.  Returns (values desc, vectors (n,k), max residual).
    """
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n")
    rng = np.random.default_rng(seed)
    tol_lock = max(tol * scale, 1e-300)
    m_cap = subspace if subspace is not None else max(3 * k + 24, 48)
    if max_restarts is None:
        max_restarts = 2 * k + 12
    locked_vals: list[float] = []
    locked_vecs: list[np.ndarray] = []
    decided = False
    last_unconv_res = np.inf
    for _restart in range(max_restarts):
        L = len(locked_vals)
        if L >= n:
            decided = True
            break
        locked_before = L
        Q = np.stack(locked_vecs, axis=1) if L else np.zeros((n, 0))
        m = min(n - L, m_cap)
        V = np.zeros((n, m))
        nv = 0.0
        for _try in range(64):
            v = rng.standard_normal(n)
            if L:
                v -= Q @ (Q.T @ v)
            nv = np.linalg.norm(v)
            if nv > 1e-8 * np.sqrt(n):
                break
        V[:, 0] = v / nv
        alphas = np.zeros(m)
        betas = np.zeros(max(m - 1, 0))
        size = m
        b_last = 0.0
        broke_down = False
        for j in range(m):
            w = matvec(V[:, j])
            if j > 0:
                w = w - betas[j - 1] * V[:, j - 1]
            a = float(V[:, j] @ w)
            alphas[j] = a
            w = w - a * V[:, j]
            for _ in range(2):
                if L:
                    w -= Q @ (Q.T @ w)
                w -= V[:, : j + 1] @ (V[:, : j + 1].T @ w)
            b = float(np.linalg.norm(w))
            if j + 1 == m:
                b_last = b
                break
            if b <= max(tol_lock, 1e-14 * scale):
                size = j + 1
                b_last = b
                broke_down = True
                break
            betas[j] = b
            V[:, j + 1] = w / b
        T = np.diag(alphas[:size])
        if size > 1:
            T += np.diag(betas[: size - 1], 1) + np.diag(betas[: size - 1], -1)
        theta, S = np.linalg.eigh(T)
        res = np.abs(b_last * S[size - 1, :])
        conv = res <= max(tol_lock, 1e-12 * scale)
        Y = V[:, :size] @ S
        for i in np.argsort(theta)[::-1]:
            if conv[i] and len(locked_vals) < n:
                locked_vals.append(float(theta[i]))
                locked_vecs.append(Y[:, i])
        unconv = theta[~conv]
        last_unconv_res = float(res[~conv].max()) if unconv.size else 0.0
        if len(locked_vals) >= k:
            # Deciding the top needs evidence that nothing above the k-th
            # locked value remains in the deflated operator.  A breakdown
            # only certifies this pass's invariant subspace, so after one we
            # keep restarting until a whole pass sees nothing above the k-th
            # value; without a breakdown it is enough that the pass also
            # converged something strictly below it.
            kth = sorted(locked_vals, reverse=True)[k - 1]
            slack = max(10.0 * tol_lock, 1e-10 * scale)
            nothing_above_unconv = unconv.size == 0 or float(unconv.max()) <= kth + slack
            pass_saw_nothing_above = float(theta.max()) <= kth + slack
            converged_below = (not broke_down) and bool(np.any(theta[conv] < kth - slack))
            if nothing_above_unconv and (pass_saw_nothing_above or converged_below):
                decided = True
                break
        if len(locked_vals) == locked_before:
            # No progress: the subspace is too small for this spectrum
            # (tightly clustered eigenvalues).  Grow it, up to a full
            # tridiagonalization, which converges everything.
            m_cap = min(n, 2 * m_cap)
    if not decided or len(locked_vals) < k:
        raise EigsolverError(
            f"eigensolver stalled: residual {last_unconv_res:.3e} after restarts"
        )
    order = np.argsort(np.asarray(locked_vals))[::-1][:k]
    vals = np.asarray(locked_vals)[order]
    vecs = np.stack([locked_vecs[i] for i in order], axis=1)
    return vals, vecs, float(max(tol_lock, 0.0))


def _canonical_signs(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs), axis=0)
    s = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    return vecs * np.where(s == 0, 1.0, s)[None, :]


@dataclass
class SpectralEmbedding:
    """Leading eigenpairs plus the scaled feature matrix.

    Column j of U is sqrt(lambda_1/lambda_j) * u_j in "paper" mode (the
    printed scaling, which amplifies trailing columns) or
    sqrt(lambda_j/lambda_1) * u_j in "inverse" mode.
    """

    eigenvalues: np.ndarray  # (d,) descending, strictly positive
    vectors: np.ndarray  # (n, d) orthonormal
    scale_mode: str = "paper"

    def __post_init__(self):
        if self.scale_mode not in ("paper", "inverse"):
            raise ValueError(f"unknown embedding scale mode {self.scale_mode!r}")
        if np.any(np.diff(self.eigenvalues) > 1e-9 * abs(self.eigenvalues[0] if len(self.eigenvalues) else 1.0)):
            raise ValueError("eigenvalues must be sorted descending")

    @property
    def d(self) -> int:
        return int(self.eigenvalues.shape[0])

    @property
    def U(self) -> np.ndarray:
        lam = self.eigenvalues
        if lam.size == 0:
            return self.vectors
        if self.scale_mode == "paper":
            f = np.sqrt(lam[0] / lam)
        else:
            f = np.sqrt(lam / lam[0])
        return self.vectors * f[None, :]

    def truncate(self, d: int) -> "SpectralEmbedding":
        if not 1 <= d <= self.d:
            raise ValueError("truncation dimension out of range")
        return replace(self, eigenvalues=self.eigenvalues[:d], vectors=self.vectors[:, :d])


def leading_eigs(
    A,
    d_max: int,
    *,
    seed: int = 0,
    scale_mode: str = "paper",
    tol: float = 1e-13,
) -> SpectralEmbedding:
    """Top-d_max eigenpairs of a symmetric matrix as a SpectralEmbedding.

    Lanczos is the primary path at every size; a dense Jacobi sweep is the
    fallback for n <= 512 when Lanczos stalls.  Only eigenpairs with
    strictly positive eigenvalue are retained.
    """
    n = A.shape[0]
    if not 1 <= d_max <= n:
        raise ValueError(f"d_max must lie in [1, {n}]")
    fro = max(_frobenius(A), 1e-300)
    mv = (lambda v: A @ v) if not sp.issparse(A) else (lambda v: A.dot(v))
    try:
        vals, vecs, _ = lanczos_topk(mv, n, d_max, seed=seed, tol=tol, scale=fro)
    except EigsolverError:
        if n > 512:
            raise
        dense = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=np.float64)
        vals, vecs = jacobi_eigh(dense)
        vals, vecs = vals[:d_max], vecs[:, :d_max]
    vecs = _canonical_signs(vecs)

    # Residual and orthonormality guards on everything we hand out.
    R = (A @ vecs if not sp.issparse(A) else A.dot(vecs)) - vecs * vals[None, :]
    resid = np.linalg.norm(R, axis=0)
    if np.any(resid > 1e-8 * fro):
        raise EigsolverError(
            f"eigensolver stalled: residual {float(resid.max()):.3e} exceeds 1e-8*|A|"
        )
    G = vecs.T @ vecs - np.eye(vecs.shape[1])
    if np.abs(G).max() > 1e-8:
        raise EigsolverError("eigensolver stalled: eigenvectors lost orthonormality")

    keep = vals > max(1e-12 * max(vals[0], 0.0), 0.0) if vals.size else np.zeros(0, bool)
    keep &= vals > 0
    return SpectralEmbedding(vals[keep], vecs[:, keep], scale_mode)


def select_embedding_dim(eigenvalues, d_min: int, d_max: int) -> int:
    """Dimension with the largest relative eigengap in [d_min, d_max].

    The gap after position d is (lambda_d - lambda_{d+1}) / lambda_1, with
    lambda beyond the available list treated as 0.  Ties go to smaller d.
    """
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if d_min < 1 or d_max < d_min:
        raise ValueError("need 1 <= d_min <= d_max")
    n_pos = int(np.count_nonzero(lam > 0))
    if n_pos < d_min:
        raise ValueError(f"need at least {d_min} positive eigenvalues, have {n_pos}")
    lam1 = lam[0]
    best_d, best_gap = d_min, -np.inf
    for d in range(d_min, min(d_max, lam.size) + 1):
        nxt = lam[d] if d < lam.size else 0.0
        gap = (lam[d - 1] - nxt) / lam1
        if gap > best_gap + 1e-15:
            best_d, best_gap = d, gap
    return best_d


# ---------------------------------------------------------------------------
# Eigenvector perturbation experiment


def procrustes_distance(U: np.ndarray, V: np.ndarray) -> float:
    """min over orthogonal R of ||U R - V||_F, closed form via the SVD of V^T U."""
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if U.shape != V.shape:
        raise ValueError("shapes must match")
    s = np.linalg.svd(V.T @ U, compute_uv=False)
    err2 = (U * U).sum() + (V * V).sum() - 2.0 * s.sum()
    return float(np.sqrt(max(err2, 0.0)))


def dk_bound(A_g_eigs, E, K: int) -> float:
    """sqrt(lambda_1) * ||E||_F / (lambda_K - lambda_{K+1})."""
    lam = np.asarray(A_g_eigs, dtype=np.float64)
    if lam.size < K + 1:
        raise ValueError("need at least K+1 eigenvalues")
    gap = lam[K - 1] - lam[K]
    if gap <= 0:
        raise ValueError("degenerate gap")
    return float(np.sqrt(max(lam[0], 0.0)) * _frobenius(E) / gap)


@dataclass
class DKReport:
    n: int
    K: int
    rho: float
    procrustes_error: float
    relative_error: float
    bound: float
    eigengap: float
    frobenius_E: float


def _block_labels(n: int, K: int) -> np.ndarray:
    return np.repeat(np.arange(K), n // K)


def corrupted_block_matrix(n: int, K: int, rho: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth block matrix plus a corrupted copy.

    A rho-fraction of points get their simulated parameters replaced by a
    random other block's, so the directed weight column w(., s_c) becomes
    the partner block's indicator; rows (the point's own position) are
    untouched.  The matrix is then the usual symmetrized average with unit
    diagonal.
    """
    g = _block_labels(n, K)
    src = g.copy()
    m = int(round(rho * n))
    if m > 0:
        idx = rng.choice(n, size=m, replace=False)
        shift = rng.integers(1, K, size=m)
        src[idx] = (g[idx] + shift) % K
    W = (g[:, None] == src[None, :]).astype(np.float64)
    A = 0.5 * (W + W.T)
    np.fill_diagonal(A, 1.0)
    Ag = (g[:, None] == g[None, :]).astype(np.float64)
    return Ag, A


def dk_experiment(
    n: int, K: int, rho: float, trials: int, seed: int = 0
) -> list[DKReport]:
    """Per-trial Procrustes error of the corrupted embedding vs its bound."""
    if K < 1 or n % K != 0:
        raise ValueError("K must divide n")
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    g_eigs = None
    Ug = None
    reports = []
    for trial in range(trials):
        Ag, A = corrupted_block_matrix(n, K, rho, rng)
        if g_eigs is None:
            fro = max(np.linalg.norm(Ag), 1e-300)
            vals, vecs, _ = lanczos_topk(
                lambda v: Ag @ v, n, min(K + 1, n), seed=seed, scale=fro
            )
            g_eigs = vals
            Ug = SpectralEmbedding(vals[:K], _canonical_signs(vecs[:, :K])).U
        E = A - Ag
        emb = leading_eigs(A, K, seed=seed)
        if emb.d < K:
            raise EigsolverError("corrupted matrix lost positive leading eigenvalues")
        err = procrustes_distance(emb.U, Ug)
        rel = err / max(np.linalg.norm(Ug), 1e-300)
        reports.append(
            DKReport(
                n=n,
                K=K,
                rho=rho,
                procrustes_error=err,
                relative_error=rel,
                bound=dk_bound(g_eigs, E, K),
                eigengap=float(g_eigs[K - 1] - g_eigs[K]),
                frobenius_E=_frobenius(E),
            )
        )
    return reports
