"""End-to-end segmentation: attributes -> matrices -> embeddings -> clusters.

Internally everything runs on a cloud normalized to unit diameter (with
parameter vectors carried into that frame), which keeps the kernel widths in
the configuration scale-free.  Output primitives are refit on the original
coordinates, so reported parameters and residuals are in input units.
"""

from __future__ import annotations

import time

import numpy as np
from scipy.spatial import cKDTree

from .attributes import AttributeSet, estimate_point_attributes, refit_segment_primitive
from .cloud import (
    CloudTransform,
    NeighborGraph,
    PointCloud,
    estimate_normals,
    farthest_point_subsample,
    knn_graph,
    normalize_cloud,
)
from .config import Config
from .fitting import FitError
from .meanshift import default_bandwidth, mean_shift
from .metrics import Segmentation
from .primitives import (
    CONE_APEX,
    CYLINDER_CENTER,
    CYLINDER_RADIUS,
    PLANE_NORMAL,
    PLANE_OFFSET,
    SPHERE_CENTER,
    SPHERE_RADIUS,
    PrimitiveType,
)
from .spectral import (
    build_consistency_matrix,
    build_smoothness_matrix,
    leading_eigs,
    select_embedding_dim,
)
from .weighting import assemble_feature_space, compute_weights, make_feature_bundle


class PipelineError(RuntimeError):
    """Failure inside a named pipeline stage."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, str(exc)) from exc


def params_to_frame(attrs: AttributeSet, transform: CloudTransform) -> AttributeSet:
    """Attribute table re-expressed under p -> (p + t) * s.

    Positions in the descriptor (first three columns by construction) and
    all length-bearing parameter slots are mapped; directions and angles are
    untouched.  Spline rows are all-zero placeholders and pass through.
    """
    t, s = transform.translation, transform.scale
    params = attrs.params.copy()
    types = attrs.type_dist.argmax(axis=1)
    for pt in (PrimitiveType.PLANE, PrimitiveType.SPHERE, PrimitiveType.CYLINDER, PrimitiveType.CONE):
        m = types == int(pt)
        if not m.any():
            continue
        if pt == PrimitiveType.PLANE:
            n = params[np.ix_(m, range(PLANE_NORMAL.start, PLANE_NORMAL.stop))]
            params[m, PLANE_OFFSET] = (params[m, PLANE_OFFSET] + n @ t) * s
        elif pt == PrimitiveType.SPHERE:
            sl = range(SPHERE_CENTER.start, SPHERE_CENTER.stop)
            params[np.ix_(m, sl)] = (params[np.ix_(m, sl)] + t) * s
            params[m, SPHERE_RADIUS] *= s
        elif pt == PrimitiveType.CYLINDER:
            sl = range(CYLINDER_CENTER.start, CYLINDER_CENTER.stop)
            params[np.ix_(m, sl)] = (params[np.ix_(m, sl)] + t) * s
            params[m, CYLINDER_RADIUS] *= s
        else:
            sl = range(CONE_APEX.start, CONE_APEX.stop)
            params[np.ix_(m, sl)] = (params[np.ix_(m, sl)] + t) * s
    desc = attrs.descriptors.copy()
    desc[:, 0:3] = transform.apply(desc[:, 0:3])
    return AttributeSet(desc, attrs.type_dist.copy(), params, attrs.confidence.copy())


def build_feature_space(
    cloud: PointCloud,
    attrs: AttributeSet,
    cfg: Config,
    graph: NeighborGraph | None = None,
):
    """Entropy-weighted feature matrix for a normalized cloud.

    Returns (features, bundle, weights, info).  Exposed separately from
    ``segment`` so the hyperparameter tuner can rebuild features under
    candidate kernel widths without re-running clustering.
    """
    sc, wc = cfg.spectral, cfg.weighting
    A_c = _stage(
        "consistency",
        build_consistency_matrix,
        cloud,
        attrs,
        sc.sigma_per_type,
        dense_cap=sc.dense_cap,
        cone_paper_literal=sc.cone_paper_literal,
    )
    if graph is None:
        graph = _stage("smoothness", knn_graph, cloud, sc.knn_k)
    A_s = _stage("smoothness", build_smoothness_matrix, cloud, graph, sc.sigma_edge)

    def _embed(A):
        # one extra eigenvalue so the gap at d_max is judged against the
        # real lambda_{d_max+1} rather than an implicit zero
        emb = leading_eigs(
            A, min(sc.d_max + 1, A.shape[0]), seed=cfg.seed, scale_mode=sc.embedding_scale
        )
        d = select_embedding_dim(emb.eigenvalues, min(sc.d_min, emb.d), min(sc.d_max, emb.d))
        return emb.truncate(d).U

    U_c = _stage("embedding", _embed, A_c)
    U_s = _stage("embedding", _embed, A_s)
    bundle = _stage(
        "weighting",
        make_feature_bundle,
        attrs.descriptors,
        U_c,
        U_s,
        wc.sigma_semantic,
        wc.sigma_consistency,
        wc.sigma_smoothness,
    )
    weights = _stage("weighting", compute_weights, bundle)
    F = assemble_feature_space(bundle, weights)
    info = {"d_c": U_c.shape[1], "d_s": U_s.shape[1], "weights": weights.w.tolist()}
    return F, bundle, weights, info


def _vote_types(attrs: AttributeSet, labels: np.ndarray, K: int) -> list:
    votes = np.zeros((K, attrs.type_dist.shape[1]))
    np.add.at(votes, labels, attrs.type_dist)
    return [PrimitiveType(int(t)) for t in votes.argmax(axis=1)]


def segment(
    cloud: PointCloud, attrs: AttributeSet | None = None, cfg: Config | None = None
) -> tuple[Segmentation, dict]:
    """Segment a cloud into typed primitives.

    ``attrs`` may come from a file (ground truth or precomputed); when
    omitted they are estimated from local neighborhood fits.  The attribute
    table is expected in the same coordinate frame as the cloud.
    """
    cfg = cfg or Config()
    t0 = time.perf_counter()
    info: dict = {"n": len(cloud)}

    ncloud, transform = _stage("normalize", normalize_cloud, cloud)
    nattrs = params_to_frame(attrs, transform) if attrs is not None else None

    n = len(ncloud)
    cap = cfg.spectral.dense_cap
    if n > cap:
        work_idx = _stage("subsample", farthest_point_subsample, ncloud.positions, cap)
        work = PointCloud(
            ncloud.positions[work_idx],
            None if ncloud.normals is None else ncloud.normals[work_idx],
        )
        if nattrs is not None:
            nattrs = AttributeSet(
                nattrs.descriptors[work_idx],
                nattrs.type_dist[work_idx],
                nattrs.params[work_idx],
                nattrs.confidence[work_idx],
            )
    else:
        work_idx = None
        work = ncloud
    info["n_work"] = len(work)

    k_graph = max(cfg.spectral.knn_k, cfg.attributes.k_fit)
    graph_full = _stage("graph", knn_graph, work, k_graph)
    ks = min(cfg.spectral.knn_k, graph_full.k)
    graph_s = NeighborGraph(
        graph_full.indices[:, :ks].copy(), graph_full.distances[:, :ks].copy(), ks
    )
    if work.normals is None:
        work = PointCloud(work.positions, _stage("graph", estimate_normals, work, graph_s))

    if nattrs is None:
        nattrs = _stage(
            "attributes",
            estimate_point_attributes,
            work,
            graph_full,
            k_fit=min(cfg.attributes.k_fit, graph_full.k + 1),
            tau=cfg.attributes.softmin_tau,
        )

    F, _, _, feat_info = build_feature_space(work, nattrs, cfg, graph=graph_s)
    info.update(feat_info)

    cc = cfg.cluster
    h = cc.bandwidth if cc.bandwidth is not None else default_bandwidth(
        F, factor=cc.bandwidth_factor, seed=cfg.seed
    )
    info["bandwidth"] = float(h)
    result = _stage(
        "clustering",
        mean_shift,
        F,
        h,
        max_iter=cc.max_iter,
        min_size=cc.min_cluster_size,
        merge_factor=cc.merge_factor,
    )
    labels_work = result.labels
    K = result.n_clusters

    if work_idx is not None:
        tree = cKDTree(ncloud.positions[work_idx])
        _, nearest = tree.query(ncloud.positions)
        labels = labels_work[nearest]
    else:
        labels = labels_work

    types = _vote_types(nattrs, labels_work, K)
    seg_params, patches, rms = [], [], []
    for k in range(K):
        idx = np.flatnonzero(labels == k)
        try:
            fr = refit_segment_primitive(cloud, idx, types[k])
            analytic = types[k].is_analytic
            seg_params.append(fr.params if analytic else None)
            patches.append(fr.patch)
            rms.append(fr.rms_residual)
        except FitError:
            seg_params.append(None)
            patches.append(None)
            rms.append(None)

    info["n_segments"] = K
    info["runtime_seconds"] = time.perf_counter() - t0
    seg = Segmentation(labels, types, seg_params, patches)
    return seg, {**info, "rms": rms}
