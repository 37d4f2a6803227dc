"""Typed primitive segmentation of 3D point clouds.

Points are grouped into patches, each explained by one parametric surface
(plane, sphere, cylinder, cone, or B-spline), by fusing locally estimated
primitive parameters with two spectral embeddings — one from a parameter
consistency matrix, one from a sharp-edge-aware smoothness graph — through
entropy-based feature weighting and mean-shift clustering.

Submodules are imported lazily on attribute access so that importing the
package (e.g. for the command line) stays cheap.
"""

__version__ = "0.1.0"

_EXPORTS = {
    # clouds and neighborhoods
    "PointCloud": ".cloud",
    "CloudTransform": ".cloud",
    "cloud_diameter": ".cloud",
    "normalize_cloud": ".cloud",
    "NeighborGraph": ".cloud",
    "knn_graph": ".cloud",
    "farthest_point_subsample": ".cloud",
    "estimate_normals": ".cloud",
    # primitive surfaces
    "PrimitiveType": ".primitives",
    "PARAM_DIM": ".primitives",
    "N_TYPES": ".primitives",
    "distance_point_primitive": ".primitives",
    "BSplinePatch": ".bspline",
    "bspline_eval": ".bspline",
    "bspline_closest_distance": ".bspline",
    "fit_bspline_patch": ".bspline",
    # per-point attributes and refits
    "AttributeSet": ".attributes",
    "estimate_point_attributes": ".attributes",
    "handcrafted_descriptor": ".attributes",
    "refit_segment_primitive": ".attributes",
    "save_attributes": ".attributes",
    "load_attributes": ".attributes",
    "FitError": ".fitting",
    # spectral machinery
    "SpectralEmbedding": ".spectral",
    "EigsolverError": ".spectral",
    "leading_eigs": ".spectral",
    "select_embedding_dim": ".spectral",
    "consistency_weight": ".spectral",
    "build_consistency_matrix": ".spectral",
    "build_smoothness_matrix": ".spectral",
    "procrustes_distance": ".spectral",
    "dk_bound": ".spectral",
    "dk_experiment": ".spectral",
    "DKReport": ".spectral",
    # weighting and clustering
    "FeatureBundle": ".weighting",
    "WeightVector": ".weighting",
    "feature_entropy": ".weighting",
    "compute_weights": ".weighting",
    "make_feature_bundle": ".weighting",
    "assemble_feature_space": ".weighting",
    "ClusterResult": ".meanshift",
    "mean_shift": ".meanshift",
    "default_bandwidth": ".meanshift",
    # losses and tuning
    "LossConfig": ".losses",
    "embedding_loss": ".losses",
    "type_loss": ".losses",
    "param_loss": ".losses",
    "total_loss": ".losses",
    "HyperParams": ".tuning",
    "finite_diff_gradient": ".tuning",
    "tune_hyperparams": ".tuning",
    "make_validation_objective": ".tuning",
    # pipeline
    "Config": ".config",
    "load_config": ".config",
    "save_config": ".config",
    "config_from_dict": ".config",
    "config_to_dict": ".config",
    "segment": ".pipeline",
    "build_feature_space": ".pipeline",
    "PipelineError": ".pipeline",
    # evaluation and synthetic data
    "Segmentation": ".metrics",
    "match_segments": ".metrics",
    "seg_iou": ".metrics",
    "type_iou": ".metrics",
    "res_error": ".metrics",
    "p_coverage": ".metrics",
    "MetricsReport": ".metrics",
    "compute_metrics_report": ".metrics",
    "format_metrics_table": ".metrics",
    "PrimitiveSpec": ".synth",
    "SceneSpec": ".synth",
    "generate_scene": ".synth",
    "random_scene_spec": ".synth",
    "sample_primitive_surface": ".synth",
    "corrupt_params": ".synth",
    # file input and output
    "read_cloud": ".io",
    "read_xyz": ".io",
    "write_xyz": ".io",
    "read_ply": ".io",
    "read_labels": ".io",
    "write_labels": ".io",
    "read_segmentation": ".io",
    "write_segmentation": ".io",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    target = _EXPORTS.get(name)
    if target is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    import importlib

    return getattr(importlib.import_module(target, __name__), name)


def __dir__():
    return sorted(set(globals()) | set(_EXPORTS))
