"""Entropy-based feature weights and feature-space assembly."""

import numpy as np
import pytest

from primseg.weighting import (
    ROLE_CONSISTENCY,
    ROLE_SEMANTIC,
    ROLE_SMOOTHNESS,
    WBAR_CLAMP,
    FeatureBundle,
    WeightVector,
    assemble_feature_space,
    compute_weights,
    feature_entropy,
    make_feature_bundle,
)


def _brute_entropy(F, sigma):
    """Direct double-loop transcription of the definition."""
    F = np.atleast_2d(np.asarray(F, dtype=np.float64).T).T
    n, m = F.shape
    H = 0.0
    for i in range(n):
        s = 0.0
        for j in range(n):
            d2 = float(np.sum((F[i] - F[j]) ** 2))
            s += np.exp(-d2 / (2 * sigma**2))
        P = s * (2 * np.pi) ** (-m / 2) * sigma ** (-m) / n
        H -= P * np.log(P)
    return H


def test_feature_entropy_single_point():
    # n=1, m=1, sigma=1: P = (2 pi)^(-1/2), H = -P ln P
    P = (2 * np.pi) ** -0.5
    assert feature_entropy(np.array([[0.7]]), 1.0) == pytest.approx(-P * np.log(P))
    assert feature_entropy(np.array([[0.7]]), 1.0) == pytest.approx(0.3666034339854198)


def test_feature_entropy_matches_brute_force():
    rng = np.random.default_rng(0)
    for m in (1, 3):
        F = rng.standard_normal((20, m))
        for sigma in (0.3, 1.0, 2.5):
            assert feature_entropy(F, sigma) == pytest.approx(
                _brute_entropy(F, sigma), rel=1e-12
            )


def test_feature_entropy_translation_invariant():
    rng = np.random.default_rng(1)
    F = rng.standard_normal((30, 2))
    assert feature_entropy(F + 17.3, 0.8) == pytest.approx(
        feature_entropy(F, 0.8), rel=1e-12
    )


def test_feature_entropy_validation():
    with pytest.raises(ValueError):
        feature_entropy(np.zeros((3, 1)), 0.0)
    with pytest.raises(ValueError):
        feature_entropy(np.zeros((0, 1)), 1.0)


def test_feature_entropy_can_go_negative():
    # concentrated identical values at a small bandwidth: density >> 1
    F = np.zeros((50, 1))
    assert feature_entropy(F, 0.01) < 0


def test_weight_vector_validation():
    WeightVector(np.array([1.0]))
    WeightVector(np.array([0.6, 0.8]))
    with pytest.raises(ValueError):
        WeightVector(np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        WeightVector(np.array([-0.6, 0.8]))


def test_compute_weights_unit_square_sum_and_order():
    # two tight clusters push density values past 1 at this bandwidth, so
    # the clustered feature's entropy drops (negative) while uniform noise
    # stays positive: the clustered feature must dominate
    rng = np.random.default_rng(2)
    n = 300
    clustered = np.where(rng.random(n) < 0.5, 0.0, 10.0)[:, None]
    clustered = clustered + 0.01 * rng.standard_normal((n, 1))
    diffuse = rng.uniform(0, 10, (n, 1))
    bundle = FeatureBundle(
        [clustered, diffuse], [ROLE_CONSISTENCY, ROLE_CONSISTENCY], [0.1, 0.1]
    )
    wv = compute_weights(bundle)
    assert float(wv.w @ wv.w) == pytest.approx(1.0, abs=1e-12)
    assert wv.w[0] > wv.w[1]


def test_compute_weights_clamp_saturates():
    # identical columns at tiny bandwidth have negative entropy -> clamp;
    # two clamped features share the weight evenly
    F = np.zeros((40, 1))
    bundle = FeatureBundle(
        [F, F.copy()], [ROLE_CONSISTENCY, ROLE_SMOOTHNESS], [0.01, 0.01]
    )
    wv = compute_weights(bundle)
    assert np.allclose(wv.w, np.sqrt(0.5))
    # raw clamp value only matters through normalization
    wv2 = compute_weights(bundle, clamp=17.0)
    assert np.allclose(wv2.w, wv.w)
    assert WBAR_CLAMP == 1e3


def test_assemble_feature_space_scales_blocks():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((10, 3))
    B = rng.standard_normal((10, 2))
    bundle = FeatureBundle([A, B], [ROLE_SEMANTIC, ROLE_CONSISTENCY], [1.0, 1.0])
    wv = WeightVector(np.array([0.6, 0.8]))
    X = assemble_feature_space(bundle, wv)
    assert X.shape == (10, 5)
    assert np.allclose(X[:, :3], 0.6 * A)
    assert np.allclose(X[:, 3:], 0.8 * B)
    with pytest.raises(ValueError):
        assemble_feature_space(bundle, WeightVector(np.array([1.0])))


def test_make_feature_bundle_layout():
    rng = np.random.default_rng(4)
    desc = rng.standard_normal((12, 16))
    U_c = rng.standard_normal((12, 3))
    U_s = rng.standard_normal((12, 2))
    bundle = make_feature_bundle(desc, U_c, U_s, 0.5, 0.05, 0.05)
    assert bundle.L == 1 + 3 + 2
    assert bundle.roles == [ROLE_SEMANTIC] + [ROLE_CONSISTENCY] * 3 + [ROLE_SMOOTHNESS] * 2
    assert bundle.sigmas == [0.5] + [0.05] * 5
    assert bundle.features[0].shape == (12, 16)
    for l in range(1, 6):
        assert bundle.features[l].shape == (12, 1)
    assert np.allclose(bundle.features[2][:, 0], U_c[:, 1])
    assert np.allclose(bundle.features[5][:, 0], U_s[:, 1])


def test_feature_bundle_validation():
    ok = [np.zeros((5, 2)), np.zeros((5, 1))]
    FeatureBundle(ok, [ROLE_SEMANTIC, ROLE_SMOOTHNESS], [1.0, 1.0])
    with pytest.raises(ValueError, match="align"):
        FeatureBundle(ok, [ROLE_SEMANTIC], [1.0, 1.0])
    with pytest.raises(ValueError, match="empty"):
        FeatureBundle([], [], [])
    with pytest.raises(ValueError, match="role"):
        FeatureBundle(ok, [ROLE_SEMANTIC, "bogus"], [1.0, 1.0])
    with pytest.raises(ValueError, match="semantic"):
        FeatureBundle(ok, [ROLE_SEMANTIC, ROLE_SEMANTIC], [1.0, 1.0])
    with pytest.raises(ValueError, match="positive"):
        FeatureBundle(ok, [ROLE_SEMANTIC, ROLE_SMOOTHNESS], [1.0, 0.0])
    with pytest.raises(ValueError):
        FeatureBundle(
            [np.zeros((5, 2)), np.zeros((6, 1))],
            [ROLE_SEMANTIC, ROLE_SMOOTHNESS],
            [1.0, 1.0],
        )
