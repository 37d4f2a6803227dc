"""Entropy-derived feature weighting.

Each feature (the semantic descriptor block plus every spectral embedding
column individually) gets a weight inversely proportional to the entropy of
its kernel density estimate: features whose values concentrate (low
entropy) discriminate better and weigh more.  Weights are normalized so
their squares sum to one, which makes row distances in the assembled space
exactly sqrt(sum_l w_l^2 d_l^2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist, squareform

ROLE_SEMANTIC = "semantic"
ROLE_CONSISTENCY = "consistency-column"
ROLE_SMOOTHNESS = "smoothness-column"
_ROLES = (ROLE_SEMANTIC, ROLE_CONSISTENCY, ROLE_SMOOTHNESS)

WBAR_CLAMP = 1e3


@dataclass
class FeatureBundle:
    features: list  # L arrays, each (n, m_l)
    roles: list  # L role tags
    sigmas: list  # L entropy bandwidths

    def __post_init__(self):
        if not (len(self.features) == len(self.roles) == len(self.sigmas)):
            raise ValueError("features, roles, and sigmas must align")
        if not self.features:
            raise ValueError("empty feature bundle")
        self.features = [np.atleast_2d(np.asarray(F, dtype=np.float64).T).T for F in self.features]
        n = self.features[0].shape[0]
        for F in self.features:
            if F.ndim != 2 or F.shape[0] != n or F.shape[1] < 1:
                raise ValueError("every feature must be (n, m_l) with m_l >= 1")
        for r in self.roles:
            if r not in _ROLES:
                raise ValueError(f"unknown feature role {r!r}")
        if sum(r == ROLE_SEMANTIC for r in self.roles) > 1:
            raise ValueError("at most one semantic feature")
        if any(s <= 0 for s in self.sigmas):
            raise ValueError("entropy bandwidths must be positive")

    @property
    def L(self) -> int:
        return len(self.features)

    @property
    def n(self) -> int:
        return self.features[0].shape[0]


@dataclass
class WeightVector:
    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if abs(float(self.w @ self.w) - 1.0) > 1e-9:
            raise ValueError("squared weights must sum to 1")
        if np.any(self.w <= 0) or np.any(self.w > 1.0 + 1e-12):
            raise ValueError("weights must lie in (0, 1]")


def feature_entropy(F, sigma: float) -> float:
    """Entropy of the Gaussian kernel density over the feature's rows.

    P_i = (1/n) (2 pi)^{-m/2} sigma^{-m} sum_j exp(-|x_i-x_j|^2/(2 sigma^2))
    (self term included); H = -sum_i P_i log P_i with the natural log.
    Exact O(n^2) evaluation.  Note H is a sum of -P log P terms over density
    *values*, so it can go negative when densities exceed 1.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    F = np.atleast_2d(np.asarray(F, dtype=np.float64).T).T
    n, m = F.shape
    if n < 1:
        raise ValueError("empty input")
    d2 = squareform(pdist(F, "sqeuclidean")) if n > 1 else np.zeros((1, 1))
    kern = np.exp(-d2 / (2.0 * sigma * sigma)).sum(axis=1)
    P = kern * (2.0 * np.pi) ** (-m / 2.0) * sigma ** (-float(m)) / n
    return float(-(P * np.log(P)).sum())


def compute_weights(bundle: FeatureBundle, clamp: float = WBAR_CLAMP) -> WeightVector:
    """Inverse-entropy weights, normalized to unit squared sum.

    Differential entropy of a tightly concentrated feature goes negative,
    which would flip the weight's sign; such raw weights saturate at
    ``clamp``.  Block-indicator embedding columns evaluated at a small
    bandwidth sit in this regime on purpose: saturation is what lets them
    dominate diffuse features after normalization.
    """
    wbar = np.empty(bundle.L)
    for l, (F, s) in enumerate(zip(bundle.features, bundle.sigmas)):
        H = feature_entropy(F, s)
        wbar[l] = clamp if H <= 0 else min(1.0 / H, clamp)
    return WeightVector(wbar / np.linalg.norm(wbar))


def assemble_feature_space(bundle: FeatureBundle, weights: WeightVector) -> np.ndarray:
    """Column-wise concatenation of w_l * F_l."""
    if weights.w.shape[0] != bundle.L:
        raise ValueError("weight count must match feature count")
    return np.hstack([w * F for w, F in zip(weights.w, bundle.features)])


def make_feature_bundle(
    descriptors: np.ndarray,
    U_c: np.ndarray,
    U_s: np.ndarray,
    sigma_semantic: float,
    sigma_consistency: float,
    sigma_smoothness: float,
) -> FeatureBundle:
    """Standard bundle: one semantic block plus every spectral column.

    Each role carries its own entropy kernel width, since the two embedding
    families concentrate at very different scales.
    """
    feats = [np.asarray(descriptors, dtype=np.float64)]
    roles = [ROLE_SEMANTIC]
    sigmas = [sigma_semantic]
    for U, role, sig in (
        (U_c, ROLE_CONSISTENCY, sigma_consistency),
        (U_s, ROLE_SMOOTHNESS, sigma_smoothness),
    ):
        U = np.asarray(U, dtype=np.float64)
        for j in range(U.shape[1]):
            feats.append(U[:, j : j + 1])
            roles.append(role)
            sigmas.append(sig)
    return FeatureBundle(feats, roles, sigmas)
