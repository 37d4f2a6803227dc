"""Scoring losses over per-point predictions, with analytic gradients.

The embedding loss pulls each descriptor toward its group mean (hinged at
delta1) and pushes group means apart (hinged at delta2); its gradient
chain-rules through the means.  Type loss is cross-entropy on the argmax
ground-truth code, param loss a plain mean squared norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LossConfig:
    alpha: float = 1.0
    beta: float = 0.1
    lambda_pull: float = 1.0
    nu_push: float = 1.0
    delta1: float = 0.5
    delta2: float = 1.5

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.lambda_pull, self.nu_push, self.delta1, self.delta2)
        if any(v < 0 for v in vals):
            raise ValueError("loss coefficients must be nonnegative")
        if self.delta2 <= self.delta1:
            raise ValueError("delta2 must exceed delta1")


def embedding_loss(
    descriptors: np.ndarray, gt_labels, cfg: LossConfig | None = None
) -> tuple[float, np.ndarray]:
    """lambda * pull + nu * push, with the gradient w.r.t. every descriptor.

    pull = (1/K) sum_k (1/|P_k|) sum_{i in P_k} max(||d_i - mu_k|| - delta1, 0)
    push = (1/(K(K-1))) sum_{k<k'} max(delta2 - ||mu_k - mu_k'||, 0)
    Group means mu_k are treated as functions of the descriptors, so their
    dependence is chain-ruled into the gradient.  K=1 makes push an empty
    average, defined as 0.
    """
    if cfg is None:
        cfg = LossConfig()
    D = np.asarray(descriptors, dtype=np.float64)
    if D.ndim != 2:
        raise ValueError("descriptors must be (n, m)")
    labels = np.asarray(gt_labels)
    n, m = D.shape
    if labels.shape != (n,):
        raise ValueError("one label per descriptor required")
    uniq, inv = np.unique(labels, return_inverse=True)
    K = uniq.size
    counts = np.bincount(inv).astype(np.float64)
    mu = np.zeros((K, m))
    np.add.at(mu, inv, D)
    mu /= counts[:, None]

    grad_pull = np.zeros_like(D)
    diff = D - mu[inv]
    dist = np.linalg.norm(diff, axis=1)
    act = dist > cfg.delta1
    pull = float((np.where(act, dist - cfg.delta1, 0.0) / counts[inv]).sum() / K)
    if np.any(act):
        u = np.zeros_like(D)
        u[act] = diff[act] / dist[act, None]
        coeff = 1.0 / (K * counts[inv])
        grad_pull += coeff[:, None] * u
        # Mean dependence: each group's summed unit vectors feed back into
        # every member through mu_k.
        gsum = np.zeros((K, m))
        np.add.at(gsum, inv, coeff[:, None] * u)
        grad_pull -= gsum[inv] / counts[inv, None]

    push = 0.0
    gmu = np.zeros((K, m))
    if K > 1:
        c = 1.0 / (K * (K - 1))
        for k in range(K - 1):
            d = mu[k] - mu[k + 1 :]
            dn = np.linalg.norm(d, axis=1)
            a = dn < cfg.delta2
            if not np.any(a):
                continue
            push += c * float((cfg.delta2 - dn[a]).sum())
            u = np.zeros_like(d)
            nz = a & (dn > 1e-12)
            u[nz] = d[nz] / dn[nz, None]
            gmu[k] -= c * u.sum(axis=0)
            gmu[k + 1 :] += c * u

    total = cfg.lambda_pull * pull + cfg.nu_push * push
    grad = cfg.lambda_pull * grad_pull + cfg.nu_push * (gmu / counts[:, None])[inv]
    return total, grad


def type_loss(pred: np.ndarray, gt) -> float:
    """Mean cross-entropy -log pred[i, gt_i], probabilities floored at 1e-12."""
    P = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.intp)
    if P.ndim != 2 or g.shape != (P.shape[0],):
        raise ValueError("pred must be (n, T) with one gt code per row")
    if np.any(g < 0) or np.any(g >= P.shape[1]):
        raise ValueError("ground-truth type code out of range")
    p = np.clip(P[np.arange(P.shape[0]), g], 1e-12, None)
    return float(np.mean(-np.log(p)))


def param_loss(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean squared Euclidean distance between parameter vectors."""
    P = np.asarray(pred, dtype=np.float64)
    G = np.asarray(gt, dtype=np.float64)
    if P.shape != G.shape:
        raise ValueError("shape mismatch")
    d = P - G
    return float(np.mean(np.einsum("ni,ni->n", d, d)))


def total_loss(parts, cfg: LossConfig | None = None) -> float:
    """L = L_emb + alpha * L_type + beta * L_param."""
    if cfg is None:
        cfg = LossConfig()
    emb, typ, par = parts
    return float(emb + cfg.alpha * typ + cfg.beta * par)
