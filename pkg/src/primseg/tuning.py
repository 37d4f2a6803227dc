"""Hyperparameter search by finite-difference gradient descent.

The tunable knobs are the positive kernel widths of the pipeline — the six
per-type consistency widths, the edge width, the three entropy bandwidths —
plus the mean-shift bandwidth factor.  All eleven are stepped in log-space
so every iterate stays positive.  Gradients come from a least-squares
linear fit over a symmetric cloud of perturbed objective evaluations:
the best-fitting linear model's slope is the numerical gradient.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .primitives import N_TYPES, PrimitiveType

FD_RADIUS = 0.05


@dataclass
class HyperParams:
    """The tunable positive widths, plus the carried embedding-dim window.

    ``d_min``/``d_max`` ride along so a tuned config can be reassembled,
    but being integers they are not part of the optimization vector.
    """

    sigma_per_type: tuple = (0.05,) * N_TYPES
    sigma_edge: float = 0.25
    sigma_semantic: float = 0.5
    sigma_consistency: float = 0.05
    sigma_smoothness: float = 0.5
    bandwidth_factor: float = 0.25
    d_min: int = 2
    d_max: int = 10

    def __post_init__(self):
        self.sigma_per_type = tuple(float(s) for s in self.sigma_per_type)
        if len(self.sigma_per_type) != N_TYPES:
            raise ValueError(f"sigma_per_type needs {N_TYPES} entries")
        if any(s <= 0 for s in self._positive()):
            raise ValueError("hyperparameters must be positive")
        if not 1 <= self.d_min <= self.d_max:
            raise ValueError("need 1 <= d_min <= d_max")

    def _positive(self) -> tuple:
        return self.sigma_per_type + (
            self.sigma_edge,
            self.sigma_semantic,
            self.sigma_consistency,
            self.sigma_smoothness,
            self.bandwidth_factor,
        )

    def to_vector(self) -> np.ndarray:
        """Log-space coordinates of the positive hyperparameters."""
        return np.log(np.array(self._positive(), dtype=np.float64))

    @classmethod
    def from_vector(cls, v: np.ndarray, like: "HyperParams") -> "HyperParams":
        x = np.exp(np.asarray(v, dtype=np.float64))
        if x.shape != (N_TYPES + 5,):
            raise ValueError(f"expected a {N_TYPES + 5}-vector")
        return cls(
            sigma_per_type=tuple(x[:N_TYPES]),
            sigma_edge=float(x[N_TYPES]),
            sigma_semantic=float(x[N_TYPES + 1]),
            sigma_consistency=float(x[N_TYPES + 2]),
            sigma_smoothness=float(x[N_TYPES + 3]),
            bandwidth_factor=float(x[N_TYPES + 4]),
            d_min=like.d_min,
            d_max=like.d_max,
        )

    @classmethod
    def from_config(cls, cfg: Config) -> "HyperParams":
        return cls(
            sigma_per_type=tuple(cfg.spectral.sigma_per_type),
            sigma_edge=cfg.spectral.sigma_edge,
            sigma_semantic=cfg.weighting.sigma_semantic,
            sigma_consistency=cfg.weighting.sigma_consistency,
            sigma_smoothness=cfg.weighting.sigma_smoothness,
            bandwidth_factor=cfg.cluster.bandwidth_factor,
            d_min=cfg.spectral.d_min,
            d_max=cfg.spectral.d_max,
        )

    def apply(self, cfg: Config) -> Config:
        """A copy of ``cfg`` with these hyperparameters substituted in."""
        return dataclasses.replace(
            cfg,
            spectral=dataclasses.replace(
                cfg.spectral,
                sigma_per_type=list(self.sigma_per_type),
                sigma_edge=self.sigma_edge,
                d_min=self.d_min,
                d_max=self.d_max,
            ),
            weighting=dataclasses.replace(
                cfg.weighting,
                sigma_semantic=self.sigma_semantic,
                sigma_consistency=self.sigma_consistency,
                sigma_smoothness=self.sigma_smoothness,
            ),
            cluster=dataclasses.replace(cfg.cluster, bandwidth_factor=self.bandwidth_factor),
        )


PARAM_NAMES = tuple(
    [f"sigma_{t.name.lower()}" for t in PrimitiveType]
    + [
        "sigma_edge",
        "sigma_semantic",
        "sigma_consistency",
        "sigma_smoothness",
        "bandwidth_factor",
    ]
)


def _fd_core(f, x0: np.ndarray, samples: int | None, radius: np.ndarray):
    """Least-squares linear fit around x0; returns (slope, f(x0)).

    The default design is the balanced center + symmetric-pair layout
    (2*dim + 1 rows); any other sample count uses seeded uniform
    perturbations inside the same per-coordinate radius.
    """
    dim = x0.size
    if samples is None:
        samples = 2 * dim + 1
    if samples == 2 * dim + 1:
        deltas = np.zeros((samples, dim))
        for i in range(dim):
            deltas[1 + 2 * i, i] = radius[i]
            deltas[2 + 2 * i, i] = -radius[i]
    else:
        rng = np.random.default_rng(0)
        deltas = np.vstack(
            [np.zeros(dim), rng.uniform(-1.0, 1.0, size=(max(samples - 1, 0), dim)) * radius]
        )
    X = np.concatenate([np.ones((deltas.shape[0], 1)), deltas], axis=1)
    if np.linalg.matrix_rank(X) < dim + 1:
        raise ValueError("insufficient samples")
    y = np.array([float(f(x0 + d)) for d in deltas])
    sol = np.linalg.lstsq(X, y, rcond=None)[0]
    return sol[1:], y[0]


def finite_diff_gradient(objective, hp, samples: int | None = None) -> np.ndarray:
    """Numerical gradient of ``objective`` from a fitted linear model.

    ``hp`` may be a HyperParams (perturbed by a 5% relative radius in its
    log-space coordinates; the slope is returned w.r.t. those coordinates)
    or a plain vector (perturbed coordinate-wise at 5% of magnitude with a
    small absolute floor).  A design matrix without full column rank —
    always the case when samples < dim + 1 — raises "insufficient samples".
    """
    if isinstance(hp, np.ndarray) or (
        isinstance(hp, (list, tuple)) and not hasattr(hp, "to_vector")
    ):
        x0 = np.asarray(hp, dtype=np.float64)
        radius = FD_RADIUS * np.maximum(np.abs(x0), 0.02)
        slope, _ = _fd_core(objective, x0, samples, radius)
        return slope
    x0 = hp.to_vector()
    radius = np.full(x0.size, FD_RADIUS)
    wrapped = lambda v: objective(type(hp).from_vector(v, hp))
    slope, _ = _fd_core(wrapped, x0, samples, radius)
    return slope


def tune_hyperparams(
    objective,
    hp0,
    max_iter: int = 30,
    *,
    step0: float = 1.0,
    c_armijo: float = 1e-4,
    max_halvings: int = 20,
    step_tol: float = 1e-3,
    trace: list | None = None,
):
    """Gradient descent in log-space with a backtracking line search.

    Each iteration fits a finite-difference gradient and steps along its
    negative; backtracking halves the multiplier until the Armijo decrease
    f_new <= f - c*alpha*|grad|^2 holds (or gives up after
    ``max_halvings``).  The step size is the norm of the accepted update —
    the distance actually moved in log-space.  Stops when that drops below
    ``step_tol`` (a failed line search counts as a zero step) or after
    ``max_iter`` iterations; an accepted step never increases the
    objective.  If the objective raises, the last feasible iterate is
    returned as-is.

    ``trace``, when given, receives one dict per row: the starting point
    (iteration 0) and every subsequent iteration's accepted state.
    """
    hp = hp0
    x = hp0.to_vector()
    radius = np.full(x.size, FD_RADIUS)
    wrapped = lambda v: objective(type(hp0).from_vector(v, hp0))

    def record(it, fval, step, point):
        if trace is not None:
            row = {"iteration": it, "objective": float(fval), "step_size": float(step)}
            for name, value in zip(PARAM_NAMES, np.exp(point)):
                row[name] = float(value)
            trace.append(row)

    try:
        f_cur = float(wrapped(x))
    except Exception:
        return hp
    record(0, f_cur, 0.0, x)
    alpha = step0
    for it in range(1, max_iter + 1):
        try:
            g, f_cur = _fd_core(wrapped, x, None, radius)
        except ValueError:
            raise
        except Exception:
            break
        gn2 = float(g @ g)
        gnorm = np.sqrt(gn2)
        if gnorm == 0.0:
            record(it, f_cur, 0.0, x)
            break
        a = min(2.0 * alpha, step0)
        accepted = False
        try:
            for _ in range(max_halvings + 1):
                cand = x - a * g
                f_new = float(wrapped(cand))
                if f_new <= f_cur - c_armijo * a * gn2:
                    accepted = True
                    break
                a *= 0.5
        except Exception:
            break
        if not accepted:
            record(it, f_cur, 0.0, x)
            break
        x = cand
        hp = type(hp0).from_vector(x, hp0)
        f_cur = f_new
        alpha = a
        step = a * gnorm
        record(it, f_cur, step, x)
        if step < step_tol:
            break
    return hp


def make_validation_objective(
    scenes: list | None = None,
    *,
    n_scenes: int = 3,
    points_per_scene: int = 300,
    n_primitives: int = 3,
    seed: int = 0,
    base: Config | None = None,
):
    """Mean embedding loss of the assembled feature space over held-out scenes.

    ``scenes`` is a list of (cloud, attrs, labels) triples in world
    coordinates; when omitted, small analytic scenes are synthesized.
    Neighbor graphs are precomputed once — the graph depends on positions
    and k only, neither of which is tuned.
    """
    from .cloud import knn_graph, normalize_cloud
    from .losses import embedding_loss
    from .pipeline import build_feature_space, params_to_frame

    cfg0 = base if base is not None else Config()
    if scenes is None:
        from .synth import generate_scene, random_scene_spec

        scenes = []
        for i in range(n_scenes):
            spec = random_scene_spec(
                seed + 7 * i,
                n_primitives=n_primitives,
                total_points=points_per_scene,
                noise_sigma=0.0,
                rho=0.0,
            )
            cloud, gt, attrs = generate_scene(spec)
            scenes.append((cloud, attrs, gt.labels))
    if not scenes:
        raise ValueError("validation objective needs at least one scene")

    prepared = []
    k = max(cfg0.spectral.knn_k, 1)
    for cloud, attrs, labels in scenes:
        work, tf = normalize_cloud(cloud)
        graph = knn_graph(work, min(k, work.n - 1))
        prepared.append((work, params_to_frame(attrs, tf), np.asarray(labels), graph))

    def objective(hp: HyperParams) -> float:
        cfg = hp.apply(cfg0)
        total = 0.0
        for work, attrs, labels, graph in prepared:
            F, _, _, _ = build_feature_space(work, attrs, cfg, graph=graph)
            loss, _ = embedding_loss(F, labels)
            total += loss
        return total / len(prepared)

    return objective
