"""Run configuration: every tunable knob of the pipeline in one JSON-able tree.

Unknown keys are rejected by name on load so that typos fail loudly instead
of silently running with defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .losses import LossConfig


@dataclass
class SpectralConfig:
    sigma_per_type: tuple = (0.05, 0.05, 0.05, 0.05, 0.05, 0.05)
    sigma_edge: float = 0.25
    knn_k: int = 50
    dense_cap: int = 4096
    d_min: int = 2
    d_max: int = 10
    embedding_scale: str = "paper"  # or "inverse"
    cone_paper_literal: bool = False

    def __post_init__(self):
        self.sigma_per_type = tuple(float(s) for s in self.sigma_per_type)
        if len(self.sigma_per_type) != 6 or any(s <= 0 for s in self.sigma_per_type):
            raise ValueError("sigma_per_type needs 6 positive entries")
        if self.sigma_edge <= 0:
            raise ValueError("sigma_edge must be positive")
        if self.embedding_scale not in ("paper", "inverse"):
            raise ValueError(f"unknown embedding scale {self.embedding_scale!r}")
        if not 1 <= self.d_min <= self.d_max:
            raise ValueError("need 1 <= d_min <= d_max")


@dataclass
class WeightingConfig:
    sigma_semantic: float = 0.5
    sigma_consistency: float = 0.05
    sigma_smoothness: float = 0.5

    def __post_init__(self):
        if min(self.sigma_semantic, self.sigma_consistency, self.sigma_smoothness) <= 0:
            raise ValueError("entropy kernel widths must be positive")


@dataclass
class ClusterConfig:
    bandwidth: float | None = None  # None -> factor * median pairwise distance
    bandwidth_factor: float = 0.25
    min_cluster_size: int = 20
    merge_factor: float = 0.5
    max_iter: int = 300

    def __post_init__(self):
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive when given")
        if self.bandwidth_factor <= 0:
            raise ValueError("bandwidth_factor must be positive")


@dataclass
class AttributeConfig:
    k_fit: int = 64
    softmin_tau: float = 0.02

    def __post_init__(self):
        if self.k_fit < 6:
            raise ValueError("k_fit must be at least 6")
        if self.softmin_tau <= 0:
            raise ValueError("softmin_tau must be positive")


@dataclass
class Config:
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    weighting: WeightingConfig = field(default_factory=WeightingConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    attributes: AttributeConfig = field(default_factory=AttributeConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0


_SECTIONS = {
    "spectral": SpectralConfig,
    "weighting": WeightingConfig,
    "cluster": ClusterConfig,
    "attributes": AttributeConfig,
    "loss": LossConfig,
}


def _build_section(cls, doc: dict, prefix: str):
    names = {f.name for f in dataclasses.fields(cls)}
    for key in doc:
        if key not in names:
            raise ValueError(f"unknown config key {prefix + key!r}")
    return cls(**doc)


def config_from_dict(doc: dict) -> Config:
    known = set(_SECTIONS) | {"seed"}
    for key in doc:
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = doc.get(name, {})
        if not isinstance(section, dict):
            raise ValueError(f"config section {name!r} must be an object")
        kwargs[name] = _build_section(cls, section, name + ".")
    return Config(seed=int(doc.get("seed", 0)), **kwargs)


def config_to_dict(cfg: Config) -> dict:
    doc = {name: dataclasses.asdict(getattr(cfg, name)) for name in _SECTIONS}
    doc["spectral"]["sigma_per_type"] = list(doc["spectral"]["sigma_per_type"])
    doc["seed"] = cfg.seed
    return doc


def load_config(path) -> Config:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValueError("config root must be a JSON object")
    return config_from_dict(doc)


def save_config(path, cfg: Config) -> None:
    from .io import atomic_write_text

    atomic_write_text(path, json.dumps(config_to_dict(cfg), indent=2) + "\n")
