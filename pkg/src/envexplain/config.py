"""Run configuration: strict JSON loading, validation, and hashing.

One JSON file drives every pipeline stage. Keys are grouped by stage:
flat keys configure the explainer, nested sections configure dataset
generation, splitting, the classifier, the benchmark, and the sweep grid.
Unknown keys are rejected by full dotted path so typos cannot silently
fall back to defaults. The configuration hash covers everything except
output paths and is stamped into every artifact for provenance.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .datagen import GenConfig

__all__ = [
    "ConfigError",
    "SplitSpec",
    "ClassifierSpec",
    "BenchSpec",
    "SweepSpec",
    "RunConfig",
    "load_config",
    "config_from_dict",
    "config_to_dict",
    "config_hash",
    "classifier_params",
    "analyzer_params",
    "explainer_params",
]


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the bad entry."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__("%s: %s" % (key, message))


@dataclass(frozen=True)
class SplitSpec:
    """How the generated dataset is tagged train/val/test."""

    kind: str = "none"
    domain: str | None = None
    train_corr: float = 0.9
    seed: int = 0


@dataclass(frozen=True)
class ClassifierSpec:
    """Hyperparameters of the classifier being explained."""

    hidden_dim: int = 64
    num_layers: int = 3
    learning_rate: float = 0.005
    weight_decay: float = 1e-4
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0


@dataclass(frozen=True)
class BenchSpec:
    """Sizes and repeats for the reconstruction runtime probe."""

    sizes: tuple[int, ...] = (20000, 40000, 80000, 160000)
    avg_degree: float = 4.0
    max_iter: int = 20
    repeats: int = 3


@dataclass(frozen=True)
class SweepSpec:
    """Grid axes for the sensitivity sweep."""

    densities: tuple[float, ...] = (0.05, 0.1, 0.2)
    reward_weights: tuple[float, ...] = (0.0, 0.5, 1.0, 2.0)
    recon_weights: tuple[float, ...] = (1.0, 2.0, 4.0)


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs; flat keys belong to the explainer."""

    seed: int = 0
    run_dir: str = "run"
    explain_split: str = "test"
    learning_rate: float = 0.005
    weight_decay: float = 1e-4
    structure_infer_epochs: int = 3
    num_envs: int = 3
    epochs: int = 10
    batch_size: int = 64
    num_samples: int = 4
    prior_min_nodes: int = 5
    prior_max_nodes: int = 7
    prior_fraction: float = 0.3
    prior_density: float = 0.1
    max_iter: int = 20
    min_edges: int = 4
    temperature: float = 0.5
    node_latent: int = 16
    graph_latent: int = 16
    env_dim: int = 16
    hidden_dim: int = 64
    w_vae: float = 1.0
    w_recon: float = 2.0
    w_contrast: float = 0.5
    w_reward: float = 1.0
    w_agreement: float = 1.0
    w_risk: float = 1.0
    w_mse: float = 1.0
    w_kl: float = 0.1
    gen: GenConfig = field(default_factory=GenConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    classifier: ClassifierSpec = field(default_factory=ClassifierSpec)
    bench: BenchSpec = field(default_factory=BenchSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)


_SECTIONS = {
    "gen": GenConfig,
    "split": SplitSpec,
    "classifier": ClassifierSpec,
    "bench": BenchSpec,
    "sweep": SweepSpec,
}

# JSON arrays arrive as lists; these dataclass fields expect tuples
_TUPLE_FIELDS = {
    "gen.base_families", "gen.base_size_range", "gen.motif_set",
    "gen.env_dims", "bench.sizes", "sweep.densities",
    "sweep.reward_weights", "sweep.recon_weights",
}


def _build_section(cls, data: dict, prefix: str):
    allowed = {f.name for f in fields(cls)}
    values = {}
    for key, value in data.items():
        path = "%s%s" % (prefix, key)
        if key not in allowed:
            raise ConfigError(path, "unknown key")
        if path in _TUPLE_FIELDS:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(path, "expected a list")
            value = tuple(value)
        values[key] = value
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(prefix.rstrip("."), str(exc)) from exc


def config_from_dict(data: dict) -> RunConfig:
    """Build a validated RunConfig; unknown keys raise ConfigError."""
    if not isinstance(data, dict):
        raise ConfigError("", "configuration must be a JSON object")
    allowed = {f.name for f in fields(RunConfig)}
    values = {}
    for key, value in data.items():
        if key not in allowed:
            raise ConfigError(key, "unknown key")
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(key, "expected an object")
            values[key] = _build_section(_SECTIONS[key], value, key + ".")
        else:
            values[key] = value
    cfg = RunConfig(**values)
    _validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), "not valid JSON: %s" % exc) from exc
    return config_from_dict(data)


def _require(condition: bool, key: str, message: str) -> None:
    if not condition:
        raise ConfigError(key, message)


def _validate(cfg: RunConfig) -> None:
    for name in ("structure_infer_epochs", "num_envs", "epochs", "batch_size",
                 "num_samples", "prior_min_nodes", "prior_max_nodes",
                 "max_iter", "min_edges", "node_latent", "graph_latent",
                 "env_dim", "hidden_dim"):
        value = getattr(cfg, name)
        _require(isinstance(value, int) and value >= 1, name,
                 "must be a positive integer")
    for name in ("learning_rate", "temperature"):
        _require(getattr(cfg, name) > 0.0, name, "must be positive")
    for name in ("weight_decay", "w_vae", "w_recon", "w_contrast", "w_reward",
                 "w_agreement", "w_risk", "w_mse", "w_kl"):
        _require(getattr(cfg, name) >= 0.0, name, "must be nonnegative")
    _require(0.0 < cfg.prior_density <= 1.0, "prior_density",
             "must lie in (0, 1]")
    _require(0.0 < cfg.prior_fraction <= 1.0, "prior_fraction",
             "must lie in (0, 1]")
    _require(cfg.prior_min_nodes <= cfg.prior_max_nodes, "prior_min_nodes",
             "must not exceed prior_max_nodes")
    _require(cfg.explain_split in ("train", "val", "test"), "explain_split",
             "must be train, val, or test")
    _require(isinstance(cfg.seed, int), "seed", "must be an integer")

    _require(cfg.gen.num_graphs >= 1, "gen.num_graphs", "must be positive")
    _require(cfg.gen.feature_dim >= 1, "gen.feature_dim", "must be positive")
    _require(len(cfg.gen.base_families) >= 1, "gen.base_families",
             "must name at least one family")
    _require(len(cfg.gen.base_size_range) == 2
             and cfg.gen.base_size_range[0] <= cfg.gen.base_size_range[1],
             "gen.base_size_range", "must be a nondecreasing (lo, hi) pair")

    _require(cfg.split.kind in ("none", "covariate", "concept"), "split.kind",
             "must be none, covariate, or concept")
    _require(cfg.split.domain in (None, "basis", "size"), "split.domain",
             "must be basis, size, or null")
    if cfg.split.kind == "covariate":
        _require(cfg.split.domain is not None, "split.domain",
                 "covariate shift needs a domain")
    _require(0.5 <= cfg.split.train_corr <= 1.0, "split.train_corr",
             "must lie in [0.5, 1]")

    for name in ("hidden_dim", "num_layers", "epochs", "batch_size"):
        _require(getattr(cfg.classifier, name) >= 1, "classifier.%s" % name,
                 "must be positive")
    _require(cfg.classifier.learning_rate > 0.0, "classifier.learning_rate",
             "must be positive")
    _require(cfg.classifier.weight_decay >= 0.0, "classifier.weight_decay",
             "must be nonnegative")

    _require(len(cfg.bench.sizes) >= 1, "bench.sizes", "must be nonempty")
    _require(all(s >= 2 for s in cfg.bench.sizes), "bench.sizes",
             "sizes must be at least 2")
    _require(cfg.bench.avg_degree > 0.0, "bench.avg_degree",
             "must be positive")
    _require(cfg.bench.max_iter >= 1, "bench.max_iter", "must be positive")
    _require(cfg.bench.repeats >= 1, "bench.repeats", "must be positive")

    for name in ("densities", "reward_weights", "recon_weights"):
        values = getattr(cfg.sweep, name)
        _require(len(values) >= 1, "sweep.%s" % name, "must be nonempty")
    _require(all(0.0 < d <= 1.0 for d in cfg.sweep.densities),
             "sweep.densities", "densities must lie in (0, 1]")
    _require(all(w >= 0.0 for w in cfg.sweep.reward_weights),
             "sweep.reward_weights", "weights must be nonnegative")
    _require(all(w >= 0.0 for w in cfg.sweep.recon_weights),
             "sweep.recon_weights", "weights must be nonnegative")


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_hash(cfg: RunConfig) -> str:
    """16-hex digest over every key except output paths."""
    payload = config_to_dict(cfg)
    payload.pop("run_dir")
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def classifier_params(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg.classifier)


def analyzer_params(cfg: RunConfig) -> dict:
    return {"num_envs": cfg.num_envs,
            "wl_iterations": cfg.structure_infer_epochs,
            "seed": cfg.seed}


def explainer_params(cfg: RunConfig) -> dict:
    return {
        "num_samples": cfg.num_samples,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate,
        "weight_decay": cfg.weight_decay,
        "node_latent": cfg.node_latent,
        "graph_latent": cfg.graph_latent,
        "env_dim": cfg.env_dim,
        "hidden_dim": cfg.hidden_dim,
        "w_vae": cfg.w_vae,
        "w_recon": cfg.w_recon,
        "w_contrast": cfg.w_contrast,
        "w_reward": cfg.w_reward,
        "w_agreement": cfg.w_agreement,
        "w_risk": cfg.w_risk,
        "w_mse": cfg.w_mse,
        "w_kl": cfg.w_kl,
        "density": cfg.prior_density,
        "max_iter": cfg.max_iter,
        "min_edges": cfg.min_edges,
        "prior_fraction": cfg.prior_fraction,
        "prior_min": cfg.prior_min_nodes,
        "prior_max": cfg.prior_max_nodes,
        "temperature": cfg.temperature,
        "seed": cfg.seed,
    }
