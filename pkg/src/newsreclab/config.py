"""Run configuration: parsing, exhaustive validation, pipeline assembly.

A run config is a single YAML document with a dataset source (a path to
an ingested dataset or a synthetic generator block), harness parameters,
an algorithm list with per-algorithm parameter maps, and content-encoder
settings. Two bundled profiles ship the published hyper-parameter tables
for the two original news portals.
"""

from __future__ import annotations

import importlib.resources
import inspect
import logging
import os
from dataclasses import dataclass, field, fields

import yaml

from . import baselines
from .content_embeddings import build_repository, train_acr
from .corpus import load_dataset
from .features import FeatureSpace
from .harness import HarnessConfig, Replay
from .nar_net import NarConfig, NarRecommender
from .synth import SyntheticConfig, generate_synthetic

log = logging.getLogger(__name__)

BASELINE_CLASSES = {
    cls.name: cls
    for cls in (
        baselines.CooccurrenceRecommender,
        baselines.SequentialRulesRecommender,
        baselines.ItemKnnRecommender,
        baselines.VSkNNRecommender,
        baselines.RecentPopularityRecommender,
        baselines.ContentBasedRecommender,
        baselines.RandomScorer,
        baselines.CanaryRecommender,
    )
}
ALGORITHM_NAMES = sorted(BASELINE_CLASSES) + ["nar"]
PROFILE_NAMES = ("g1-like", "adressa-like")


class ConfigError(ValueError):
    """Invalid run configuration; message lists every problem found."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("invalid config:\n  - " + "\n  - ".join(self.problems))


@dataclass
class AcrSettings:
    ace_dim: int = 250
    word_dim: int = 100
    epochs: int = 3
    learning_rate: float = 0.02
    batch_size: int = 64
    loss_weights: tuple = (1.0, 1.0)
    word_vectors: str | None = None


@dataclass
class RunConfig:
    seed: int = 7
    out_dir: str = "runs/out"
    dataset: dict = field(default_factory=dict)
    harness: HarnessConfig = field(default_factory=HarnessConfig)
    algorithms: list = field(default_factory=list)  # (name, params) pairs
    acr: AcrSettings = field(default_factory=AcrSettings)


def _check_params(name, params, cls, problems):
    signature = inspect.signature(cls.__init__)
    valid = [p for p in signature.parameters if p != "self"]
    for key in sorted(params):
        if key not in valid:
            problems.append(
                f"algorithm {name!r}: unknown parameter {key!r} "
                f"(valid: {valid or 'none'})"
            )


def load_profile(name):
    if name not in PROFILE_NAMES:
        raise ConfigError(
            [f"unknown profile {name!r}; bundled profiles: {list(PROFILE_NAMES)}"]
        )
    resource = importlib.resources.files("newsreclab.profiles")
    with (resource / f"{name}.yaml").open("r") as fh:
        return yaml.safe_load(fh)


def parse_config(raw, profile=None, seed=None, out_dir=None):
    """Validate a raw config mapping; collect every problem before failing."""
    problems = []
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a mapping"])
    known_top = {"seed", "out_dir", "dataset", "harness", "algorithms", "acr"}
    for key in sorted(set(raw) - known_top):
        problems.append(f"unknown top-level key {key!r}")

    profile_params = {}
    if profile:
        profile_params = load_profile(profile).get("algorithms", {})

    dataset = raw.get("dataset") or {}
    if not isinstance(dataset, dict) or not (
        ("path" in dataset) ^ ("synthetic" in dataset)
    ):
        problems.append("dataset must define exactly one of 'path' or 'synthetic'")
    elif "path" in dataset and not os.path.isdir(dataset["path"]):
        problems.append(f"dataset path {dataset['path']!r} is not a directory")
    elif "synthetic" in dataset:
        try:
            _synthetic_config(dataset, raw.get("seed", 7)).validate()
        except (TypeError, ValueError) as exc:
            problems.append(str(exc))

    harness_raw = raw.get("harness") or {}
    harness_fields = {f.name for f in fields(HarnessConfig)}
    for key in sorted(set(harness_raw) - harness_fields):
        problems.append(f"harness: unknown key {key!r} (valid: {sorted(harness_fields)})")
    try:
        harness = HarnessConfig(**{k: v for k, v in harness_raw.items()
                                   if k in harness_fields})
        harness.validate()
    except (TypeError, ValueError) as exc:
        problems.append(f"harness: {exc}")
        harness = HarnessConfig()

    algorithms = []
    raw_algorithms = raw.get("algorithms") or []
    if not raw_algorithms:
        problems.append("at least one algorithm is required")
    for entry in raw_algorithms:
        if isinstance(entry, str):
            entry = {"name": entry}
        if not isinstance(entry, dict) or "name" not in entry:
            problems.append(f"algorithm entry {entry!r} needs a 'name'")
            continue
        name = entry["name"]
        params = dict(profile_params.get(name, {}))
        params.update(entry.get("params") or {})
        if name == "nar":
            try:
                NarConfig.from_dict(params)
            except (TypeError, ValueError) as exc:
                problems.append(f"algorithm 'nar': {exc}")
        elif name in BASELINE_CLASSES:
            _check_params(name, params, BASELINE_CLASSES[name], problems)
        else:
            problems.append(
                f"unknown algorithm {name!r}; valid algorithms: {ALGORITHM_NAMES}"
            )
        algorithms.append((name, params))
    names = [n for n, _ in algorithms]
    if len(set(names)) != len(names):
        problems.append("duplicate algorithm names in config")

    acr_raw = raw.get("acr") or {}
    acr_fields = {f.name for f in fields(AcrSettings)}
    for key in sorted(set(acr_raw) - acr_fields):
        problems.append(f"acr: unknown key {key!r} (valid: {sorted(acr_fields)})")
    try:
        acr = AcrSettings(**{k: v for k, v in acr_raw.items() if k in acr_fields})
        if isinstance(acr.loss_weights, list):
            acr.loss_weights = tuple(acr.loss_weights)
    except TypeError as exc:
        problems.append(f"acr: {exc}")
        acr = AcrSettings()

    if problems:
        raise ConfigError(problems)

    return RunConfig(
        seed=int(seed if seed is not None else raw.get("seed", 7)),
        out_dir=str(out_dir if out_dir is not None else raw.get("out_dir", "runs/out")),
        dataset=dataset,
        harness=harness,
        algorithms=algorithms,
        acr=acr,
    )


def load_config(path, profile=None, seed=None, out_dir=None):
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    return parse_config(raw, profile=profile, seed=seed, out_dir=out_dir)


def dump_config(cfg):
    """Round-trippable plain mapping of a RunConfig."""
    return {
        "seed": cfg.seed,
        "out_dir": cfg.out_dir,
        "dataset": cfg.dataset,
        "harness": {f.name: getattr(cfg.harness, f.name)
                    for f in fields(HarnessConfig)},
        "algorithms": [
            {"name": name, "params": dict(params)} for name, params in cfg.algorithms
        ],
        "acr": {f.name: getattr(cfg.acr, f.name) for f in fields(AcrSettings)
                if f.name != "loss_weights"} | {
            "loss_weights": list(cfg.acr.loss_weights)},
    }


def _synthetic_config(dataset, seed):
    params = dict(dataset["synthetic"])
    params.setdefault("seed", seed)
    known = {f.name for f in fields(SyntheticConfig)}
    unknown = sorted(set(params) - known)
    if unknown:
        raise ValueError(f"synthetic dataset: unknown keys {unknown}")
    return SyntheticConfig(**params)


def build_dataset(cfg):
    if "path" in cfg.dataset:
        return load_dataset(cfg.dataset["path"])
    return generate_synthetic(_synthetic_config(cfg.dataset, cfg.seed))


def build_content_embeddings(cfg, dataset):
    """Train the content encoder and embed the whole catalog once."""
    pretrained = None
    if cfg.acr.word_vectors:
        from .content_embeddings import load_word_vectors

        pretrained = load_word_vectors(cfg.acr.word_vectors)
    model = train_acr(
        dataset.articles,
        epochs=cfg.acr.epochs,
        lr=cfg.acr.learning_rate,
        loss_weights=cfg.acr.loss_weights,
        ace_dim=cfg.acr.ace_dim,
        word_dim=cfg.acr.word_dim,
        batch_size=cfg.acr.batch_size,
        seed=cfg.seed,
        pretrained=pretrained,
    )
    return build_repository(model, dataset.articles)


def build_algorithms(cfg, space, overrides=None):
    """Instantiate the configured recommenders against a feature space."""
    overrides = overrides or {}
    out = []
    for name, params in cfg.algorithms:
        params = dict(params)
        params.update(overrides.get(name, {}))
        if name == "nar":
            out.append(NarRecommender(space, NarConfig.from_dict(params),
                                      seed=cfg.seed))
        else:
            out.append(BASELINE_CLASSES[name](**params))
    return out


def execute_run(cfg, dataset=None, ace_repository=None, overrides=None):
    """Full pipeline: dataset, embeddings, replay; returns the report."""
    dataset = dataset if dataset is not None else build_dataset(cfg)
    if ace_repository is None:
        ace_repository = build_content_embeddings(cfg, dataset)
    space = FeatureSpace(dataset.articles, dataset.context_vocabularies(),
                         ace_repository)
    algorithms = build_algorithms(cfg, space, overrides)
    replay = Replay(dataset, algorithms, space, cfg.harness, cfg.seed)
    report = replay.run()
    return report, algorithms
