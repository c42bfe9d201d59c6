"""Experiment configuration and the end-to-end transfer pipeline."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dataset, evaluation, models
from .attack import METHODS, AttackConfig, attack_batch
from .perceptual import perceptual_report
from .tensorcore import derive_seed

SCHEMA_VERSION = 1
ABLATION_AXES = ("sigma", "m", "K", "alpha", "masks", "components")
DEFAULT_GRIDS = {
    "sigma": [2 / 255, 5 / 255, 10 / 255, 25 / 255, 50 / 255],
    "m": [1, 5, 10, 20],
    "K": [1, 2, 3],
    "alpha": [0.0, 0.02, 0.1, 0.5],
    "masks": [(False, False), (True, False), (False, True), (True, True)],
    "components": [(False, False), (False, True), (True, False), (True, True)],
}


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    seed: int = 0
    corpus: dataset.CorpusSpec = field(default_factory=dataset.CorpusSpec)
    corpus_path: str | None = None
    train_fraction: float = 0.8
    zoo: list = field(default_factory=models.default_zoo_specs)
    target: str = models.DEFAULT_TARGET
    sources: list | None = None  # None: every zoo member except the target
    ridge: float = 1e-3
    attack: AttackConfig = field(default_factory=AttackConfig)
    method: str = "sega"
    beta: tuple = (100.0, 0.0)
    n_test: int | None = 64

    def validate(self) -> "ExperimentConfig":
        names = [s.name for s in self.zoo]
        if len(set(names)) != len(names):
            raise ConfigError("zoo model names must be unique")
        if self.target not in names:
            raise ConfigError(f"target {self.target!r} is not in the zoo {names}")
        srcs = self.source_names()
        if not srcs:
            raise ConfigError("no source models left after removing the target")
        if self.target in srcs:
            raise ConfigError(f"target {self.target!r} must not be one of the sources")
        missing = [s for s in srcs if s not in names]
        if missing:
            raise ConfigError(f"unknown source models {missing}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        lo, hi = self.beta[1], self.beta[0]
        if not hi > lo:
            raise ConfigError("beta must be given as [upper, lower] with upper > lower")
        if not lo <= self.attack.tau <= hi:
            raise ConfigError("tau must lie within the score range")
        return self

    def source_names(self) -> list:
        if self.sources is not None:
            return list(self.sources)
        return [s.name for s in self.zoo if s.name != self.target]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "corpus": self.corpus.to_dict(),
            "corpus_path": self.corpus_path,
            "train_fraction": self.train_fraction,
            "zoo": [s.to_dict() for s in self.zoo],
            "target": self.target,
            "sources": self.sources,
            "ridge": self.ridge,
            "attack": self.attack.to_dict(),
            "method": self.method,
            "beta": list(self.beta),
            "n_test": self.n_test,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        version = d.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            if "corpus" in d:
                d["corpus"] = dataset.CorpusSpec.from_dict(d["corpus"])
            if "zoo" in d:
                d["zoo"] = [models.ScorerSpec.from_dict(s) for s in d["zoo"]]
            if "attack" in d:
                d["attack"] = AttackConfig.from_dict(d["attack"])
            if "beta" in d:
                d["beta"] = tuple(d["beta"])
            return cls(**d).validate()
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc

    def dump(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def build_corpus(cfg: ExperimentConfig):
    spec = replace(cfg.corpus, seed=cfg.seed)
    corpus = dataset.generate_corpus(spec)
    train, test = dataset.split_corpus(corpus, cfg.train_fraction, cfg.seed)
    return spec, train, test


def load_or_build_corpus(cfg: ExperimentConfig):
    if cfg.corpus_path:
        return dataset.load_corpus(cfg.corpus_path)
    _, train, test = build_corpus(cfg)
    return train, test


def calibrate_zoo(cfg: ExperimentConfig, train) -> dict:
    x, y = dataset.stack(train)
    return {s.name: models.calibrate_scorer(models.build_scorer(s), x, y, cfg.ridge) for s in cfg.zoo}


def test_subset(cfg: ExperimentConfig, test) -> list:
    return list(test) if cfg.n_test is None else list(test)[: cfg.n_test]


@dataclass
class TransferRun:
    report: evaluation.EvalReport
    results: list
    before: np.ndarray
    after: np.ndarray
    ids: list


def attack_seed(seed: int) -> int:
    return derive_seed(seed, 0xA7)


def transfer_run(
    zoo: dict,
    target: str,
    sources: list,
    items,
    method: str,
    attack_cfg: AttackConfig,
    seed: int,
    beta=(100.0, 0.0),
    meta=None,
) -> TransferRun:
    """Attack ``items`` with the sources and score the held-out target."""
    src = [zoo[n] for n in sources]
    tgt = zoo[target]
    images = np.stack([it.image for it in items])
    results = attack_batch(method, src, images, attack_cfg, attack_seed(seed))
    adv = np.stack([r.adversarial for r in results])
    before, after = tgt.scores(images), tgt.scores(adv)
    percept = [perceptual_report(x, r.adversarial) for x, r in zip(images, results)]
    info = {
        "target": target,
        "sources": list(sources),
        "method": method,
        "config": attack_cfg.to_dict(),
        "seed": seed,
        "forward_passes": int(results[0].forward_passes),
    }
    info.update(meta or {})
    ids = [it.id for it in items]
    report = evaluation.build_report(before, after, percept, info, beta, ids)
    return TransferRun(report, results, before, after, ids)


def rotations(names) -> list:
    """Each zoo member in turn as target, the rest as sources."""
    return [(t, [n for n in names if n != t]) for t in names]


def _ablation_point(axis, value, base: AttackConfig, sources):
    if axis == "sigma":
        return replace(base, smoothing=replace(base.smoothing, sigma=float(value))), sources, [value * 255]
    if axis == "m":
        return replace(base, smoothing=replace(base.smoothing, m=int(value))), sources, [int(value)]
    if axis == "K":
        k = int(value)
        if not 1 <= k <= len(sources):
            raise ConfigError(f"K={k} outside 1..{len(sources)}")
        return base, sources[:k], [k]
    if axis == "alpha":
        return replace(base, alpha=float(value)), sources, [value]
    if axis == "masks":
        f, j = value
        return replace(base, magnitude_filter=bool(f), jnd_filter=bool(j)), sources, [int(f), int(j)]
    if axis == "components":
        # Gaussian smoothing on/off x ensembling on/off; ensembling off keeps the first source
        gauss, ens = value
        return replace(base, smooth=bool(gauss)), (sources if ens else sources[:1]), [int(gauss), int(ens)]
    raise ConfigError(f"unknown ablation axis {axis!r}; expected one of {ABLATION_AXES}")


AXIS_LABELS = {
    "sigma": ["sigma_255"],
    "m": ["m"],
    "K": ["K"],
    "alpha": ["alpha"],
    "masks": ["mask_f", "mask_jnd"],
    "components": ["gauss", "ensemble"],
}


def ablation(cfg: ExperimentConfig, zoo: dict, items, axis: str, grid=None, target=None) -> list:
    """One SEGA transfer evaluation per grid point; returns ``[(labels, report)]``."""
    if axis not in ABLATION_AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}; expected one of {ABLATION_AXES}")
    grid = DEFAULT_GRIDS[axis] if grid is None else list(grid)
    if not grid:
        raise ConfigError("ablation grid is empty")
    target = target or cfg.target
    if target == cfg.target:
        sources = cfg.source_names()
    else:
        sources = [n for n in zoo if n != target]
    rows = []
    for value in grid:
        acfg, srcs, labels = _ablation_point(axis, value, cfg.attack, sources)
        run = transfer_run(zoo, target, srcs, items, "sega", acfg, cfg.seed, cfg.beta)
        rows.append((labels, run.report))
    return rows


def ablation_csv(axis: str, rows) -> str:
    return evaluation.reports_to_csv(rows, AXIS_LABELS[axis])


def default_config(**overrides) -> ExperimentConfig:
    cfg = ExperimentConfig(**overrides)
    return cfg.validate()

