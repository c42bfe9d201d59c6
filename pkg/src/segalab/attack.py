"""Smoothed-ensemble sign attack with perceptual masks, plus FGSM and perturbation averaging baselines."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .perceptual import JndParams, jnd_map
from .smoothing import SmoothingConfig, ensemble_gradient
from .tensorcore import clamp_image, derive_seed, read_segt, write_ppm, write_segt

MASK_MODES = ("absolute", "literal", "relative")
DIRECTIONS = ("auto", "increase", "decrease")
METHODS = ("sega", "fgsm", "avg-ensemble")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.03
    alpha: float = 0.02
    mask_mode: str = "absolute"
    direction: str = "auto"
    tau: float = 50.0
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    jnd: JndParams = field(default_factory=JndParams)
    smooth: bool = True  # False: plain gradients at x, one pass per source
    magnitude_filter: bool = True
    jnd_filter: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.mask_mode not in MASK_MODES:
            raise ValueError(f"mask_mode must be one of {MASK_MODES}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "mask_mode": self.mask_mode,
            "direction": self.direction,
            "tau": self.tau,
            "smoothing": self.smoothing.to_dict(),
            "jnd": self.jnd.__dict__.copy(),
            "smooth": self.smooth,
            "magnitude_filter": self.magnitude_filter,
            "jnd_filter": self.jnd_filter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        d = dict(d)
        if "smoothing" in d:
            d["smoothing"] = SmoothingConfig(**d["smoothing"])
        if "jnd" in d:
            d["jnd"] = JndParams(**d["jnd"])
        return cls(**d)


@dataclass
class AttackResult:
    adversarial: np.ndarray
    delta: np.ndarray  # signed step before clamping
    direction: str
    forward_passes: int
    mask_filter: np.ndarray | None = None
    mask_jnd: np.ndarray | None = None
    gradient: np.ndarray | None = None
    source_shifts: dict = field(default_factory=dict)

    def metadata(self) -> dict:
        return {
            "direction": self.direction,
            "forward_passes": self.forward_passes,
            "source_shifts": {k: float(v) for k, v in sorted(self.source_shifts.items())},
        }

    def save(self, directory, stem: str) -> None:
        """Write ``<stem>.adv.{segt,ppm}``, ``.delta.segt``, mask files and ``.meta.json``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_segt(d / f"{stem}.adv.segt", self.adversarial)
        write_ppm(d / f"{stem}.adv.ppm", self.adversarial)
        write_segt(d / f"{stem}.delta.segt", self.delta)
        if self.mask_filter is not None:
            write_segt(d / f"{stem}.mask_f.segt", self.mask_filter.astype(np.float32))
        if self.mask_jnd is not None:
            write_segt(d / f"{stem}.mask_jnd.segt", self.mask_jnd.astype(np.float32))
        text = json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n"
        (d / f"{stem}.meta.json").write_text(text)

    @classmethod
    def load(cls, directory, stem: str) -> "AttackResult":
        d = Path(directory)
        meta = json.loads((d / f"{stem}.meta.json").read_text())

        def mask(name):
            p = d / f"{stem}.{name}.segt"
            return read_segt(p).astype(bool) if p.exists() else None

        return cls(
            adversarial=read_segt(d / f"{stem}.adv.segt").astype(np.float64),
            delta=read_segt(d / f"{stem}.delta.segt").astype(np.float64),
            direction=meta["direction"],
            forward_passes=meta["forward_passes"],
            mask_filter=mask("mask_f"),
            mask_jnd=mask("mask_jnd"),
            source_shifts=meta["source_shifts"],
        )


def magnitude_mask(g, alpha: float, mode: str = "absolute") -> np.ndarray:
    """Keep gradient components judged important enough to perturb.

    ``literal`` keeps ``g >= alpha``; ``absolute`` keeps ``|g| >= alpha``;
    ``relative`` keeps ``|g| >= alpha * max|g|``.
    """
    g = np.asarray(g, dtype=np.float64)
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if mode == "literal":
        return g >= alpha
    if mode == "absolute":
        return np.abs(g) >= alpha
    if mode == "relative":
        return np.abs(g) >= alpha * np.abs(g).max()
    raise ValueError(f"unknown mask mode {mode!r}")


def jnd_mask(jnd, epsilon: float) -> np.ndarray:
    """Pixels whose tolerance reaches the attack strength: ``JND >= epsilon``."""
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    return np.asarray(jnd) >= epsilon


def choose_direction(sources, x, policy: str = "auto", tau: float = 50.0) -> str:
    """Decrease when the mean source score exceeds ``tau``, else increase."""
    if policy == "increase" or policy == "decrease":
        return policy
    if policy != "auto":
        raise ValueError(f"unknown direction policy {policy!r}")
    mean = np.mean([m.score(x) for m in sources])
    return "decrease" if mean > tau else "increase"


def _sign(direction: str) -> float:
    return -1.0 if direction == "decrease" else 1.0


def _shifts(sources, x, x_adv) -> dict:
    return {m.name: m.score(x_adv) - m.score(x) for m in sources}


def sega_attack(sources, x, cfg: AttackConfig | None = None) -> AttackResult:
    cfg = cfg or AttackConfig()
    sources = list(sources)
    if not sources:
        raise ValueError("SEGA needs at least one source model")
    x = np.asarray(x, dtype=np.float64)
    direction = choose_direction(sources, x, cfg.direction, cfg.tau)
    if cfg.smooth:
        ens = ensemble_gradient(sources, x, cfg.smoothing)
        g, passes = ens.gradient, ens.forward_passes
    else:
        g = sum(m.gradient(x) for m in sources) / len(sources)
        passes = len(sources)
    keep = np.ones(x.shape, dtype=bool)
    m_filter = m_jnd = None
    if cfg.magnitude_filter:
        m_filter = magnitude_mask(g, cfg.alpha, cfg.mask_mode)
        keep &= m_filter
    if cfg.jnd_filter:
        m_jnd = np.broadcast_to(jnd_mask(jnd_map(x, cfg.jnd), cfg.epsilon)[:, :, None], x.shape)
        keep &= m_jnd
    delta = _sign(direction) * keep * (cfg.epsilon * np.sign(g))
    x_adv = clamp_image(x + delta)
    return AttackResult(
        adversarial=x_adv,
        delta=delta,
        direction=direction,
        forward_passes=passes,
        mask_filter=m_filter,
        mask_jnd=None if m_jnd is None else np.array(m_jnd),
        gradient=g,
        source_shifts=_shifts(sources, x, x_adv),
    )


def fgsm_attack(source, x, epsilon: float = 0.03, direction: str = "increase") -> AttackResult:
    """One signed step on the raw source gradient, no masks."""
    if direction not in ("increase", "decrease"):
        raise ValueError("FGSM direction must be 'increase' or 'decrease'")
    x = np.asarray(x, dtype=np.float64)
    g = source.gradient(x)
    delta = _sign(direction) * epsilon * np.sign(g)
    x_adv = clamp_image(x + delta)
    return AttackResult(
        adversarial=x_adv,
        delta=delta,
        direction=direction,
        forward_passes=1,
        gradient=g,
        source_shifts=_shifts([source], x, x_adv),
    )


def averaged_ensemble_attack(
    sources, x, epsilon: float = 0.03, direction: str = "increase", base: str = "fgsm"
) -> AttackResult:
    """Average the per-source FGSM perturbations."""
    sources = list(sources)
    if not sources:
        raise ValueError("averaged ensemble needs at least one source model")
    if base != "fgsm":
        raise ValueError("only the fgsm base attack is supported")
    x = np.asarray(x, dtype=np.float64)
    total = np.zeros_like(x)
    for m in sources:
        total += fgsm_attack(m, x, epsilon, direction).delta
    delta = total / len(sources)
    x_adv = clamp_image(x + delta)
    return AttackResult(
        adversarial=x_adv,
        delta=delta,
        direction=direction,
        forward_passes=len(sources),
        source_shifts=_shifts(sources, x, x_adv),
    )


def run_attack(method: str, sources, x, cfg: AttackConfig, seed: int) -> AttackResult:
    """Dispatch one image; ``seed`` is that image's derived seed."""
    if method == "sega":
        cfg = replace(cfg, smoothing=replace(cfg.smoothing, seed=seed))
        return sega_attack(sources, x, cfg)
    direction = choose_direction(sources, x, cfg.direction, cfg.tau)
    if method == "fgsm":
        return fgsm_attack(sources[0], x, cfg.epsilon, direction)
    if method == "avg-ensemble":
        return averaged_ensemble_attack(sources, x, cfg.epsilon, direction)
    raise ValueError(f"unknown attack method {method!r}; expected one of {METHODS}")


def attack_batch(method: str, sources, images, cfg: AttackConfig, seed: int = 0) -> list:
    """Attack every image with its own seed ``derive_seed(seed, index)``."""
    return [
        run_attack(method, sources, img, cfg, derive_seed(seed, i))
        for i, img in enumerate(images)
    ]
