"""Seeded synthetic corpus with graded distortions and pseudo-MOS labels."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import filters
from .tensorcore import clamp_image, derive_seed, read_ppm, write_ppm

PATTERNS = ("ramp", "checkerboard", "blobs", "value-noise")
DISTORTIONS = ("noise", "blur")


@dataclass(frozen=True)
class CorpusSpec:
    """Cross product of base patterns x variants x distortions x levels.

    Level ``l`` of ``noise`` adds Gaussian noise of std ``noise_step * l``;
    level ``l`` of ``blur`` applies a ``(2l+1)``-wide box blur.  Every base
    pattern carries a fine detail layer of amplitude ``detail`` so that
    blurring is visible on all of them.
    """

    size: tuple[int, int, int] = (32, 32, 3)
    patterns: tuple[str, ...] = PATTERNS
    distortions: tuple[str, ...] = DISTORTIONS
    levels: tuple[int, ...] = (0, 1, 2, 3, 4)
    variants: int = 8
    kappa: dict = field(default_factory=lambda: {"noise": math.log(5) / 4, "blur": math.log(5) / 4})
    noise_step: float = 0.025
    detail: float = 0.16
    seed: int = 0

    def validate(self):
        if not self.patterns or not self.distortions or not self.levels or self.variants < 1:
            raise ValueError("corpus grids must be non-empty")
        if len(set(self.levels)) < 2:
            raise ValueError("at least two distortion levels are required")
        if min(self.levels) < 0:
            raise ValueError("distortion levels must be non-negative")
        for name in self.patterns:
            if name not in PATTERNS:
                raise ValueError(f"unknown pattern {name!r}")
        for name in self.distortions:
            if name not in DISTORTIONS:
                raise ValueError(f"unknown distortion {name!r}")

    def to_dict(self) -> dict:
        return {
            "size": list(self.size),
            "patterns": list(self.patterns),
            "distortions": list(self.distortions),
            "levels": list(self.levels),
            "variants": self.variants,
            "kappa": dict(self.kappa),
            "noise_step": self.noise_step,
            "detail": self.detail,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusSpec":
        d = dict(d)
        for key in ("size", "patterns", "distortions", "levels"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class LabeledImage:
    id: str
    image: np.ndarray
    mos: float
    pattern: str
    distortion: str
    level: int

    def provenance(self) -> dict:
        return {"pattern": self.pattern, "distortion": self.distortion, "level": self.level}


def pseudo_mos(level: int, kappa: float) -> float:
    return 100.0 * math.exp(-kappa * level)


def _colour_pair(rng):
    a = rng.uniform(0.15, 0.85, size=3)
    b = np.clip(a + rng.choice([-1, 1], size=3) * rng.uniform(0.1, 0.25, size=3), 0.05, 0.95)
    return a, b


def _value_noise(rng, h, w, cells):
    grid = rng.uniform(size=(cells + 1, cells + 1))
    ys = np.linspace(0, cells, h, endpoint=False)
    xs = np.linspace(0, cells, w, endpoint=False)
    y0, x0 = ys.astype(int), xs.astype(int)
    ty, tx = ys - y0, xs - x0
    ty, tx = ty * ty * (3 - 2 * ty), tx * tx * (3 - 2 * tx)
    g00 = grid[y0][:, x0]
    g01 = grid[y0][:, x0 + 1]
    g10 = grid[y0 + 1][:, x0]
    g11 = grid[y0 + 1][:, x0 + 1]
    top = g00 * (1 - tx) + g01 * tx
    bottom = g10 * (1 - tx) + g11 * tx
    return top * (1 - ty[:, None]) + bottom * ty[:, None]


def base_pattern(kind: str, rng, size) -> np.ndarray:
    h, w, c = size
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    a, b = _colour_pair(rng)
    if kind == "ramp":
        theta = rng.uniform(0, 2 * np.pi)
        t = (np.cos(theta) * xx + np.sin(theta) * yy)
        t = (t - t.min()) / (t.max() - t.min())
    elif kind == "checkerboard":
        # soft-edged squares: a product of clipped sinusoids
        period = rng.uniform(8.0, 16.0)
        iy, ix = np.mgrid[0:h, 0:w]
        wave = np.sin(2 * np.pi * iy / period) * np.sin(2 * np.pi * ix / period)
        t = 0.5 + 0.5 * np.clip(2.0 * wave, -1.0, 1.0)
    elif kind == "blobs":
        t = np.zeros((h, w))
        for _ in range(int(rng.integers(3, 7))):
            cy, cx = rng.uniform(0, 1, size=2)
            r = rng.uniform(0.08, 0.25)
            t += rng.choice([-1.0, 1.0]) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
        t = (t - t.min()) / (t.max() - t.min() + 1e-12)
    elif kind == "value-noise":
        t = _value_noise(rng, h, w, int(rng.integers(3, 7)))
        t = (t - t.min()) / (t.max() - t.min())
    else:
        raise ValueError(f"unknown pattern {kind!r}")
    img = a[None, None, :] * (1 - t[..., None]) + b[None, None, :] * t[..., None]
    return img[:, :, :c]


def _detail_layer(rng, size, amplitude):
    h, w, c = size
    cells = max(h, w) // 4
    layer = _value_noise(rng, h, w, cells) - 0.5
    return amplitude * 2.0 * layer[..., None] * np.ones(c)


def distort(img: np.ndarray, kind: str, level: int, rng, noise_step: float) -> np.ndarray:
    if level == 0:
        return img.copy()
    if kind == "noise":
        return clamp_image(img + rng.normal(scale=noise_step * level, size=img.shape))
    if kind == "blur":
        return filters.depthwise(img[None], filters.box_kernel(2 * level + 1))[0]
    raise ValueError(f"unknown distortion {kind!r}")


def generate_corpus(spec: CorpusSpec) -> list[LabeledImage]:
    spec.validate()
    out = []
    for p_idx, pattern in enumerate(spec.patterns):
        for v in range(spec.variants):
            rng = np.random.default_rng(derive_seed(spec.seed, p_idx, v))
            base = base_pattern(pattern, rng, spec.size)
            base = clamp_image(base + _detail_layer(rng, spec.size, spec.detail))
            for d_idx, distortion in enumerate(spec.distortions):
                for level in spec.levels:
                    drng = np.random.default_rng(derive_seed(spec.seed, p_idx, v, d_idx, level))
                    img = distort(base, distortion, level, drng, spec.noise_step)
                    img = np.rint(img * 255.0) / 255.0  # 8-bit, so the PPM round trip is exact
                    out.append(
                        LabeledImage(
                            id=f"{pattern}-{v:02d}-{distortion}-{level}",
                            image=img,
                            mos=pseudo_mos(level, spec.kappa[distortion]),
                            pattern=pattern,
                            distortion=distortion,
                            level=int(level),
                        )
                    )
    return out


def split_corpus(corpus, train_fraction: float = 0.8, seed: int = 0):
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train fraction must lie in (0, 1)")
    n = len(corpus)
    n_train = int(round(train_fraction * n))
    if n_train == 0 or n_train == n:
        raise ValueError(f"split of {n} items at {train_fraction} leaves an empty side")
    order = np.random.default_rng(derive_seed(seed, 0xC0)).permutation(n)
    train = [corpus[i] for i in sorted(order[:n_train])]
    test = [corpus[i] for i in sorted(order[n_train:])]
    return train, test


def stack(items) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([it.image for it in items]), np.array([it.mos for it in items])


# -- on-disk layout: <dir>/images/<id>.ppm + <dir>/manifest.json ----------


def save_corpus(directory, spec: CorpusSpec, train, test) -> Path:
    directory = Path(directory)
    img_dir = directory / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for split, items in (("train", train), ("test", test)):
        for it in items:
            write_ppm(img_dir / f"{it.id}.ppm", it.image)
            entries.append({"id": it.id, "split": split, "mos": it.mos, **it.provenance()})
    entries.sort(key=lambda e: e["id"])
    manifest = {"schema_version": 1, "corpus": spec.to_dict(), "images": entries}
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    tmp = directory / "manifest.json.tmp"
    tmp.write_text(text)
    tmp.replace(directory / "manifest.json")
    return directory / "manifest.json"


def load_corpus(directory):
    """Return ``(train, test)`` lists read back from a saved corpus."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    splits = {"train": [], "test": []}
    for e in manifest["images"]:
        img = read_ppm(directory / "images" / f"{e['id']}.ppm")
        c = manifest["corpus"]["size"][2]
        splits[e["split"]].append(
            LabeledImage(e["id"], img[:, :, :c], e["mos"], e["pattern"], e["distortion"], e["level"])
        )
    return splits["train"], splits["test"]


def manifest_digest(directory) -> str:
    return hashlib.sha256((Path(directory) / "manifest.json").read_bytes()).hexdigest()
