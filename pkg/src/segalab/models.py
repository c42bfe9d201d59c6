"""Differentiable no-reference quality scorers.

Every scorer maps a batch of images ``(N, H, W, C)`` to scores and returns
the exact input gradient.  The learned part is always a linear head on top
of pooled features, which :func:`calibrate_scorer` refits in closed form.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import filters
from .tensorcore import derive_seed

KINDS = ("smooth-pool", "conv", "band-energy")
DEFAULT_SHAPE = (32, 32, 3)
DEFAULT_SCORE_RANGE = (0.0, 100.0)


class ShapeMismatchError(ValueError):
    pass


class CalibrationError(ValueError):
    pass


def softplus(z):
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


class ScoringModel:
    """Base class: subclasses provide ``score_batch`` and ``gradient_batch``."""

    name: str = "model"
    input_shape: tuple[int, ...] = DEFAULT_SHAPE
    score_range: tuple[float, float] = DEFAULT_SCORE_RANGE

    def _batch(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.shape == tuple(self.input_shape)
        if single:
            x = x[None]
        if x.shape[1:] != tuple(self.input_shape):
            raise ShapeMismatchError(
                f"{self.name} expects inputs of shape {tuple(self.input_shape)}, got {x.shape}"
            )
        return x, single

    def score_batch(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gradient_batch(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def score(self, x) -> float:
        xb, _ = self._batch(x)
        return float(self.score_batch(xb)[0])

    def gradient(self, x) -> np.ndarray:
        xb, single = self._batch(x)
        g = self.gradient_batch(xb)
        return g[0] if single else g

    def scores(self, xs) -> np.ndarray:
        xb, _ = self._batch(xs)
        return self.score_batch(xb)

    @property
    def dim(self) -> int:
        return int(np.prod(self.input_shape))


class ConstantScorer(ScoringModel):
    def __init__(self, value: float, input_shape=DEFAULT_SHAPE, name="constant"):
        self.value = float(value)
        self.input_shape = tuple(input_shape)
        self.name = name

    def score_batch(self, x):
        return np.full(x.shape[0], self.value)

    def gradient_batch(self, x):
        return np.zeros_like(x)


class LinearScorer(ScoringModel):
    """score = <w, x> + b."""

    def __init__(self, weights, bias: float = 0.0, name="linear"):
        self.weights = np.array(weights, dtype=np.float64)
        self.weights.setflags(write=False)
        self.bias = float(bias)
        self.input_shape = self.weights.shape
        self.name = name

    def score_batch(self, x):
        return np.tensordot(x, self.weights, axes=self.weights.ndim) + self.bias

    def gradient_batch(self, x):
        return np.broadcast_to(self.weights, x.shape).copy()


class QuadraticScorer(ScoringModel):
    """score = sum(x**2); on a one-pixel image this is the scalar x**2."""

    def __init__(self, input_shape=(1, 1, 1), name="quadratic"):
        self.input_shape = tuple(input_shape)
        self.name = name

    def score_batch(self, x):
        return np.sum(x * x, axis=tuple(range(1, x.ndim)))

    def gradient_batch(self, x):
        return 2.0 * x


@dataclass(frozen=True)
class ScorerSpec:
    """Everything needed to rebuild a zoo scorer deterministically."""

    kind: str
    seed: int = 0
    name: str = ""
    input_shape: tuple[int, int, int] = DEFAULT_SHAPE
    n_kernels: int = 8
    kernel_size: int = 3
    delta: float = 1e-6
    gain: float = 16.0
    head: tuple[float, ...] | None = None
    bias: float = 0.0
    score_range: tuple[float, float] = DEFAULT_SCORE_RANGE
    ripple: float = 0.0  # per-pixel gradient amplitude of the idiosyncratic term
    ripple_freq: float = 100.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        d["score_range"] = list(self.score_range)
        d["head"] = None if self.head is None else list(self.head)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScorerSpec":
        d = dict(d)
        d["input_shape"] = tuple(d.get("input_shape", DEFAULT_SHAPE))
        d["score_range"] = tuple(d.get("score_range", DEFAULT_SCORE_RANGE))
        if d.get("head") is not None:
            d["head"] = tuple(float(v) for v in d["head"])
        return cls(**d)


class FeatureScorer(ScoringModel):
    """Linear head over pooled smooth features."""

    n_features: int

    def __init__(self, spec: ScorerSpec):
        if spec.delta <= 0:
            raise ValueError("smoothing constant delta must be > 0")
        self.spec = spec
        self.name = spec.name or f"{spec.kind}-{spec.seed}"
        self.input_shape = tuple(spec.input_shape)
        self.score_range = tuple(spec.score_range)
        rng = np.random.default_rng(spec.seed)
        self._init_params(rng)
        if spec.head is None:
            head = self._default_head(rng)
        else:
            head = np.asarray(spec.head, dtype=np.float64)
            if head.shape != (self.n_features,):
                raise ValueError(f"{spec.kind} head needs {self.n_features} weights")
        self.head = head
        self.head.setflags(write=False)
        self.bias = float(spec.bias)
        if spec.ripple < 0 or spec.ripple_freq <= 0:
            raise ValueError("ripple must be >= 0 and ripple_freq > 0")
        # A seeded sinusoid per pixel: tiny in score, but of gradient size
        # comparable to the features, and private to this model.
        prng = np.random.default_rng(derive_seed(spec.seed, 0x5EED))
        self._phase = prng.uniform(0.0, 2.0 * np.pi, size=self.input_shape)

    # subclass hooks
    def _init_params(self, rng):
        pass

    def _default_head(self, rng):
        return rng.normal(size=self.n_features)

    def features(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def features_vjp(self, x: np.ndarray, gf: np.ndarray) -> np.ndarray:
        """Pull back feature cotangents ``gf`` (N, F) to image space."""
        raise NotImplementedError

    def score_batch(self, x):
        out = self.features(x) @ self.head + self.bias
        if self.spec.ripple:
            w, a = self.spec.ripple_freq, self.spec.ripple / self.spec.ripple_freq
            out = out + a * np.sin(w * x + self._phase).reshape(x.shape[0], -1).sum(axis=1)
        return out

    def gradient_batch(self, x):
        gf = np.broadcast_to(self.head, (x.shape[0], self.n_features))
        g = self.features_vjp(x, gf)
        if self.spec.ripple:
            g = g + self.spec.ripple * np.cos(self.spec.ripple_freq * x + self._phase)
        return g

    def with_head(self, head, bias) -> "FeatureScorer":
        spec = replace(self.spec, head=tuple(float(v) for v in head), bias=float(bias))
        return build_scorer(spec)


class SmoothPoolScorer(FeatureScorer):
    """Features: mean intensity, smoothed std, mean smoothed gradient magnitude."""

    n_features = 3

    def _default_head(self, rng):
        return np.array([1.0, 0.0, 0.0])

    def _parts(self, x):
        d = self.dim
        mean = x.mean(axis=(1, 2, 3))
        centred = x - mean[:, None, None, None]
        std = np.sqrt((centred**2).sum(axis=(1, 2, 3)) / d + self.spec.delta)
        gh = filters.depthwise(x, filters.SOBEL_H)
        gv = filters.depthwise(x, filters.SOBEL_V)
        mag = np.sqrt(gh * gh + gv * gv + self.spec.delta)
        return mean, centred, std, gh, gv, mag

    def features(self, x):
        mean, _, std, _, _, mag = self._parts(x)
        return np.stack([mean, std, mag.mean(axis=(1, 2, 3))], axis=1)

    def features_vjp(self, x, gf):
        d = self.dim
        _, centred, std, gh, gv, mag = self._parts(x)
        out = np.broadcast_to((gf[:, 0] / d)[:, None, None, None], x.shape).copy()
        out += (gf[:, 1] / (d * std))[:, None, None, None] * centred
        scale = (gf[:, 2] / d)[:, None, None, None] / mag
        out += filters.depthwise_adjoint(scale * gh, filters.SOBEL_H)
        out += filters.depthwise_adjoint(scale * gv, filters.SOBEL_V)
        return out


class ConvScorer(FeatureScorer):
    """One layer of seeded fixed kernels, softplus, global average pooling.

    Kernels are zero-mean per input channel, so features respond to local
    structure rather than brightness.  ``gain`` scales the kernels and hence
    how sharply the softplus gates switch.
    """

    def _init_params(self, rng):
        s, c, n = self.spec.kernel_size, self.input_shape[2], self.spec.n_kernels
        if s % 2 == 0:
            raise ValueError("kernel_size must be odd")
        k = rng.normal(size=(s, s, c, n))
        k -= k.mean(axis=(0, 1), keepdims=True)
        self.kernels = k * self.spec.gain / np.sqrt(s * s * c)
        self.kernel_bias = rng.normal(scale=0.5, size=n)
        self.n_features = n

    def _default_head(self, rng):
        return rng.normal(size=self.n_features) / np.sqrt(self.n_features)

    def features(self, x):
        z = filters.correlate(x, self.kernels) + self.kernel_bias
        return softplus(z).mean(axis=(1, 2))

    def features_vjp(self, x, gf):
        h, w = self.input_shape[:2]
        z = filters.correlate(x, self.kernels) + self.kernel_bias
        gz = expit(z) * (gf / (h * w))[:, None, None, :]
        return filters.correlate_adjoint(gz, self.kernels)


class BandEnergyScorer(FeatureScorer):
    """Softplus of band RMS energies from an undecimated Laplacian pyramid."""

    def _init_params(self, rng):
        self.n_features = self.spec.n_kernels
        self.offsets = rng.uniform(0.5, 1.5, size=self.n_features)

    def _default_head(self, rng):
        return rng.normal(size=self.n_features) / np.sqrt(self.n_features)

    def _bands(self, x):
        bands, low = [], x
        for level in range(self.n_features):
            blurred = filters.depthwise(low, filters.BINOMIAL5, dilation=2**level)
            bands.append(low - blurred)
            low = blurred
        return bands

    def _pre(self, bands):
        d = self.dim
        rms = np.stack(
            [np.sqrt((b * b).sum(axis=(1, 2, 3)) / d + self.spec.delta) for b in bands], axis=1
        )
        return rms, self.spec.gain * rms * 10.0 - self.offsets

    def features(self, x):
        _, pre = self._pre(self._bands(x))
        return softplus(pre)

    def features_vjp(self, x, gf):
        d = self.dim
        bands = self._bands(x)
        rms, pre = self._pre(bands)
        g_rms = gf * expit(pre) * self.spec.gain * 10.0
        g_band = [(g_rms[:, i] / (d * rms[:, i]))[:, None, None, None] * b for i, b in enumerate(bands)]
        # reverse through low_{l+1} = blur_l(low_l), band_l = low_l - low_{l+1}
        g_low = np.zeros_like(x)
        for level in reversed(range(self.n_features)):
            g_next = g_low - g_band[level]
            g_low = g_band[level] + filters.depthwise_adjoint(
                g_next, filters.BINOMIAL5, dilation=2**level
            )
        return g_low


_BUILDERS = {
    "smooth-pool": SmoothPoolScorer,
    "conv": ConvScorer,
    "band-energy": BandEnergyScorer,
}


def build_scorer(spec: ScorerSpec) -> FeatureScorer:
    if spec.kind not in _BUILDERS:
        raise ValueError(f"unknown scorer kind {spec.kind!r}; expected one of {KINDS}")
    return _BUILDERS[spec.kind](spec)


def calibrate_scorer(model: FeatureScorer, images, labels, lam: float = 1e-3, active=None):
    """Refit the linear head by ridge regression onto ``labels``.

    The bias is unpenalised.  ``active`` restricts the refit to a subset of
    feature indices; the remaining head weights are set to zero.
    """
    x, _ = model._batch(images)
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != (x.shape[0],):
        raise ValueError("one label per image is required")
    if np.unique(y).size < 2:
        raise CalibrationError("calibration needs at least two distinct labels")
    if lam < 0:
        raise ValueError("ridge penalty must be >= 0")
    idx = np.arange(model.n_features) if active is None else np.asarray(active, dtype=int)
    phi = model.features(x)[:, idx]
    phi_mean, y_mean = phi.mean(axis=0), y.mean()
    pc, yc = phi - phi_mean, y - y_mean
    gram = pc.T @ pc + lam * np.eye(idx.size)
    if np.linalg.matrix_rank(gram) < idx.size or np.linalg.cond(gram) > 1e14:
        raise CalibrationError(
            "degenerate design matrix in head refit; raise the ridge penalty lam"
        )
    coef = np.linalg.solve(gram, pc.T @ yc)
    head = np.zeros(model.n_features)
    head[idx] = coef
    bias = y_mean - phi_mean @ coef
    return model.with_head(head, bias)


def save_scorer(model: FeatureScorer, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.spec.to_dict(), indent=2, sort_keys=True) + "\n")


def load_scorer(path) -> FeatureScorer:
    return build_scorer(ScorerSpec.from_dict(json.loads(Path(path).read_text())))


def default_zoo_specs(input_shape=DEFAULT_SHAPE, ripple: float = 2.0) -> list[ScorerSpec]:
    """The four stand-in scorers used by the default experiments.

    ``band`` is the default held-out target; the three conv models are sources.
    """
    shape = tuple(input_shape)
    return [
        ScorerSpec("conv", seed=202, name="conv-a", input_shape=shape, n_kernels=8, ripple=ripple),
        ScorerSpec("conv", seed=303, name="conv-b", input_shape=shape, n_kernels=12, ripple=ripple),
        ScorerSpec(
            "conv", seed=404, name="conv-c", input_shape=shape, n_kernels=24, gain=24.0, ripple=ripple
        ),
        ScorerSpec("band-energy", seed=505, name="band", input_shape=shape, n_kernels=4, ripple=ripple),
    ]


DEFAULT_TARGET = "band"
