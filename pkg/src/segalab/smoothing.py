"""Monte-Carlo Gaussian smoothing, ensembled smoothed gradients, bound checks."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import gammaln

from .tensorcore import InvalidDimensionError, derive_seed, gaussian_block

DEFAULT_SIGMA = 10.0 / 255.0
DEFAULT_M = 10
_CHUNK_ELEMENTS = 1 << 21


@dataclass(frozen=True)
class SmoothingConfig:
    sigma: float = DEFAULT_SIGMA
    m: int = DEFAULT_M
    seed: int = 0
    shared_noise: bool = False  # reuse stream k=0 for every source model

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if self.m < 1:
            raise ValueError("m must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def _check_shape(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != tuple(model.input_shape):
        from .models import ShapeMismatchError

        raise ShapeMismatchError(
            f"{model.name} expects shape {tuple(model.input_shape)}, got {x.shape}"
        )
    return x


def _jittered(x, cfg: SmoothingConfig, k: int):
    """Yield consecutive chunks of ``x + sigma * u_i^k`` for i = 0..m-1."""
    d = x.size
    chunk = max(1, _CHUNK_ELEMENTS // d)
    for start in range(0, cfg.m, chunk):
        count = min(chunk, cfg.m - start)
        u = gaussian_block(cfg.seed, k, start, count, d).reshape((count,) + x.shape)
        yield x[None] + cfg.sigma * u


def _stream_index(cfg: SmoothingConfig, k: int) -> int:
    return 0 if cfg.shared_noise else k


def smoothed_score(model, x, cfg: SmoothingConfig, k: int = 0) -> float:
    """(1/m) sum_i f(x + sigma u_i), jittered points left unclamped."""
    x = _check_shape(model, x)
    total = 0.0
    for pts in _jittered(x, cfg, _stream_index(cfg, k)):
        for v in model.score_batch(pts):
            total += v
    return total / cfg.m


def _gradient_sum(model, x, cfg, k, with_sq=False):
    acc = np.zeros_like(x)
    sq = np.zeros_like(x) if with_sq else None
    for pts in _jittered(x, cfg, _stream_index(cfg, k)):
        grads = model.gradient_batch(pts)
        for g in grads:  # fixed sample order keeps the sum bitwise reproducible
            acc += g
            if with_sq:
                sq += g * g
    return acc, sq


def smoothed_gradient(model, x, cfg: SmoothingConfig, k: int = 0) -> np.ndarray:
    """(1/m) sum_i grad f(x + sigma u_i)."""
    x = _check_shape(model, x)
    acc, _ = _gradient_sum(model, x, cfg, k)
    return acc / cfg.m


@dataclass
class EnsembleGradient:
    gradient: np.ndarray
    models: list
    config: SmoothingConfig
    std_error: float = 0.0  # Monte-Carlo standard error of ||gradient||

    @property
    def forward_passes(self) -> int:
        return len(self.models) * self.config.m


def ensemble_gradient(models, x, cfg: SmoothingConfig) -> EnsembleGradient:
    """(1/(K m)) sum_k sum_i grad f^k(x + sigma u_i^k), reduced in (k, i) order."""
    models = list(models)
    if not models:
        raise ValueError("ensemble needs at least one model")
    shapes = {tuple(m.input_shape) for m in models}
    if len(shapes) > 1:
        from .models import ShapeMismatchError

        raise ShapeMismatchError(f"source models disagree on input shape: {sorted(shapes)}")
    x = _check_shape(models[0], x)
    total = np.zeros_like(x)
    var_total = 0.0
    for k, model in enumerate(models):
        acc, sq = _gradient_sum(model, x, cfg, k, with_sq=True)
        total += acc
        if cfg.m > 1:
            mean = acc / cfg.m
            var = np.maximum(sq / cfg.m - mean * mean, 0.0) * cfg.m / (cfg.m - 1)
            var_total += float(var.sum()) / cfg.m
    K = len(models)
    se = math.sqrt(var_total) / K
    return EnsembleGradient(total / (K * cfg.m), [m.name for m in models], cfg, se)


def expected_norm(d: int) -> float:
    """E||u|| for u ~ N(0, I_d): sqrt(2) Gamma((d+1)/2) / Gamma(d/2)."""
    if d < 1:
        raise InvalidDimensionError("dimension must be >= 1")
    return math.sqrt(2.0) * math.exp(gammaln((d + 1) / 2.0) - gammaln(d / 2.0))


def _probe_points(x, sigma, count, seed, k):
    u = gaussian_block(seed, k, 0, count, x.size).reshape((count,) + x.shape)
    return x[None] + sigma * u


def empirical_score_lipschitz(model, x, radius, n_pairs=64, seed=0) -> float:
    """max |f(a) - f(b)| / ||a - b|| over seeded pairs around ``x``."""
    x = np.asarray(x, dtype=np.float64)
    s = derive_seed(seed, 0x11)
    a = _probe_points(x, radius, n_pairs, s, 0)
    b = _probe_points(x, radius, n_pairs, s, 1)
    fa, fb = model.score_batch(a), model.score_batch(b)
    dist = np.sqrt(((a - b) ** 2).reshape(n_pairs, -1).sum(axis=1))
    return float(np.max(np.abs(fa - fb) / dist))


def empirical_gradient_lipschitz(model, x, radius, n_pairs=64, seed=0) -> float:
    """max ||grad f(a) - grad f(b)|| / ||a - b|| over seeded pairs around ``x``.

    Half the pairs are independent points in the ball, half are short hops
    (length ``radius / 100``) from those points, so both the spread of the
    gradient and its local curvature enter the estimate.
    """
    x = np.asarray(x, dtype=np.float64)
    s = derive_seed(seed, 0x12)
    a = _probe_points(x, radius, n_pairs, s, 0)
    far = _probe_points(x, radius, n_pairs, s, 1)
    hop = a + (radius / 100.0) * gaussian_block(s, 2, 0, n_pairs, x.size).reshape(a.shape)
    ga = model.gradient_batch(a)
    best = 0.0
    for b in (far, hop):
        gb = model.gradient_batch(b)
        num = np.sqrt(((ga - gb) ** 2).reshape(n_pairs, -1).sum(axis=1))
        dist = np.sqrt(((a - b) ** 2).reshape(n_pairs, -1).sum(axis=1))
        best = max(best, float(np.max(num / dist)))
    return best


def theorem1_check(model, x, sigmas, m: int, seed: int = 0, n_pairs: int = 64) -> dict:
    """Gap |f_sigma(x) - f(x)| per sigma against L * sigma * E||u||.

    ``L`` is an empirical Lipschitz constant of the score over seeded pairs
    within the largest sigma of the grid.  A row is flagged when the gap
    exceeds the bound by more than three Monte-Carlo standard errors.
    """
    sigmas = [float(s) for s in sigmas]
    if any(b >= a for a, b in zip(sigmas, sigmas[1:])):
        raise ValueError("sigma grid must be strictly decreasing")
    x = _check_shape(model, x)
    f0 = float(model.score_batch(x[None])[0])
    d = x.size
    en = expected_norm(d)
    lip = empirical_score_lipschitz(model, x, sigmas[0], n_pairs, seed)
    rows = []
    for sigma in sigmas:
        cfg = SmoothingConfig(sigma=sigma, m=m, seed=seed)
        total = 0.0
        sq = 0.0
        for pts in _jittered(x, cfg, 0):
            for v in model.score_batch(pts):
                total += v
                sq += v * v
        mean = total / m
        var = max(sq / m - mean * mean, 0.0) * m / max(m - 1, 1)
        se = math.sqrt(var / m)
        gap = abs(mean - f0)
        bound = lip * sigma * en
        rows.append(
            {
                "sigma": sigma,
                "smoothed": mean,
                "score": f0,
                "gap": gap,
                "bound": bound,
                "std_error": se,
                "violation": bool(gap > bound + 3.0 * se),
            }
        )
    return {"lipschitz": lip, "dimension": d, "m": m, "rows": rows,
            "passed": not any(r["violation"] for r in rows)}


@dataclass
class BoundReport:
    lipschitz: float
    score_gap: float
    dimension: int
    sigma: float
    bound: float
    observed: float
    std_error: float
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def theorem2_check(sources, target, x, cfg: SmoothingConfig, n_probes: int = 64) -> BoundReport:
    """Compare ||g_hat(x) - grad h(x)|| with (L sigma + C / sigma) E||u||.

    ``L`` is estimated from gradient differences of the target over seeded
    pairs inside the smoothing radius, ``C`` as the largest source-vs-target
    score gap over ``x`` and seeded probe points around it.
    """
    sources = list(sources)
    x = _check_shape(target, x)
    ens = ensemble_gradient(sources, x, cfg)
    true_grad = target.gradient_batch(x[None])[0]
    observed = float(np.linalg.norm((ens.gradient - true_grad).ravel()))
    lip = empirical_gradient_lipschitz(target, x, cfg.sigma, n_probes, cfg.seed)
    pts = np.concatenate(
        [x[None], _probe_points(x, cfg.sigma, n_probes, derive_seed(cfg.seed, 0x13), 0)]
    )
    h_vals = target.score_batch(pts)
    gap = max(float(np.max(np.abs(src.score_batch(pts) - h_vals))) for src in sources)
    d = x.size
    bound = (lip * cfg.sigma + gap / cfg.sigma) * expected_norm(d)
    return BoundReport(
        lipschitz=lip,
        score_gap=gap,
        dimension=d,
        sigma=cfg.sigma,
        bound=bound,
        observed=observed,
        std_error=ens.std_error,
        passed=observed <= bound + 3.0 * ens.std_error,
    )
