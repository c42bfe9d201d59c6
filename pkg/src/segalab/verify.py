"""Finite-difference gradient checks and a deliberate fault for testing them."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .models import LinearScorer, QuadraticScorer, ScoringModel, build_scorer
from .smoothing import ensemble_gradient, expected_norm, theorem1_check, theorem2_check
from .tensorcore import derive_seed


def fd_gradient(model, x, h: float = 1e-4, coords=None) -> np.ndarray:
    """Central differences at the flat indices ``coords`` (all when None)."""
    x = np.asarray(x, dtype=np.float64)
    flat = x.ravel()
    idx = np.arange(flat.size) if coords is None else np.asarray(coords)
    out = np.empty(idx.size)
    chunk = 256
    for s in range(0, idx.size, chunk):
        part = idx[s : s + chunk]
        pts = np.repeat(flat[None], 2 * part.size, axis=0)
        pts[np.arange(part.size), part] += h
        pts[part.size + np.arange(part.size), part] -= h
        f = model.score_batch(pts.reshape((-1,) + x.shape))
        out[s : s + part.size] = (f[: part.size] - f[part.size :]) / (2 * h)
    return out


@dataclass
class GradCheck:
    model: str
    probes: int
    coords: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def gradient_check(model, n_probes=20, seed=0, h=1e-4, n_coords=None, tol=1e-4) -> GradCheck:
    """Compare analytic and central-difference gradients on seeded probes.

    Probes are uniform images in [0.05, 0.95].  With ``n_coords`` set only a
    seeded subset of coordinates is differenced per probe.  The error of a
    probe is ``||g_fd - g|| / ||g||`` over the checked coordinates.
    """
    rng = np.random.default_rng(derive_seed(seed, 0xFD))
    d = int(np.prod(model.input_shape))
    worst = 0.0
    n_checked = 0
    for _ in range(n_probes):
        x = rng.uniform(0.05, 0.95, size=model.input_shape)
        coords = None if n_coords is None or n_coords >= d else rng.choice(d, n_coords, replace=False)
        g = model.gradient(x).ravel()
        g = g if coords is None else g[coords]
        fd = fd_gradient(model, x, h, coords)
        err = np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1e-12)
        worst = max(worst, float(err))
        n_checked = g.size
    return GradCheck(getattr(model, "name", "model"), n_probes, n_checked, worst, tol)


class CorruptedGradient(ScoringModel):
    """Wraps a scorer and perturbs its analytic gradient; scores are untouched.

    Used to confirm that the checks above actually catch a wrong gradient.
    """

    def __init__(self, inner, scale: float = 1.0 + 1e-2, flip_every: int = 0):
        self.inner = inner
        self.name = f"{inner.name}+fault"
        self.input_shape = inner.input_shape
        self.score_range = inner.score_range
        self.scale = scale
        self.flip_every = flip_every

    def score_batch(self, x):
        return self.inner.score_batch(x)

    def gradient_batch(self, x):
        g = self.inner.gradient_batch(x) * self.scale
        if self.flip_every:
            flat = g.reshape(g.shape[0], -1)
            flat[:, :: self.flip_every] *= -1.0
        return g


def expected_norm_mc(d: int, n: int = 100_000, seed: int = 0) -> float:
    """Monte-Carlo mean of ||u||, drawn with numpy's own generator as an independent check."""
    rng = np.random.default_rng(derive_seed(seed, 0xE1, d))
    chunk = max(1, (1 << 22) // d)
    total = 0.0
    for s in range(0, n, chunk):
        c = min(chunk, n - s)
        total += float(np.linalg.norm(rng.standard_normal((c, d)), axis=1).sum())
    return total / n


def norm_table(dims=(1, 2, 3, 3072), n=100_000, seed=0, tol=0.015) -> list:
    rows = []
    for d in dims:
        closed = expected_norm(d)
        mc = expected_norm_mc(d, n, seed)
        rel = abs(mc - closed) / closed
        rows.append({"d": d, "closed_form": closed, "monte_carlo": mc, "rel_error": rel, "passed": rel <= tol})
    return rows


def quadratic_convergence(sigmas=(0.2, 0.1, 0.05), m=100_000, seed=0) -> dict:
    """Smoothing gap of f(x)=x^2 at x=0, which should equal sigma^2."""
    res = theorem1_check(QuadraticScorer(), np.zeros((1, 1, 1)), sigmas, m, seed)
    for r in res["rows"]:
        r["rel_to_sigma2"] = abs(r["gap"] - r["sigma"] ** 2) / r["sigma"] ** 2
    gaps = [r["gap"] for r in res["rows"]]
    res["gap_ratios"] = [float(a / b) for a, b in zip(gaps, gaps[1:])]
    res["sigma2_ok"] = all(r["rel_to_sigma2"] <= 0.10 for r in res["rows"])
    res["ratio_ok"] = all(abs(q - 4.0) <= 0.6 for q in res["gap_ratios"])
    return res


def linear_scenario(shape=(8, 8, 3), k=3, seed=0):
    """Linear sources and target with correlated weights."""
    rng = np.random.default_rng(derive_seed(seed, 0x11E))
    base = rng.normal(size=shape)
    mk = lambda i: LinearScorer(base + 0.5 * rng.normal(size=shape), 50.0, f"linear-{i}")  # noqa: E731
    sources = [mk(i) for i in range(k)]
    return sources, mk("target")


def theorem2_suite(zoo: dict, target: str, sources: list, x, cfg, seed=0) -> dict:
    """Bound checks for: the target as its own source, all-linear models, the zoo."""
    out = {}
    out["self"] = theorem2_check([zoo[target]], zoo[target], x, cfg).to_dict()
    lin_src, lin_tgt = linear_scenario(seed=seed)
    xl = np.full(lin_tgt.input_shape, 0.5)
    rep = theorem2_check(lin_src, lin_tgt, xl, cfg).to_dict()
    # with linear models the smoothed gradient is the mean weight vector exactly
    g = ensemble_gradient(lin_src, xl, cfg).gradient
    w_mean = sum(s.weights for s in lin_src) / len(lin_src)
    rep["exact_max_abs_error"] = float(np.max(np.abs(g - w_mean)))
    rep["exact_observed"] = float(np.linalg.norm((w_mean - lin_tgt.weights).ravel()))
    out["linear"] = rep
    out["zoo"] = theorem2_check([zoo[n] for n in sources], zoo[target], x, cfg).to_dict()
    return out


def run_verification(zoo: dict, target: str, sources: list, x, cfg, seed=0, fault=False,
                     probes=20, fd_shape=(8, 8, 3)) -> dict:
    """Everything ``segalab verify`` reports; ``passed`` is the conjunction."""
    grads = []
    for name, model in zoo.items():
        small = build_scorer(replace(model.spec, input_shape=tuple(fd_shape)))
        full = model
        if fault:
            small, full = CorruptedGradient(small), CorruptedGradient(full)
        for m, ncoords, label in ((small, None, "full"), (full, 64, "subset")):
            r = gradient_check(m, probes if label == "full" else 5, seed, n_coords=ncoords)
            grads.append({"model": name, "mode": label, "shape": list(m.input_shape),
                          "max_rel_error": r.max_rel_error, "passed": r.passed})
    norms = norm_table(seed=seed)
    quad = quadratic_convergence(seed=seed)
    t2 = theorem2_suite(zoo, target, sources, x, cfg, seed)
    linear_exact = t2["linear"]["exact_max_abs_error"] <= 1e-12
    passed = (
        all(g["passed"] for g in grads)
        and all(r["passed"] for r in norms)
        and quad["sigma2_ok"] and quad["ratio_ok"]
        and all(v["passed"] for v in t2.values())
        and linear_exact
    )
    return {"gradients": grads, "expected_norm": norms, "theorem1": quad,
            "theorem2": t2, "passed": bool(passed)}
