"""Transfer metrics between pre- and post-attack scores, and report assembly."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

EPS_NUM = 1e-6
NOT_APPLICABLE = "n/a"
CSV_COLUMNS = ("MAE", "R", "SROCC", "PLCC", "KROCC")


class UndefinedCorrelationError(ValueError):
    """Raised when a correlation is requested for a constant vector."""


@dataclass(frozen=True)
class ScorePair:
    before: float
    after: float
    id: str = ""

    def __post_init__(self):
        if not (np.isfinite(self.before) and np.isfinite(self.after)):
            raise ValueError(f"non-finite score pair for {self.id!r}")


def _vectors(pairs, minimum=1):
    pairs = list(pairs)
    if len(pairs) < minimum:
        raise ValueError(f"need at least {minimum} score pair(s), got {len(pairs)}")
    if pairs and isinstance(pairs[0], ScorePair):
        b = np.array([p.before for p in pairs], dtype=np.float64)
        a = np.array([p.after for p in pairs], dtype=np.float64)
    else:
        arr = np.asarray(pairs, dtype=np.float64)
        b, a = arr[:, 0], arr[:, 1]
    if not (np.all(np.isfinite(b)) and np.all(np.isfinite(a))):
        raise ValueError("scores must be finite")
    return b, a


def pairs_from(before, after, ids=None) -> list:
    before, after = list(before), list(after)
    if len(before) != len(after):
        raise ValueError(f"inconsistent batch sizes: {len(before)} vs {len(after)}")
    ids = ids or [str(i) for i in range(len(before))]
    return [ScorePair(float(b), float(a), i) for b, a, i in zip(before, after, ids)]


def mae(pairs) -> float:
    b, a = _vectors(pairs)
    return float(np.mean(np.abs(a - b)))


def r_robustness(pairs, beta1: float = 100.0, beta2: float = 0.0) -> float:
    """Mean log10 of headroom over achieved change; lower is a stronger attack.

    ``before`` outside ``[beta2, beta1]`` is clipped onto the interval first,
    and the change is floored at ``EPS_NUM`` so an untouched score saturates
    instead of diverging.
    """
    if not beta1 > beta2:
        raise ValueError("R robustness needs beta1 > beta2")
    b, a = _vectors(pairs)
    bc = np.clip(b, beta2, beta1)
    headroom = np.maximum(beta1 - bc, bc - beta2)
    change = np.maximum(np.abs(a - b), EPS_NUM)
    return float(np.mean(np.log10(headroom / change)))


def _pearson(u, v) -> float:
    u = u - u.mean()
    v = v - v.mean()
    uu, vv = u @ u, v @ v
    if uu == 0 or vv == 0:
        raise UndefinedCorrelationError("correlation undefined for a constant vector")
    return float(np.clip((u @ v) / np.sqrt(uu * vv), -1.0, 1.0))


def plcc(pairs) -> float:
    b, a = _vectors(pairs, 2)
    return _pearson(b, a)


def srocc(pairs) -> float:
    """Pearson correlation of mid-ranks."""
    b, a = _vectors(pairs, 2)
    return _pearson(rankdata(b), rankdata(a))


def krocc(pairs) -> float:
    """Kendall tau-b by explicit pair counting."""
    b, a = _vectors(pairs, 2)
    db = np.sign(b[:, None] - b[None, :])
    da = np.sign(a[:, None] - a[None, :])
    iu = np.triu_indices(b.size, 1)
    db, da = db[iu], da[iu]
    s = float(np.sum(db * da))
    n_b = float(np.count_nonzero(db))
    n_a = float(np.count_nonzero(da))
    if n_b == 0 or n_a == 0:
        raise UndefinedCorrelationError("Kendall tau undefined when one side is all tied")
    return float(np.clip(s / np.sqrt(n_b * n_a), -1.0, 1.0))


def _safe(fn, pairs):
    if len(pairs) < 2:
        return NOT_APPLICABLE
    try:
        return fn(pairs)
    except UndefinedCorrelationError:
        return NOT_APPLICABLE


@dataclass
class EvalReport:
    metrics: dict
    perceptual: dict
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"metrics": dict(self.metrics), "perceptual": dict(self.perceptual), "meta": dict(self.meta)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        return cls(d["metrics"], d["perceptual"], d.get("meta", {}))

    def csv_row(self) -> list:
        m = self.metrics
        return [m["mae"], m["r"], m["srocc"], m["plcc"], m["krocc"]]


def build_report(before, after, perceptual=(), meta=None, beta=(100.0, 0.0), ids=None) -> EvalReport:
    """Aggregate transfer metrics and mean perceptual statistics for a batch.

    ``perceptual`` is a sequence of per-image PerceptualReport objects (or
    dicts), one per pair, or empty.
    """
    pairs = pairs_from(before, after, ids)
    if not pairs:
        raise ValueError("empty batch")
    perceptual = [p if isinstance(p, dict) else p.to_dict() for p in perceptual]
    if perceptual and len(perceptual) != len(pairs):
        raise ValueError(f"inconsistent batch sizes: {len(pairs)} scores vs {len(perceptual)} images")
    metrics = {
        "mae": mae(pairs),
        "r": r_robustness(pairs, *beta),
        "srocc": _safe(srocc, pairs),
        "plcc": _safe(plcc, pairs),
        "krocc": _safe(krocc, pairs),
    }
    agg = {}
    if perceptual:
        for key in ("ssim", "l1", "l2", "linf"):
            agg[key] = float(np.mean([p[key] for p in perceptual]))
    meta = dict(meta or {})
    meta.setdefault("r_aggregation", "per-image mean")
    meta.setdefault("n", len(pairs))
    return EvalReport(metrics, agg, meta)


def reports_to_csv(rows, label_columns=()) -> str:
    """``rows`` is a list of (labels, EvalReport); extra perceptual columns follow."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(label_columns) + list(CSV_COLUMNS) + ["SSIM", "L1", "L2", "Linf"])
    for labels, rep in rows:
        cells = []
        for v in rep.csv_row() + [rep.perceptual.get(k, NOT_APPLICABLE) for k in ("ssim", "l1", "l2", "linf")]:
            cells.append(f"{v:.6f}" if isinstance(v, float) else v)
        w.writerow(list(labels) + cells)
    return buf.getvalue()
