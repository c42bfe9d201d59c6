import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segalab import evaluation as ev


def test_mae_examples():
    assert ev.mae([(3.0, 3.0), (5.0, 5.0)]) == 0.0
    assert ev.mae([(50, 60), (40, 35)]) == 7.5
    assert ev.mae([(50, 70), (40, 30)]) == 15.0
    with pytest.raises(ValueError):
        ev.mae([])


def test_r_robustness_examples():
    assert ev.r_robustness([(50, 60)]) == pytest.approx(math.log10(5))
    assert ev.r_robustness([(50, 100)]) == pytest.approx(0.0)
    assert ev.r_robustness([(50, 50)]) == pytest.approx(math.log10(50 / 1e-6))
    with pytest.raises(ValueError):
        ev.r_robustness([(50, 60)], 0, 100)


def test_correlation_examples():
    b = [1, 2, 3, 4]
    assert ev.srocc(list(zip(b, b))) == 1.0
    assert ev.srocc(list(zip(b, [-v for v in b]))) == -1.0
    assert ev.srocc(list(zip(b, [1, 3, 2, 4]))) == pytest.approx(0.8, abs=1e-15)
    assert ev.plcc(list(zip(b, [2 * v + 1 for v in b]))) == pytest.approx(1.0, abs=1e-15)
    assert ev.plcc([(1, 1), (2, 2), (3, 4)]) == pytest.approx(0.98198050606, abs=1e-10)
    assert ev.krocc([(1, 1), (2, 3), (3, 2)]) == pytest.approx(1 / 3, abs=1e-15)
    assert ev.krocc([(1, 3), (2, 2), (3, 1)]) == -1.0


def test_constant_vectors_raise():
    with pytest.raises(ev.UndefinedCorrelationError):
        ev.plcc([(1, 2), (1, 3)])
    with pytest.raises(ev.UndefinedCorrelationError):
        ev.srocc([(1, 2), (1, 3)])
    with pytest.raises(ev.UndefinedCorrelationError):
        ev.krocc([(1, 2), (1, 3)])


def brute_ranks(v):
    return np.array([sum(u < x for u in v) + (sum(u == x for u in v) + 1) / 2 for x in v])


def brute_pearson(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    num = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    return num / math.sqrt(sum((x - ma) ** 2 for x in a) * sum((y - mb) ** 2 for y in b))


def brute_tau_b(a, b):
    nc = nd = ta = tb = 0
    for i, j in itertools.combinations(range(len(a)), 2):
        sa, sb = np.sign(a[i] - a[j]), np.sign(b[i] - b[j])
        if sa == 0 and sb == 0:
            continue
        if sa == 0:
            ta += 1
        elif sb == 0:
            tb += 1
        elif sa == sb:
            nc += 1
        else:
            nd += 1
    return (nc - nd) / math.sqrt((nc + nd + ta) * (nc + nd + tb))


def test_metrics_against_brute_force():
    rng = np.random.default_rng(2024)
    for trial in range(50):
        n = int(rng.integers(2, 51))
        a = rng.integers(0, 12, size=n).astype(float) if trial % 2 else rng.normal(size=n)
        b = rng.integers(0, 12, size=n).astype(float) if trial % 3 == 0 else rng.normal(size=n)
        if np.ptp(a) == 0 or np.ptp(b) == 0:
            continue
        pairs = list(zip(a, b))
        assert ev.mae(pairs) == pytest.approx(sum(abs(y - x) for x, y in pairs) / n, abs=1e-12)
        assert ev.plcc(pairs) == pytest.approx(brute_pearson(a, b), abs=1e-12)
        assert ev.srocc(pairs) == pytest.approx(brute_pearson(brute_ranks(a), brute_ranks(b)), abs=1e-12)
        assert ev.krocc(pairs) == pytest.approx(brute_tau_b(a, b), abs=1e-12)


def test_spearman_formula_without_ties(rng):
    a, b = rng.permutation(20), rng.permutation(20)
    d2 = float(np.sum((a - b) ** 2))
    assert ev.srocc(list(zip(a, b))) == pytest.approx(1 - 6 * d2 / (20 * (400 - 1)), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), min_size=3, max_size=25))
def test_rank_metrics_invariant_under_monotone_maps(pairs):
    a = np.array([p[0] for p in pairs], dtype=float)
    b = np.array([p[1] for p in pairs], dtype=float)
    if np.unique(a).size < 2 or np.unique(b).size < 2:
        return
    mapped = list(zip(np.exp(a / 25), b**3))
    assert ev.srocc(mapped) == pytest.approx(ev.srocc(list(zip(a, b))), abs=1e-9)
    assert ev.krocc(mapped) == pytest.approx(ev.krocc(list(zip(a, b))), abs=1e-9)
    assert ev.plcc(list(zip(3 * a + 2, b))) == pytest.approx(ev.plcc(list(zip(a, b))), abs=1e-9)
    assert ev.plcc(list(zip(-2 * a, b))) == pytest.approx(-ev.plcc(list(zip(a, b))), abs=1e-9)


def test_noop_report_and_roundtrip():
    before = [10.0, 40.0, 70.0]
    percept = [{"ssim": 1.0, "l1": 0.0, "l2": 0.0, "linf": 0.0}] * 3
    rep = ev.build_report(before, before, percept, {"target": "t", "seed": 0})
    assert rep.metrics["mae"] == 0.0
    assert rep.metrics["srocc"] == rep.metrics["plcc"] == rep.metrics["krocc"] == 1.0
    assert rep.perceptual["ssim"] == 1.0
    back = ev.EvalReport.from_json(rep.to_json())
    assert back.to_dict() == rep.to_dict()
    assert list(json.loads(rep.to_json())) == ["meta", "metrics", "perceptual"]


def test_single_image_marks_rank_metrics():
    rep = ev.build_report([50.0], [55.0])
    assert rep.metrics["srocc"] == ev.NOT_APPLICABLE
    assert rep.metrics["mae"] == 5.0


def test_report_batch_size_checks():
    with pytest.raises(ValueError):
        ev.build_report([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        ev.build_report([1.0, 2.0], [1.0, 3.0], [{"ssim": 1, "l1": 0, "l2": 0, "linf": 0}])


def test_csv_column_order():
    rep = ev.build_report([1.0, 2.0, 3.0], [1.5, 2.0, 2.5])
    header = ev.reports_to_csv([(["x"], rep)], ["run"]).splitlines()[0]
    assert header.startswith("run,MAE,R,SROCC,PLCC,KROCC")
