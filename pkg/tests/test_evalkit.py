import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optideq.errors import ConfigurationError
from optideq.evalkit import (
    EvalReport,
    aggregate_seeds,
    balanced_accuracy,
    binomial_two_sided,
    chi2_sf_df1,
    compare_predictions,
    confusion_counts,
    error_overlap,
    error_set,
    latency_projection,
    majority_vote,
    mcnemar,
    mcnemar_from_counts,
    overlap_from_counts,
    read_predictions,
    wallclock_bench,
    write_predictions,
)

bits = st.lists(st.integers(0, 1), min_size=2, max_size=60)


# -- balanced accuracy ----------------------------------------------------------

def test_balanced_accuracy_examples():
    y = np.array([0, 1, 0, 1, 1])
    assert balanced_accuracy(y, y) == 1.0
    assert balanced_accuracy(np.ones(5, int), y) == 0.5
    assert balanced_accuracy(np.zeros(5, int), y) == 0.5
    labels = np.array([1, 1, 1, 1, 0, 0, 0, 0])
    preds = np.array([1, 1, 1, 0, 0, 0, 1, 1])
    assert confusion_counts(preds, labels) == {"tp": 3, "fn": 1, "tn": 2, "fp": 2}
    assert balanced_accuracy(preds, labels) == 0.625


def test_balanced_accuracy_needs_both_classes():
    with pytest.raises(ConfigurationError):
        balanced_accuracy([0, 1, 1], [1, 1, 1])


@settings(max_examples=100)
@given(data=st.data())
def test_balanced_accuracy_label_swap_invariance(data):
    y = np.array(data.draw(bits))
    if y.min() == y.max():
        y[0] = 1 - y[0]
    p = np.array(data.draw(st.lists(st.integers(0, 1), min_size=y.size, max_size=y.size)))
    assert balanced_accuracy(p, y) == pytest.approx(balanced_accuracy(1 - p, 1 - y), abs=1e-15)


# -- overlap ----------------------------------------------------------------------

def test_published_overlap_anchor():
    ov = overlap_from_counts(3971, 9792, 3577)
    assert ov.jaccard == pytest.approx(3577 / 10186)
    assert abs(ov.jaccard - 0.351) <= 0.001
    assert (ov.only_a, ov.only_b) == (394, 6215)


def test_overlap_trivial_cases():
    assert error_overlap([1, 2, 3], [3, 2, 1]).jaccard == 1.0
    assert error_overlap([1, 2], [3, 4]).jaccard == 0.0
    assert error_overlap([], []).jaccard == 1.0
    with pytest.raises(ConfigurationError):
        overlap_from_counts(3, 4, 5)


@settings(max_examples=100)
@given(a=st.sets(st.integers(0, 40)), b=st.sets(st.integers(0, 40)))
def test_jaccard_properties(a, b):
    j = error_overlap(a, b).jaccard
    assert j == error_overlap(b, a).jaccard
    assert 0.0 <= j <= 1.0
    assert (j == 1.0) == (a == b)


def test_error_set_indices():
    np.testing.assert_array_equal(error_set([0, 1, 1, 0], [0, 0, 1, 1]), [1, 3])


# -- McNemar -------------------------------------------------------------------------

def test_mcnemar_examples():
    r = mcnemar_from_counts(0, 0)
    assert r.p == 1.0
    r = mcnemar_from_counts(15, 5)
    assert r.statistic == pytest.approx(4.05, abs=1e-12)
    assert r.p == pytest.approx(0.0442, abs=5e-5)
    assert not r.exact
    r = mcnemar_from_counts(3, 1)
    assert r.exact
    assert r.p == pytest.approx(0.625, abs=1e-15)


def test_chi2_tail_against_numeric_integration():
    # density of chi-square(1): exp(-x/2) / sqrt(2 pi x); substitute x = t^2
    def tail(x, steps=200_000):
        lo, hi = math.sqrt(x), 12.0
        h = (hi - lo) / steps
        total = sum(math.exp(-((lo + (k + 0.5) * h) ** 2) / 2) for k in range(steps)) * h
        return 2 * total / math.sqrt(2 * math.pi)

    for x in (0.5, 1.0, 4.05, 10.0):
        assert chi2_sf_df1(x) == pytest.approx(tail(x), rel=1e-7)


def test_binomial_against_enumeration():
    for n in range(1, 15):
        for k in range(n + 1):
            probs = [math.comb(n, i) / 2 ** n for i in range(n + 1)]
            want = min(1.0, sum(p for p in probs if p <= probs[k] + 1e-15))
            assert binomial_two_sided(k, n) == pytest.approx(want, abs=1e-12)


def test_mcnemar_from_predictions_and_swap_invariance():
    y = np.array([1] * 30 + [0] * 30)
    rng = np.random.default_rng(0)
    a = np.where(rng.random(60) < 0.8, y, 1 - y)
    b = np.where(rng.random(60) < 0.6, y, 1 - y)
    r1, r2 = mcnemar(a, b, y), mcnemar(b, a, y)
    assert (r1.b, r1.c) == (r2.c, r2.b)
    assert r1.statistic == r2.statistic and r1.p == r2.p
    ra, rb = a == y, b == y
    assert r1.b == int(np.sum(ra & ~rb)) and r1.c == int(np.sum(~ra & rb))


def test_identical_models_have_p_one():
    y = np.array([0, 1, 0, 1])
    assert mcnemar(y, y, y).p == 1.0


# -- aggregation and latency -------------------------------------------------------------

def test_aggregate_examples():
    assert aggregate_seeds([1, 1, 1]) == (1.0, 0.0)
    mean, std = aggregate_seeds([0.94, 0.95, 0.96])
    assert mean == pytest.approx(0.95) and std == pytest.approx(0.01)
    assert aggregate_seeds([0.7]) == (0.7, None)
    with pytest.raises(ConfigurationError):
        aggregate_seeds([])


def test_latency_anchors():
    assert latency_projection(4, 9, 20) == 720
    assert latency_projection(1, 9, 20) == 180
    assert latency_projection(1, 9, 0.5) == 4.5
    with pytest.raises(ConfigurationError):
        latency_projection(0, 9, 20)


@settings(max_examples=50)
@given(n=st.integers(1, 64), it=st.integers(1, 200), t=st.floats(0.01, 1e3), k=st.integers(1, 5))
def test_latency_is_multiplicative(n, it, t, k):
    assert latency_projection(n * k, it, t) == pytest.approx(k * latency_projection(n, it, t), rel=1e-12)


# -- majority vote and compare ------------------------------------------------------------------

def test_two_model_vote_tie_breaks_to_first():
    a = np.array([0, 1, 0, 1])
    np.testing.assert_array_equal(majority_vote([a, 1 - a]), a)
    np.testing.assert_array_equal(majority_vote([a, a, 1 - a]), a)


def write_three(tmp_path):
    rng = np.random.default_rng(1)
    ids = [f"r{i}" for i in range(40)]
    y = np.arange(40) % 2
    paths = []
    for name, acc in (("a", 0.9), ("b", 0.7), ("c", 0.6)):
        p = np.where(rng.random(40) < acc, y, 1 - y)
        paths.append(write_predictions(tmp_path / f"{name}.csv", ids, y, p, rng.normal(size=(40, 2))))
    return paths


def test_compare_three_files(tmp_path):
    preds = [read_predictions(p) for p in write_three(tmp_path)]
    rows = compare_predictions(preds)
    assert [(r.model_a, r.model_b) for r in rows] == [("a", "b"), ("a", "c"), ("b", "c")]


def test_compare_model_with_itself(tmp_path):
    p = read_predictions(write_three(tmp_path)[0])
    (row,) = compare_predictions([p, read_predictions(tmp_path / "a.csv", name="again")])
    assert row.overlap.jaccard == 1.0
    assert row.mcnemar.p == 1.0
    assert row.vote_bacc == balanced_accuracy(p.preds, p.labels)


def test_compare_rejects_misaligned_rows(tmp_path):
    paths = write_three(tmp_path)
    text = paths[1].read_text().replace("r7,", "r99,")
    paths[1].write_text(text)
    with pytest.raises(ConfigurationError, match="position 7"):
        compare_predictions([read_predictions(p) for p in paths])


def test_predictions_round_trip(tmp_path):
    z = np.array([[0.1, -0.2], [1e-300, 3.0]])
    p = read_predictions(write_predictions(tmp_path / "p.csv", ["x", "y"], [0, 1], [1, 1], z))
    assert list(p.row_ids) == ["x", "y"]
    np.testing.assert_array_equal(p.logits, z)


# -- reports -------------------------------------------------------------------------------

def test_report_flags_published_values_and_excludes_them():
    rep = EvalReport()
    y = np.array([0, 1] * 10)
    rep.add_seed("toy", 0, y, y)
    rep.add_seed("toy", 1, 1 - y, y)
    kv = dict(line.split("=", 1) for line in rep.to_keyvalue().splitlines())
    assert float(kv["model.toy.bacc_mean"]) == 0.5
    assert "published.raw.XGBoost.bacc_mean" in kv
    text = rep.to_text()
    assert "published, not reproduced" in text
    assert "published" in rep.long_table().splitlines()[-1]
    quiet = EvalReport(include_published=False)
    quiet.add_seed("toy", 0, y, y)
    assert "published" not in quiet.to_text() and "published" not in quiet.to_keyvalue()


def test_single_seed_reports_absent_std():
    rep = EvalReport(include_published=False)
    y = np.array([0, 1, 1, 0])
    rep.add_seed("lr", 0, y, y)
    assert "model.lr.bacc_std=absent" in rep.to_keyvalue()


# -- benchmarks ------------------------------------------------------------------------------

class _Slowish:
    def predict_logits(self, X):
        return np.tanh(np.atleast_2d(X) @ np.ones((X.shape[-1], 2)))


@pytest.mark.parametrize("mode", ["batch", "single"])
def test_bench_reports_positive_duration(mode):
    res = wallclock_bench(_Slowish(), np.ones((50, 8)), mode=mode)
    assert res.per_sample_ns > 0
    assert res.mode == mode and res.rows == 50
    assert res.platform


def test_bench_rejects_unknown_mode():
    with pytest.raises(ConfigurationError):
        wallclock_bench(_Slowish(), np.ones((2, 2)), mode="burst")
