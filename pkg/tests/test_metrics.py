import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sicpln.metrics import (
    BenchRecord,
    aggregate,
    estimation_error,
    prediction_mse,
    read_records,
    tnr,
    write_aggregate,
    write_records,
)


def test_estimation_error_examples():
    B = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert estimation_error(B, B) == 0.0
    assert estimation_error(B, np.zeros_like(B)) == 1.0
    assert estimation_error(B, [[1.0, 0.0], [0.0, 0.0]]) == pytest.approx(1 / math.sqrt(2), rel=1e-15)
    with pytest.raises(ValueError):
        estimation_error(np.zeros((2, 2)), B)
    with pytest.raises(ValueError):
        estimation_error(B, np.zeros((3, 2)))


def test_tnr_examples():
    truth = np.array([[9.0, 9.0], [0.0, 0.0], [0.0, 0.0], [1.0, 2.0]])
    assert tnr(truth, truth) == 1.0
    assert tnr(truth, np.ones_like(truth)) == 0.0
    half = truth.copy()
    half[2] = 0.3
    assert tnr(truth, half) == 0.5
    with pytest.raises(ValueError):
        tnr(np.ones((3, 2)), np.ones((3, 2)))


def test_tnr_exact_zero_semantics():
    truth = np.array([[1.0], [0.0]])
    assert tnr(truth, [[1.0], [1e-9]]) == 0.0
    assert tnr(truth, [[1.0], [0.0]]) == 1.0


def test_tnr_ignores_intercept_row():
    truth = np.array([[0.0, 0.0], [0.0, 1.0]])
    # intercept zeros are neither counted nor rewarded
    assert tnr(truth, [[5.0, 5.0], [0.0, 1.0]]) == 1.0
    assert tnr(truth, [[5.0, 5.0], [0.0, 1.0]], has_intercept=False) == pytest.approx(1 / 3)


def test_prediction_mse_examples():
    assert prediction_mse([[0, 2]], [[0, 2]]) == 0.0
    assert prediction_mse([[0, 2]], [[1, 2]]) == 0.5


@given(hnp.arrays(np.float64, (4, 3), elements=st.floats(-100, 100)),
       hnp.arrays(np.float64, (4, 3), elements=st.floats(-100, 100)))
def test_prediction_mse_matches_loop(Y, Yh):
    ref = sum((Y[i, j] - Yh[i, j]) ** 2 for i in range(4) for j in range(3)) / 12
    assert prediction_mse(Y, Yh) == pytest.approx(ref, rel=1e-12, abs=1e-12)


@given(st.integers(0, 1000))
def test_metrics_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(5, 4))
    B[rng.random((5, 4)) < 0.4] = 0.0
    B[1, 0] = 0.0
    Bh = np.where(rng.random((5, 4)) < 0.5, 0.0, B + rng.normal(0, 0.1, (5, 4)))
    Y = rng.poisson(3.0, (6, 4)).astype(float)
    Yh = rng.uniform(0, 6, (6, 4))
    perm = rng.permutation(4)
    assert estimation_error(B[:, perm], Bh[:, perm]) == pytest.approx(estimation_error(B, Bh), rel=1e-14)
    assert tnr(B[:, perm], Bh[:, perm]) == tnr(B, Bh)
    assert prediction_mse(Y[:, perm], Yh[:, perm]) == pytest.approx(prediction_mse(Y, Yh), rel=1e-14)


def test_record_validation():
    with pytest.raises(ValueError):
        BenchRecord("s", "m", 0, 0.1, 1.5, 0.2)
    with pytest.raises(ValueError):
        BenchRecord("s", "m", 0, -0.1, 0.5, 0.2)


def _rec(scenario, method, rep, err, rate=0.5, mse=1.0):
    return BenchRecord(scenario, method, rep, err, rate, mse)


def test_aggregate_single_and_mean():
    rows = aggregate([_rec("a", "SICPLN", 0, 0.3)])
    assert rows[0]["estimation_error_mean"] == 0.3 and rows[0]["count"] == 1
    rows = aggregate([_rec("a", "SICPLN", 0, 0.0), _rec("a", "SICPLN", 1, 1.0)])
    assert rows[0]["estimation_error_mean"] == 0.5
    assert rows[0]["estimation_error_median"] == 0.5
    with pytest.raises(ValueError):
        aggregate([])


def test_aggregate_ordering_deterministic():
    recs = [_rec("b", "PLN", 0, 0.1), _rec("a", "SICPLN", 0, 0.2), _rec("a", "PLN", 0, 0.3)]
    keys = [(r["scenario"], r["method"]) for r in aggregate(recs)]
    assert keys == [("a", "PLN"), ("a", "SICPLN"), ("b", "PLN")]
    assert aggregate(recs) == aggregate(recs[::-1])


def test_aggregate_matches_streaming():
    rng = np.random.default_rng(0)
    vals = rng.random(100)
    recs = [_rec("s", "m", i, float(v)) for i, v in enumerate(vals)]
    # streaming mean (Welford) against the batch result
    mean = 0.0
    for k, v in enumerate(vals, start=1):
        mean += (v - mean) / k
    row = aggregate(recs)[0]
    assert row["estimation_error_mean"] == pytest.approx(mean, rel=1e-12)
    assert row["estimation_error_q25"] == pytest.approx(np.quantile(vals, 0.25), rel=1e-15)
    assert row["count"] == 100


def test_csv_round_trip(tmp_path):
    recs = [_rec("a", "SICPLN", 0, 0.1 + 1e-17, 1 / 3, 2.5), _rec("b", "PLN", 3, 0.7)]
    write_records(tmp_path / "r.csv", recs)
    assert read_records(tmp_path / "r.csv") == recs
    write_aggregate(tmp_path / "s.csv", aggregate(recs))
    header = (tmp_path / "s.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["scenario", "method", "count"]
