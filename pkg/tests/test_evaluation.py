import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from crowdcal.evaluation import (
    UndefinedRangeError, error_statistics, evaluate, improvement_ratio, nrmse, quantile, rmse,
    rmse_reduction,
)


def loop_rmse(e, g):
    total = 0.0
    for a, b in zip(e, g):
        total += (a - b) ** 2
    return math.sqrt(total / len(e))


def test_rmse_examples():
    assert rmse([4, 7, 1], [4, 7, 1]) == 0
    assert rmse([3, 5], [1, 2]) == pytest.approx(math.sqrt(6.5)) == pytest.approx(2.54951, abs=1e-5)
    assert rmse([3, 5], [1, 2]) == pytest.approx(loop_rmse([3, 5], [1, 2]))


@given(st.lists(st.integers(0, 1000), min_size=1, max_size=50), st.integers(-50, 50))
def test_constant_offset_gives_offset(truth, c):
    assert rmse([t + c for t in truth], truth) == pytest.approx(abs(c))


def test_nrmse_examples():
    assert nrmse([3, 5], [1, 2]) == pytest.approx(2.54951, abs=1e-5)
    assert nrmse([1, 2, 9], [1, 2, 9]) == 0
    with pytest.raises(UndefinedRangeError):
        nrmse([1, 2], [4, 4])


def test_length_mismatch_and_empty():
    with pytest.raises(ValueError):
        rmse([1], [1, 2])
    with pytest.raises(ValueError):
        rmse([], [])


def test_error_statistics_examples():
    s = error_statistics([5, 5, 5], [5, 5, 5])
    assert all(v == 0 for v in vars(s).values())
    s = error_statistics([-2, 0, 2], [0, 0, 0])
    assert (s.mean, s.min, s.median, s.max) == (0, -2, 0, 2)
    s = error_statistics([1, 2, 3, 4], [0, 0, 0, 0])
    assert (s.q1, s.median, s.q3) == (1.75, 2.5, 3.25)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60), st.floats(0, 1))
def test_quantile_matches_numpy_linear(values, p):
    values = sorted(values)
    assert quantile(values, p) == pytest.approx(float(np.quantile(values, p)), rel=1e-9, abs=1e-6)


def test_std_dev_is_population_form():
    s = error_statistics([1, 3], [0, 0])
    assert s.std_dev == 1.0


def _report_with_mean(m):
    return evaluate([m, m], [0, 0])


def test_improvement_ratio_examples():
    # 1 - 659/1303 = 0.49424...
    assert improvement_ratio(_report_with_mean(1303), _report_with_mean(659)) == pytest.approx(
        0.4942, abs=5e-5)
    assert improvement_ratio(_report_with_mean(5), _report_with_mean(5)) == 0
    assert improvement_ratio(_report_with_mean(5), _report_with_mean(0)) == 1.0


def test_rmse_reduction():
    assert rmse_reduction(evaluate([10], [0]), evaluate([4], [0])) == pytest.approx(0.6)


def test_evaluate_constant_truth_has_no_nrmse():
    rep = evaluate([1, 2], [3, 3])
    assert rep.nrmse is None and rep.rmse == pytest.approx(math.sqrt(2.5))
    assert rep.to_json()["error_stats"]["min"] == -2
