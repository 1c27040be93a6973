import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tunecp.core import (
    ChangeModel,
    ChangepointSet,
    InferenceReport,
    InvalidInputError,
    ReportEntry,
    Series,
    WindowConfig,
    dumps_json,
    hausdorff,
    parse_series_csv,
    read_series_csv,
    segment_null_test,
    true_null_set,
    write_series_csv,
)


def test_series_coerces_vector_to_column():
    s = Series([1.0, 2.0, 3.0])
    assert s.values.shape == (3, 1)
    assert (s.n, s.d) == (3, 1)
    assert not s.values.flags.writeable


@pytest.mark.parametrize("bad", [[1.0], [[1.0, 2.0]], [1.0, np.nan], [np.inf, 0.0], np.zeros((2, 0))])
def test_series_rejects_invalid(bad):
    with pytest.raises(InvalidInputError):
        Series(bad)


def test_changepoint_set_validation():
    assert ChangepointSet((2, 5), 10).locations == (2, 5)
    assert len(ChangepointSet((), 2)) == 0
    for locs in [(5, 2), (3, 3), (0,), (10,)]:
        with pytest.raises(InvalidInputError):
            ChangepointSet(locs, 10)


def test_changepoint_json_round_trip():
    cps = ChangepointSet((4, 9), 20)
    again = ChangepointSet.from_dict(json.loads(json.dumps(cps.to_dict())))
    assert again == cps
    assert ChangepointSet.from_dict({"locations": [3]}, n=8) == ChangepointSet((3,), 8)
    with pytest.raises(InvalidInputError):
        ChangepointSet.from_dict({"locations": [3], "n": 9}, n=8)
    with pytest.raises(InvalidInputError):
        ChangepointSet.from_dict({"n": 9})


def test_change_model_parameter_path():
    model = ChangeModel(ChangepointSet((2, 4), 6), ([1.0], [3.0], [1.0]))
    np.testing.assert_array_equal(model.parameter_path()[:, 0], [1, 1, 3, 3, 1, 1])
    with pytest.raises(InvalidInputError):
        ChangeModel(ChangepointSet((2,), 6), ([1.0], [1.0]))
    with pytest.raises(InvalidInputError):
        ChangeModel(ChangepointSet((2,), 6), ([1.0],))


def test_window_config():
    WindowConfig(3).check(6)
    with pytest.raises(InvalidInputError):
        WindowConfig(4).check(7)
    for bad in (0, -1, 2.5):
        with pytest.raises(InvalidInputError):
            WindowConfig(bad)


def _null_set_brute(truth, n, h):
    return {t for t in range(1, n) if not any(t - h < s < t + h for s in truth)}


@given(
    n=st.integers(4, 80),
    h=st.integers(1, 10),
    data=st.data(),
)
def test_true_null_set_matches_definition(n, h, data):
    locs = sorted(data.draw(st.sets(st.integers(1, n - 1), max_size=6)))
    assert true_null_set(ChangepointSet(tuple(locs), n), n, h) == _null_set_brute(locs, n, h)


def test_true_null_set_without_changes_is_everything():
    assert true_null_set((), 10, 3) == set(range(1, 10))


def test_segment_null_test_uses_open_interval():
    assert segment_null_test(0, 10, [10, 20])
    assert not segment_null_test(0, 10, [9])
    assert segment_null_test(5, 6, [5, 6])
    with pytest.raises(InvalidInputError):
        segment_null_test(6, 6, [])


@given(
    a=st.lists(st.integers(1, 99), min_size=1, max_size=8, unique=True),
    b=st.lists(st.integers(1, 99), min_size=1, max_size=8, unique=True),
)
def test_hausdorff_matches_brute_force(a, b):
    brute = max(max(min(abs(x - y) for y in b) for x in a), max(min(abs(x - y) for x in a) for y in b))
    assert hausdorff(sorted(a), sorted(b)) == brute
    assert hausdorff(sorted(a), sorted(b)) == hausdorff(sorted(b), sorted(a))


def test_hausdorff_empty_is_an_error():
    with pytest.raises(InvalidInputError):
        hausdorff([], [3])


def test_csv_header_detection_and_round_trip(tmp_path):
    s = parse_series_csv("a,b\n1,2\n3,4.5\n")
    np.testing.assert_array_equal(s.values, [[1, 2], [3, 4.5]])
    s2 = parse_series_csv("1\n2\n3\n")
    assert s2.values.shape == (3, 1)
    path = tmp_path / "x.csv"
    orig = Series(np.random.default_rng(0).normal(size=(7, 3)))
    write_series_csv(orig, path)
    np.testing.assert_array_equal(read_series_csv(path).values, orig.values)


@pytest.mark.parametrize("text", ["", "x\n", "1,2\n3\n", "1\nfoo\n", "1\nnan\n"])
def test_csv_malformed(text):
    with pytest.raises(InvalidInputError):
        parse_series_csv(text)


def test_report_enforces_strict_exceedance():
    ok = ReportEntry(5, 2.0, 2.0, False, True)
    InferenceReport((ok,), "window", 0.05, "mean", "mc_null", 2.0, 2, 10)
    with pytest.raises(InvalidInputError):
        InferenceReport((ReportEntry(5, 2.0, 2.0, True, True),), "window", 0.05, "mean", "mc_null", 2.0, 2, 10)
    with pytest.raises(InvalidInputError):
        InferenceReport((ReportEntry(5, 3.0, 2.0, True, False),), "window", 0.05, "mean", "mc_null", 2.0, 2, 10)
    with pytest.raises(InvalidInputError):
        InferenceReport((ok,), "window", 0.05, "mean", "mc_null", 2.5, 2, 10)


def test_report_json_is_stable_and_handles_infinity():
    rep = InferenceReport((ReportEntry(5, 1.0, math.inf, False, True),), "window", 0.05, "mean", "mc_null",
                          math.inf, 2, 10)
    text = dumps_json(rep.to_dict())
    assert text == dumps_json(json.loads(text))
    assert json.loads(text)["threshold"] == "inf"
    assert list(json.loads(text)) == sorted(json.loads(text))
