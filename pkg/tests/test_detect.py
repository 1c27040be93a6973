import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tunecp.core import ChangepointSet, InvalidInputError, Series
from tunecp.detect import (
    DetectorSpec,
    bic_count_select,
    bic_value,
    bs_ksteps,
    bs_path,
    bs_threshold,
    detect,
    mosum_detect,
    pelt,
)
from tunecp.simlab import ScenarioConfig, generate


def optimal_partition(x, penalty):
    """Exhaustive O(n^2) penalised dynamic programme (no pruning)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    s1 = np.zeros((n + 1, x.shape[1]))
    s2 = np.zeros((n + 1, x.shape[1]))
    np.cumsum(x, axis=0, out=s1[1:])
    np.cumsum(x * x, axis=0, out=s2[1:])
    f = [-penalty] + [math.inf] * n
    last = [0] * (n + 1)
    for t in range(1, n + 1):
        for s in range(t):
            q = s1[t] - s1[s]
            cost = float(np.sum((s2[t] - s2[s]) - q * q / (t - s)))
            v = f[s] + cost + penalty
            if v < f[t]:
                f[t], last[t] = v, s
    cps, t = [], n
    while t > 0:
        t = last[t]
        if t > 0:
            cps.append(t)
    return sorted(cps)


def cusum_argmax_brute(z):
    n = len(z)
    vals = [math.sqrt(t * (n - t) / n) * abs(np.mean(z[:t]) - np.mean(z[t:])) for t in range(1, n)]
    return 1 + int(np.argmax(vals))


def test_bs_example():
    z = Series([0, 0, 0, 5, 5, 5.0])
    assert detect(z, DetectorSpec("bs_ksteps", k=1), 1.0).locations == (3,)
    assert cusum_argmax_brute(z.values[:, 0]) == 3


def test_constant_series_gives_nothing():
    z = Series(np.full(40, 2.5))
    assert detect(z, DetectorSpec("bs_threshold")).locations == ()
    assert detect(z, DetectorSpec("pelt")).locations == ()
    assert detect(z, DetectorSpec("mosum", mosum_bandwidth=5, mosum_threshold=1.0)).locations == ()


def test_mosum_example_and_huge_threshold(rng):
    z = Series(np.r_[np.zeros(20), np.full(20, 5.0)])
    assert mosum_detect(z, 5, 3.0, 1.0, noise_scale=1.0).locations == (20,)
    noisy = Series(rng.normal(size=200) + np.repeat([0, 4, 0, 4], 50))
    assert mosum_detect(noisy, 10, 1e12, 0.4).locations == ()


@given(st.data())
def test_mosum_points_are_separated(data):
    h = data.draw(st.integers(2, 8))
    eta = data.draw(st.sampled_from([0.2, 0.4, 0.7, 1.0]))
    seed = data.draw(st.integers(0, 10_000))
    z = np.random.default_rng(seed).normal(size=120) + np.repeat([0, 3, 0, 3], 30)
    locs = mosum_detect(Series(z), h, 1.5, eta, noise_scale=1.0).locations
    assert all(b - a >= math.ceil(eta * h) for a, b in zip(locs, locs[1:]))
    assert all(h <= t <= 120 - h for t in locs)


@given(n=st.integers(2, 40), k=st.integers(0, 50), seed=st.integers(0, 10_000))
def test_bs_ksteps_returns_exactly_min_k_points(n, k, seed):
    z = np.random.default_rng(seed).normal(size=n)
    spec_k = min(k, n - 1)
    cps = detect(Series(z), DetectorSpec("bs_ksteps", k=spec_k))
    assert len(cps) == spec_k


def test_k_at_least_n_is_rejected():
    with pytest.raises(InvalidInputError):
        detect(Series(np.arange(5.0)), DetectorSpec("bs_ksteps", k=5))


@given(seed=st.integers(0, 10_000), lam=st.floats(0.5, 6.0))
def test_kstep_matches_thresholded_recursion(seed, lam):
    z = np.random.default_rng(seed).normal(size=80) + np.repeat([0, 2.5, 0.5, 3], 20)
    x = z[:, None]
    split = bs_threshold(x, lam)
    assert bs_ksteps(x, len(split)) == split


@given(seed=st.integers(0, 10_000), shift=st.floats(-1e3, 1e3))
def test_detectors_are_shift_equivariant(seed, shift):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=100) + np.repeat([0, 3, 0, 3], 25)
    for spec in (DetectorSpec("bs_ksteps", k=3), DetectorSpec("bs_threshold"), DetectorSpec("pelt"),
                 DetectorSpec("bs_ksteps", use_bic=True), DetectorSpec("pelt", use_bic=True),
                 DetectorSpec("mosum", mosum_bandwidth=8)):
        assert detect(Series(z), spec) == detect(Series(z + shift), spec)


def test_pelt_matches_exhaustive_dp_on_scenario_data():
    s, _ = generate(ScenarioConfig("I", delta=3.0, seed=5))
    x = s.values - np.median(s.values)
    pen = math.log(s.n)
    assert pelt(x, pen) == optimal_partition(x, pen)


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 120), pen=st.floats(0.5, 20.0))
def test_pelt_matches_exhaustive_dp(seed, n, pen):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, int(rng.integers(1, 3)))) + (np.arange(n) >= n // 2)[:, None] * rng.normal(0, 3)
    assert pelt(x, pen) == optimal_partition(x, pen)


def test_bic_selection_rules(rng):
    z = Series(np.zeros(50))
    assert bic_count_select(z, [ChangepointSet((), 50), ChangepointSet((10,), 50), ChangepointSet((10, 30), 50)]).locations == ()
    only = ChangepointSet((7,), 50)
    assert bic_count_select(z, [only]) == only
    with pytest.raises(InvalidInputError):
        bic_count_select(z, [])


def test_bic_path_matches_exhaustive_prefix_evaluation():
    s, _ = generate(ScenarioConfig("I", delta=2.0, seed=3))
    x = (s.values - np.median(s.values)) / 1.0
    path = [loc for loc, _ in bs_path(x, 30)]
    scores = [bic_value(s.values, sorted(path[:k])) for k in range(len(path) + 1)]
    best = tuple(sorted(path[: int(np.argmin(scores))]))
    got = detect(s, DetectorSpec("bs_ksteps", use_bic=True), noise_scale=1.0)
    assert got.locations == best


def test_multivariate_and_coordinate_reduction(rng):
    x = rng.normal(size=(120, 3))
    x[60:, 1] += 4.0
    assert detect(Series(x), DetectorSpec("bs_ksteps", k=1)).locations == (60,)
    assert detect(Series(x), DetectorSpec("bs_ksteps", k=1, coordinate=1)).locations == (60,)
    with pytest.raises(InvalidInputError):
        detect(Series(x), DetectorSpec("bs_ksteps", k=1, coordinate=3))


def test_spec_validation():
    for kwargs in (
        dict(algorithm="wbs"),
        dict(algorithm="bs_ksteps"),
        dict(algorithm="pelt", k=3),
        dict(algorithm="pelt", lam=2.0),
        dict(algorithm="bs_threshold", gamma=2.0),
        dict(algorithm="pelt", use_bic=True, gamma=1.0),
        dict(algorithm="mosum"),
        dict(algorithm="mosum", mosum_bandwidth=5, use_bic=True),
        dict(algorithm="mosum", mosum_bandwidth=5, mosum_eta=0.0),
        dict(algorithm="pelt", mosum_bandwidth=5),
    ):
        with pytest.raises(InvalidInputError):
            DetectorSpec(**kwargs)


def test_detection_is_deterministic():
    s, _ = generate(ScenarioConfig("I", delta=1.0, seed=9))
    for spec in (DetectorSpec("bs_threshold", use_bic=True), DetectorSpec("pelt", use_bic=True)):
        assert detect(s, spec) == detect(s, spec)
