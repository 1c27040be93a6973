"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict that is printed in the terminal summary,
then asserts it. Thresholds that are expensive to simulate are cached in the
pytest cache directory, so repeat runs are fast.
"""

import itertools
import math
from collections import Counter

import numpy as np
import pytest
from conftest import dyadic, record_criterion
from scipy.stats import ks_2samp
from test_detect import optimal_partition
from test_stats import segment_brute, wmw_brute

from tunecp.calibrate import ThresholdSpec, calibrate, threshold_gumbel, threshold_rank_sim
from tunecp.cli import main
from tunecp.detect import DetectorSpec, pelt
from tunecp.simlab import (
    ScenarioConfig,
    generate,
    power_property_maxcusum,
    replicate_seed,
    run_experiment,
)
from tunecp.stats import (
    StatisticError,
    StatisticSpec,
    m_max_cusum,
    max_over_locations,
    s_selfnorm,
    segment_max,
    t_compr,
    t_mean,
    t_score,
    t_segment,
    t_wmw,
)
from tunecp.tune import TuneConfig

pytestmark = pytest.mark.slow

REPS = 200
ALPHA = 0.05
BAND = ALPHA + 2 * math.sqrt(ALPHA * (1 - ALPHA) / REPS)  # about 0.081


def _fmt(values):
    return " ".join(f"{v:.3f}" for v in values)


# --------------------------------------------------------------------------- 1


def test_fwer_control_across_detectors(threshold_cache):
    detectors = {
        "bs-k": DetectorSpec("bs_ksteps", k=4),
        "bs-threshold": DetectorSpec("bs_threshold"),
        "bs-bic": DetectorSpec("bs_ksteps", use_bic=True),
        "pelt": DetectorSpec("pelt"),
        "pelt-bic": DetectorSpec("pelt", use_bic=True),
    }
    tc = TuneConfig(StatisticSpec("mean", 10), ThresholdSpec("mc_null", ALPHA, 2000, 1))
    worst, rows = 0.0, []
    for name, det in detectors.items():
        fwers = [run_experiment(ScenarioConfig("I", delta=d), det, tc, REPS, 100, threshold_cache).fwer_hat
                 for d in (0.0, 1.0, 2.0, 3.0)]
        worst = max(worst, *fwers)
        rows.append(f"{name}=[{_fmt(fwers)}]")
    ok = worst <= BAND
    record_criterion(1, ok, f"max FWER {worst:.3f} <= {BAND:.3f}; " + " ".join(rows))
    assert ok


# --------------------------------------------------------------------------- 2


def test_rank_statistic_is_distribution_free(threshold_cache):
    tc = TuneConfig(StatisticSpec("wmw", 10), ThresholdSpec("rank_sim", ALPHA, 2000, 2))
    det = DetectorSpec("bs_ksteps", k=4)
    spec = StatisticSpec("wmw", 10)
    fwers, maxima = {}, {}
    for i, noise in enumerate(("gaussian", "exponential", "t3")):
        base = 200 + i  # independent draws for each noise law
        fwers[noise] = run_experiment(ScenarioConfig("I", delta=0.0, noise=noise), det, tc, REPS, base,
                                      threshold_cache).fwer_hat
        maxima[noise] = np.array([
            max_over_locations(generate(ScenarioConfig("I", noise=noise, seed=replicate_seed(base, r)))[0], spec)
            for r in range(REPS)
        ])
    pvals = {f"{a}/{b}": ks_2samp(maxima[a], maxima[b]).pvalue for a, b in itertools.combinations(maxima, 2)}
    ok = max(fwers.values()) <= BAND and min(pvals.values()) > 0.01
    detail = "FWER " + " ".join(f"{k}={v:.3f}" for k, v in fwers.items())
    detail += "; KS p " + " ".join(f"{k}={v:.3f}" for k, v in pvals.items())
    record_criterion(2, ok, detail)
    assert ok


# --------------------------------------------------------------------------- 3


def test_gumbel_and_simulated_thresholds_agree(threshold_cache):
    gumbel = threshold_gumbel(10_000, 100, 1, ALPHA)
    mc, _ = calibrate(StatisticSpec("mean", 100, sigma=1.0), ThresholdSpec("mc_null", ALPHA, 5000, 3), 10_000,
                      cache_dir=threshold_cache)
    gap = abs(gumbel - mc)
    ok = gap <= 0.35
    record_criterion(3, ok, f"gumbel {gumbel:.4f} vs simulated {mc:.4f}, gap {gap:.4f} <= 0.35")
    assert ok


# --------------------------------------------------------------------------- 4


def test_bootstrap_controls_fwer_in_high_dimension():
    tc = TuneConfig(StatisticSpec("score_g", 20), ThresholdSpec("bootstrap", ALPHA, 200, 4))
    out = run_experiment(ScenarioConfig("III", d=200, delta=0.0), DetectorSpec("bs_ksteps", k=4), tc, REPS, 400)
    ok = out.fwer_hat <= ALPHA + 0.04
    record_criterion(4, ok, f"FWER {out.fwer_hat:.3f} <= 0.090 (d=200, h=20)")
    assert ok


# --------------------------------------------------------------------------- 5


def _contaminate(rng, n, lo, hi):
    """Piecewise-constant dyadic signal whose breakpoints avoid the open interval (lo, hi)."""
    cuts = sorted({int(c) for c in rng.integers(0, lo + 1, 2)} | {int(c) for c in rng.integers(hi, n + 1, 2)})
    bounds = [0, *cuts, n]
    out = np.zeros(n)
    for a, b in zip(bounds, bounds[1:]):
        out[a:b] = np.round(rng.normal(0, 20) * 64) / 64
    return out


def _monotone(rng):
    a, b, c = rng.uniform(0.5, 3.0, 3)
    return rng.choice([
        lambda x: a * x + c,
        lambda x: np.exp(x / b),
        lambda x: x**3 + a * x,
        lambda x: np.arctan(x / 4) * b,
    ])


def _value(fn, *args):
    try:
        return fn(*args).value
    except StatisticError:
        return "undefined"


def _differs(fn, a, b, *args):
    """Compare a statistic on two inputs; an undefined value must be undefined on both."""
    return _value(fn, a, *args) != _value(fn, b, *args)


def test_nullifiability_and_rank_invariance():
    rng = np.random.default_rng(5)
    broken = Counter()
    for _ in range(1000):
        h = int(rng.integers(2, 15))
        n = int(rng.integers(2 * h + 2, 8 * h))
        tau = int(rng.integers(h, n - h + 1))
        z = dyadic(rng, n)
        zc = z + _contaminate(rng, n, tau - h, tau + h)
        broken["mean"] += _differs(t_mean, z, zc, tau, h)
        broken["score_g"] += _differs(t_score, z, zc, tau, h)
        broken["max_cusum"] += _differs(m_max_cusum, z, zc, tau, h)
        broken["selfnorm"] += _differs(s_selfnorm, z, zc, tau, h)
        lo, hi = int(rng.integers(0, tau)), int(rng.integers(tau + 1, n + 1))
        zs = z + _contaminate(rng, n, lo, hi)
        broken["segment_mean"] += _differs(t_segment, z, zs, tau, lo, hi)

        x = rng.normal(size=(n, 2))
        y = np.column_stack([_monotone(rng)(x[:, 0]), _monotone(rng)(x[:, 1])])
        broken["wmw"] += _differs(t_wmw, x[:, 0], y[:, 0], tau, h)
        broken["compr"] += _differs(t_compr, x, y, tau, h)
    families = ("mean", "score_g", "max_cusum", "selfnorm", "segment_mean", "wmw", "compr")
    ok = all(broken[f] == 0 for f in families)
    record_criterion(5, ok, "mismatches in 1000 pairs: " + " ".join(f"{f}={broken[f]}" for f in families))
    assert ok


# --------------------------------------------------------------------------- 6


def _exact_rank_quantile(alpha):
    counts = Counter(t_wmw(np.array(p, dtype=float), 2, 2).value for p in itertools.permutations(range(4)))
    cum = 0
    for value in sorted(counts):
        cum += counts[value]
        if cum / 24 >= 1 - alpha:
            return value


def test_oracle_equivalences():
    rng = np.random.default_rng(6)
    pelt_bad = 0
    for _ in range(100):
        n = int(rng.integers(2, 201))
        x = rng.normal(size=n) + np.repeat(rng.normal(0, 3, 4), math.ceil(n / 4))[:n]
        pen = float(rng.uniform(1.0, 3.0 * math.log(max(n, 3))))
        pelt_bad += pelt(x[:, None], pen) != optimal_partition(x, pen)

    wmw_bad = 0
    for _ in range(200):
        h = int(rng.integers(1, 12))
        n = 2 * h + int(rng.integers(0, 10))
        z = rng.integers(-4, 5, n).astype(float)
        tau = int(rng.integers(h, n - h + 1))
        wmw_bad += t_wmw(z, tau, h).value != wmw_brute(z, tau, h)

    rank_pairs = [(a, threshold_rank_sim(4, 2, a, 100_000, 6), _exact_rank_quantile(a)) for a in (0.05, 0.2, 0.5)]
    rank_bad = sum(sim != exact for _, sim, exact in rank_pairs)

    seg_bad = 0
    for _ in range(3):
        z = dyadic(rng, 60)
        seg_bad += segment_max(z) != segment_brute(z)

    ok = pelt_bad == wmw_bad == rank_bad == seg_bad == 0
    detail = (f"pelt/DP mismatches {pelt_bad}/100, wmw/brute {wmw_bad}/200, "
              f"rank quantiles {[(a, s, e) for a, s, e in rank_pairs]}, segment/O(n^3) {seg_bad}/3")
    record_criterion(6, ok, detail)
    assert ok


# --------------------------------------------------------------------------- 7


def test_max_cusum_power_and_size(threshold_cache):
    n, h = 5000, 100
    m = h
    thr, _ = calibrate(StatisticSpec("max_cusum", h, sigma=1.0), ThresholdSpec("mc_null", ALPHA, 2000, 7), n,
                       cache_dir=threshold_cache)
    rho = 8 * math.sqrt(math.log(n / h))
    delta = rho / math.sqrt(m * (2 * h - m) / (2 * h))
    power = power_property_maxcusum(h, m, delta, ALPHA, REPS, 70, n=n, threshold=thr)
    size = power_property_maxcusum(h, m, 0.0, ALPHA, REPS, 71, n=n, threshold=thr)
    ok = power >= 0.95 and size <= BAND
    record_criterion(7, ok, f"rejection {power:.3f} >= 0.95 at rho={rho:.2f}; {size:.3f} <= {BAND:.3f} at rho=0")
    assert ok


# --------------------------------------------------------------------------- 8


def test_self_normalisation_under_dependence(threshold_cache):
    tc = TuneConfig(StatisticSpec("selfnorm", 20),
                    ThresholdSpec("selfnorm_limit", ALPHA, 2000, 8, horizon=25.0, mesh=100))
    out = run_experiment(ScenarioConfig("II_iii", delta=0.0), DetectorSpec("bs_ksteps", k=4), tc, REPS, 800,
                         threshold_cache)

    rng = np.random.default_rng(8)
    broken = 0
    for _ in range(1000):
        h = int(rng.integers(2, 30))
        z = dyadic(rng, 2 * h)
        scale = 2.0 ** int(rng.integers(-6, 7))
        shift = np.round(rng.normal(0, 100) * 16) / 16
        broken += s_selfnorm(z, h, h).value != s_selfnorm(z * scale + shift, h, h).value
    ok = out.fwer_hat <= ALPHA + 0.05 and broken == 0
    record_criterion(8, ok, f"FWER {out.fwer_hat:.3f} <= 0.100; scale/shift mismatches {broken}/1000")
    assert ok


# --------------------------------------------------------------------------- 9


def test_segment_null_mode(threshold_cache):
    tc = TuneConfig(StatisticSpec("segment_mean", 10), ThresholdSpec("mc_null", ALPHA, 2000, 9), "segment")
    out = run_experiment(ScenarioConfig("I", delta=0.0), DetectorSpec("bs_ksteps", k=4), tc, REPS, 900,
                         threshold_cache)
    ok = out.fwer_hat <= BAND
    record_criterion(9, ok, f"FWER {out.fwer_hat:.3f} <= {BAND:.3f}")
    assert ok


# --------------------------------------------------------------------------- 10


def test_outputs_do_not_depend_on_thread_count(tmp_path):
    s, _ = generate(ScenarioConfig("I", delta=2.0, seed=10))
    src = tmp_path / "series.csv"
    src.write_text("\n".join(repr(float(v)) for v in s.values[:, 0]) + "\n")
    cps = tmp_path / "cps.json"
    assert main(["detect", "--input", str(src), "--algo", "bs-k", "--k", "6", "--output", str(cps)]) == 0

    runs = {
        "simulate": ["simulate", "--scenario", "I", "--delta-grid", "0,1.5", "--reps", "30", "--detector", "bs-k",
                     "--B", "300", "--h", "10,20", "--seed", "10"],
        "calibrate": ["calibrate", "--n", "500", "--h", "10", "--family", "max_cusum", "--B", "500", "--seed", "10"],
        "infer": ["infer", "--input", str(src), "--changepoints", str(cps), "--h", "10", "--family", "mean",
                  "--B", "500", "--seed", "10"],
        "infer-bootstrap": ["infer", "--input", str(src), "--changepoints", str(cps), "--h", "10",
                            "--family", "score_g", "--B", "300", "--seed", "10"],
    }
    differing = []
    for name, argv in runs.items():
        outputs = []
        for threads in (1, 8):
            out = tmp_path / f"{name}-{threads}.out"
            assert main([*argv, "--threads", str(threads), "--output", str(out)]) == 0
            outputs.append(out.read_bytes())
        if outputs[0] != outputs[1]:
            differing.append(name)
    ok = not differing
    record_criterion(10, ok, f"byte-identical across --threads 1/8 for {', '.join(runs)}"
                     + (f"; differing: {differing}" if differing else ""))
    assert ok
