"""Scenario generators and the Monte Carlo experiment harness."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from .calibrate import DATA_DEPENDENT, calibrate, get_threads, stream, threshold_mc_null
from .core import (
    ChangeModel,
    ChangepointSet,
    InvalidInputError,
    Series,
    as_window,
    hausdorff,
    true_null_set,
)
from .detect import DetectorSpec, detect
from .stats import m_max_cusum, regression_scores
from .tune import TuneConfig, fwer_event, tune_infer

SCENARIOS = ("I", "II_i", "II_ii", "II_iii", "II_iv", "III", "IV", "V")
NOISES = ("gaussian", "exponential", "t3")
AR_BURN_IN = 200

_DEFAULTS = {
    "I": (500, 1),
    "II_i": (500, 1),
    "II_ii": (500, 1),
    "II_iii": (500, 1),
    "II_iv": (500, 1),
    "III": (500, 5),
    "IV": (1000, 5),
    "V": (500, 5),
}


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation scenario.

    ``n`` and ``d`` default to the scenario's standard sizes. ``noise`` swaps
    the Gaussian errors of scenario I for centred Exp(1) or t3 errors.
    """

    scenario: str
    n: int | None = None
    d: int | None = None
    K_star: int = 4
    delta: float = 0.0
    seed: int = 0
    noise: str = "gaussian"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise InvalidInputError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        n0, d0 = _DEFAULTS[self.scenario]
        if self.n is None:
            object.__setattr__(self, "n", n0)
        if self.d is None:
            object.__setattr__(self, "d", d0)
        if self.n < 2 or self.d < 1 or self.K_star < 0 or self.K_star > self.n - 1:
            raise InvalidInputError("need n >= 2, d >= 1 and 0 <= K_star < n")
        if self.scenario in ("I", "II_i", "II_ii", "II_iii", "II_iv") and self.d != 1:
            raise InvalidInputError(f"scenario {self.scenario} is univariate")
        if not self.delta >= 0:
            raise InvalidInputError("delta must be non-negative")
        if self.noise not in NOISES:
            raise InvalidInputError(f"noise must be one of {NOISES}")
        if self.noise != "gaussian" and self.scenario != "I":
            raise InvalidInputError("alternative noise only applies to scenario I")


def true_changepoints(n: int, K: int) -> tuple[int, ...]:
    """``round(k n / (K+1))`` for ``k = 1..K``, halves rounded up."""
    return tuple((2 * k * n + K + 1) // (2 * (K + 1)) for k in range(1, K + 1))


def poisson_jump(delta: float) -> float:
    """Rate jump whose standardised size equals ``delta``."""
    d2 = delta * delta
    return (d2 / 2.0 + math.sqrt(d2 * d2 / 4.0 + 4.0 * d2)) / 2.0


def _levels(K: int, first: float, jump: float) -> list[float]:
    out = [first]
    for k in range(1, K + 1):
        out.append(out[-1] + (-1) ** (k + 1) * jump)
    return out


def _toeplitz(d: int, rho: float = 0.5) -> np.ndarray:
    idx = np.arange(d)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def _model(n: int, K: int, params: list[np.ndarray]) -> ChangeModel:
    if all(np.array_equal(params[0], p) for p in params[1:]):
        return ChangeModel(ChangepointSet((), n), (params[0],))
    return ChangeModel(ChangepointSet(true_changepoints(n, K), n), tuple(params))


def _mixture(rng, size, weight_main: float, far_mean: float) -> np.ndarray:
    far = rng.random(size) >= weight_main
    return rng.standard_normal(size) + far_mean * far


def generate(config: ScenarioConfig) -> tuple[Series, ChangeModel]:
    """Draw one series from the scenario and return it with its ground truth."""
    rng = stream(config.seed, 0)
    n, d, K, delta = config.n, config.d, config.K_star, config.delta
    sc = config.scenario

    if sc in ("I", "II_i", "II_iii", "II_iv"):
        model = _model(n, K, [np.array([v]) for v in _levels(K, 1.0, delta)])
        theta = model.parameter_path()[:, 0]
        if sc == "I":
            if config.noise == "gaussian":
                eps = rng.standard_normal(n)
            elif config.noise == "exponential":
                eps = rng.standard_exponential(n) - 1.0
            else:
                eps = rng.standard_t(3, n)
        elif sc == "II_i":
            eps = rng.standard_t(6, n) / math.sqrt(6.0 / 4.0)
        elif sc == "II_iii":
            innov = rng.normal(0.0, math.sqrt(0.5), AR_BURN_IN + n)
            eps_all = np.empty(AR_BURN_IN + n)
            prev = 0.0
            for i, v in enumerate(innov):
                prev = 0.5 * (1.0 + v) * prev + v
                eps_all[i] = prev
            eps = eps_all[AR_BURN_IN:]
        else:
            eps = _mixture(rng, n, 0.8, 5.0)
        return Series(theta + eps), model

    if sc == "II_ii":
        model = _model(n, K, [np.array([v]) for v in _levels(K, 1.0, poisson_jump(delta))])
        rate = model.parameter_path()[:, 0]
        return Series(rng.poisson(rate).astype(float)), model

    active = min(5, d)

    def coef(k):
        v = np.zeros(d)
        v[:active] = 1.0 + (-1) ** (k + 1) * delta / 2.0
        return v

    model = _model(n, K, [coef(k) for k in range(1, K + 2)])
    theta = model.parameter_path()
    if sc == "III":
        chol = np.linalg.cholesky(_toeplitz(d))
        return Series(theta + rng.standard_normal((n, d)) @ chol.T), model
    if sc == "IV":
        chol = np.linalg.cholesky(_toeplitz(d))
        x = rng.standard_normal((n, d)) @ chol.T
        y = np.einsum("ij,ij->i", x, theta) + rng.standard_normal(n)
        return Series(np.column_stack([y, x])), model
    return Series(theta + _mixture(rng, (n, d), 0.9, 10.0)), model


# ----------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class ExperimentSummary:
    reps: int
    fwer_hat: float
    power_hat: float
    power_defined_reps: int
    hausdorff_mean: float
    config: dict

    def __post_init__(self):
        if not 0 <= self.fwer_hat <= 1:
            raise InvalidInputError("fwer_hat must lie in [0, 1]")
        if not (math.isnan(self.power_hat) or 0 <= self.power_hat <= 1):
            raise InvalidInputError("power_hat must lie in [0, 1]")
        if not 0 <= self.power_defined_reps <= self.reps:
            raise InvalidInputError("power_defined_reps must lie in [0, reps]")


@dataclass(frozen=True)
class ReplicateOutcome:
    fwer: bool
    power: float | None
    hausdorff: float


def replicate_seed(seed: int, r: int) -> int:
    return int(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, r]).generate_state(1, np.uint64)[0])


def detection_input(series: Series, scenario: str) -> Series:
    """Series the built-in detector sees; regression scenarios detect on the scores ``y X``."""
    if scenario == "IV":
        return Series(regression_scores(series.values))
    return series


def run_replicate(config: ScenarioConfig, detector: DetectorSpec, tune_config: TuneConfig,
                  threshold: float | None = None, cache_dir=None) -> ReplicateOutcome:
    series, model = generate(config)
    truth = model.changepoints
    detected = detect(detection_input(series, config.scenario), detector)
    report = tune_infer(series, detected, tune_config, threshold=threshold, cache_dir=cache_dir, threads=1)
    h = tune_config.stat.h
    event = fwer_event(report, truth, h, tune_config.null_mode)
    nulls = true_null_set(truth, series.n, h)
    hit = [t for t in detected if t not in nulls]
    power = None
    if hit:
        rel = set(report.reliable)
        power = sum(t in rel for t in hit) / len(hit)
    haus = hausdorff(detected, truth) if len(detected) and len(truth) else float("nan")
    return ReplicateOutcome(event, power, haus)


def experiment_threshold(config: ScenarioConfig, tune_config: TuneConfig, cache_dir=None,
                         threads: int | None = None) -> float | None:
    """Shared threshold for data-independent engines; ``None`` when it must be per replicate."""
    if tune_config.threshold.method in DATA_DEPENDENT:
        return None
    d = config.d + 1 if config.scenario == "IV" else config.d
    stat = tune_config.stat
    if stat.family in ("mean", "max_cusum", "segment_mean") and stat.sigma is None:
        stat = stat.with_sigma(1.0)  # the threshold does not depend on sigma
    thr, _ = calibrate(stat, tune_config.threshold, config.n, d, cache_dir=cache_dir, threads=threads)
    return thr


def summarize(outcomes, config: ScenarioConfig, extra: dict | None = None) -> ExperimentSummary:
    reps = len(outcomes)
    powers = [o.power for o in outcomes if o.power is not None]
    haus = np.array([o.hausdorff for o in outcomes])
    finite = haus[np.isfinite(haus)]
    echo = asdict(config)
    echo.update(extra or {})
    return ExperimentSummary(
        reps=reps,
        fwer_hat=sum(o.fwer for o in outcomes) / reps,
        power_hat=float(np.mean(powers)) if powers else float("nan"),
        power_defined_reps=len(powers),
        hausdorff_mean=float(finite.mean()) if finite.size else float("nan"),
        config=echo,
    )


def run_experiment(config: ScenarioConfig, detector: DetectorSpec, tune_config: TuneConfig,
                   reps: int, seed: int, cache_dir=None, threads: int | None = None) -> ExperimentSummary:
    """Repeat generate -> detect -> infer and aggregate FWER, power and Hausdorff distance.

    Replicate ``r`` uses a scenario seed derived from ``(seed, r)``, so results
    do not depend on scheduling.
    """
    if reps < 1:
        raise InvalidInputError("reps must be at least 1")
    as_window(tune_config.stat.h).check(config.n)
    thr = experiment_threshold(config, tune_config, cache_dir, threads)

    def one(r):
        cfg = replace(config, seed=replicate_seed(seed, r))
        return run_replicate(cfg, detector, tune_config, thr, cache_dir)

    workers = min(threads or get_threads(), reps)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, range(reps)))
    else:
        outcomes = [one(r) for r in range(reps)]
    extra = {"h": tune_config.stat.h, "family": tune_config.stat.family,
             "method": tune_config.threshold.method, "alpha": tune_config.threshold.alpha,
             "detector": detector.algorithm, "seed": seed, "threshold": thr}
    return summarize(outcomes, config, extra)


def h_sweep(config: ScenarioConfig, detector: DetectorSpec, tune_template: TuneConfig, h_list,
            reps: int, seed: int, cache_dir=None, threads: int | None = None) -> list[ExperimentSummary]:
    """One experiment per window size, all sharing the same replicate seeds."""
    for h in h_list:
        as_window(h).check(config.n)
    out = []
    for h in h_list:
        tc = replace(tune_template, stat=replace(tune_template.stat, h=int(h)))
        out.append(run_experiment(config, detector, tc, reps, seed, cache_dir, threads))
    return out


def power_property_maxcusum(h: int, m_n: int, delta: float, alpha: float, reps: int, seed: int,
                            n: int = 5000, B: int = 2000, threshold: float | None = None,
                            threads: int | None = None) -> float:
    """Rejection rate of the max-CUSUM test at a location whose window holds one change.

    The tested location is ``tau = n // 2``; the change sits ``m_n`` points
    into its window, so the window splits into blocks of length ``m_n`` and
    ``2h - m_n``. Noise is standard normal with known unit scale.
    """
    h = as_window(h).h
    as_window(h).check(n)
    if not 0 < m_n < 2 * h:
        raise InvalidInputError("need 0 < m_n < 2h")
    if threshold is None:
        threshold = threshold_mc_null(n, h, "max_cusum", alpha, B, seed, threads=threads)
    tau = n // 2
    change = tau - h + m_n
    hits = 0
    for r in range(reps):
        rng = stream(seed, (1 << 32) + r)
        z = rng.standard_normal(n)
        z[change:] += delta
        hits += m_max_cusum(z, tau, h, sigma=1.0).value > threshold
    return hits / reps


def separation_rate(h: int, m_n: int, delta: float) -> float:
    return math.sqrt(m_n * (2 * h - m_n) / (2.0 * h)) * abs(delta)
