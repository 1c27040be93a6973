"""Post-detection inference: certify which detected changepoints are reliable.

Each detected location is tested against a single universal threshold that is
calibrated without looking at the detections, which is what keeps the
family-wise error rate at ``alpha`` whatever detector produced them.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .calibrate import ThresholdSpec, calibrate, check_compatible, get_threads
from .core import (
    ChangepointSet,
    InferenceReport,
    InvalidInputError,
    ReportEntry,
    Series,
    as_window,
    segment_null_test,
    true_null_set,
)
from .estimate import EstimationError, robust_sigma
from .stats import StatisticError, StatisticSpec, evaluate, t_segment

log = logging.getLogger(__name__)

SIGMA_FAMILIES = ("mean", "max_cusum", "segment_mean")
NULL_MODES = ("window", "segment")


@dataclass(frozen=True)
class TuneConfig:
    stat: StatisticSpec
    threshold: ThresholdSpec
    null_mode: str = "window"

    def __post_init__(self):
        if self.null_mode not in NULL_MODES:
            raise InvalidInputError(f"null_mode must be one of {NULL_MODES}")
        if (self.null_mode == "segment") != (self.stat.family == "segment_mean"):
            raise InvalidInputError("segment null mode goes with the segment_mean family and only with it")
        check_compatible(self.stat.family, self.threshold.method)


def resolve_sigma(series: Series, stat: StatisticSpec) -> StatisticSpec:
    """Fill in a robust noise level for families that need one."""
    if stat.family not in SIGMA_FAMILIES or stat.sigma is not None:
        return stat
    if series.d != 1:
        raise InvalidInputError(f"{stat.family} needs a univariate series")
    sig = robust_sigma(series) if series.n >= 3 else 0.0
    if not sig > 0:
        sig = float(series.values.std()) or 1.0
    return stat.with_sigma(sig)


def _window_entry(series: Series, tau: int, stat: StatisticSpec, thr: float, design_cov) -> ReportEntry:
    h, n = stat.h, series.n
    if not h <= tau <= n - h:
        return ReportEntry(tau, None, thr, False, False, "window (tau-h, tau+h] leaves the series")
    try:
        val = evaluate(series, tau, stat, design_cov).value
    except (StatisticError, EstimationError, InvalidInputError) as exc:
        return ReportEntry(tau, None, thr, False, False, f"statistic undefined: {exc}")
    if not math.isfinite(val):
        return ReportEntry(tau, None, thr, False, False, "statistic undefined")
    return ReportEntry(tau, val, thr, val > thr, True)


def _segment_entry(series: Series, tau: int, lower: int, upper: int, stat: StatisticSpec,
                   thr: float) -> ReportEntry:
    try:
        val = t_segment(series, tau, lower, upper, stat.sigma).value
    except InvalidInputError as exc:
        return ReportEntry(tau, None, thr, False, False, f"statistic undefined: {exc}")
    return ReportEntry(tau, val, thr, val > thr, True)


def tune_infer(series: Series, detected: ChangepointSet, config: TuneConfig,
               threshold: float | None = None, cache_dir=None, threads: int | None = None) -> InferenceReport:
    """Assess every detected changepoint against the universal threshold.

    ``threshold`` may be passed when it was calibrated beforehand (it must
    come from the same ``config``); otherwise it is calibrated here, using
    ``cache_dir`` for calibration records when given.
    """
    if detected.n != series.n:
        raise InvalidInputError(f"changepoints refer to n={detected.n}, series has n={series.n}")
    stat = config.stat
    n = series.n
    as_window(stat.h).check(n)
    stat = resolve_sigma(series, stat)
    record = None
    if threshold is None:
        threshold, record = calibrate(stat, config.threshold, n, series.d, series, cache_dir, threads=threads)
    thr = float(threshold)

    locs = detected.locations
    if config.null_mode == "segment":
        bounds = (0, *locs, n)
        jobs = [lambda j=j: _segment_entry(series, locs[j], bounds[j], bounds[j + 2], stat, thr)
                for j in range(len(locs))]
    else:
        design_cov = None
        if stat.family == "wald" and stat.eq is not None and stat.eq.name == "ols":
            design_cov = np.atleast_2d(np.cov(series.values[:, 1:], rowvar=False))
        jobs = [lambda t=t: _window_entry(series, t, stat, thr, design_cov) for t in locs]

    workers = min(threads or get_threads(), len(jobs))
    if workers > 1 and len(jobs) > 8:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(lambda job: job(), jobs))
    else:
        entries = [job() for job in jobs]

    extra = {}
    if stat.sigma is not None:
        extra["sigma"] = stat.sigma
    if record is not None:
        extra["calibration_key"] = record["key"]
    return InferenceReport(tuple(entries), config.null_mode, config.threshold.alpha, stat.family,
                           config.threshold.method, thr, stat.h, n, extra)


def fwer_event(report: InferenceReport, truth: ChangepointSet, h, null_mode: str | None = None) -> bool:
    """Did the report declare some true-null location reliable?"""
    if truth.n != report.n:
        raise InvalidInputError("report and truth refer to different series lengths")
    mode = null_mode or report.null_mode
    if mode not in NULL_MODES:
        raise InvalidInputError(f"null_mode must be one of {NULL_MODES}")
    reliable = report.reliable
    if not reliable:
        return False
    if mode == "window":
        nulls = true_null_set(truth, report.n, h)
        return any(t in nulls for t in reliable)
    locs = report.locations
    bounds = (0, *locs, report.n)
    for j, e in enumerate(report.entries):
        if e.reliable and segment_null_test(bounds[j], bounds[j + 2], truth):
            return True
    return False
