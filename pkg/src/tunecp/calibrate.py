"""Universal-threshold engines.

Every engine draws ``B`` independent maxima and returns the
``ceil((1-alpha) B)``-th order statistic. Draw ``b`` always uses its own
counter-based stream derived from ``(seed, b)``, and draws are processed in
fixed-size batches, so the result does not depend on how many worker threads
are used.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import gammaln

from . import _kernels
from .core import InvalidInputError, Series, as_window, dumps_json
from .stats import (
    SCORE_MAPS,
    StatisticSpec,
    default_trim,
    energy_profile,
    mean_profile,
    score_profile,
    segment_max,
)

METHODS = ("mc_null", "gumbel", "bootstrap", "rank_sim", "wiener_limit", "selfnorm_limit", "permutation")
COMPATIBILITY = {
    "mean": ("mc_null",),
    "max_cusum": ("mc_null",),
    "segment_mean": ("mc_null",),
    "wald": ("gumbel", "mc_null"),
    "score_g": ("bootstrap",),
    "wmw": ("rank_sim",),
    "compr": ("wiener_limit",),
    "selfnorm": ("selfnorm_limit",),
    "dist": ("permutation",),
}
DATA_DEPENDENT = ("bootstrap", "permutation")
BATCH = 64
DEFAULT_MESH = 100

_threads: int | None = None


class IncompatibleThresholdError(InvalidInputError):
    """Statistic family and threshold method do not belong together."""


def compatibility_table() -> str:
    width = max(len(f) for f in COMPATIBILITY)
    return "\n".join(f"  {fam:<{width}}  ->  {' | '.join(m)}" for fam, m in COMPATIBILITY.items())


def check_compatible(family: str, method: str) -> None:
    if family not in COMPATIBILITY:
        raise InvalidInputError(f"unknown statistic family {family!r}")
    if method not in COMPATIBILITY[family]:
        raise IncompatibleThresholdError(
            f"threshold method {method!r} cannot calibrate family {family!r}; "
            f"valid: {' or '.join(COMPATIBILITY[family])}\n{compatibility_table()}"
        )


def default_B(method: str) -> int:
    return 200 if method in DATA_DEPENDENT else 2000


@dataclass(frozen=True)
class ThresholdSpec:
    """Calibration engine and its Monte Carlo settings."""

    method: str
    alpha: float = 0.05
    B: int | None = None
    seed: int = 0
    horizon: float | None = None
    mesh: int | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidInputError(f"unknown threshold method {self.method!r}; choose from {METHODS}")
        if not 0 < self.alpha < 1:
            raise InvalidInputError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.B is None:
            object.__setattr__(self, "B", default_B(self.method))
        if int(self.B) != self.B or self.B < 1:
            raise InvalidInputError(f"B must be a positive integer, got {self.B}")
        if self.horizon is not None and not self.horizon > 2:
            raise InvalidInputError("horizon must exceed 2")
        if self.mesh is not None and self.mesh < 1:
            raise InvalidInputError("mesh must be positive")


# ----------------------------------------------------------------------------
# randomness and parallel draws


def set_threads(n: int | None) -> None:
    """Worker threads used for Monte Carlo draws (``None`` means all cores)."""
    global _threads
    if n is not None and n < 1:
        raise InvalidInputError("thread count must be positive")
    _threads = n


def get_threads() -> int:
    return _threads or os.cpu_count() or 1


def stream(seed: int, b: int) -> np.random.Generator:
    """Independent generator for draw ``b`` under ``seed``."""
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, int(b)])))


def draw_maxima(one_draw: Callable[[np.random.Generator], float], B: int, seed: int,
                threads: int | None = None) -> np.ndarray:
    """Evaluate ``one_draw(stream(seed, b))`` for ``b = 0..B-1`` in order."""
    batches = [range(lo, min(lo + BATCH, B)) for lo in range(0, B, BATCH)]

    def run(batch):
        return [float(one_draw(stream(seed, b))) for b in batch]

    workers = min(threads or get_threads(), len(batches))
    if workers <= 1:
        parts = [run(b) for b in batches]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, batches))
    return np.array([v for part in parts for v in part])


def upper_quantile(maxima, alpha: float) -> float:
    """The ``ceil((1-alpha) B)``-th smallest value (1-based)."""
    vals = np.sort(np.asarray(maxima, dtype=float))
    if vals.size == 0:
        raise InvalidInputError("no simulated maxima")
    k = max(1, math.ceil((1.0 - alpha) * vals.size - 1e-9))
    return float(vals[min(k, vals.size) - 1])


def _check_nh(n: int, h) -> int:
    h = as_window(h).h
    as_window(h).check(n)
    return h


# ----------------------------------------------------------------------------
# engines


def null_max_sampler(n: int, h, family: str, d: int = 1, trim_lambda: int | None = None,
                     stride: int | None = None) -> Callable[[np.random.Generator], float]:
    """One draw of the maximum statistic on an iid standard normal series."""
    h = _check_nh(n, h)
    if family == "mean":
        return lambda rng: float(mean_profile(rng.standard_normal(n), h).max())
    if family == "max_cusum":
        lam = default_trim(h) if trim_lambda is None else int(trim_lambda)
        if not 0 < lam < h:
            raise InvalidInputError(f"trim_lambda must lie in (0, h), got {lam}")

        def draw(rng):
            p = np.zeros(n + 1)
            np.cumsum(rng.standard_normal(n), out=p[1:])
            return float(_kernels.max_cusum_profile(p, h, lam).max())

        return draw
    if family == "segment_mean":
        return lambda rng: segment_max(rng.standard_normal(n), 1.0, stride)
    if family == "wald":
        # known-covariance limit: l2 norm of standardised mean differences
        return lambda rng: float(score_profile(rng.standard_normal((n, d)), h, "l2").max())
    raise InvalidInputError(f"mc_null does not calibrate family {family!r}")


def threshold_mc_null(n: int, h, family: str, alpha: float, B: int, seed: int, d: int = 1,
                      trim_lambda: int | None = None, stride: int | None = None,
                      threads: int | None = None) -> float:
    """Upper-alpha quantile of the max statistic over iid N(0, 1) series of length ``n``."""
    sampler = null_max_sampler(n, h, family, d, trim_lambda, stride)
    return upper_quantile(draw_maxima(sampler, B, seed, threads), alpha)


def gumbel_quantile(alpha: float) -> float:
    """``G^{-1}(1 - alpha)`` for ``P(G <= t) = exp(-2 exp(-t))``."""
    return -math.log(-math.log(1.0 - alpha) / 2.0)


def threshold_gumbel(n: int, h, d: int, alpha: float) -> float:
    """Extreme-value threshold ``(b(n/h) + G^{-1}(1-alpha)) / a(n/h)``."""
    h = as_window(h).h
    if d < 1:
        raise InvalidInputError("d must be positive")
    if not 0 < alpha < 1:
        raise InvalidInputError("alpha must lie in (0, 1)")
    x = n / h
    if x <= math.e:
        raise InvalidInputError(f"the Gumbel threshold needs n/h > e, got n/h = {x:.4g}")
    lx = math.log(x)
    a = math.sqrt(2.0 * lx)
    b = 2.0 * lx + 0.5 * d * math.log(lx) - (math.log(2.0 / 3.0) + gammaln(d / 2.0))
    return (b + gumbel_quantile(alpha)) / a


def bootstrap_sampler(scores: np.ndarray, h: int, g: str) -> Callable[[np.random.Generator], float]:
    s = np.asarray(scores, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    n = s.shape[0]
    h = _check_nh(n, h)
    diffs = np.diff(s, axis=0)
    scale = math.sqrt(h / 2.0) / (h * math.sqrt(2.0))
    taus = np.arange(h, n - h + 1)

    def draw(rng):
        e = rng.standard_normal(n)
        # fwd[i-1] = e_i (Z_{i+1} - Z_i), i = 1..n-1; bwd[i-2] = e_i (Z_i - Z_{i-1}), i = 2..n
        pf = np.zeros((n, s.shape[1]))
        np.cumsum(e[:-1, None] * diffs, axis=0, out=pf[1:])
        pb = np.zeros((n, s.shape[1]))
        np.cumsum(e[1:, None] * diffs, axis=0, out=pb[1:])
        first = pf[taus] - pf[taus - h]
        second = pb[taus + h - 1] - pb[taus - 1]
        diff = (first - second) * scale
        if g == "l2":
            return float(np.sqrt(np.einsum("ij,ij->i", diff, diff)).max())
        return float(np.abs(diff).max())

    return draw


def threshold_bootstrap(series_or_scores, h, g: str, alpha: float, B: int, seed: int,
                        threads: int | None = None) -> float:
    """Multiplier-bootstrap quantile built from first differences of the data (or scores)."""
    if g not in ("l2", "linf"):
        raise InvalidInputError("g must be 'l2' or 'linf'")
    s = series_or_scores.values if isinstance(series_or_scores, Series) else series_or_scores
    return upper_quantile(draw_maxima(bootstrap_sampler(s, as_window(h).h, g), B, seed, threads), alpha)


def threshold_rank_sim(n: int, h, alpha: float, B: int, seed: int, sampler: str = "normal",
                       threads: int | None = None) -> float:
    """Quantile of the max WMW rank sum on simulated continuous iid series."""
    h = _check_nh(n, h)
    gen = {
        "normal": lambda rng: rng.standard_normal(n),
        "exponential": lambda rng: rng.standard_exponential(n),
    }
    if sampler not in gen:
        raise InvalidInputError(f"unknown sampler {sampler!r}")
    make = gen[sampler]
    return upper_quantile(
        draw_maxima(lambda rng: float(_kernels.wmw_scan(make(rng), h).max()), B, seed, threads), alpha)


def _grid(horizon: float, mesh: int) -> int:
    steps = int(math.floor(horizon * mesh + 1e-9))
    if steps < 2 * mesh:
        raise InvalidInputError("horizon must be at least 2")
    return steps


def _brownian(rng, steps: int, mesh: int, d: int = 1) -> np.ndarray:
    w = np.zeros((steps + 1, d))
    np.cumsum(rng.standard_normal((steps, d)) / math.sqrt(mesh), axis=0, out=w[1:])
    return w


def compr_limit_sup(w: np.ndarray, mesh: int) -> float:
    """``sup_s 2^{-1/2} ||(W(s)-W(s-1)) - (W(s+1)-W(s))||`` on the grid ``s in [1, T-1]``."""
    c = np.arange(mesh, w.shape[0] - mesh)
    v = (w[c] - w[c - mesh]) - (w[c + mesh] - w[c])
    return float(np.sqrt(np.einsum("ij,ij->i", v, v)).max() / math.sqrt(2.0))


def threshold_wiener_compr(d: int, n_over_h: float, alpha: float, B: int, mesh: int, seed: int,
                           threads: int | None = None) -> float:
    """Quantile of the Wiener-process limit of the max componentwise-rank statistic."""
    if d < 1:
        raise InvalidInputError("d must be positive")
    if mesh < 10:
        raise InvalidInputError("mesh must be at least 10 points per unit")
    steps = _grid(n_over_h, mesh)
    return upper_quantile(
        draw_maxima(lambda rng: compr_limit_sup(_brownian(rng, steps, mesh, d), mesh), B, seed, threads),
        alpha)


def selfnorm_limit_sup(w: np.ndarray, mesh: int) -> float:
    """Sup of ``L^2/V`` over grid ``t in [1, T-1]`` for a 1-d path ``w``."""
    w = np.ascontiguousarray(np.asarray(w, dtype=float).reshape(-1))
    steps = w.shape[0] - 1
    return float(_kernels.selfnorm_wiener_sup(w, mesh, mesh, steps - mesh))


def threshold_selfnorm(alpha: float, B: int, horizon: float, mesh: int, seed: int,
                       threads: int | None = None) -> float:
    """Quantile of the self-normalised Wiener functional."""
    if mesh < 50:
        raise InvalidInputError("mesh must be at least 50 points per unit")
    steps = _grid(horizon, mesh)
    return upper_quantile(
        draw_maxima(lambda rng: selfnorm_limit_sup(_brownian(rng, steps, mesh)[:, 0], mesh), B, seed, threads),
        alpha)


def threshold_permutation(series, h, alpha: float, B: int, seed: int, metric: str = "euclidean",
                          threads: int | None = None) -> float:
    """Quantile of the max energy statistic over random permutations of the series."""
    from scipy.spatial.distance import cdist

    vals = series.values if isinstance(series, Series) else np.atleast_2d(np.asarray(series, dtype=float).T).T
    n = vals.shape[0]
    h = _check_nh(n, h)
    if h < 2:
        raise InvalidInputError("the energy statistic needs h >= 2")
    dist = cdist(vals, vals, metric=metric)

    def draw(rng):
        perm = rng.permutation(n)
        return float(energy_profile(dist[np.ix_(perm, perm)], h).max())

    return upper_quantile(draw_maxima(draw, B, seed, threads), alpha)


# ----------------------------------------------------------------------------
# front door with caching


def _digest(arr: np.ndarray) -> str:
    arr = np.ascontiguousarray(arr, dtype=float)
    return hashlib.sha256(str(arr.shape).encode() + arr.tobytes()).hexdigest()


def calibration_inputs(stat: StatisticSpec, tspec: ThresholdSpec, n: int, d: int,
                       series: Series | None = None, stride: int | None = None) -> dict:
    """Every input the threshold depends on, as a JSON-friendly dict."""
    method = tspec.method
    inputs = {
        "family": stat.family,
        "method": method,
        "alpha": tspec.alpha,
        "B": int(tspec.B),
        "seed": int(tspec.seed),
        "n": int(n),
        "h": int(stat.h),
        "d": int(d),
    }
    if method in ("wiener_limit", "selfnorm_limit"):
        inputs["horizon"] = float(tspec.horizon if tspec.horizon is not None else n / stat.h)
        inputs["mesh"] = int(tspec.mesh if tspec.mesh is not None else DEFAULT_MESH)
    if stat.family == "max_cusum":
        inputs["trim_lambda"] = stat.lam
    if stat.family == "segment_mean" and stride is not None:
        inputs["stride"] = int(stride)
    if method == "bootstrap":
        inputs["g"] = stat.g
        inputs["score_map"] = stat.score_map if isinstance(stat.score_map, str) else repr(stat.score_map)
    if method == "permutation":
        inputs["metric"] = stat.metric
    if method in DATA_DEPENDENT:
        if series is None:
            raise InvalidInputError(f"{method} calibration needs the series")
        inputs["data_sha256"] = _digest(series.values)
    return inputs


def cache_key(inputs: dict) -> str:
    return hashlib.sha256(json.dumps(inputs, sort_keys=True).encode()).hexdigest()


def compute_threshold(stat: StatisticSpec, tspec: ThresholdSpec, n: int, d: int = 1,
                      series: Series | None = None, stride: int | None = None,
                      threads: int | None = None) -> float:
    """Dispatch to the engine that calibrates ``stat.family``."""
    check_compatible(stat.family, tspec.method)
    m, h, a, B, seed = tspec.method, stat.h, tspec.alpha, int(tspec.B), tspec.seed
    if m == "mc_null":
        return threshold_mc_null(n, h, stat.family, a, B, seed, d=d, trim_lambda=stat.lam if stat.family == "max_cusum" else None,
                                 stride=stride, threads=threads)
    if m == "gumbel":
        return threshold_gumbel(n, h, d, a)
    if m == "bootstrap":
        if series is None:
            raise InvalidInputError("bootstrap calibration needs the series")
        return threshold_bootstrap(stat.scores(series.values), h, stat.g, a, B, seed, threads)
    if m == "rank_sim":
        return threshold_rank_sim(n, h, a, B, seed, threads=threads)
    if m == "wiener_limit":
        horizon = tspec.horizon if tspec.horizon is not None else n / h
        return threshold_wiener_compr(d, horizon, a, B, tspec.mesh or DEFAULT_MESH, seed, threads)
    if m == "selfnorm_limit":
        horizon = tspec.horizon if tspec.horizon is not None else n / h
        return threshold_selfnorm(a, B, horizon, tspec.mesh or DEFAULT_MESH, seed, threads)
    if series is None:
        raise InvalidInputError("permutation calibration needs the series")
    return threshold_permutation(series, h, a, B, seed, stat.metric, threads)


def calibrate(stat: StatisticSpec, tspec: ThresholdSpec, n: int, d: int = 1,
              series: Series | None = None, cache_dir: str | Path | None = None,
              stride: int | None = None, threads: int | None = None) -> tuple[float, dict]:
    """Threshold plus its calibration record, reusing ``cache_dir`` when possible."""
    check_compatible(stat.family, tspec.method)
    if stat.family == "wald" and stat.eq is not None:
        d = stat.eq.dim
    if stat.score_map not in SCORE_MAPS and tspec.method == "bootstrap" and cache_dir is not None:
        raise InvalidInputError("custom score maps cannot be cached")
    inputs = calibration_inputs(stat, tspec, n, d, series, stride)
    key = cache_key(inputs)
    path = Path(cache_dir) / f"{key}.json" if cache_dir is not None else None
    if path is not None and path.exists():
        try:
            rec = json.loads(path.read_text(encoding="utf-8"))
            if rec.get("inputs") == inputs:
                return float(rec["threshold"]), rec
        except (OSError, ValueError, KeyError):
            pass
    thr = compute_threshold(stat, tspec, n, d, series, stride, threads)
    from . import __version__

    rec = {"inputs": inputs, "key": key, "threshold": thr, "version": __version__}
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".tmp{os.getpid()}")
        tmp.write_text(dumps_json(rec), encoding="utf-8")
        os.replace(tmp, path)
    return thr, rec
