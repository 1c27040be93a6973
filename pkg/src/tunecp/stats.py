"""Local two-sample statistics and their maxima over all admissible locations.

Single-location functions only read the data window they are defined on and
form every mean difference as a contrast of block sums, so adding a constant to
the whole window cancels before any division. ``scan`` evaluates a family at
every ``tau = h, ..., n-h`` using global prefix sums and compiled kernels.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist

from . import _kernels
from .core import InvalidInputError, Series, as_window
from .estimate import (
    EstimatingEquation,
    EstimationError,
    inv_sqrt,
    mean_equation,
    solve_block,
    wald_gamma_hat,
)

log = logging.getLogger(__name__)

FAMILIES = ("mean", "wald", "score_g", "wmw", "compr", "dist", "max_cusum", "selfnorm", "segment_mean")
AGGREGATIONS = ("l2", "linf")


class StatisticError(RuntimeError):
    """The statistic is undefined at the requested location."""


def identity_scores(values: np.ndarray) -> np.ndarray:
    return values


def regression_scores(values: np.ndarray) -> np.ndarray:
    """``S_i = y_i X_i`` for rows ``(y_i, X_i)``."""
    return values[:, :1] * values[:, 1:]


SCORE_MAPS = {"identity": identity_scores, "regression": regression_scores}


@dataclass(frozen=True)
class StatisticSpec:
    """Which statistic family to evaluate and with what parameters."""

    family: str
    h: int
    g: str = "l2"
    sigma: float | None = None
    eq: EstimatingEquation | None = None
    score_map: str | Callable[[np.ndarray], np.ndarray] = "identity"
    trim_lambda: int | None = None
    metric: str = "euclidean"
    unbiased_diff: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidInputError(f"unknown statistic family {self.family!r}; choose from {FAMILIES}")
        as_window(self.h)
        if self.g not in AGGREGATIONS:
            raise InvalidInputError(f"aggregation must be one of {AGGREGATIONS}")
        if self.sigma is not None and not self.sigma > 0:
            raise InvalidInputError("sigma must be positive")
        if isinstance(self.score_map, str) and self.score_map not in SCORE_MAPS:
            raise InvalidInputError(f"unknown score map {self.score_map!r}")
        if self.trim_lambda is not None and not 0 < self.trim_lambda < self.h:
            raise InvalidInputError(f"trim_lambda must lie in (0, h), got {self.trim_lambda}")
        if self.family in ("dist", "selfnorm") and self.h < 2:
            raise InvalidInputError(f"{self.family} needs h >= 2")

    @property
    def lam(self) -> int:
        return self.trim_lambda if self.trim_lambda is not None else default_trim(self.h)

    def scores(self, values: np.ndarray) -> np.ndarray:
        fn = SCORE_MAPS[self.score_map] if isinstance(self.score_map, str) else self.score_map
        return np.asarray(fn(values), dtype=float)

    def with_sigma(self, sigma: float) -> "StatisticSpec":
        return replace(self, sigma=float(sigma))


def default_trim(h: int) -> int:
    lam = math.ceil(0.1 * h)
    return min(max(lam, 1), h - 1) if h > 1 else 0


@dataclass(frozen=True)
class StatValue:
    value: float
    location: int
    family: str

    def __float__(self) -> float:
        return self.value


def _window(series, tau: int, h: int, d1: bool = False) -> np.ndarray:
    vals = series.values if isinstance(series, Series) else np.asarray(series, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    n = vals.shape[0]
    if not h <= tau <= n - h:
        raise InvalidInputError(f"tau={tau} needs h <= tau <= n-h (h={h}, n={n})")
    if d1 and vals.shape[1] != 1:
        raise InvalidInputError("this statistic needs a univariate series")
    return vals[tau - h:tau + h]


def _sigma(sigma) -> float:
    if sigma is None or not sigma > 0:
        raise InvalidInputError("sigma must be positive")
    return float(sigma)


# ----------------------------------------------------------------------------
# single-location statistics


def t_mean(series, tau: int, h, sigma: float = 1.0) -> StatValue:
    """``sqrt(h/2) |mean(Z_(tau-h,tau]) - mean(Z_(tau,tau+h])| / sigma``."""
    h = as_window(h).h
    sigma = _sigma(sigma)
    w = _window(series, tau, h, d1=True)[:, 0]
    contrast = w[:h].sum() - w[h:].sum()
    return StatValue(math.sqrt(h / 2.0) * abs(contrast) / h / sigma, tau, "mean")


def _aggregate(vec: np.ndarray, g: str) -> float:
    return float(np.sqrt(np.dot(vec, vec))) if g == "l2" else float(np.max(np.abs(vec)))


def t_score(series, tau: int, h, g: str = "l2", score_map="identity") -> StatValue:
    """Aggregated scaled difference of half-window score means."""
    h = as_window(h).h
    fn = SCORE_MAPS[score_map] if isinstance(score_map, str) else score_map
    w = _window(series, tau, h)
    s = np.asarray(fn(w), dtype=float)
    contrast = s[:h].sum(axis=0) - s[h:].sum(axis=0)
    return StatValue(_aggregate(math.sqrt(h / 2.0) * contrast / h, g), tau, "score_g")


def t_wald(series: Series, tau: int, h, eq: EstimatingEquation | None = None,
           unbiased: bool = False, design_cov: np.ndarray | None = None) -> StatValue:
    """Two-sample Wald statistic from block M-estimates."""
    h = as_window(h).h
    eq = eq or mean_equation(series.d)
    w = _window(series, tau, h)
    try:
        left = solve_block(eq, w[:h])
        right = solve_block(eq, w[h:])
        gamma = wald_gamma_hat(series, tau, h, eq, unbiased=unbiased, design_cov=design_cov)
        root = inv_sqrt(gamma, "Gamma-hat")
    except EstimationError as exc:
        raise StatisticError(str(exc)) from exc
    val = math.sqrt(h / 2.0) * np.linalg.norm(root @ (left - right))
    return StatValue(float(val), tau, "wald")


def _ranks(window: np.ndarray) -> np.ndarray:
    # R_i = #{j : Z_j <= Z_i} per column, counted inside the window
    out = np.empty(window.shape, dtype=np.int64)
    for k in range(window.shape[1]):
        col = window[:, k]
        out[:, k] = np.searchsorted(np.sort(col), col, side="right")
    return out


def t_wmw(series, tau: int, h) -> StatValue:
    """Rank sum of the right half-window within the full window."""
    h = as_window(h).h
    w = _window(series, tau, h, d1=True)[:, 0]
    total = int((w[None, :] <= w[h:, None]).sum())
    return StatValue(float(total), tau, "wmw")


def t_compr(series, tau: int, h) -> StatValue:
    """Componentwise-rank statistic standardised by the rank covariance."""
    h = as_window(h).h
    w = _window(series, tau, h)
    d = w.shape[1]
    if 2 * h <= d:
        raise InvalidInputError(f"compr needs 2h > d (h={h}, d={d})")
    ranks = _ranks(w)
    centred = ranks / (2.0 * h) - 0.5
    cov = (2.0 / h) * centred.T @ centred
    try:
        root = inv_sqrt(cov, "rank covariance")
    except EstimationError as exc:
        raise StatisticError(str(exc)) from exc
    rank_sum = (ranks[h:] - (2 * h + 1) / 2.0).sum(axis=0)
    val = np.linalg.norm(math.sqrt(2.0) * h ** -1.5 * (root @ rank_sum))
    return StatValue(float(val), tau, "compr")


def t_dist(series, tau: int, h, metric: str = "euclidean") -> StatValue:
    """Energy-distance U-statistic between the two half-windows (may be negative)."""
    h = as_window(h).h
    if h < 2:
        raise InvalidInputError("dist needs h >= 2")
    w = _window(series, tau, h)
    dist = cdist(w, w, metric=metric)
    return StatValue(float(_energy(dist, h)), tau, "dist")


def _energy(dist: np.ndarray, h: int) -> float:
    between = dist[:h, h:].sum()
    within = dist[:h, :h].sum() + dist[h:, h:].sum()
    return 2.0 / h ** 2 * between - within / (h * (h - 1))


def m_max_cusum(series, tau: int, h, trim_lambda: int | None = None, sigma: float = 1.0) -> StatValue:
    """Max of weighted CUSUM contrasts over split points inside the trimmed window."""
    h = as_window(h).h
    sigma = _sigma(sigma)
    lam = default_trim(h) if trim_lambda is None else int(trim_lambda)
    if not 0 < lam < h:
        raise InvalidInputError(f"trim_lambda must lie in (0, h), got {lam}")
    j = np.arange(lam + 1, 2 * h - lam)
    if j.size == 0:
        raise InvalidInputError("trimmed split range is empty")
    w = _window(series, tau, h, d1=True)[:, 0]
    p = np.concatenate(([0.0], np.cumsum(w)))
    total = p[-1]
    contrast = (2 * h - j) * p[j] - j * (total - p[j])
    vals = np.abs(contrast) / np.sqrt(j * (2 * h - j) * 2.0 * h)
    return StatValue(float(vals.max()) / sigma, tau, "max_cusum")


def _cusum_L(p: np.ndarray, a: int, ell: np.ndarray, b: int) -> np.ndarray:
    # ((ell-a)(b-ell)/(b-a)^{3/2}) * (mean(a,ell] - mean(ell,b])
    return ((b - ell) * (p[ell] - p[a]) - (ell - a) * (p[b] - p[ell])) / (b - a) ** 1.5


def s_selfnorm(series, tau: int, h) -> StatValue:
    """Locally self-normalised two-sample statistic."""
    h = as_window(h).h
    if h < 2:
        raise InvalidInputError("selfnorm needs h >= 2")
    w = _window(series, tau, h, d1=True)[:, 0]
    p = np.concatenate(([0.0], np.cumsum(w)))
    top = _cusum_L(p, 0, np.array([h]), 2 * h)[0]
    left = _cusum_L(p, 0, np.arange(1, h + 1), h)
    right = _cusum_L(p, h, np.arange(h + 1, 2 * h + 1), 2 * h)
    denom = (np.dot(left, left) + np.dot(right, right)) / h
    if not denom > 0:
        raise StatisticError("self-normaliser vanishes on a constant window")
    return StatValue(float(top * top / denom), tau, "selfnorm")


def t_segment(series, tau: int, lower: int, upper: int, sigma: float = 1.0) -> StatValue:
    """Absolute two-segment z-statistic comparing ``(lower, tau]`` with ``(tau, upper]``."""
    sigma = _sigma(sigma)
    vals = series.values if isinstance(series, Series) else np.asarray(series, dtype=float)
    if vals.ndim == 2:
        if vals.shape[1] != 1:
            raise InvalidInputError("segment statistic needs a univariate series")
        vals = vals[:, 0]
    n = vals.shape[0]
    if not 0 <= lower < tau < upper <= n:
        raise InvalidInputError(f"need 0 <= lower < tau < upper <= n, got ({lower}, {tau}, {upper})")
    m1, m2 = tau - lower, upper - tau
    c = m2 * vals[lower:tau].sum() - m1 * vals[tau:upper].sum()
    return StatValue(math.sqrt(c * c / (m1 * m2 * (m1 + m2))) / sigma, tau, "segment_mean")


def evaluate(series: Series, tau: int, spec: StatisticSpec, design_cov=None) -> StatValue:
    """Evaluate a window family at one location."""
    fam, h = spec.family, spec.h
    if fam == "mean":
        return t_mean(series, tau, h, _sigma(spec.sigma))
    if fam == "wald":
        return t_wald(series, tau, h, spec.eq, spec.unbiased_diff, design_cov)
    if fam == "score_g":
        return t_score(series, tau, h, spec.g, spec.score_map)
    if fam == "wmw":
        return t_wmw(series, tau, h)
    if fam == "compr":
        return t_compr(series, tau, h)
    if fam == "dist":
        return t_dist(series, tau, h, spec.metric)
    if fam == "max_cusum":
        return m_max_cusum(series, tau, h, spec.lam, _sigma(spec.sigma))
    if fam == "selfnorm":
        return s_selfnorm(series, tau, h)
    raise InvalidInputError("segment_mean needs explicit segment bounds; use t_segment")


# ----------------------------------------------------------------------------
# all-location scans


@dataclass(frozen=True)
class LocationScan:
    taus: np.ndarray
    values: np.ndarray
    skipped: int

    @property
    def max(self) -> float:
        ok = self.values[np.isfinite(self.values)]
        return float(ok.max()) if ok.size else float("nan")


def _offset(z: np.ndarray) -> np.ndarray:
    # integer shift keeps exactly representable data exact
    return z - np.round(np.median(z, axis=0))


def _prefix(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    out = np.zeros((z.shape[0] + 1,) + z.shape[1:])
    np.cumsum(z, axis=0, out=out[1:])
    return out


def mean_profile(z: np.ndarray, h: int) -> np.ndarray:
    """``|sum left - sum right| * sqrt(h/2)/h`` for every ``tau``; works on ``(n,)`` or ``(B, n)``."""
    z = np.asarray(z, dtype=float)
    p = np.zeros(z.shape[:-1] + (z.shape[-1] + 1,))
    np.cumsum(z, axis=-1, out=p[..., 1:])
    n = z.shape[-1]
    left = p[..., h:n - h + 1] - p[..., 0:n - 2 * h + 1]
    right = p[..., 2 * h:n + 1] - p[..., h:n - h + 1]
    return np.abs(left - right) * (math.sqrt(h / 2.0) / h)


def score_profile(s: np.ndarray, h: int, g: str) -> np.ndarray:
    """Aggregated contrast for every ``tau``; ``s`` is ``(n, d)``."""
    p = _prefix(s)
    n = s.shape[0]
    left = p[h:n - h + 1] - p[0:n - 2 * h + 1]
    right = p[2 * h:n + 1] - p[h:n - h + 1]
    diff = (left - right) * (math.sqrt(h / 2.0) / h)
    if g == "l2":
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return np.abs(diff).max(axis=1)


def energy_profile(dist: np.ndarray, h: int) -> np.ndarray:
    """Energy statistic at every ``tau`` from a full pairwise distance matrix."""
    n = dist.shape[0]
    sat = np.zeros((n + 1, n + 1))
    np.cumsum(np.cumsum(dist, axis=0), axis=1, out=sat[1:, 1:])
    a = np.arange(0, n - 2 * h + 1)
    t = a + h
    b = a + 2 * h

    def block(r0, r1, c0, c1):
        return sat[r1, c1] - sat[r0, c1] - sat[r1, c0] + sat[r0, c0]

    between = block(a, t, t, b)
    within = block(a, t, a, t) + block(t, b, t, b)
    return 2.0 / h ** 2 * between - within / (h * (h - 1))


def scan(series: Series, spec: StatisticSpec) -> LocationScan:
    """Evaluate a window family at every admissible ``tau = h, ..., n-h``."""
    h = spec.h
    n = series.n
    as_window(h).check(n)
    taus = np.arange(h, n - h + 1)
    fam = spec.family
    vals = series.values
    skipped = 0
    if fam == "mean":
        _need_d1(series)
        out = mean_profile(_offset(vals[:, 0]), h) / _sigma(spec.sigma)
    elif fam == "score_g":
        out = score_profile(spec.scores(vals), h, spec.g)
    elif fam == "max_cusum":
        _need_d1(series)
        p = _prefix(_offset(vals[:, 0]))
        out = _kernels.max_cusum_profile(p, h, spec.lam) / _sigma(spec.sigma)
    elif fam == "selfnorm":
        _need_d1(series)
        out = _kernels.selfnorm_scan(_prefix(_offset(vals[:, 0])), h)
    elif fam == "wmw":
        _need_d1(series)
        out = _kernels.wmw_scan(np.ascontiguousarray(vals[:, 0]), h).astype(float)
    elif fam == "dist":
        if n <= 4000:
            out = energy_profile(cdist(vals, vals, metric=spec.metric), h)
        else:
            out = np.array([t_dist(series, int(t), h, spec.metric).value for t in taus])
    elif fam in ("wald", "compr"):
        design_cov = None
        if fam == "wald" and spec.eq is not None and spec.eq.name == "ols":
            design_cov = np.atleast_2d(np.cov(vals[:, 1:], rowvar=False))
        out = np.empty(taus.size)
        for k, t in enumerate(taus):
            try:
                out[k] = (t_compr(series, int(t), h) if fam == "compr"
                          else t_wald(series, int(t), h, spec.eq, spec.unbiased_diff, design_cov)).value
            except StatisticError:
                out[k] = np.nan
    else:
        raise InvalidInputError("segment_mean has no per-location scan; use max_over_locations")
    bad = ~np.isfinite(out)
    skipped = int(bad.sum())
    if skipped:
        log.info("%d of %d locations have an undefined %s statistic", skipped, out.size, fam)
    return LocationScan(taus, out, skipped)


def segment_max(series, sigma: float = 1.0, stride: int | None = None) -> float:
    """Max of the segment statistic over all ``0 <= lower < tau < upper <= n``."""
    vals = series.values[:, 0] if isinstance(series, Series) else np.asarray(series, dtype=float)
    if isinstance(series, Series):
        _need_d1(series)
    n = vals.shape[0]
    if stride is None:
        stride = 1 if n <= 600 else int(math.ceil(n / 600))
    return _kernels.segment_scan(_prefix(_offset(vals)), int(stride)) / _sigma(sigma)


def max_over_locations(series: Series, spec: StatisticSpec, stride: int | None = None,
                       with_skipped: bool = False):
    """Maximum statistic value over the admissible index set.

    Locations where the statistic is undefined are skipped; pass
    ``with_skipped=True`` to also get their count.
    """
    if spec.family == "segment_mean":
        res, skipped = segment_max(series, _sigma(spec.sigma), stride), 0
    else:
        sc = scan(series, spec)
        res, skipped = sc.max, sc.skipped
    return (res, skipped) if with_skipped else res


def _need_d1(series: Series) -> None:
    if series.d != 1:
        raise InvalidInputError("this statistic needs a univariate series")
