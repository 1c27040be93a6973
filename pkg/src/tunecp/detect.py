"""Built-in changepoint detectors.

These only feed TUNE with candidate locations; inference validity does not
depend on which detector is used. Multivariate series are handled through a
scalar reduction: either a single chosen coordinate or the l2 norm of the
per-coordinate standardised CUSUM / MOSUM contrasts (Gaussian costs are summed
over coordinates for PELT).
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import ChangepointSet, InvalidInputError, Series, as_window
from .estimate import robust_sigma

ALGORITHMS = ("bs_ksteps", "bs_threshold", "pelt", "mosum")
PELT_BIC_GRID = (0.25, 0.35, 0.5, 0.7, 1.0, 1.4, 2.0, 2.8, 4.0, 5.6, 8.0)


@dataclass(frozen=True)
class DetectorSpec:
    """Detector choice and its tuning parameters.

    ``lam``/``gamma`` default to ``sqrt(2 log n)`` / ``log n`` when unset.
    With ``use_bic`` the step count, threshold or penalty is chosen by BIC.
    """

    algorithm: str
    k: int | None = None
    lam: float | None = None
    gamma: float | None = None
    use_bic: bool = False
    mosum_bandwidth: int | None = None
    mosum_threshold: float | None = None
    mosum_eta: float = 0.4
    coordinate: int | None = None
    max_k: int = 30

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise InvalidInputError(f"unknown detector {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.algorithm == "bs_ksteps":
            if not self.use_bic and (self.k is None or self.k < 0):
                raise InvalidInputError("bs_ksteps needs a non-negative step count k (or use_bic)")
        elif self.k is not None:
            raise InvalidInputError("k only applies to bs_ksteps")
        if self.lam is not None and (self.algorithm != "bs_threshold" or self.use_bic):
            raise InvalidInputError("lam only applies to bs_threshold without BIC")
        if self.gamma is not None and (self.algorithm != "pelt" or self.use_bic):
            raise InvalidInputError("gamma only applies to pelt without BIC")
        if self.algorithm == "mosum":
            if self.use_bic:
                raise InvalidInputError("mosum has no BIC variant")
            if self.mosum_bandwidth is None or self.mosum_bandwidth < 1:
                raise InvalidInputError("mosum needs a positive bandwidth")
            if not 0 < self.mosum_eta <= 1:
                raise InvalidInputError("mosum_eta must lie in (0, 1]")
        elif self.mosum_bandwidth is not None or self.mosum_threshold is not None:
            raise InvalidInputError("mosum parameters only apply to the mosum detector")


def _reduce(series: Series, coordinate: int | None) -> np.ndarray:
    vals = series.values
    if coordinate is not None:
        if not 0 <= coordinate < series.d:
            raise InvalidInputError(f"coordinate {coordinate} out of range for d={series.d}")
        vals = vals[:, [coordinate]]
    return vals


def _scale(vals: np.ndarray, noise_scale) -> np.ndarray:
    if noise_scale is None:
        sig = np.atleast_1d(robust_sigma(vals)) if vals.shape[0] >= 3 else np.zeros(vals.shape[1])
        fallback = vals.std(axis=0)
        sig = np.where(sig > 0, sig, np.where(fallback > 0, fallback, 1.0))
    else:
        sig = np.broadcast_to(np.asarray(noise_scale, dtype=float), (vals.shape[1],))
        if sig.size != vals.shape[1] or np.any(sig <= 0):
            raise InvalidInputError("noise_scale must be positive (one value or one per coordinate)")
    centred = vals - np.median(vals, axis=0)
    return centred / sig


def _prefix(x: np.ndarray) -> np.ndarray:
    p = np.zeros((x.shape[0] + 1, x.shape[1]))
    np.cumsum(x, axis=0, out=p[1:])
    return p


# ----------------------------------------------------------------------------
# binary segmentation


def _best_split(p: np.ndarray, s: int, e: int) -> tuple[float, int]:
    """Max aggregated standardised CUSUM over ``s < ell < e``; ties -> smallest ell."""
    ell = np.arange(s + 1, e)
    left = p[ell] - p[s]
    right = p[e] - p[ell]
    w = np.sqrt(((ell - s) * (e - ell) * (e - s)).astype(float))[:, None]
    contrast = ((e - ell)[:, None] * left - (ell - s)[:, None] * right) / w
    vals = np.sqrt(np.einsum("ij,ij->i", contrast, contrast))
    k = int(np.argmax(vals))
    return float(vals[k]), int(ell[k])


def bs_path(x: np.ndarray, max_steps: int, nested: bool = False) -> list[tuple[int, float]]:
    """Greedy binary segmentation path as ``(location, key)`` pairs.

    Each step splits the open interval whose best CUSUM is largest. With
    ``nested=True`` the key of a child is capped by its parent's key, so the
    path lists the splits in the order a decreasing threshold admits them.
    """
    n = x.shape[0]
    p = _prefix(x)
    heap: list[tuple[float, int, int, int]] = []

    def push(s, e, cap):
        if e - s >= 2:
            val, loc = _best_split(p, s, e)
            key = min(val, cap) if nested else val
            heapq.heappush(heap, (-key, loc, s, e))

    push(0, n, math.inf)
    path = []
    while heap and len(path) < max_steps:
        negkey, loc, s, e = heapq.heappop(heap)
        path.append((loc, -negkey))
        push(s, loc, -negkey)
        push(loc, e, -negkey)
    return path


def bs_ksteps(x: np.ndarray, k: int) -> list[int]:
    return sorted(loc for loc, _ in bs_path(x, min(k, x.shape[0] - 1)))


def bs_threshold(x: np.ndarray, lam: float) -> list[int]:
    """Recursive binary segmentation: split while the best CUSUM exceeds ``lam``."""
    n = x.shape[0]
    p = _prefix(x)
    found = []
    stack = [(0, n)]
    while stack:
        s, e = stack.pop()
        if e - s < 2:
            continue
        val, loc = _best_split(p, s, e)
        if val > lam:
            found.append(loc)
            stack.append((s, loc))
            stack.append((loc, e))
    return sorted(found)


# ----------------------------------------------------------------------------
# PELT


def pelt(x: np.ndarray, penalty: float) -> list[int]:
    """Exact penalised Gaussian mean-change segmentation with PELT pruning."""
    s1 = _prefix(x)
    s2 = _prefix(x * x)
    last = _kernels.pelt_gaussian(s1, s2, float(penalty))
    cps = []
    t = x.shape[0]
    while t > 0:
        t = int(last[t])
        if t > 0:
            cps.append(t)
    return sorted(cps)


# ----------------------------------------------------------------------------
# model selection


def segment_rss(values: np.ndarray, locations) -> float:
    """Residual sum of squares of a segment-mean fit, summed over coordinates."""
    bounds = (0, *locations, values.shape[0])
    rss = 0.0
    for a, b in zip(bounds, bounds[1:]):
        seg = values[a:b]
        rss += float(((seg - seg.mean(axis=0)) ** 2).sum())
    return rss


def bic_value(values: np.ndarray, locations) -> float:
    n = values.shape[0]
    rss = segment_rss(values, locations)
    return 0.5 * n * math.log(max(rss / n, np.finfo(float).tiny)) + len(locations) * math.log(n)


def bic_count_select(series: Series, candidates) -> ChangepointSet:
    """Candidate minimising ``(n/2) log(RSS/n) + K log n``; first one wins ties."""
    candidates = list(candidates)
    if not candidates:
        raise InvalidInputError("bic_count_select needs at least one candidate")
    vals = series.values
    scores = [bic_value(vals, tuple(c)) for c in candidates]
    best = candidates[int(np.argmin(scores))]
    return best if isinstance(best, ChangepointSet) else ChangepointSet(tuple(best), series.n)


# ----------------------------------------------------------------------------
# MOSUM


def mosum_profile(x: np.ndarray, h: int) -> np.ndarray:
    """l2-aggregated MOSUM statistic for ``tau = h, ..., n-h`` on scaled data."""
    n = x.shape[0]
    p = _prefix(x)
    left = p[h:n - h + 1] - p[0:n - 2 * h + 1]
    right = p[2 * h:n + 1] - p[h:n - h + 1]
    diff = (left - right) * (math.sqrt(h / 2.0) / h)
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def mosum_detect(series: Series, h, threshold: float, eta: float = 0.4,
                 noise_scale=None, coordinate: int | None = None) -> ChangepointSet:
    """Separated local maxima of the MOSUM statistic above ``threshold``.

    Exceedances are accepted greedily in decreasing order of the statistic
    (ties to the earlier location); a location is dropped if it falls within
    ``ceil(eta*h) - 1`` of an accepted one.
    """
    h = as_window(h).h
    as_window(h).check(series.n)
    if not threshold > 0:
        raise InvalidInputError("mosum threshold must be positive")
    if not 0 < eta <= 1:
        raise InvalidInputError("eta must lie in (0, 1]")
    x = _scale(_reduce(series, coordinate), noise_scale)
    stat = mosum_profile(x, h)
    taus = np.arange(h, series.n - h + 1)
    sep = math.ceil(eta * h)
    order = np.lexsort((taus, -stat))
    chosen: list[int] = []
    for k in order:
        if not stat[k] > threshold:
            break
        t = int(taus[k])
        if all(abs(t - c) >= sep for c in chosen):
            chosen.append(t)
    return ChangepointSet(tuple(sorted(chosen)), series.n)


# ----------------------------------------------------------------------------
# front door


def detect(series: Series, spec: DetectorSpec, noise_scale=None) -> ChangepointSet:
    """Run the configured detector. ``noise_scale`` defaults to the robust estimate."""
    n = series.n
    vals = _reduce(series, spec.coordinate)
    if spec.algorithm == "mosum":
        h = spec.mosum_bandwidth
        thr = spec.mosum_threshold
        if thr is None:
            from .calibrate import threshold_gumbel

            thr = threshold_gumbel(n, h, vals.shape[1], 0.05) if n / h > math.e else math.sqrt(2 * math.log(n))
        return mosum_detect(Series(vals), h, thr, spec.mosum_eta, noise_scale)

    x = _scale(vals, noise_scale)
    if spec.algorithm == "bs_ksteps":
        if spec.use_bic:
            path = [loc for loc, _ in bs_path(x, min(spec.max_k, n - 1))]
            cands = [tuple(sorted(path[:k])) for k in range(len(path) + 1)]
            return bic_count_select(series, cands)
        if spec.k >= n:
            raise InvalidInputError(f"k={spec.k} must be smaller than n={n}")
        return ChangepointSet(tuple(bs_ksteps(x, spec.k)), n)

    if spec.algorithm == "bs_threshold":
        if spec.use_bic:
            path = bs_path(x, min(spec.max_k, n - 1), nested=True)
            cands, cur = [()], []
            for k, (loc, key) in enumerate(path):
                cur.append(loc)
                # a threshold can only separate splits with distinct keys
                if k + 1 == len(path) or path[k + 1][1] < key:
                    cands.append(tuple(sorted(cur)))
            return bic_count_select(series, cands)
        lam = spec.lam if spec.lam is not None else math.sqrt(2 * math.log(n))
        return ChangepointSet(tuple(bs_threshold(x, lam)), n)

    # pelt
    if spec.use_bic:
        seen, cands = set(), []
        for mult in PELT_BIC_GRID:
            cp = tuple(pelt(x, mult * math.log(n)))
            if cp not in seen:
                seen.add(cp)
                cands.append(cp)
        cands.sort(key=len)
        return bic_count_select(series, cands)
    gamma = spec.gamma if spec.gamma is not None else math.log(n)
    return ChangepointSet(tuple(pelt(x, gamma)), n)
