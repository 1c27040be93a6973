"""Domain types and ground-truth utilities.

Changepoint locations follow the "last index of the left segment" convention:
a changepoint at ``tau`` splits the series into ``(0, tau]`` and ``(tau, n]``
with 1-based, half-open index ranges. Internally arrays are 0-based, so the
block ``(a, b]`` is ``values[a:b]``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class InvalidInputError(ValueError):
    """Raised when a domain object would violate one of its invariants."""


@dataclass(frozen=True, eq=False)
class Series:
    """An ``n x d`` real-valued observation matrix in temporal order."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise InvalidInputError("series values must be a vector or a matrix")
        if arr.shape[0] < 2 or arr.shape[1] < 1:
            raise InvalidInputError(f"series needs n >= 2 and d >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("series contains non-finite entries")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def column(self, j: int = 0) -> np.ndarray:
        return self.values[:, j]

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True)
class ChangepointSet:
    """Strictly increasing interior changepoint locations in ``[1, n-1]``."""

    locations: tuple[int, ...]
    n: int

    def __post_init__(self):
        locs = tuple(int(t) for t in self.locations)
        if self.n < 2:
            raise InvalidInputError("changepoints need a series length n >= 2")
        for a, b in zip(locs, locs[1:]):
            if b <= a:
                raise InvalidInputError(f"locations must be strictly increasing: {locs}")
        if locs and (locs[0] < 1 or locs[-1] > self.n - 1):
            raise InvalidInputError(f"locations must lie in [1, {self.n - 1}]: {locs}")
        object.__setattr__(self, "locations", locs)

    def __len__(self) -> int:
        return len(self.locations)

    def __iter__(self):
        return iter(self.locations)

    def to_dict(self) -> dict:
        return {"locations": list(self.locations), "n": self.n}

    @classmethod
    def from_dict(cls, data: dict, n: int | None = None) -> "ChangepointSet":
        if "locations" not in data:
            raise InvalidInputError("changepoint JSON needs a 'locations' field")
        length = data.get("n", n)
        if length is None:
            raise InvalidInputError("changepoint JSON needs 'n' or an explicit series length")
        if n is not None and int(length) != n:
            raise InvalidInputError(f"changepoints refer to n={length}, series has n={n}")
        return cls(tuple(data["locations"]), int(length))


@dataclass(frozen=True, eq=False)
class ChangeModel:
    """Ground truth: changepoints plus one parameter vector per segment."""

    changepoints: ChangepointSet
    segment_params: tuple[np.ndarray, ...]

    def __post_init__(self):
        params = tuple(np.atleast_1d(np.asarray(p, dtype=float)) for p in self.segment_params)
        if len(params) != len(self.changepoints) + 1:
            raise InvalidInputError("need exactly one parameter vector per segment")
        for k in range(1, len(params)):
            if np.array_equal(params[k - 1], params[k]):
                raise InvalidInputError(f"segments {k - 1} and {k} share the same parameter")
        object.__setattr__(self, "segment_params", params)

    def parameter_path(self) -> np.ndarray:
        """Per-observation parameter matrix ``theta_i``, shape ``(n, p)``."""
        bounds = (0, *self.changepoints.locations, self.changepoints.n)
        out = np.empty((self.changepoints.n, self.segment_params[0].size))
        for k, theta in enumerate(self.segment_params):
            out[bounds[k]:bounds[k + 1]] = theta
        return out


@dataclass(frozen=True)
class WindowConfig:
    """Window half-width ``h``."""

    h: int

    def __post_init__(self):
        if int(self.h) != self.h or self.h < 1:
            raise InvalidInputError(f"window h must be a positive integer, got {self.h}")
        object.__setattr__(self, "h", int(self.h))

    def check(self, n: int) -> None:
        if self.h > n // 2:
            raise InvalidInputError(f"window h={self.h} exceeds floor(n/2)={n // 2}")


def as_window(h) -> WindowConfig:
    return h if isinstance(h, WindowConfig) else WindowConfig(int(h))


@dataclass(frozen=True)
class ReportEntry:
    location: int
    statistic: float | None
    threshold: float
    reliable: bool
    assessable: bool
    note: str = ""

    def __post_init__(self):
        object.__setattr__(self, "location", int(self.location))
        object.__setattr__(self, "reliable", bool(self.reliable))
        object.__setattr__(self, "assessable", bool(self.assessable))
        if self.statistic is not None:
            object.__setattr__(self, "statistic", float(self.statistic))
        object.__setattr__(self, "threshold", float(self.threshold))

    def to_dict(self) -> dict:
        stat = None if self.statistic is None or not math.isfinite(self.statistic) else self.statistic
        out = {
            "location": self.location,
            "statistic": stat,
            "threshold": _json_float(self.threshold),
            "reliable": self.reliable,
            "assessable": self.assessable,
        }
        if self.note:
            out["note"] = self.note
        return out


@dataclass(frozen=True)
class InferenceReport:
    entries: tuple[ReportEntry, ...]
    null_mode: str
    alpha: float
    statistic_family: str
    threshold_method: str
    threshold: float
    h: int
    n: int
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.null_mode not in ("window", "segment"):
            raise InvalidInputError(f"unknown null mode {self.null_mode!r}")
        for e in self.entries:
            if e.reliable != (e.assessable and e.statistic is not None and e.statistic > e.threshold):
                raise InvalidInputError(f"entry at {e.location} has an inconsistent reliable flag")
            if e.threshold != self.threshold and not (math.isnan(e.threshold) and math.isnan(self.threshold)):
                raise InvalidInputError("all entries must share the universal threshold")

    @property
    def reliable(self) -> tuple[int, ...]:
        return tuple(e.location for e in self.entries if e.reliable)

    @property
    def locations(self) -> tuple[int, ...]:
        return tuple(e.location for e in self.entries)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "entries": [e.to_dict() for e in self.entries],
            "h": self.h,
            "n": self.n,
            "null_mode": self.null_mode,
            "reliable": list(self.reliable),
            "statistic_family": self.statistic_family,
            "threshold": _json_float(self.threshold),
            "threshold_method": self.threshold_method,
            **({"extra": self.extra} if self.extra else {}),
        }


def _json_float(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return None
    return x


def dumps_json(obj) -> str:
    """Stable-ordered JSON used for every file the package writes."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


# ----------------------------------------------------------------------------
# ground truth utilities


def true_null_set(truth: ChangepointSet | Iterable[int], n: int, h) -> set[int]:
    """Locations whose open neighbourhood ``(tau-h, tau+h)`` holds no true change."""
    h = as_window(h).h
    locs = np.fromiter(truth, dtype=np.int64)
    taus = np.arange(1, n)
    if locs.size == 0:
        return set(taus.tolist())
    hit = (locs[None, :] > taus[:, None] - h) & (locs[None, :] < taus[:, None] + h)
    return set(taus[~hit.any(axis=1)].tolist())


def segment_null_test(lower: int, upper: int, truth: ChangepointSet | Iterable[int]) -> bool:
    """True iff no true changepoint lies strictly inside ``(lower, upper)``."""
    if not 0 <= lower < upper:
        raise InvalidInputError(f"need 0 <= lower < upper, got ({lower}, {upper})")
    return not any(lower < t < upper for t in truth)


def hausdorff(a: ChangepointSet | Sequence[int], b: ChangepointSet | Sequence[int]) -> float:
    """Hausdorff distance between two non-empty changepoint sets."""
    x = np.fromiter(a, dtype=float)
    y = np.fromiter(b, dtype=float)
    if x.size == 0 or y.size == 0:
        raise InvalidInputError("Hausdorff distance is undefined for an empty set")
    dist = np.abs(x[:, None] - y[None, :])
    return float(max(dist.min(axis=1).max(), dist.min(axis=0).max()))


# ----------------------------------------------------------------------------
# I/O


def read_series_csv(path: str | Path) -> Series:
    """Read a numeric CSV (optional header row) into a :class:`Series`."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_series_csv(text)


def parse_series_csv(text: str) -> Series:
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise InvalidInputError("CSV input is empty")
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]
    width = len(rows[0]) if rows else 0
    data = []
    for lineno, row in enumerate(rows, start=1):
        if len(row) != width:
            raise InvalidInputError(f"CSV row {lineno} has {len(row)} fields, expected {width}")
        try:
            data.append([float(c) for c in row])
        except ValueError as exc:
            raise InvalidInputError(f"CSV row {lineno}: {exc}") from None
    if not data:
        raise InvalidInputError("CSV input has no data rows")
    return Series(np.array(data))


def write_series_csv(series: Series, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for row in series.values:
            writer.writerow([repr(float(v)) for v in row])
