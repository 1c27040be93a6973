"""Change-robust nuisance estimation.

Difference-based estimators cancel piecewise-constant signal except at the few
differences that straddle a change, which is what makes them usable on data
with unknown multiple changepoints.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import InvalidInputError, Series, as_window

NEWTON_MAX_ITER = 100
NEWTON_TOL = 1e-10
EIGEN_FLOOR = 1e-12
MAD_CONSTANT = 0.6745


class EstimationError(RuntimeError):
    """An M-estimate or covariance could not be formed on the requested block."""


@dataclass(frozen=True)
class EstimatingEquation:
    """An estimating equation ``sum_i psi_theta(Z_i) = 0``.

    ``psi`` maps a block ``(m, q)`` and ``theta`` ``(d,)`` to ``(m, d)`` values;
    ``jacobian`` returns the summed derivative ``sum_i d psi / d theta`` as a
    ``(d, d)`` matrix. ``init`` supplies a Newton starting point for a block.
    """

    name: str
    dim: int
    psi: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray, np.ndarray], np.ndarray]
    init: Callable[[np.ndarray], np.ndarray]
    jacobian_available: bool = True

    def solve(self, block: np.ndarray) -> np.ndarray:
        return solve_block(self, block)


def solve_block(eq: EstimatingEquation, block: np.ndarray) -> np.ndarray:
    """Damped Newton solve of ``sum psi_theta(Z_i) = 0`` on one block."""
    block = np.atleast_2d(np.asarray(block, dtype=float))
    theta = np.asarray(eq.init(block), dtype=float).reshape(eq.dim)
    resid = eq.psi(block, theta).sum(axis=0)
    for _ in range(NEWTON_MAX_ITER):
        if np.max(np.abs(resid)) <= NEWTON_TOL:
            return theta
        jac = eq.jacobian(block, theta)
        try:
            step = np.linalg.solve(jac, -resid)
        except np.linalg.LinAlgError:
            raise EstimationError(f"singular Jacobian while solving {eq.name}") from None
        norm = np.max(np.abs(resid))
        scale = 1.0
        while scale > 1e-8:
            cand = theta + scale * step
            if eq.name != "poisson" or np.all(cand > 0):
                cand_resid = eq.psi(block, cand).sum(axis=0)
                if np.all(np.isfinite(cand_resid)) and np.max(np.abs(cand_resid)) < norm:
                    break
            scale *= 0.5
        else:
            raise EstimationError(f"Newton line search stalled for {eq.name}")
        theta, resid = cand, cand_resid
    if np.max(np.abs(resid)) <= NEWTON_TOL:
        return theta
    raise EstimationError(f"{eq.name} solver did not converge in {NEWTON_MAX_ITER} iterations")


def _mean_psi(block, theta):
    return block - theta


def _mean_jac(block, theta):
    return -block.shape[0] * np.eye(theta.size)


def _poisson_psi(block, theta):
    return block / theta - 1.0


def _poisson_jac(block, theta):
    return np.array([[-block.sum() / theta[0] ** 2]])


def _poisson_init(block):
    m = block.mean()
    if m <= 0:
        raise EstimationError("Poisson rate estimate requires a positive block mean")
    return np.array([m])


def _ols_split(block):
    return block[:, 0], block[:, 1:]


def _ols_psi(block, theta):
    y, x = _ols_split(block)
    return -x * (y - x @ theta)[:, None]


def _ols_jac(block, theta):
    _, x = _ols_split(block)
    return x.T @ x


def _ols_init(block):
    return np.zeros(block.shape[1] - 1)


def mean_equation(d: int = 1) -> EstimatingEquation:
    return EstimatingEquation("mean", d, _mean_psi, _mean_jac, lambda b: np.zeros(b.shape[1]))


POISSON = EstimatingEquation("poisson", 1, _poisson_psi, _poisson_jac, _poisson_init)


def ols_equation(d: int) -> EstimatingEquation:
    """Linear regression; observations are rows ``(y_i, X_i)``."""
    return EstimatingEquation("ols", d, _ols_psi, _ols_jac, _ols_init)


def equation_by_name(name: str, d: int) -> EstimatingEquation:
    if name == "mean":
        return mean_equation(d)
    if name == "poisson":
        if d != 1:
            raise InvalidInputError("the Poisson equation is univariate")
        return POISSON
    if name == "ols":
        return ols_equation(d)
    raise InvalidInputError(f"unknown estimating equation {name!r}")


# ----------------------------------------------------------------------------
# difference-based scale estimators


def _diff_range(n: int, tau: int, h: int) -> tuple[int, int]:
    # 1-based i in [max(tau-h, 1), tau+h-1]; the difference Z_{i+1}-Z_i
    if not h <= tau <= n - h:
        raise InvalidInputError(f"tau={tau} needs h <= tau <= n-h (h={h}, n={n})")
    return max(tau - h, 1), tau + h - 1


def diff_variance(series: Series | np.ndarray, tau: int, h, unbiased: bool = False) -> float:
    """Local difference-based variance around ``tau``.

    Sums ``(Z_{i+1} - Z_i)^2`` for ``i = tau-h, ..., tau+h-1`` and divides by
    ``2(2h-1)``; with ``unbiased=True`` the divisor is twice the number of terms.
    """
    h = as_window(h).h
    z = _univariate(series)
    lo, hi = _diff_range(z.size, tau, h)
    diffs = z[lo:hi + 1] - z[lo - 1:hi]
    denom = 2.0 * diffs.size if unbiased else 2.0 * (2 * h - 1)
    return float(np.dot(diffs, diffs) / denom)


def robust_sigma(series: Series | np.ndarray) -> float | np.ndarray:
    """MAD of first differences scaled to estimate a Gaussian noise level.

    Multivariate input gives one estimate per column.
    """
    arr = series.values if isinstance(series, Series) else np.asarray(series, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] < 3:
        raise InvalidInputError("robust_sigma needs n >= 3")
    diffs = np.diff(arr, axis=0)
    mad = np.median(np.abs(diffs - np.median(diffs, axis=0)), axis=0)
    out = mad / (MAD_CONSTANT * np.sqrt(2.0))
    return float(out[0]) if out.size == 1 else out


def diff_covariance(series: Series | np.ndarray, unbiased: bool = False) -> np.ndarray:
    """Difference-based covariance ``{2(2n-1)}^{-1} sum_i D_i D_i^T``."""
    arr = series.values if isinstance(series, Series) else np.atleast_2d(np.asarray(series, dtype=float).T).T
    n = arr.shape[0]
    if n < 2:
        raise InvalidInputError("diff_covariance needs n >= 2")
    diffs = np.diff(arr, axis=0)
    denom = 2.0 * (n - 1) if unbiased else 2.0 * (2 * n - 1)
    return diffs.T @ diffs / denom


def check_spd(mat: np.ndarray, what: str = "matrix") -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix, rejecting near-singular input."""
    mat = np.atleast_2d(mat)
    sym = 0.5 * (mat + mat.T)
    vals, vecs = np.linalg.eigh(sym)
    top = vals.max() if vals.size else 0.0
    if top <= 0 or vals.min() < EIGEN_FLOOR * top:
        raise EstimationError(f"{what} is singular or not positive definite")
    return vals, vecs


def inv_sqrt(mat: np.ndarray, what: str = "matrix") -> np.ndarray:
    vals, vecs = check_spd(mat, what)
    return (vecs / np.sqrt(vals)) @ vecs.T


def wald_gamma_hat(
    series: Series,
    tau: int,
    h,
    eq: EstimatingEquation,
    unbiased: bool = False,
    design_cov: np.ndarray | None = None,
) -> np.ndarray:
    """Plug-in asymptotic covariance of the block M-estimator around ``tau``.

    Uses ``V^{-1} S V^{-T}`` with ``V`` the averaged Jacobian at the pooled
    window estimate and ``S`` the difference-based covariance of the psi
    values. OLS instead uses ``sigma_tau^2 * Sigma_X^{-1}`` with the residual
    variance from differenced residuals and ``Sigma_X`` from the whole series
    (pass ``design_cov`` to reuse it across locations).
    """
    h = as_window(h).h
    vals = series.values
    n = vals.shape[0]
    _diff_range(n, tau, h)
    window = vals[tau - h:tau + h]
    theta = solve_block(eq, window)
    if eq.name == "ols":
        lo = max(tau - h, 1)
        block = vals[lo - 1:tau + h]
        resid = block[:, 0] - block[:, 1:] @ theta
        diffs = np.diff(resid)
        denom = 2.0 * diffs.size if unbiased else 2.0 * (2 * h - 1)
        sigma2 = float(diffs @ diffs / denom)
        cov_x = design_cov if design_cov is not None else np.atleast_2d(np.cov(vals[:, 1:], rowvar=False))
        vals_x, vecs_x = check_spd(cov_x, "design covariance")
        return sigma2 * (vecs_x / vals_x) @ vecs_x.T
    lo = max(tau - h, 1)
    block = vals[lo - 1:tau + h]
    psi_vals = eq.psi(block, theta)
    diffs = np.diff(psi_vals, axis=0)
    denom = 2.0 * diffs.shape[0] if unbiased else 2.0 * (2 * h - 1)
    sig = diffs.T @ diffs / denom
    v = eq.jacobian(window, theta) / window.shape[0]
    try:
        v_inv = np.linalg.inv(v)
    except np.linalg.LinAlgError:
        raise EstimationError(f"singular Jacobian for {eq.name}") from None
    gamma = v_inv @ sig @ v_inv.T
    gamma = 0.5 * (gamma + gamma.T)
    check_spd(gamma, "Gamma-hat")
    return gamma


def _univariate(series) -> np.ndarray:
    if isinstance(series, Series):
        if series.d != 1:
            raise InvalidInputError("this estimator needs a univariate series")
        return series.values[:, 0]
    z = np.asarray(series, dtype=float)
    if z.ndim == 2:
        if z.shape[1] != 1:
            raise InvalidInputError("this estimator needs a univariate series")
        z = z[:, 0]
    return z
