"""Closed-form pressure approximations, exponent rules and log-log fits."""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InsufficientDataError

__all__ = [
    "SlopeFit",
    "ComparisonReport",
    "ExponentPrediction",
    "claim1_pressure",
    "claim2_pressure",
    "claim2_low_density_flag",
    "meanfield_pressure",
    "predicted_exponent",
    "fit_loglog_slope",
    "compare_report",
]


def claim1_pressure(alpha, r1, noise_sigma, rho):
    """Lattice-sum approximation of P(rho) for the truncated repulsive power law.

    Piecewise in rho: linear below 1/r1 (no interacting lattice neighbors),
    a power law plus quadratic correction above; alpha = 1 gets its own
    logarithmic branch. Accepts scalar or array rho; the boundary point
    rho = 1/r1 uses the high-density branch.
    """
    if alpha <= 0 or r1 <= 0:
        raise DomainError("alpha and r1 must be positive")
    rho = np.asarray(rho, dtype=float)
    s2 = noise_sigma ** 2
    low = s2 * rho
    if alpha == 1.0:
        high = s2 * rho + rho ** 2 * (np.log(rho) + math.log(r1) + 1.0)
    else:
        a = alpha
        high = (s2 * rho + (a / (a - 1.0)) * rho ** (1.0 + a)
                - rho ** 2 / (r1 ** (a - 1.0) * (a - 1.0)))
    out = np.where(rho < 1.0 / r1, low, high)
    return out if out.ndim else float(out)


def claim2_pressure(alpha, beta, r0, r1, noise_sigma, rho):
    """Lattice-sum approximation of P(rho) for the attractive-repulsive family.

    Only alpha > beta > 1 is covered. Below rho = 1/r0 the value is the bare
    linear term; an unidentified O(rho) contribution is known to be missing
    there (see claim2_low_density_flag).
    """
    if beta <= 1.0:
        raise DomainError(f"only alpha > beta > 1 is supported, got beta={beta}")
    if alpha <= beta:
        raise DomainError(f"requires alpha > beta, got alpha={alpha}, beta={beta}")
    if r0 <= 0 or r1 <= r0:
        raise DomainError("requires r1 > r0 > 0")
    rho = np.asarray(rho, dtype=float)
    s2 = noise_sigma ** 2
    a, b = alpha, beta
    low = s2 * rho
    high = (s2 * rho
            + (a / (a - 1.0)) * rho ** (1.0 + a)
            - (b / (b - 1.0)) * rho ** (1.0 + b)
            - (1.0 / (r1 ** (a - 1.0) * (a - 1.0)) - 1.0 / (r1 ** (b - 1.0) * (b - 1.0))) * rho ** 2)
    out = np.where(rho < 1.0 / r0, low, high)
    return out if out.ndim else float(out)


def claim2_low_density_flag(rho, r0):
    """True where claim2_pressure carries the unidentified O(rho) term."""
    flag = np.asarray(rho, dtype=float) < 1.0 / r0
    return flag if flag.ndim else bool(flag)


def meanfield_pressure(c_v, noise_sigma, rho):
    """Quadratic mean-field law sigma^2 rho + C_V rho^2."""
    rho = np.asarray(rho, dtype=float)
    out = noise_sigma ** 2 * rho + c_v * rho ** 2
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ExponentPrediction:
    exponent: float
    log_correction: bool


def predicted_exponent(alpha, dimension, compact_support=False) -> ExponentPrediction:
    """High-density growth exponent of P(rho) for the repulsive power law.

    1 + alpha/d when the potential is non-integrable at 0 (alpha > d),
    2 in the integrable case, 2 with a logarithmic correction at alpha = d.
    Compact support in the integrable case is where simulations are known to
    deviate from the rule.
    """
    if alpha <= 0:
        raise DomainError("alpha must be positive")
    if dimension < 1:
        raise DomainError("dimension must be >= 1")
    if compact_support and alpha < dimension:
        warnings.warn(
            "integrable compactly supported potential: measured exponents "
            "are known to fall below the rho^2 rule",
            RuntimeWarning,
            stacklevel=2,
        )
    if alpha > dimension:
        return ExponentPrediction(1.0 + alpha / dimension, False)
    if alpha < dimension:
        return ExponentPrediction(2.0, False)
    return ExponentPrediction(2.0, True)


@dataclass(frozen=True)
class SlopeFit:
    """OLS of log P against log rho over a density window."""

    exponent: float
    log_prefactor: float
    r_squared: float
    window: tuple
    n_points: int


def _usable_points(curve, window, values=None):
    rho = curve.rho_values()
    p = curve.p_values() if values is None else np.asarray(values, dtype=float)
    lo, hi = window
    if not lo < hi:
        raise DomainError(f"window must satisfy rho_min < rho_max, got {window}")
    mask = (rho >= lo) & (rho <= hi)
    bad = mask & (p <= 0)
    if np.any(bad):
        warnings.warn(
            f"excluding {int(bad.sum())} nonpositive pressure point(s) from the log fit",
            RuntimeWarning,
            stacklevel=3,
        )
        mask &= p > 0
    return rho[mask], p[mask]


def fit_loglog_slope(curve, window) -> SlopeFit:
    """Least-squares slope of log p_hat vs log rho_eff inside the window."""
    rho, p = _usable_points(curve, window)
    if rho.size < 3:
        raise InsufficientDataError(
            f"need at least 3 positive curve points in {window}, found {rho.size}"
        )
    x, y = np.log(rho), np.log(p)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(resid ** 2)) / ss_tot
    return SlopeFit(float(slope), float(intercept), r2, (float(window[0]), float(window[1])),
                    int(rho.size))


@dataclass(frozen=True)
class ComparisonReport:
    """Best multiplicative rescaling of a prediction onto a measured curve."""

    prediction: str
    fitted_constant: float
    max_rel_deviation: float
    window: tuple
    n_points: int


_PREDICTIONS = {
    "claim1": lambda params, rho: claim1_pressure(
        params["alpha"], params["r1"], params["noise_sigma"], rho),
    "claim2": lambda params, rho: claim2_pressure(
        params["alpha"], params["beta"], params["r0"], params["r1"],
        params["noise_sigma"], rho),
    "meanfield": lambda params, rho: meanfield_pressure(
        params["c_v"], params["noise_sigma"], rho),
}


def prediction_function(name, params):
    if name not in _PREDICTIONS:
        raise DomainError(f"prediction must be one of {sorted(_PREDICTIONS)}, got {name!r}")
    return lambda rho: _PREDICTIONS[name](params, rho)


def compare_report(curve, prediction: str, params: dict, window=None) -> ComparisonReport:
    """Fit one constant c minimizing sum (log p - log(c * prediction))^2.

    The log-space fit (geometric mean of ratios) keeps large-rho points from
    dominating; points where either side is nonpositive are excluded with a
    warning.
    """
    if not curve.points:
        raise InsufficientDataError("curve is empty")
    pred = prediction_function(prediction, params)
    rho = curve.rho_values()
    if window is None:
        window = (float(rho.min()) * 0.999, float(rho.max()) * 1.001)
    rho_w, p_w = _usable_points(curve, window)
    pv = np.asarray(pred(rho_w), dtype=float)
    good = pv > 0
    if not np.all(good):
        warnings.warn(
            f"excluding {int((~good).sum())} point(s) with nonpositive prediction",
            RuntimeWarning,
            stacklevel=2,
        )
    rho_w, p_w, pv = rho_w[good], p_w[good], pv[good]
    if rho_w.size == 0:
        raise InsufficientDataError("no usable points for comparison")
    log_ratio = np.log(p_w) - np.log(pv)
    c = float(np.exp(log_ratio.mean()))
    max_dev = float(np.max(np.abs(p_w / (c * pv) - 1.0)))
    return ComparisonReport(prediction, c, max_dev,
                            (float(window[0]), float(window[1])), int(rho_w.size))
