"""Radial pair-potential families: values, derivatives, forces and integrals.

Every family is of the form V(x) = U(|x|) with U defined on (0, inf).
Truncated families are identically zero beyond their cutoff radius r1; the
additive constant making U continuous at r1 is always derived, never stored.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import DivergentIntegralError, DomainError, NotApplicableError

__all__ = [
    "PowerLawRepulsive",
    "PowerLawAttractiveRepulsive",
    "GaussianRepulsive",
    "GaussianCubic",
    "ZeroPotential",
    "continuity_constant",
    "value",
    "radial_derivative",
    "force",
    "virial_kernel",
    "c_v",
    "interaction_cutoff",
    "spec_to_dict",
    "spec_from_dict",
]


@dataclass(frozen=True)
class PowerLawRepulsive:
    """U(r) = 1/(alpha r^alpha) - C for r <= r1, zero beyond.

    r1 = inf marks the untruncated variant (no continuity constant exists;
    simulations cap it at L/2, the minimal-image limit).
    """

    alpha: float
    r1: float = math.inf

    def __post_init__(self):
        if self.alpha <= 0:
            raise DomainError(f"alpha must be positive, got {self.alpha}")
        if self.r1 <= 0:
            raise DomainError(f"r1 must be positive, got {self.r1}")


@dataclass(frozen=True)
class PowerLawAttractiveRepulsive:
    """U(r) = r0^a/(a r^a) - r0^b/(b r^b) + C for r <= r1, zero beyond.

    Repulsive below r0, attractive on (r0, r1); minimum at r0.
    """

    alpha: float
    beta: float
    r0: float
    r1: float

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise DomainError("alpha and beta must be positive")
        if self.alpha <= self.beta:
            raise DomainError(f"requires alpha > beta, got alpha={self.alpha}, beta={self.beta}")
        if self.r0 <= 0 or not math.isfinite(self.r1):
            raise DomainError("r0 must be positive and r1 finite")
        if self.r1 <= self.r0:
            raise DomainError(f"requires r1 > r0, got r0={self.r0}, r1={self.r1}")


@dataclass(frozen=True)
class GaussianRepulsive:
    """U(r) = exp(-r^2 / (2 width^2)), full support."""

    width: float

    def __post_init__(self):
        if self.width <= 0:
            raise DomainError(f"width must be positive, got {self.width}")


@dataclass(frozen=True)
class GaussianCubic:
    """U(r) = (1 - r^3) exp(-r^2 / (2 width^2)), read radially so V stays even.

    Sign-changing: repulsive core, attractive beyond r = 1.
    """

    width: float

    def __post_init__(self):
        if self.width <= 0:
            raise DomainError(f"width must be positive, got {self.width}")


@dataclass(frozen=True)
class ZeroPotential:
    """Non-interacting diagnostic variant: U identically zero."""


_FAMILY_NAMES = {
    PowerLawRepulsive: "power_law_repulsive",
    PowerLawAttractiveRepulsive: "power_law_attractive_repulsive",
    GaussianRepulsive: "gaussian_repulsive",
    GaussianCubic: "gaussian_cubic",
    ZeroPotential: "zero",
}


def continuity_constant(spec):
    """Constant C that makes U vanish at the cutoff r1.

    Only defined for truncated power-law families; Gaussian variants are not
    truncated and the untruncated power law has no finite cutoff.
    """
    if isinstance(spec, PowerLawRepulsive):
        if not math.isfinite(spec.r1):
            raise NotApplicableError("no continuity constant for an infinite cutoff")
        return 1.0 / (spec.alpha * spec.r1 ** spec.alpha)
    if isinstance(spec, PowerLawAttractiveRepulsive):
        a, b, r0, r1 = spec.alpha, spec.beta, spec.r0, spec.r1
        return -(r0 ** a / (a * r1 ** a) - r0 ** b / (b * r1 ** b))
    raise NotApplicableError(f"{type(spec).__name__} is not truncated")


def _check_positive_r(r):
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0) or not np.all(np.isfinite(r)):
        raise DomainError("U is only defined for r > 0")
    return r


def value(spec, r):
    """U(r). Zero beyond the cutoff for truncated families."""
    r = _check_positive_r(r)
    if isinstance(spec, ZeroPotential):
        return np.zeros_like(r) if r.ndim else 0.0
    if isinstance(spec, PowerLawRepulsive):
        u = r ** (-spec.alpha) / spec.alpha
        if math.isfinite(spec.r1):
            u = np.where(r <= spec.r1, u - continuity_constant(spec), 0.0)
        return u if u.ndim else float(u)
    if isinstance(spec, PowerLawAttractiveRepulsive):
        a, b, r0 = spec.alpha, spec.beta, spec.r0
        u = r0 ** a * r ** (-a) / a - r0 ** b * r ** (-b) / b + continuity_constant(spec)
        u = np.where(r <= spec.r1, u, 0.0)
        return u if u.ndim else float(u)
    if isinstance(spec, GaussianRepulsive):
        u = np.exp(-(r ** 2) / (2 * spec.width ** 2))
        return u if u.ndim else float(u)
    if isinstance(spec, GaussianCubic):
        u = (1 - r ** 3) * np.exp(-(r ** 2) / (2 * spec.width ** 2))
        return u if u.ndim else float(u)
    raise TypeError(f"unknown potential spec {spec!r}")


def radial_derivative(spec, r):
    """U'(r); the inside branch is used at r = r1 exactly."""
    r = _check_positive_r(r)
    if isinstance(spec, ZeroPotential):
        return np.zeros_like(r) if r.ndim else 0.0
    if isinstance(spec, PowerLawRepulsive):
        du = -(r ** (-spec.alpha - 1))
        if math.isfinite(spec.r1):
            du = np.where(r <= spec.r1, du, 0.0)
        return du if du.ndim else float(du)
    if isinstance(spec, PowerLawAttractiveRepulsive):
        a, b, r0 = spec.alpha, spec.beta, spec.r0
        du = -(r0 ** a) * r ** (-a - 1) + r0 ** b * r ** (-b - 1)
        du = np.where(r <= spec.r1, du, 0.0)
        return du if du.ndim else float(du)
    if isinstance(spec, GaussianRepulsive):
        w2 = spec.width ** 2
        du = -(r / w2) * np.exp(-(r ** 2) / (2 * w2))
        return du if du.ndim else float(du)
    if isinstance(spec, GaussianCubic):
        w2 = spec.width ** 2
        du = np.exp(-(r ** 2) / (2 * w2)) * (-3 * r ** 2 - (r / w2) * (1 - r ** 3))
        return du if du.ndim else float(du)
    raise TypeError(f"unknown potential spec {spec!r}")


def radial_curvature(spec, r):
    """U''(r), inside branch at the cutoff (stability estimates only)."""
    r = _check_positive_r(r)
    if isinstance(spec, ZeroPotential):
        return np.zeros_like(r) if r.ndim else 0.0
    if isinstance(spec, PowerLawRepulsive):
        u2 = (spec.alpha + 1) * r ** (-spec.alpha - 2)
        if math.isfinite(spec.r1):
            u2 = np.where(r <= spec.r1, u2, 0.0)
        return u2 if u2.ndim else float(u2)
    if isinstance(spec, PowerLawAttractiveRepulsive):
        a, b, r0 = spec.alpha, spec.beta, spec.r0
        u2 = (a + 1) * r0 ** a * r ** (-a - 2) - (b + 1) * r0 ** b * r ** (-b - 2)
        u2 = np.where(r <= spec.r1, u2, 0.0)
        return u2 if u2.ndim else float(u2)
    if isinstance(spec, GaussianRepulsive):
        w2 = spec.width ** 2
        u2 = (r ** 2 / w2 ** 2 - 1.0 / w2) * np.exp(-(r ** 2) / (2 * w2))
        return u2 if u2.ndim else float(u2)
    if isinstance(spec, GaussianCubic):
        w2 = spec.width ** 2
        g = -3 * r ** 2 - (r / w2) * (1 - r ** 3)
        gp = -6 * r - (1 - 4 * r ** 3) / w2
        u2 = np.exp(-(r ** 2) / (2 * w2)) * (gp - (r / w2) * g)
        return u2 if u2.ndim else float(u2)
    raise TypeError(f"unknown potential spec {spec!r}")


def force(spec, displacement):
    """Force -grad V(x) = -U'(|x|) x/|x| exerted along the displacement."""
    x = np.asarray(displacement, dtype=float)
    r = float(np.sqrt(np.sum(x ** 2)))
    if r == 0.0:
        raise DomainError("force undefined at zero displacement")
    return -radial_derivative(spec, r) * x / r


def virial_kernel(spec, displacement):
    """Isotropic virial kernel (1/d) |x| U'(|x|).

    Trace average of the per-component kernels x_a d_a V(x); negative where
    the interaction is repulsive, positive where attractive.
    """
    x = np.asarray(displacement, dtype=float)
    r = float(np.sqrt(np.sum(x ** 2)))
    if r == 0.0:
        raise DomainError("virial kernel undefined at zero displacement")
    d = x.size
    return r * radial_derivative(spec, r) / d


_SURFACE = {1: 2.0, 2: 2.0 * math.pi, 3: 4.0 * math.pi}


def c_v(spec, dimension):
    """Integral of V over R^d by adaptive quadrature (relative tol 1e-8).

    Power laws are only integrable for alpha < dimension and a finite cutoff;
    divergent requests raise rather than returning garbage.
    """
    if dimension not in _SURFACE:
        raise DomainError(f"dimension must be 1, 2 or 3, got {dimension}")
    sd = _SURFACE[dimension]
    if isinstance(spec, ZeroPotential):
        return 0.0

    if isinstance(spec, PowerLawRepulsive):
        a = spec.alpha
        if not math.isfinite(spec.r1):
            end = "r = 0" if a >= dimension else "r = inf"
            raise DivergentIntegralError(
                f"integral of the untruncated power law diverges at {end} (alpha={a}, d={dimension})"
            )
        if a >= dimension:
            raise DivergentIntegralError(
                f"integral diverges at r = 0 for alpha={a} >= d={dimension}"
            )
        C = continuity_constant(spec)
        # integrand r^(d-1-a) * (1/a - C r^a); the singular factor goes to QUADPACK
        smooth = lambda r: sd * (1.0 / a - C * r ** a)
        val, _ = integrate.quad(
            smooth, 0.0, spec.r1, weight="alg", wvar=(dimension - 1 - a, 0),
            epsabs=1e-14, epsrel=1e-10, limit=200,
        )
        return val

    if isinstance(spec, PowerLawAttractiveRepulsive):
        a, b, r0 = spec.alpha, spec.beta, spec.r0
        if a >= dimension:
            raise DivergentIntegralError(
                f"integral diverges at r = 0 for alpha={a} >= d={dimension}"
            )
        C = continuity_constant(spec)
        smooth = lambda r: sd * (r0 ** a / a - (r0 ** b / b) * r ** (a - b) + C * r ** a)
        val, _ = integrate.quad(
            smooth, 0.0, spec.r1, weight="alg", wvar=(dimension - 1 - a, 0),
            epsabs=1e-14, epsrel=1e-10, limit=200,
        )
        return val

    if isinstance(spec, (GaussianRepulsive, GaussianCubic)):
        integrand = lambda r: sd * r ** (dimension - 1) * value(spec, r)
        val, _ = integrate.quad(integrand, 0.0, np.inf, epsabs=1e-14, epsrel=1e-10, limit=200)
        return val

    raise TypeError(f"unknown potential spec {spec!r}")


def interaction_cutoff(spec, box_side):
    """Pair-interaction range used by neighbor search on a box of this side.

    Truncated families use their own cutoff; the untruncated power law is
    capped at L/2 (minimal-image limit, documented approximation); Gaussians
    are capped at 8 widths, where the tail is O(e^-32).
    """
    half = box_side / 2.0
    if isinstance(spec, ZeroPotential):
        return 0.0
    if isinstance(spec, PowerLawRepulsive):
        return min(spec.r1, half) if math.isfinite(spec.r1) else half
    if isinstance(spec, PowerLawAttractiveRepulsive):
        return spec.r1
    if isinstance(spec, (GaussianRepulsive, GaussianCubic)):
        return min(8.0 * spec.width, half)
    raise TypeError(f"unknown potential spec {spec!r}")


# --- numeric ids consumed by the compiled kernels ---

FAMILY_ZERO = 0
FAMILY_POWER_LAW = 1
FAMILY_ATTR_REP = 2
FAMILY_GAUSSIAN = 3
FAMILY_GAUSSIAN_CUBIC = 4


def kernel_params(spec):
    """(family id, parameter vector) consumed by the numba pair kernels."""
    if isinstance(spec, ZeroPotential):
        return FAMILY_ZERO, np.zeros(5)
    if isinstance(spec, PowerLawRepulsive):
        return FAMILY_POWER_LAW, np.array([spec.alpha, spec.r1, 0.0, 0.0, 0.0])
    if isinstance(spec, PowerLawAttractiveRepulsive):
        # r0^alpha and r0^beta precomputed for the hot loop
        return FAMILY_ATTR_REP, np.array([
            spec.alpha, spec.beta,
            spec.r0 ** spec.alpha, spec.r0 ** spec.beta, spec.r1,
        ])
    if isinstance(spec, GaussianRepulsive):
        return FAMILY_GAUSSIAN, np.array([spec.width, 0.0, 0.0, 0.0, 0.0])
    if isinstance(spec, GaussianCubic):
        return FAMILY_GAUSSIAN_CUBIC, np.array([spec.width, 0.0, 0.0, 0.0, 0.0])
    raise TypeError(f"unknown potential spec {spec!r}")


# --- config-file serialization (tagged records) ---

def spec_to_dict(spec):
    """Tagged record used in experiment config files."""
    name = _FAMILY_NAMES.get(type(spec))
    if name is None:
        raise TypeError(f"unknown potential spec {spec!r}")
    if isinstance(spec, PowerLawRepulsive):
        return {"family": name, "alpha": spec.alpha,
                "r1": None if not math.isfinite(spec.r1) else spec.r1}
    if isinstance(spec, PowerLawAttractiveRepulsive):
        return {"family": name, "alpha": spec.alpha, "beta": spec.beta,
                "r0": spec.r0, "r1": spec.r1}
    if isinstance(spec, (GaussianRepulsive, GaussianCubic)):
        return {"family": name, "width": spec.width}
    return {"family": name}


def spec_from_dict(record):
    """Inverse of spec_to_dict; rejects unknown families and stray fields."""
    if not isinstance(record, dict) or "family" not in record:
        raise DomainError(f"potential record must be a dict with a 'family' tag, got {record!r}")
    rec = dict(record)
    family = rec.pop("family")

    def take(fields):
        missing = [f for f in fields if f not in rec]
        if missing:
            raise DomainError(f"potential '{family}' missing fields {missing}")
        values = {f: rec.pop(f) for f in fields}
        if rec:
            raise DomainError(f"potential '{family}' has unknown fields {sorted(rec)}")
        return values

    if family == "power_law_repulsive":
        v = take(["alpha", "r1"])
        r1 = math.inf if v["r1"] is None else float(v["r1"])
        return PowerLawRepulsive(alpha=float(v["alpha"]), r1=r1)
    if family == "power_law_attractive_repulsive":
        v = take(["alpha", "beta", "r0", "r1"])
        return PowerLawAttractiveRepulsive(
            alpha=float(v["alpha"]), beta=float(v["beta"]),
            r0=float(v["r0"]), r1=float(v["r1"]),
        )
    if family == "gaussian_repulsive":
        v = take(["width"])
        return GaussianRepulsive(width=float(v["width"]))
    if family == "gaussian_cubic":
        v = take(["width"])
        return GaussianCubic(width=float(v["width"]))
    if family == "zero":
        take([])
        return ZeroPotential()
    raise DomainError(f"unknown potential family '{family}'")
