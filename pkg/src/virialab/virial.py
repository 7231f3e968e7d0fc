"""Time-averaged virial estimation of the pressure law P(rho).

The estimator samples the stationary dynamics, averages the volume-normalized
pair sum of the isotropic virial kernel (ordered pairs, each unordered pair
counted twice) and reports P̂ = sigma^2 rho_eff - Psî with a batch-means
standard error.
"""

import csv
import hashlib
import json
import time as _time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import potentials
from .dynamics import (
    ParticleState,
    SimulationConfig,
    build_initial_lattice,
    pair_quantities,
    simulate,
)
from .errors import ConfigurationError
from .torus import TorusBox

CLAMP_RATE_WARN = 1e-4


@dataclass(frozen=True)
class VirialEstimate:
    """One density point: estimated interaction virial and pressure."""

    rho_eff: float
    psi_hat: float
    p_hat: float
    std_error: float
    n_samples: int
    clamp_rate: float
    noise_sigma: float

    @classmethod
    def from_samples(cls, rho_eff, samples, noise_sigma, clamp_rate):
        samples = np.asarray(samples, dtype=float)
        if samples.size < 1:
            raise ConfigurationError("need at least one virial sample")
        psi_hat = float(samples.mean())
        return cls(
            rho_eff=float(rho_eff),
            psi_hat=psi_hat,
            p_hat=noise_sigma ** 2 * float(rho_eff) - psi_hat,
            std_error=batch_means_stderr(samples),
            n_samples=int(samples.size),
            clamp_rate=float(clamp_rate),
            noise_sigma=float(noise_sigma),
        )


def batch_means_stderr(samples, n_batches=10):
    """Standard error of the mean from batch means (autocorrelation robust)."""
    samples = np.asarray(samples, dtype=float)
    nb = min(n_batches, samples.size)
    if nb < 2:
        return 0.0
    means = np.array([b.mean() for b in np.array_split(samples, nb)])
    return float(means.std(ddof=1) / np.sqrt(nb))


@dataclass
class PressureCurve:
    """(rho, P) samples for one potential at one noise level."""

    spec: object
    noise_sigma: float
    points: list
    provenance: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def __post_init__(self):
        rho = self.rho_values()
        if np.any(np.diff(rho) <= 0):
            raise ConfigurationError("curve points must be strictly increasing in rho_eff")

    def rho_values(self):
        return np.array([p.rho_eff for p in self.points])

    def p_values(self):
        return np.array([p.p_hat for p in self.points])

    @classmethod
    def from_arrays(cls, rho, p, spec=None, noise_sigma=0.0, **kw):
        """Curve from plain arrays (synthetic data, round-trips from CSV)."""
        pts = [
            VirialEstimate(float(r), noise_sigma ** 2 * float(r) - float(v), float(v),
                           0.0, 1, 0.0, noise_sigma)
            for r, v in zip(rho, p)
        ]
        return cls(spec, noise_sigma, pts, **kw)


def virial_sum(state: ParticleState, spec, neighbors=None, min_separation=None) -> float:
    """Volume-normalized virial pair sum over ordered pairs of the state.

    (1/L^d) sum_{i != j} psi_iso(x_i - x_j); self-pairs excluded, each
    unordered pair counted twice.
    """
    _, psi, _, _ = pair_quantities(state, spec, neighbors, min_separation)
    return psi / state.box.volume


def estimate_pressure(config: SimulationConfig, threads: int = 0) -> VirialEstimate:
    """Run the dynamics and average virial_sum over the sampled snapshots."""
    if config.n_samples < 1:
        raise ConfigurationError("estimate_pressure needs n_samples >= 1")
    samples = np.empty(config.n_samples)
    rho_box = {}

    def observe(state, k):
        samples[k] = virial_sum(state, config.spec, min_separation=config.min_separation)
        rho_box["rho_eff"] = state.rho_eff

    result = simulate(config, observer=observe, threads=threads)
    if result.clamp_rate > CLAMP_RATE_WARN:
        warnings.warn(
            f"clamp rate {result.clamp_rate:.2e} exceeds {CLAMP_RATE_WARN:.0e}; "
            "the singularity clamp is biasing the virial",
            RuntimeWarning,
            stacklevel=2,
        )
    return VirialEstimate.from_samples(
        rho_box["rho_eff"], samples, config.noise_sigma, result.clamp_rate
    )


def derived_seed(base_seed: int, index: int) -> int:
    """Independent per-point seed from (seed, index)."""
    ss = np.random.SeedSequence([int(base_seed), 7700 + int(index)])
    return int(ss.generate_state(2, np.uint64)[0])


def config_digest(config: SimulationConfig) -> str:
    payload = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def pressure_curve(base_config: SimulationConfig, rho_grid, threads: int = 0) -> PressureCurve:
    """One estimate_pressure per density, independently seeded, L held fixed.

    Per-point failures are collected (not raised) so a long sweep keeps its
    completed points.
    """
    rho_grid = np.asarray(rho_grid, dtype=float)
    if rho_grid.size and np.any(np.diff(rho_grid) <= 0):
        raise ConfigurationError("rho_grid must be strictly increasing")
    points = []
    failures = []
    t0 = _time.time()
    for idx, rho in enumerate(rho_grid):
        try:
            cfg = replace(base_config, rho_nominal=float(rho),
                          seed=derived_seed(base_config.seed, idx))
            points.append(estimate_pressure(cfg, threads=threads))
        except Exception as exc:  # persisted partial results by contract
            failures.append({"rho": float(rho), "error": f"{type(exc).__name__}: {exc}"})
    provenance = {
        "seed": base_config.seed,
        "config_digest": config_digest(base_config),
        "wall_time_s": _time.time() - t0,
        "pair_convention": "ordered pairs, unordered pairs counted twice",
    }
    return PressureCurve(base_config.spec, base_config.noise_sigma, points,
                         provenance, failures)


def lattice_virial(spec, rho: float, box: TorusBox) -> float:
    """Exact double-sum virial of the frozen equilibrium lattice (no dynamics).

    Returns the interaction part of the lattice pressure, -(1/L^d) sum_{i!=j}
    psi_iso, positive for repulsion; P_lattice = sigma^2 rho + lattice_virial.
    Attractive-repulsive specs use the adhesion-cluster arrangement below
    rho = 1/r0, everything else the equally spaced lattice/grid.
    """
    if box.dimension == 1:
        mode = ("adhesion_cluster"
                if isinstance(spec, potentials.PowerLawAttractiveRepulsive)
                else "repulsive_lattice")
    else:
        mode = "grid"
    cfg = SimulationConfig(
        spec=spec, box=box, rho_nominal=rho, noise_sigma=0.0, dt=1e-12,
        burn_in_steps=0, n_samples=0, sample_stride=1, seed=0, init_mode=mode,
        min_separation=0.0,
    )
    state = build_initial_lattice(cfg)
    return -virial_sum(state, spec, min_separation=0.0)


# --- persistence ---

CURVE_HEADER = ["rho_eff", "psi_hat", "p_hat", "std_error", "n_samples", "clamp_rate"]


def write_curve_csv(curve: PressureCurve, path):
    """Curve CSV: header row, '.' decimal separator, full float precision."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_HEADER)
        for p in curve.points:
            w.writerow([repr(float(p.rho_eff)), repr(float(p.psi_hat)),
                        repr(float(p.p_hat)), repr(float(p.std_error)),
                        p.n_samples, repr(float(p.clamp_rate))])


def read_curve_csv(path):
    """(rho, p_hat) arrays plus the full column dict from a curve CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = {
        name: np.array([float(r[name]) for r in rows])
        for name in CURVE_HEADER if rows and name in rows[0]
    }
    return cols["rho_eff"], cols["p_hat"], cols


def curve_manifest(curve: PressureCurve, config: SimulationConfig | None = None,
                   extra: dict | None = None) -> dict:
    """Sidecar manifest making every CSV number recomputable."""
    from . import __version__

    manifest = {
        "code_version": __version__,
        "noise_sigma": curve.noise_sigma,
        "potential": potentials.spec_to_dict(curve.spec) if curve.spec is not None else None,
        "provenance": curve.provenance,
        "rho_eff": [p.rho_eff for p in curve.points],
        "clamp_rates": [p.clamp_rate for p in curve.points],
        "failures": curve.failures,
    }
    if config is not None:
        manifest["base_config"] = config.to_dict()
    if extra:
        manifest.update(extra)
    return manifest
