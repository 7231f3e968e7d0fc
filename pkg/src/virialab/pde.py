"""Explicit finite-difference solver for d/dt rho = 1/2 Laplacian P(rho).

One-dimensional unit torus, forward Euler in time, centered second difference
of P(rho) in space. The conservative stencil keeps total mass exact to
roundoff; stability is enforced up front instead of via implicit stepping.
"""

from dataclasses import dataclass

import numpy as np

from . import analysis
from .errors import ConfigurationError, DomainError, InstabilityError


class PressureLaw:
    """Pressure law P(rho): analytic claim/mean-field forms or a table.

    Tabulated laws interpolate linearly on a strictly increasing rho grid and
    extrapolate linearly from the end slopes; they plug estimator curve CSVs
    straight into the macroscopic equation.
    """

    def __init__(self, fn, name, params=None, monotone_checked=False):
        self._fn = fn
        self.name = name
        self.params = dict(params or {})

    def __call__(self, rho):
        return self._fn(np.asarray(rho, dtype=float))

    @classmethod
    def from_claim1(cls, alpha, r1, noise_sigma):
        params = {"alpha": alpha, "r1": r1, "noise_sigma": noise_sigma}
        return cls(lambda r: analysis.claim1_pressure(alpha, r1, noise_sigma, r),
                   "claim1", params)

    @classmethod
    def from_claim2(cls, alpha, beta, r0, r1, noise_sigma):
        params = {"alpha": alpha, "beta": beta, "r0": r0, "r1": r1,
                  "noise_sigma": noise_sigma}
        return cls(lambda r: analysis.claim2_pressure(alpha, beta, r0, r1, noise_sigma, r),
                   "claim2", params)

    @classmethod
    def from_meanfield(cls, c_v, noise_sigma):
        params = {"c_v": c_v, "noise_sigma": noise_sigma}
        return cls(lambda r: analysis.meanfield_pressure(c_v, noise_sigma, r),
                   "meanfield", params)

    @classmethod
    def linear(cls, noise_sigma):
        """P = sigma^2 rho: the bare heat equation (a calibration law)."""
        return cls(lambda r: noise_sigma ** 2 * r, "linear",
                   {"noise_sigma": noise_sigma})

    @classmethod
    def from_table(cls, rho_grid, p_values, name="tabulated"):
        rho_grid = np.asarray(rho_grid, dtype=float)
        p_values = np.asarray(p_values, dtype=float)
        if rho_grid.size < 2:
            raise ConfigurationError("tabulated law needs at least two nodes")
        if np.any(np.diff(rho_grid) <= 0):
            raise ConfigurationError("tabulated rho grid must be strictly increasing")
        if not np.all(np.isfinite(p_values)):
            raise ConfigurationError("tabulated P values must be finite")
        lo_slope = (p_values[1] - p_values[0]) / (rho_grid[1] - rho_grid[0])
        hi_slope = (p_values[-1] - p_values[-2]) / (rho_grid[-1] - rho_grid[-2])

        def fn(r):
            out = np.interp(r, rho_grid, p_values)
            below = r < rho_grid[0]
            above = r > rho_grid[-1]
            out = np.where(below, p_values[0] + lo_slope * (r - rho_grid[0]), out)
            out = np.where(above, p_values[-1] + hi_slope * (r - rho_grid[-1]), out)
            return out

        return cls(fn, name, {"n_nodes": int(rho_grid.size)})

    @classmethod
    def from_curve_csv(cls, path):
        from .virial import read_curve_csv

        rho, p, _ = read_curve_csv(path)
        return cls.from_table(rho, p, name=f"tabulated:{path}")

    def derivative_bound(self, lo, hi, n=512):
        """Max |P'| over [lo, hi] by finite differences on a fine grid."""
        if hi <= lo:
            hi = lo + 1.0
        grid = np.linspace(lo, hi, n)
        vals = self(grid)
        return float(np.max(np.abs(np.diff(vals) / np.diff(grid))))


@dataclass
class PdeSolution:
    grid_size: int
    dx: float
    dt: float
    snapshots: list  # (t, density vector) in emission order

    def final(self):
        return self.snapshots[-1]


def stable_time_step(law: PressureLaw, rho0, dx, safety=0.9):
    """Largest dt passing the explicit-stability precondition."""
    rho0 = np.asarray(rho0, dtype=float)
    bound = 2.0 * law.derivative_bound(float(rho0.min()), float(rho0.max()))
    if bound <= 0:
        return dx ** 2 * safety
    return safety * dx ** 2 / bound


def solve_pde(law: PressureLaw, rho0, t_end, dx, dt, snapshot_stride=1) -> PdeSolution:
    """March rho_t = 1/2 (P(rho))_xx on the unit torus to t_end.

    rho_i^{n+1} = rho_i^n + dt/(2 dx^2) (P_{i+1} - 2 P_i + P_{i-1}), periodic.
    Snapshots are emitted at t = 0, every snapshot_stride steps, and at t_end.
    """
    rho = np.asarray(rho0, dtype=float).copy()
    if rho.ndim != 1 or rho.size < 3:
        raise ConfigurationError("rho0 must be a 1-d vector with at least 3 cells")
    if np.any(rho < 0):
        raise DomainError("initial density must be nonnegative")
    M = rho.size
    if abs(M * dx - 1.0) > 1e-9:
        raise ConfigurationError(f"dx must equal 1/len(rho0); got dx={dx}, M={M}")
    if snapshot_stride < 1:
        raise ConfigurationError("snapshot_stride must be >= 1")
    # explicit stability: dt <= 0.9 dx^2 / (2 max|P'|), P' probed with 2x headroom
    dt_max = stable_time_step(law, rho, dx)
    if dt > dt_max:
        raise ConfigurationError(
            f"dt={dt:g} violates the explicit stability bound {dt_max:g} "
            "for this law and initial data"
        )
    n_steps = int(round(t_end / dt))
    coef = dt / (2.0 * dx ** 2)
    snapshots = [(0.0, rho.copy())]
    for n in range(1, n_steps + 1):
        p = np.asarray(law(rho), dtype=float)
        rho = rho + coef * (np.roll(p, -1) - 2.0 * p + np.roll(p, 1))
        if float(rho.min()) < -1e-12:
            raise InstabilityError(n, f"density fell below zero at step {n} "
                                      f"(min {float(rho.min()):.3e})")
        if n % snapshot_stride == 0 or n == n_steps:
            snapshots.append((n * dt, rho.copy()))
    return PdeSolution(M, dx, dt, snapshots)


def write_snapshots_csv(solution: PdeSolution, path):
    """CSV rows (t, x, rho) for every emitted snapshot."""
    import csv

    x = np.arange(solution.grid_size) * solution.dx
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "rho"])
        for t, rho in solution.snapshots:
            for xi, ri in zip(x, rho):
                w.writerow([repr(float(t)), repr(float(xi)), repr(float(ri))])
