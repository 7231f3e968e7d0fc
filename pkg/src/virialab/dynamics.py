"""Microscopic simulation: lattices, neighbor search, forces, EM integration.

The hot loops live in _kernels; this module owns configuration, seeding and
the observer protocol. Trajectories are deterministic for a fixed seed: noise
is drawn in (step, particle, component) order from one counter-based stream,
independent of how forces are accumulated.
"""

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels, potentials
from .errors import BlowUpError, ConfigurationError
from .torus import TorusBox, minimal_image, wrap

_NOISE_TAG = 0
_INIT_TAG = 1
_FALLBACK_TAG = 2

_MODES = ("repulsive_lattice", "adhesion_cluster", "uniform_random", "grid")


@dataclass
class ParticleState:
    """Positions of K particles on the torus at a simulation time."""

    positions: np.ndarray  # (K, d), wrapped into [0, L)^d
    time: float
    box: TorusBox

    def __post_init__(self):
        p = np.ascontiguousarray(self.positions, dtype=float)
        if p.ndim != 2 or p.shape[1] != self.box.dimension:
            raise ConfigurationError(
                f"positions must be (K, {self.box.dimension}), got {p.shape}"
            )
        self.positions = p

    @property
    def n_particles(self) -> int:
        return self.positions.shape[0]

    @property
    def rho_eff(self) -> float:
        """Effective density K / L^d; used in all formulas downstream."""
        return self.n_particles / self.box.volume

    def copy(self):
        return ParticleState(self.positions.copy(), self.time, self.box)


@dataclass
class SimulationConfig:
    spec: object
    box: TorusBox
    rho_nominal: float
    noise_sigma: float
    dt: float
    burn_in_steps: int
    n_samples: int
    sample_stride: int
    seed: int
    min_separation: float | None = None
    init_mode: str = "repulsive_lattice"
    dump_path: str | None = None  # trajectory CSV at sample times, off by default

    def __post_init__(self):
        if self.rho_nominal <= 0:
            raise ConfigurationError(f"rho_nominal must be positive, got {self.rho_nominal}")
        if self.dt <= 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if self.noise_sigma < 0:
            raise ConfigurationError(f"noise_sigma must be nonnegative, got {self.noise_sigma}")
        if self.burn_in_steps < 0 or self.n_samples < 0 or self.sample_stride < 1:
            raise ConfigurationError("burn_in_steps, n_samples >= 0 and sample_stride >= 1 required")
        if self.init_mode not in _MODES:
            raise ConfigurationError(f"init_mode must be one of {_MODES}, got {self.init_mode!r}")
        if self.init_mode == "adhesion_cluster" and not isinstance(
            self.spec, potentials.PowerLawAttractiveRepulsive
        ):
            raise ConfigurationError("adhesion_cluster needs an attractive-repulsive potential (r0)")
        if self.particle_count() < 1:
            raise ConfigurationError("rho_nominal * volume must give at least one particle")
        L = self.box.side
        r1 = getattr(self.spec, "r1", math.inf)
        if math.isfinite(r1) and r1 > L / 2:
            raise ConfigurationError(
                f"potential cutoff r1={r1} exceeds L/2={L / 2}: "
                "minimal-image convention breaks; enlarge the box"
            )
        if self.min_separation is None:
            self.min_separation = default_min_separation(self.spec, self.box)
        if self.min_separation < 0:
            raise ConfigurationError("min_separation must be nonnegative")
        k = lattice_stiffness(self.spec, self.rho_nominal, self.box)
        if self.dt * k > 1.0:
            warnings.warn(
                f"dt={self.dt:g} is large for lattice stiffness {k:.3g} "
                f"(dt*k={self.dt * k:.2g} > 1); expect discretization bias or rattling",
                RuntimeWarning,
                stacklevel=2,
            )

    def particle_count(self) -> int:
        """K = floor(rho_nominal * L^d)."""
        return int(math.floor(self.rho_nominal * self.box.volume))

    def cutoff(self) -> float:
        return potentials.interaction_cutoff(self.spec, self.box.side)

    def to_dict(self) -> dict:
        """JSON-ready record with every resolved value (manifest payload)."""
        return {
            "potential": potentials.spec_to_dict(self.spec),
            "box": {"dimension": self.box.dimension, "side": self.box.side},
            "rho_nominal": self.rho_nominal,
            "noise_sigma": self.noise_sigma,
            "dt": self.dt,
            "burn_in_steps": self.burn_in_steps,
            "n_samples": self.n_samples,
            "sample_stride": self.sample_stride,
            "seed": self.seed,
            "min_separation": self.min_separation,
            "init_mode": self.init_mode,
        }


def default_min_separation(spec, box: TorusBox) -> float:
    """Force-singularity clamp: 1e-3 of the potential's own length scale."""
    if isinstance(spec, potentials.ZeroPotential):
        return 0.0
    if isinstance(spec, potentials.PowerLawRepulsive):
        scale = spec.r1 if math.isfinite(spec.r1) else box.side / 2
    elif isinstance(spec, potentials.PowerLawAttractiveRepulsive):
        scale = spec.r1
    else:
        scale = spec.width
    return 1e-3 * scale


def lattice_stiffness(spec, rho, box: TorusBox) -> float:
    """Curvature sum of the interaction at the equilibrium lattice spacing.

    Explicit Euler needs dt below ~1/k for the stiffest bond; used by the
    startup warning and by stable_dt.
    """
    if isinstance(spec, potentials.ZeroPotential):
        return 0.0
    d = box.dimension
    spacing = rho ** (-1.0 / d)
    cutoff = potentials.interaction_cutoff(spec, box.side)
    k = 0.0
    m = 1
    while m * spacing <= cutoff and m < 10_000:
        k += 2 * d * abs(potentials.radial_curvature(spec, m * spacing))
        m += 1
    return k


def stable_dt(spec, rho, box: TorusBox, cap=1e-4, safety=0.2) -> float:
    """Largest time step <= cap keeping the lattice modes stable."""
    k = lattice_stiffness(spec, rho, box)
    if k <= 0:
        return cap
    return min(cap, safety / k)


def diffusive_burn_in_steps(box: TorusBox, noise_sigma, dt, multiplier=10.0) -> int:
    """Step count for `multiplier` diffusive box-crossing times.

    Conservative global-mixing heuristic; lattice-initialized runs need far
    less, so experiment configs set burn_in_steps explicitly.
    """
    if noise_sigma <= 0:
        raise ConfigurationError("diffusive time scale undefined for zero noise")
    t = multiplier * box.side ** 2 / noise_sigma ** 2
    return int(math.ceil(t / dt))


# --- initial configurations ---

def build_initial_lattice(config: SimulationConfig) -> ParticleState:
    """Deterministic equilibrium-style initial state per config.init_mode."""
    box = config.box
    L, d = box.side, box.dimension
    K = config.particle_count()
    mode = config.init_mode

    if mode == "uniform_random":
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([config.seed, _INIT_TAG])))
        pos = rng.uniform(0.0, L, size=(K, d))
        return ParticleState(pos, 0.0, box)

    if mode == "grid" or (mode == "repulsive_lattice" and d > 1):
        n = round(K ** (1.0 / d))
        n = max(n, 1)
        if n ** d != K:
            warnings.warn(
                f"K={K} is not a perfect {d}-th power; using nearest feasible K={n ** d}",
                RuntimeWarning,
                stacklevel=2,
            )
        spacing = L / n
        axes = [np.arange(n) * spacing for _ in range(d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pos = np.stack([m.ravel() for m in mesh], axis=1)
        return ParticleState(pos, 0.0, box)

    if d != 1:
        raise ConfigurationError(f"init_mode {mode!r} is one-dimensional; use 'grid' for d={d}")

    if mode == "adhesion_cluster":
        r0 = config.spec.r0
        rho_eff = K / L
        if rho_eff < 1.0 / r0:
            # cluster of spacing r0 occupying a contiguous arc
            pos = (np.arange(K) * r0).reshape(K, 1)
            return ParticleState(wrap(pos, box), 0.0, box)
        # compressed regime: same as the equally spaced lattice

    spacing = L / K
    pos = (np.arange(K) * spacing).reshape(K, 1)
    return ParticleState(pos, 0.0, box)


# --- neighbor structure ---

@dataclass
class NeighborList:
    """Cell decomposition of the box with cell side >= cutoff.

    Small boxes (fewer than 3 cells in some direction) fall back to an
    all-pairs sweep; pair iteration semantics are identical.
    """

    box: TorusBox
    cutoff: float
    use_cells: bool
    ncells: np.ndarray
    cell_len: np.ndarray
    offsets: np.ndarray
    cell_of: np.ndarray
    counts: np.ndarray
    order: np.ndarray

    def iter_pairs(self, positions):
        """Unordered (i, j) pairs with torus distance <= cutoff."""
        K = positions.shape[0]
        seen = []
        for i in range(K):
            for j in self._candidates(i, positions):
                if j > i:
                    dx = minimal_image(positions[i], positions[j], self.box)
                    if float(np.sqrt(np.sum(dx ** 2))) <= self.cutoff:
                        seen.append((i, j))
        return sorted(seen)

    def _candidates(self, i, positions):
        if not self.use_cells:
            return [j for j in range(positions.shape[0]) if j != i]
        d = self.box.dimension
        coords = []
        for k in range(d):
            c = int(positions[i, k] / self.cell_len[k])
            coords.append(min(max(c, 0), int(self.ncells[k]) - 1))
        out = []
        for off in self.offsets:
            cid = 0
            for k in range(d):
                cid = cid * int(self.ncells[k]) + (coords[k] + int(off[k])) % int(self.ncells[k])
            for idx in range(self.counts[cid], self.counts[cid + 1]):
                j = int(self.order[idx])
                if j != i:
                    out.append(j)
        return out


def _cell_geometry(box: TorusBox, cutoff: float):
    d, L = box.dimension, box.side
    m = max(1, int(L / cutoff)) if cutoff > 0 else 1
    ncells = np.full(d, m, dtype=np.int64)
    cell_len = np.full(d, L / m, dtype=float)
    per_dim = (-1, 0, 1) if m >= 3 else ((0, 1) if m == 2 else (0,))
    grids = np.meshgrid(*([list(per_dim)] * d), indexing="ij")
    offsets = np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)
    use_cells = m ** d > len(per_dim) ** d
    return ncells, cell_len, offsets, use_cells


def build_neighbor_list(state: ParticleState, cutoff: float) -> NeighborList:
    box = state.box
    if cutoff > box.side / 2:
        raise ConfigurationError(
            f"cutoff {cutoff} exceeds L/2 = {box.side / 2}: box too small for this potential"
        )
    if cutoff <= 0:
        raise ConfigurationError("cutoff must be positive")
    K = state.n_particles
    ncells, cell_len, offsets, use_cells = _cell_geometry(box, cutoff)
    cell_of = np.zeros(K, dtype=np.int64)
    counts = np.zeros(int(np.prod(ncells)) + 1, dtype=np.int64)
    order = np.zeros(K, dtype=np.int64)
    if use_cells:
        _kernels._build_cells(state.positions, box.side, ncells, cell_len, cell_of, counts, order)
    else:
        counts[1:] = K
        order[:] = np.arange(K)
    return NeighborList(box, float(cutoff), use_cells, ncells, cell_len, offsets,
                        cell_of, counts, order)


# --- forces ---

@dataclass
class ForceDiagnostics:
    clamp_events: int
    pair_evals: int


class _Workspace:
    """Reusable kernel buffers for one (K, d, cutoff) combination."""

    def __init__(self, K, box: TorusBox, cutoff):
        self.ncells, self.cell_len, self.offsets, self.use_cells = _cell_geometry(box, cutoff)
        self.cell_of = np.zeros(K, dtype=np.int64)
        self.counts = np.zeros(int(np.prod(self.ncells)) + 1, dtype=np.int64)
        self.order = np.zeros(K, dtype=np.int64)
        self.force = np.zeros((K, box.dimension))
        self.psi = np.zeros(K)
        self.clamped = np.zeros(K, dtype=np.int64)
        self.npairs = np.zeros(K, dtype=np.int64)


def _fallback_direction(seed, d):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, _FALLBACK_TAG])))
    v = rng.standard_normal(2)
    v /= np.sqrt(np.sum(v ** 2))
    out = np.zeros(2)
    out[:d] = v[:d] / np.sqrt(np.sum(v[:d] ** 2))
    return out


def pair_quantities(state: ParticleState, spec, neighbors: NeighborList | None = None,
                    min_separation: float | None = None, coincident_direction=None,
                    parallel=False):
    """One pass over interacting pairs: forces, summed virial kernel, counters.

    Returns (force matrix, sum of the isotropic virial kernel over ordered
    pairs, clamp events, pair evaluations).
    """
    box = state.box
    cutoff = neighbors.cutoff if neighbors is not None else potentials.interaction_cutoff(spec, box.side)
    own_cut = potentials.interaction_cutoff(spec, box.side)
    if neighbors is not None and neighbors.cutoff < own_cut:
        raise ConfigurationError(
            f"neighbor cutoff {neighbors.cutoff} is below the interaction range {own_cut}"
        )
    if min_separation is None:
        min_separation = default_min_separation(spec, box)
    famid, params = potentials.kernel_params(spec)
    K, d = state.positions.shape
    fallback = np.zeros(2)
    fallback[0] = 1.0
    if coincident_direction is not None:
        fallback[:d] = np.asarray(coincident_direction, dtype=float)[:d]

    if cutoff <= 0:
        return np.zeros((K, d)), 0.0, 0, 0

    ws = _Workspace(K, box, cutoff)
    if neighbors is not None:
        ws.use_cells = neighbors.use_cells
        if neighbors.use_cells:
            ws.ncells, ws.cell_len, ws.offsets = neighbors.ncells, neighbors.cell_len, neighbors.offsets
            ws.cell_of, ws.counts, ws.order = neighbors.cell_of, neighbors.counts, neighbors.order
    elif ws.use_cells:
        _kernels._build_cells(state.positions, box.side, ws.ncells, ws.cell_len,
                              ws.cell_of, ws.counts, ws.order)

    pass_fn = _kernels._pair_pass_par if parallel else _kernels._pair_pass
    pass_fn(state.positions, box.side, famid, params, cutoff, min_separation,
            fallback, ws.ncells, ws.cell_len, ws.offsets, ws.counts, ws.order,
            ws.force, ws.psi, ws.clamped, ws.npairs, ws.use_cells)
    return ws.force, float(ws.psi.sum()), int(ws.clamped.sum()), int(ws.npairs.sum())


def compute_forces(state: ParticleState, spec, neighbors: NeighborList | None = None,
                   min_separation: float | None = None, coincident_direction=None,
                   with_diagnostics=False):
    """Pairwise forces F_i = sum_j -grad V(x_i - x_j) within the cutoff.

    Pairs closer than min_separation are evaluated at min_separation along
    the actual direction (singularity clamp); exact coincidences use the
    seeded fallback direction and are counted in the diagnostics.
    """
    force, _, clamped, npairs = pair_quantities(
        state, spec, neighbors, min_separation, coincident_direction
    )
    return (force, ForceDiagnostics(clamped, npairs)) if with_diagnostics else force


def total_energy(state: ParticleState, spec) -> float:
    """Half-sum of V over ordered pairs within the cutoff (test oracle)."""
    pos = state.positions
    K = pos.shape[0]
    cutoff = potentials.interaction_cutoff(spec, state.box.side)
    e = 0.0
    for i in range(K):
        for j in range(i + 1, K):
            dx = minimal_image(pos[i], pos[j], state.box)
            r = float(np.sqrt(np.sum(dx ** 2)))
            if 0 < r <= cutoff:
                e += potentials.value(spec, r)
    return e


# --- stochastic integration ---

def noise_generator(config: SimulationConfig):
    """The counter-based stream simulate() consumes, exposed for replay."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([config.seed, _NOISE_TAG])))


def em_step(state: ParticleState, config: SimulationConfig, rng) -> ParticleState:
    """One Euler-Maruyama step: x += F dt + sigma sqrt(dt) xi, wrapped."""
    out = state.copy()
    K, d = out.positions.shape
    famid, params = potentials.kernel_params(config.spec)
    cutoff = config.cutoff()
    ws = _Workspace(K, config.box, cutoff)
    noise = rng.standard_normal((1, K, d))
    amp = config.noise_sigma * math.sqrt(config.dt)
    fallback = _fallback_direction(config.seed, d)
    bad, _, _ = _kernels._run_chunk(
        out.positions, config.box.side, famid, params, cutoff, config.min_separation,
        fallback, config.dt, amp, noise, ws.ncells, ws.cell_len, ws.offsets,
        ws.cell_of, ws.counts, ws.order, ws.force, ws.psi, ws.clamped, ws.npairs,
        ws.use_cells, False,
    )
    if bad >= 0:
        raise BlowUpError(int(round(state.time / config.dt)) + bad)
    out.time = state.time + config.dt
    return out


@dataclass
class RelaxResult:
    state: ParticleState
    converged: bool
    steps: int
    max_force: float


def relax_deterministic(state: ParticleState, spec, step: float, tol: float,
                        max_steps: int, min_separation: float | None = None) -> RelaxResult:
    """Zero-noise gradient descent until max |F_i| < tol or max_steps."""
    out = state.copy()
    K, d = out.positions.shape
    box = out.box
    if min_separation is None:
        min_separation = default_min_separation(spec, box)
    famid, params = potentials.kernel_params(spec)
    cutoff = potentials.interaction_cutoff(spec, box.side)
    ws = _Workspace(K, box, cutoff)
    fallback = np.array([1.0, 0.0])
    if cutoff <= 0:
        return RelaxResult(out, True, 0, 0.0)
    steps, conv, fmax = _kernels._relax_run(
        out.positions, box.side, famid, params, cutoff, min_separation, fallback,
        step, tol, max_steps, ws.ncells, ws.cell_len, ws.offsets, ws.cell_of,
        ws.counts, ws.order, ws.force, ws.psi, ws.clamped, ws.npairs, ws.use_cells,
    )
    out.time = state.time
    return RelaxResult(out, bool(conv), int(steps), float(fmax))


@dataclass
class SimulationResult:
    state: ParticleState
    steps: int
    clamp_events: int
    pair_evals: int

    @property
    def clamp_rate(self) -> float:
        return self.clamp_events / self.pair_evals if self.pair_evals else 0.0


def simulate(config: SimulationConfig, observer=None, threads: int = 0) -> SimulationResult:
    """Run burn-in then invoke observer(state, k) every sample_stride steps.

    n_samples observer calls in total; deterministic for a fixed seed. The
    observer receives a copy of the state and may keep it.
    """
    _kernels.set_threads(threads)
    state = build_initial_lattice(config)
    K, d = state.positions.shape
    famid, params = potentials.kernel_params(config.spec)
    cutoff = config.cutoff()
    ws = _Workspace(K, config.box, cutoff)
    rng = noise_generator(config)
    amp = config.noise_sigma * math.sqrt(config.dt)
    fallback = _fallback_direction(config.seed, d)
    max_chunk = max(1, min(4096, 2_000_000 // max(1, K * d)))

    done = 0
    clamp_events = 0
    pair_evals = 0

    def advance(nsteps):
        nonlocal done, clamp_events, pair_evals
        while nsteps > 0:
            n = min(nsteps, max_chunk)
            noise = rng.standard_normal((n, K, d))
            bad, cl, pe = _kernels._run_chunk(
                state.positions, config.box.side, famid, params, cutoff,
                config.min_separation, fallback, config.dt, amp, noise,
                ws.ncells, ws.cell_len, ws.offsets, ws.cell_of, ws.counts,
                ws.order, ws.force, ws.psi, ws.clamped, ws.npairs, ws.use_cells,
                threads > 1,
            )
            clamp_events += cl
            pair_evals += pe
            if bad >= 0:
                raise BlowUpError(done + bad)
            done += n
            nsteps -= n
            state.time = done * config.dt

    dump = open(config.dump_path, "w") if config.dump_path else None
    try:
        if dump:
            dump.write("step,particle," + ",".join(f"x{k}" for k in range(d)) + "\n")
        advance(config.burn_in_steps)
        for k in range(config.n_samples):
            advance(config.sample_stride)
            if observer is not None:
                observer(state.copy(), k)
            if dump:
                for i in range(K):
                    coords = ",".join(repr(c) for c in state.positions[i])
                    dump.write(f"{done},{i},{coords}\n")
    finally:
        if dump:
            dump.close()
    return SimulationResult(state.copy(), done, clamp_events, pair_evals)
