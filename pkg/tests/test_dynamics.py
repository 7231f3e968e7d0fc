import numpy as np
import pytest
from scipy import stats

import virialab as vl
from virialab import (
    BlowUpError,
    ConfigurationError,
    GaussianRepulsive,
    ParticleState,
    PowerLawAttractiveRepulsive,
    PowerLawRepulsive,
    SimulationConfig,
    TorusBox,
    ZeroPotential,
    build_initial_lattice,
    build_neighbor_list,
    compute_forces,
    em_step,
    minimal_image,
    noise_generator,
    relax_deterministic,
    simulate,
    total_energy,
)

PLR = PowerLawRepulsive(alpha=2, r1=1)
PLAR = PowerLawAttractiveRepulsive(alpha=2, beta=1.5, r0=1, r1=1.5)


def make_config(spec, box, rho, **kw):
    defaults = dict(noise_sigma=1.0, dt=1e-4, burn_in_steps=10, n_samples=2,
                    sample_stride=5, seed=11)
    defaults.update(kw)
    return SimulationConfig(spec=spec, box=box, rho_nominal=rho, **defaults)


# --- initial lattices ---

def test_repulsive_lattice_spacing():
    cfg = make_config(PLR, TorusBox(1, 5.0), 2.0)
    st = build_initial_lattice(cfg)
    assert st.n_particles == 10
    gaps = np.diff(np.sort(st.positions[:, 0]))
    assert np.allclose(gaps, 0.5)


def test_adhesion_cluster():
    cfg = make_config(PLAR, TorusBox(1, 10.0), 0.5, init_mode="adhesion_cluster")
    st = build_initial_lattice(cfg)
    assert st.n_particles == 5
    pos = np.sort(st.positions[:, 0])
    assert np.allclose(np.diff(pos), 1.0)  # spacing r0
    assert pos[-1] - pos[0] == pytest.approx(4.0)  # cluster extent


def test_adhesion_cluster_dense_reverts_to_lattice():
    cfg = make_config(PLAR, TorusBox(1, 10.0), 2.0, init_mode="adhesion_cluster")
    st = build_initial_lattice(cfg)
    assert np.allclose(np.diff(np.sort(st.positions[:, 0])), 0.5)


def test_grid_2d():
    cfg = make_config(PLR, TorusBox(2, 4.0), 1.0, init_mode="grid", dt=1e-5)
    st = build_initial_lattice(cfg)
    assert st.n_particles == 16
    xs = np.unique(st.positions[:, 0])
    assert np.allclose(xs, [0, 1, 2, 3])


def test_grid_infeasible_count_warns():
    cfg = make_config(PLR, TorusBox(2, 3.0), 0.7, init_mode="grid", dt=1e-5)
    with pytest.warns(RuntimeWarning, match="nearest feasible"):
        st = build_initial_lattice(cfg)  # K = 6 is not a square
    assert st.n_particles in (4, 9)


def test_uniform_random_mode_seeded():
    cfg = make_config(ZeroPotential(), TorusBox(1, 10.0), 3.0, init_mode="uniform_random")
    a = build_initial_lattice(cfg)
    b = build_initial_lattice(cfg)
    assert np.array_equal(a.positions, b.positions)
    assert np.all((a.positions >= 0) & (a.positions < 10.0))


def test_adhesion_requires_attractive_spec():
    with pytest.raises(ConfigurationError):
        make_config(PLR, TorusBox(1, 10.0), 0.5, init_mode="adhesion_cluster")


def test_cutoff_exceeding_half_box_rejected():
    with pytest.raises(ConfigurationError, match="minimal-image"):
        make_config(PLAR, TorusBox(1, 2.5), 2.0)


# --- neighbor list ---

def test_neighbor_list_single_particle():
    st = ParticleState(np.array([[1.0]]), 0.0, TorusBox(1, 10.0))
    nl = build_neighbor_list(st, 1.0)
    assert nl.iter_pairs(st.positions) == []


def test_neighbor_list_sparse_lattice_empty():
    cfg = make_config(PLR, TorusBox(1, 8.0), 0.5)
    st = build_initial_lattice(cfg)  # spacing 2
    nl = build_neighbor_list(st, 1.0)
    assert nl.iter_pairs(st.positions) == []


def test_neighbor_list_wraparound_pairs():
    # 4 particles at spacing 1 on L=4: four unordered pairs incl. the wrap
    st = ParticleState(np.array([[0.0], [1.0], [2.0], [3.0]]), 0.0, TorusBox(1, 4.0))
    nl = build_neighbor_list(st, 1.0)
    assert nl.iter_pairs(st.positions) == [(0, 1), (0, 3), (1, 2), (2, 3)]


def test_neighbor_list_cutoff_validation():
    st = ParticleState(np.array([[0.0], [1.0]]), 0.0, TorusBox(1, 4.0))
    with pytest.raises(ConfigurationError, match="box too small"):
        build_neighbor_list(st, 2.5)


def brute_pairs(positions, box, cutoff):
    out = []
    K = positions.shape[0]
    for i in range(K):
        for j in range(i + 1, K):
            d = minimal_image(positions[i], positions[j], box)
            if np.sqrt(np.sum(d ** 2)) <= cutoff:
                out.append((i, j))
    return out


@pytest.mark.parametrize("d,L,cutoff", [(1, 10.0, 1.0), (2, 6.0, 1.0), (2, 2.5, 1.0)])
def test_neighbor_list_matches_brute_enumeration(d, L, cutoff):
    rng = np.random.default_rng(17)
    box = TorusBox(d, L)
    for _ in range(25):
        K = int(rng.integers(2, 40))
        st = ParticleState(rng.uniform(0, L, size=(K, d)), 0.0, box)
        nl = build_neighbor_list(st, cutoff)
        assert nl.iter_pairs(st.positions) == brute_pairs(st.positions, box, cutoff)


# --- forces ---

def python_reference_forces(positions, box, spec):
    """Independent O(K^2) oracle built on the scalar force function."""
    K, d = positions.shape
    cutoff = vl.interaction_cutoff(spec, box.side)
    F = np.zeros((K, d))
    for i in range(K):
        for j in range(K):
            if i == j:
                continue
            dx = minimal_image(positions[i], positions[j], box)
            if np.sqrt(np.sum(dx ** 2)) <= cutoff:
                F[i] += vl.force(spec, dx)
    return F


def test_two_particle_forces():
    box = TorusBox(1, 10.0)
    st = ParticleState(np.array([[0.0], [0.5]]), 0.0, box)
    F = compute_forces(st, PLR)
    assert np.allclose(F, [[-8.0], [8.0]])


def test_out_of_range_forces_zero():
    box = TorusBox(1, 10.0)
    st = ParticleState(np.array([[0.0], [2.0], [5.0]]), 0.0, box)
    assert np.all(compute_forces(st, PLR) == 0.0)


def test_cell_list_equals_double_loop():
    rng = np.random.default_rng(23)
    for case in range(200):
        d = 1 if case % 2 == 0 else 2
        box = TorusBox(d, 10.0 if case % 3 else 3.0)
        K = int(rng.integers(2, 65))
        spec = PLR if case % 2 == 0 else PLAR
        if vl.interaction_cutoff(spec, box.side) > box.side / 2:
            continue
        pos = rng.uniform(0, box.side, size=(K, d))
        st = ParticleState(pos, 0.0, box)
        nl = build_neighbor_list(st, vl.interaction_cutoff(spec, box.side))
        got = compute_forces(st, spec, neighbors=nl, min_separation=0.0)
        want = python_reference_forces(pos, box, spec)
        assert np.max(np.abs(got - want)) < 1e-12 * max(1.0, np.max(np.abs(want)))


def test_zero_total_force():
    rng = np.random.default_rng(29)
    for d, spec in [(1, PLR), (2, PLAR), (1, GaussianRepulsive(0.5))]:
        box = TorusBox(d, 12.0)
        K = 40
        st = ParticleState(rng.uniform(0, 12.0, size=(K, d)), 0.0, box)
        F = compute_forces(st, spec)
        assert np.max(np.abs(F.sum(axis=0))) < 1e-10 * K


def test_label_equivariance():
    rng = np.random.default_rng(31)
    box = TorusBox(2, 8.0)
    pos = rng.uniform(0, 8.0, size=(20, 2))
    perm = rng.permutation(20)
    F = compute_forces(ParticleState(pos, 0.0, box), PLAR)
    Fp = compute_forces(ParticleState(pos[perm], 0.0, box), PLAR)
    assert np.allclose(F[perm], Fp, atol=1e-12)


def test_energy_gradient_check():
    rng = np.random.default_rng(37)
    h = 1e-5
    for spec, d in [(PLAR, 1), (PLAR, 2), (GaussianRepulsive(0.6), 2)]:
        box = TorusBox(d, 9.0)
        cutoff = vl.interaction_cutoff(spec, box.side)
        for _ in range(8):
            pos = rng.uniform(0, 9.0, size=(10, d))
            st = ParticleState(pos.copy(), 0.0, box)
            # keep every pair away from the cutoff kink and the origin
            dists = [np.linalg.norm(minimal_image(pos[i], pos[j], box))
                     for i in range(10) for j in range(i + 1, 10)]
            if min(dists) < 0.3 or min(abs(r - cutoff) for r in dists) < 10 * h:
                continue
            F = compute_forces(st, spec, min_separation=0.0)
            i, k = rng.integers(0, 10), rng.integers(0, d)
            for sgn, store in [(1, "up"), (-1, "dn")]:
                q = pos.copy()
                q[i, k] += sgn * h
                if store == "up":
                    e_up = total_energy(ParticleState(q, 0.0, box), spec)
                else:
                    e_dn = total_energy(ParticleState(q, 0.0, box), spec)
            fd = -(e_up - e_dn) / (2 * h)
            assert F[i, k] == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_clamp_diagnostics():
    box = TorusBox(1, 10.0)
    st = ParticleState(np.array([[0.0], [1e-6]]), 0.0, box)
    F, diag = compute_forces(st, PLR, min_separation=1e-3, with_diagnostics=True)
    assert diag.clamp_events == 2
    assert diag.pair_evals == 2
    assert np.allclose(np.abs(F), 1e9)  # |U'(1e-3)| for alpha = 2


# --- EM stepping ---

def test_em_step_zero_noise_zero_drift():
    box = TorusBox(1, 10.0)
    cfg = make_config(ZeroPotential(), box, 0.1, noise_sigma=0.0)
    st = ParticleState(np.array([[3.0]]), 0.0, box)
    out = em_step(st, cfg, noise_generator(cfg))
    assert np.array_equal(out.positions, st.positions)
    assert out.time == pytest.approx(cfg.dt)


def test_em_step_repulsive_separation_increases():
    box = TorusBox(1, 10.0)
    cfg = make_config(PLR, box, 0.2, noise_sigma=0.0)
    st = ParticleState(np.array([[5.0], [5.5]]), 0.0, box)
    out = em_step(st, cfg, noise_generator(cfg))
    gap0 = 0.5
    gap1 = abs(minimal_image(out.positions[0], out.positions[1], box)[0])
    assert gap1 > gap0


def test_em_step_brownian_moments():
    # zero potential: increments are N(0, sigma^2 dt) per component
    box = TorusBox(1, 100.0)
    sigma, dt = 0.8, 1e-3
    cfg = make_config(ZeroPotential(), box, 0.5, noise_sigma=sigma, dt=dt,
                      burn_in_steps=0, n_samples=2000, sample_stride=1)
    prev = {}
    incs = []

    def obs(state, k):
        if "pos" in prev:
            d = minimal_image(state.positions, prev["pos"], box)
            incs.append(d.ravel().copy())
        prev["pos"] = state.positions

    simulate(cfg, observer=obs)
    inc = np.concatenate(incs)  # 50 particles x 1999 steps ~ 1e5 increments
    n = inc.size
    assert n > 90_000
    z_mean = inc.mean() / (sigma * np.sqrt(dt) / np.sqrt(n))
    var = inc.var()
    z_var = (var - sigma ** 2 * dt) / (sigma ** 2 * dt * np.sqrt(2.0 / n))
    assert abs(z_mean) < 4
    assert abs(z_var) < 4


def test_blow_up_reports_step():
    box = TorusBox(1, 10.0)
    cfg = make_config(PLR, box, 0.2, noise_sigma=0.0, min_separation=0.0)
    st = ParticleState(np.array([[2.0], [2.0]]), 0.0, box)  # coincident, no clamp
    with pytest.raises(BlowUpError) as err:
        em_step(st, cfg, noise_generator(cfg))
    assert err.value.step_index == 0


# --- deterministic relaxation ---

def test_relax_equilibrium_returns_immediately():
    cfg = make_config(PLR, TorusBox(1, 8.0), 2.0)
    st = build_initial_lattice(cfg)
    res = relax_deterministic(st, PLR, step=1e-3, tol=1e-8, max_steps=100)
    assert res.converged and res.steps == 0


def test_relax_restores_equal_spacing():
    # rho chosen so no lattice shell sits exactly on the cutoff kink at r1
    cfg = make_config(PLR, TorusBox(1, 10.0), 1.6)
    st = build_initial_lattice(cfg)
    st.positions[3, 0] += 0.1 / 1.6  # displace by 0.1 / rho
    res = relax_deterministic(st, PLR, step=0.02, tol=1e-8, max_steps=500_000)
    assert res.converged
    gaps = np.diff(np.sort(res.state.positions[:, 0]))
    assert np.var(gaps) < 1e-12


def test_relax_reports_nonconvergence_at_cutoff_kink():
    # second shell exactly at r1: kinked energy, descent cannot reach tol
    cfg = make_config(PLR, TorusBox(1, 8.0), 2.0)
    st = build_initial_lattice(cfg)
    st.positions[3, 0] += 0.05
    res = relax_deterministic(st, PLR, step=5e-3, tol=1e-8, max_steps=2000)
    assert not res.converged  # reported, not raised
    assert res.steps == 2000


def test_relax_attractive_pair_to_r0():
    box = TorusBox(1, 10.0)
    st = ParticleState(np.array([[4.0], [5.2]]), 0.0, box)  # distance 1.2 r0 < r1
    res = relax_deterministic(st, PLAR, step=0.05, tol=1e-8, max_steps=100_000)
    gap = abs(minimal_image(res.state.positions[0], res.state.positions[1], box)[0])
    assert res.converged
    assert gap == pytest.approx(PLAR.r0, abs=1e-6)


# --- simulate ---

def test_simulate_no_samples_returns_burned_state():
    cfg = make_config(PLR, TorusBox(1, 10.0), 1.0, burn_in_steps=50, n_samples=0)
    called = []
    res = simulate(cfg, observer=lambda s, k: called.append(k))
    assert called == []
    assert res.steps == 50


def test_simulate_deterministic_replay():
    cfg = make_config(PLR, TorusBox(1, 20.0), 2.0, burn_in_steps=200, n_samples=5,
                      sample_stride=10, seed=99)
    streams = []
    for _ in range(2):
        got = []
        simulate(cfg, observer=lambda s, k: got.append(s.positions.copy()))
        streams.append(got)
    for a, b in zip(*streams):
        assert np.array_equal(a, b)


def test_simulate_matches_manual_em_steps():
    cfg = make_config(PLR, TorusBox(1, 12.0), 1.5, burn_in_steps=3, n_samples=2,
                      sample_stride=4, seed=5)
    seen = []
    simulate(cfg, observer=lambda s, k: seen.append(s.positions.copy()))

    state = build_initial_lattice(cfg)
    rng = noise_generator(cfg)
    manual = []
    for step in range(3 + 2 * 4):
        state = em_step(state, cfg, rng)
        if step + 1 in (3 + 4, 3 + 8):
            manual.append(state.positions.copy())
    for a, b in zip(seen, manual):
        assert np.array_equal(a, b)


def test_simulate_parallel_matches_sequential():
    cfg = make_config(PLAR, TorusBox(1, 30.0), 3.0, burn_in_steps=100, n_samples=3,
                      sample_stride=10, seed=77, dt=1e-5)
    runs = []
    for threads in (0, 2):
        got = []
        simulate(cfg, observer=lambda s, k: got.append(s.positions.copy()), threads=threads)
        runs.append(got)
    for a, b in zip(*runs):
        assert np.array_equal(a, b)


def test_free_particles_sample_uniform_marginal():
    # invariant measure of Brownian motion on the torus is uniform
    box = TorusBox(1, 5.0)
    cfg = make_config(ZeroPotential(), box, 10.0, noise_sigma=1.0, dt=0.05,
                      burn_in_steps=200, n_samples=100, sample_stride=100, seed=13)
    samples = []
    simulate(cfg, observer=lambda s, k: samples.append(s.positions.ravel().copy()))
    pooled = np.concatenate(samples)
    counts, _ = np.histogram(pooled, bins=20, range=(0, 5.0))
    expected = pooled.size / 20
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    p = stats.chi2.sf(chi2, df=19)
    assert p > 0.001
