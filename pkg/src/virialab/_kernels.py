"""Numba kernels for neighbor search, force accumulation and EM stepping.

All per-particle outputs go to disjoint rows, so the pair passes give
identical results for any thread count; reductions over particles happen in
fixed order on the numpy side. Power-law evaluations special-case integer and
half-integer exponents, which cover every documented experiment.
"""

import math

import numba
import numpy as np
from numba import njit, prange

# the plain workqueue layer avoids TBB/OMP version probing at import
numba.config.THREADING_LAYER = "workqueue"

# family ids, kept in sync with potentials.kernel_params
_ZERO = 0
_POWER_LAW = 1
_ATTR_REP = 2
_GAUSSIAN = 3
_GAUSSIAN_CUBIC = 4


@njit(cache=True, inline="always")
def _rpow_neg(r, m):
    """r**(-m) for m > 0; multiply-only paths for (half-)integer exponents."""
    k = int(m)
    if m == k and k <= 12:
        y = 1.0
        for _ in range(k):
            y *= r
        return 1.0 / y
    if m - k == 0.5 and k <= 12:
        y = math.sqrt(r)
        for _ in range(k):
            y *= r
        return 1.0 / y
    return r ** (-m)


@njit(cache=True, inline="always")
def _uprime(famid, params, r):
    """U'(r) for the supported families (zero beyond a finite cutoff).

    r = 0 (an unclamped coincidence) gives the singular limit for the power
    families; the resulting non-finite positions surface as a blow-up with a
    step index instead of an uncontrolled error.
    """
    if r <= 0.0:
        if famid == _POWER_LAW or famid == _ATTR_REP:
            return -np.inf
        return 0.0
    if famid == _POWER_LAW:
        if r > params[1]:
            return 0.0
        return -_rpow_neg(r, params[0] + 1.0)
    if famid == _ATTR_REP:
        if r > params[4]:
            return 0.0
        # params: alpha, beta, r0^alpha, r0^beta, r1
        return -params[2] * _rpow_neg(r, params[0] + 1.0) \
            + params[3] * _rpow_neg(r, params[1] + 1.0)
    if famid == _GAUSSIAN:
        w2 = params[0] * params[0]
        return -(r / w2) * math.exp(-(r * r) / (2.0 * w2))
    if famid == _GAUSSIAN_CUBIC:
        w2 = params[0] * params[0]
        return math.exp(-(r * r) / (2.0 * w2)) * (-3.0 * r * r - (r / w2) * (1.0 - r ** 3))
    return 0.0


@njit(cache=True)
def _build_cells(pos, L, ncells, cell_len, cell_of, counts, order):
    """Counting sort of particles into cells; fills cell_of, counts, order.

    counts has length ncell_total + 1 and ends up as prefix offsets: particles
    of cell c are order[counts[c]:counts[c+1]].
    """
    K, d = pos.shape
    ntot = 1
    for k in range(d):
        ntot *= ncells[k]
    for c in range(ntot + 1):
        counts[c] = 0
    for i in range(K):
        cid = 0
        for k in range(d):
            c = int(pos[i, k] / cell_len[k])
            if c >= ncells[k]:
                c = ncells[k] - 1
            if c < 0:
                c = 0
            cid = cid * ncells[k] + c
        cell_of[i] = cid
        counts[cid + 1] += 1
    for c in range(ntot):
        counts[c + 1] += counts[c]
    fill = counts.copy()
    for i in range(K):
        order[fill[cell_of[i]]] = i
        fill[cell_of[i]] += 1


@njit(cache=True, inline="always")
def _accumulate_particle(i, pos, L, famid, params, cut2, min_sep, fallback,
                         ncells, cell_len, offsets, counts, order,
                         force, psi, clamped, npairs, use_cells):
    """Force row, virial and counters for particle i over its neighbors."""
    K, d = pos.shape
    invL = 1.0 / L
    fi0 = 0.0
    fi1 = 0.0
    psi_i = 0.0
    nclamp = 0
    np_i = 0
    noff = offsets.shape[0]
    c0 = 0
    c1 = 0
    if use_cells:
        c0 = int(pos[i, 0] / cell_len[0])
        if c0 >= ncells[0]:
            c0 = ncells[0] - 1
        if d > 1:
            c1 = int(pos[i, 1] / cell_len[1])
            if c1 >= ncells[1]:
                c1 = ncells[1] - 1
    nblocks = noff if use_cells else 1
    for o in range(nblocks):
        if use_cells:
            b0 = (c0 + offsets[o, 0]) % ncells[0]
            cid = b0
            if d > 1:
                b1 = (c1 + offsets[o, 1]) % ncells[1]
                cid = b0 * ncells[1] + b1
            lo = counts[cid]
            hi = counts[cid + 1]
        else:
            lo = 0
            hi = K
        for idx in range(lo, hi):
            j = order[idx] if use_cells else idx
            if j == i:
                continue
            dx0 = pos[i, 0] - pos[j, 0]
            dx0 -= L * math.floor(dx0 * invL + 0.5)
            r2 = dx0 * dx0
            dx1 = 0.0
            if d > 1:
                dx1 = pos[i, 1] - pos[j, 1]
                dx1 -= L * math.floor(dx1 * invL + 0.5)
                r2 += dx1 * dx1
            if r2 > cut2:
                continue
            np_i += 1
            r = math.sqrt(r2)
            if r < min_sep or r == 0.0:
                nclamp += 1
                r_eval = min_sep
                if r > 0.0:
                    invr = 1.0 / r
                    u0 = dx0 * invr
                    u1 = dx1 * invr
                else:
                    sgn = 1.0 if i < j else -1.0
                    u0 = fallback[0] * sgn
                    u1 = fallback[1] * sgn if d > 1 else 0.0
            else:
                r_eval = r
                invr = 1.0 / r
                u0 = dx0 * invr
                u1 = dx1 * invr if d > 1 else 0.0
            up = _uprime(famid, params, r_eval)
            fi0 += -up * u0
            if d > 1:
                fi1 += -up * u1
            psi_i += r_eval * up / d
    force[i, 0] = fi0
    if d > 1:
        force[i, 1] = fi1
    psi[i] = psi_i
    clamped[i] = nclamp
    npairs[i] = np_i


@njit(cache=True)
def _pair_pass(pos, L, famid, params, cutoff, min_sep, fallback,
               ncells, cell_len, offsets, counts, order,
               force, psi, clamped, npairs, use_cells):
    """Sequential pass over every ordered pair within the cutoff."""
    K = pos.shape[0]
    cut2 = cutoff * cutoff
    for i in range(K):
        _accumulate_particle(i, pos, L, famid, params, cut2, min_sep, fallback,
                             ncells, cell_len, offsets, counts, order,
                             force, psi, clamped, npairs, use_cells)


@njit(cache=True, parallel=True)
def _pair_pass_par(pos, L, famid, params, cutoff, min_sep, fallback,
                   ncells, cell_len, offsets, counts, order,
                   force, psi, clamped, npairs, use_cells):
    """Parallel pass: same values as _pair_pass (disjoint per-i rows)."""
    K = pos.shape[0]
    cut2 = cutoff * cutoff
    for i in prange(K):
        _accumulate_particle(i, pos, L, famid, params, cut2, min_sep, fallback,
                             ncells, cell_len, offsets, counts, order,
                             force, psi, clamped, npairs, use_cells)


@njit(cache=True)
def _step_positions(pos, force, dt, amp, noise_step, L):
    """One Euler-Maruyama update with wrap; returns False on non-finite."""
    K, d = pos.shape
    ok = True
    for i in range(K):
        for k in range(d):
            x = pos[i, k] + force[i, k] * dt + amp * noise_step[i, k]
            x = x - L * math.floor(x / L)
            if x >= L:
                x -= L
            if not math.isfinite(x):
                ok = False
            pos[i, k] = x
    return ok


@njit(cache=True)
def _run_chunk(pos, L, famid, params, cutoff, min_sep, fallback, dt, amp, noise,
               ncells, cell_len, offsets, cell_of, counts, order,
               force, psi, clamped, npairs, use_cells, parallel):
    """Advance len(noise) EM steps in place.

    Returns (bad_step, clamp_events, pair_evals); bad_step is -1 on success,
    otherwise the chunk-local index of the first non-finite step.
    """
    nsteps = noise.shape[0]
    K, d = pos.shape
    tot_clamped = 0
    tot_pairs = 0
    for s in range(nsteps):
        if cutoff > 0.0:
            if use_cells:
                _build_cells(pos, L, ncells, cell_len, cell_of, counts, order)
            if parallel:
                _pair_pass_par(pos, L, famid, params, cutoff, min_sep, fallback,
                               ncells, cell_len, offsets, counts, order,
                               force, psi, clamped, npairs, use_cells)
            else:
                _pair_pass(pos, L, famid, params, cutoff, min_sep, fallback,
                           ncells, cell_len, offsets, counts, order,
                           force, psi, clamped, npairs, use_cells)
            for i in range(K):
                tot_clamped += clamped[i]
                tot_pairs += npairs[i]
        else:
            for i in range(K):
                for k in range(d):
                    force[i, k] = 0.0
        if not _step_positions(pos, force, dt, amp, noise[s], L):
            return s, tot_clamped, tot_pairs
    return -1, tot_clamped, tot_pairs


@njit(cache=True)
def _relax_run(pos, L, famid, params, cutoff, min_sep, fallback, step_size, tol,
               max_steps, ncells, cell_len, offsets, cell_of, counts, order,
               force, psi, clamped, npairs, use_cells):
    """Gradient descent on the interaction energy until max |F_i| < tol.

    Returns (steps_taken, converged, final max |F|). The force is evaluated
    before each move, so an equilibrium input returns after zero steps.
    """
    K, d = pos.shape
    fmax = 0.0
    for s in range(max_steps + 1):
        if cutoff > 0.0:
            if use_cells:
                _build_cells(pos, L, ncells, cell_len, cell_of, counts, order)
            _pair_pass(pos, L, famid, params, cutoff, min_sep, fallback,
                       ncells, cell_len, offsets, counts, order,
                       force, psi, clamped, npairs, use_cells)
        else:
            for i in range(K):
                for k in range(d):
                    force[i, k] = 0.0
        fmax = 0.0
        for i in range(K):
            for k in range(d):
                a = abs(force[i, k])
                if a > fmax:
                    fmax = a
        if fmax < tol:
            return s, True, fmax
        if s == max_steps:
            break
        for i in range(K):
            for k in range(d):
                x = pos[i, k] + force[i, k] * step_size
                x = x - L * math.floor(x / L)
                if x >= L:
                    x -= L
                pos[i, k] = x
    return max_steps, False, fmax


def set_threads(n):
    """Cap numba's thread pool; values < 1 mean single-threaded."""
    limit = numba.config.NUMBA_NUM_THREADS
    numba.set_num_threads(min(limit, max(1, int(n))))
