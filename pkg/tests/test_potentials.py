import math

import numpy as np
import pytest
from scipy import integrate

from virialab import (
    DivergentIntegralError,
    DomainError,
    GaussianCubic,
    GaussianRepulsive,
    NotApplicableError,
    PowerLawAttractiveRepulsive,
    PowerLawRepulsive,
    ZeroPotential,
    c_v,
    continuity_constant,
    force,
    interaction_cutoff,
    radial_derivative,
    spec_from_dict,
    spec_to_dict,
    value,
    virial_kernel,
)

ALL_TRUNCATED = [
    PowerLawRepulsive(alpha=2, r1=1),
    PowerLawRepulsive(alpha=0.5, r1=1.3),
    PowerLawAttractiveRepulsive(alpha=2, beta=1.5, r0=1, r1=1.5),
    PowerLawAttractiveRepulsive(alpha=3, beta=2, r0=0.8, r1=1.4),
]
ALL_SMOOTH = [GaussianRepulsive(width=0.7), GaussianCubic(width=1.1)]


# --- continuity constant ---

def test_continuity_constant_power_law():
    # solve 1/(alpha r1^alpha) - C = 0
    assert continuity_constant(PowerLawRepulsive(2, 1)) == pytest.approx(0.5)
    assert continuity_constant(PowerLawRepulsive(1, 1)) == pytest.approx(1.0)


def test_continuity_constant_attractive():
    spec = PowerLawAttractiveRepulsive(alpha=2, beta=1.5, r0=1, r1=1.5)
    expected = -(1 / (2 * 2.25) - 1 / (1.5 * 1.5 ** 1.5))
    assert continuity_constant(spec) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("spec", ALL_TRUNCATED)
def test_value_vanishes_at_cutoff(spec):
    assert value(spec, spec.r1) == pytest.approx(0.0, abs=1e-12)
    assert value(spec, spec.r1 * 1.0001) == 0.0


def test_continuity_constant_not_applicable():
    with pytest.raises(NotApplicableError):
        continuity_constant(PowerLawRepulsive(alpha=2))  # infinite cutoff
    with pytest.raises(NotApplicableError):
        continuity_constant(GaussianRepulsive(1.0))


# --- values and derivatives ---

def test_value_examples():
    plr = PowerLawRepulsive(2, 1)
    assert value(plr, 0.5) == pytest.approx(1 / (2 * 0.25) - 0.5)
    assert value(plr, 2.0) == 0.0
    assert value(GaussianRepulsive(0.5), 1e-9) == pytest.approx(1.0)


def test_value_domain_error():
    for r in (0.0, -1.0):
        with pytest.raises(DomainError):
            value(PowerLawRepulsive(2, 1), r)
        with pytest.raises(DomainError):
            radial_derivative(GaussianRepulsive(1), r)


def test_radial_derivative_examples():
    assert radial_derivative(PowerLawRepulsive(2, 1), 0.5) == pytest.approx(-8.0)
    spec = PowerLawAttractiveRepulsive(alpha=2, beta=1.5, r0=1, r1=1.5)
    assert radial_derivative(spec, spec.r0) == pytest.approx(0.0, abs=1e-12)
    for s in ALL_TRUNCATED:
        assert radial_derivative(s, 1.1 * s.r1) == 0.0


@pytest.mark.parametrize("spec", ALL_TRUNCATED + ALL_SMOOTH)
def test_derivative_matches_finite_differences(spec):
    r1 = getattr(spec, "r1", 2.5)
    rng = np.random.default_rng(42)
    rs = rng.uniform(0.1 * r1, 0.95 * r1, size=100)
    h = 1e-6
    for r in rs:
        fd = (value(spec, r + h) - value(spec, r - h)) / (2 * h)
        du = radial_derivative(spec, r)
        assert du == pytest.approx(fd, rel=1e-6, abs=1e-9)


# --- force and virial kernel ---

def test_force_examples():
    plr = PowerLawRepulsive(2, 1)
    assert np.allclose(force(plr, [0.5]), [8.0])  # pushed apart
    assert np.allclose(force(plr, [1.5]), [0.0])
    with pytest.raises(DomainError):
        force(plr, [0.0, 0.0])


def test_force_antisymmetry():
    rng = np.random.default_rng(3)
    spec = PowerLawAttractiveRepulsive(alpha=2, beta=1.5, r0=1, r1=1.5)
    for _ in range(50):
        x = rng.uniform(-1.4, 1.4, size=2)
        if np.linalg.norm(x) < 1e-3:
            continue
        assert np.allclose(force(spec, x), -force(spec, -x), atol=1e-12)


def test_force_radial_projection():
    # dot(force, x) = -|x| U'(|x|): positive exactly where U' < 0
    rng = np.random.default_rng(4)
    for spec in ALL_TRUNCATED + ALL_SMOOTH:
        for _ in range(30):
            x = rng.uniform(-1.2, 1.2, size=2)
            r = np.linalg.norm(x)
            if r < 1e-2:
                continue
            got = float(np.dot(force(spec, x), x))
            assert got == pytest.approx(-r * radial_derivative(spec, r), rel=1e-10, abs=1e-12)


def test_virial_kernel_examples():
    plr = PowerLawRepulsive(2, 1)
    assert virial_kernel(plr, [0.5]) == pytest.approx(0.5 * (-8.0))
    assert virial_kernel(plr, [1.2]) == 0.0
    spec = PowerLawAttractiveRepulsive(alpha=2, beta=1.5, r0=1, r1=1.5)
    assert virial_kernel(spec, [spec.r0]) == pytest.approx(0.0, abs=1e-12)


def test_virial_kernel_force_consistency():
    # psi_iso(x) = -dot(force(x), x) / d
    rng = np.random.default_rng(5)
    for spec in ALL_TRUNCATED + ALL_SMOOTH:
        for d in (1, 2):
            for _ in range(20):
                x = rng.uniform(0.05, 1.3, size=d) * rng.choice([-1, 1], size=d)
                got = virial_kernel(spec, x)
                want = -float(np.dot(force(spec, x), x)) / d
                assert got == pytest.approx(want, rel=1e-10, abs=1e-14)


# --- integrals ---

def test_c_v_zero_potential():
    assert c_v(ZeroPotential(), 1) == 0.0


def test_c_v_gaussian_d1():
    # analytic integral of exp(-x^2 / 2w^2) over the line is w sqrt(2 pi)
    for w in (0.5, 1.0, 2.3):
        assert c_v(GaussianRepulsive(w), 1) == pytest.approx(w * math.sqrt(2 * math.pi), rel=1e-8)


def test_c_v_power_law_antiderivative_oracle():
    # 2 int_0^1 (2 r^-1/2 - 2) dr = 2 (4 - 2) = 4
    assert c_v(PowerLawRepulsive(0.5, 1), 1) == pytest.approx(4.0, rel=1e-8)
    # d = 2: 2 pi int_0^1 (2 r^1/2 - 2 r) dr = 2 pi (4/3 - 1)
    assert c_v(PowerLawRepulsive(0.5, 1), 2) == pytest.approx(2 * math.pi / 3, rel=1e-8)


def test_c_v_gaussian_cubic_signed():
    # int (1 - |x|^3) e^(-x^2/2w^2) dx = w sqrt(2 pi) - 4 w^4
    for w in (1.0, 1.5):
        want = w * math.sqrt(2 * math.pi) - 4 * w ** 4
        assert c_v(GaussianCubic(w), 1) == pytest.approx(want, rel=1e-8)


def test_c_v_attractive_matches_direct_quadrature():
    spec = PowerLawAttractiveRepulsive(alpha=0.9, beta=0.5, r0=1, r1=1.5)
    direct, _ = integrate.quad(lambda r: 2 * value(spec, r), 1e-12, spec.r1,
                               epsabs=1e-13, epsrel=1e-11, limit=400)
    assert c_v(spec, 1) == pytest.approx(direct, rel=1e-6)


def test_c_v_support_restriction():
    # truncated potential: integral over [0, r1] is the whole integral
    spec = PowerLawRepulsive(0.5, 1.3)
    inside, _ = integrate.quad(lambda r: 2 * value(spec, r), 0, spec.r1,
                               epsabs=1e-13, epsrel=1e-11, limit=400)
    assert c_v(spec, 1) == pytest.approx(inside, rel=1e-7)


def test_c_v_divergence_errors():
    with pytest.raises(DivergentIntegralError, match="alpha"):
        c_v(PowerLawRepulsive(1.0, 1.0), 1)  # alpha >= d at the origin
    with pytest.raises(DivergentIntegralError):
        c_v(PowerLawRepulsive(2.0, 1.0), 1)
    with pytest.raises(DivergentIntegralError):
        c_v(PowerLawRepulsive(0.5), 1)  # untruncated: diverges at infinity


# --- cutoffs and serialization ---

def test_interaction_cutoff():
    assert interaction_cutoff(PowerLawRepulsive(2, 1), 50.0) == 1.0
    assert interaction_cutoff(PowerLawRepulsive(2), 50.0) == 25.0  # L/2 cap
    assert interaction_cutoff(GaussianRepulsive(1.0), 50.0) == 8.0
    assert interaction_cutoff(GaussianRepulsive(10.0), 50.0) == 25.0
    assert interaction_cutoff(ZeroPotential(), 50.0) == 0.0


def test_spec_roundtrip():
    specs = ALL_TRUNCATED + ALL_SMOOTH + [ZeroPotential(), PowerLawRepulsive(1.5)]
    for spec in specs:
        assert spec_from_dict(spec_to_dict(spec)) == spec


def test_spec_from_dict_rejects_junk():
    with pytest.raises(DomainError):
        spec_from_dict({"family": "power_law_repulsive", "alpha": 2, "r1": 1, "oops": 3})
    with pytest.raises(DomainError):
        spec_from_dict({"family": "unknown"})
    with pytest.raises(DomainError):
        spec_from_dict({"family": "gaussian_repulsive"})


def test_invariant_validation():
    with pytest.raises(DomainError):
        PowerLawAttractiveRepulsive(alpha=1.5, beta=2, r0=1, r1=1.5)  # alpha <= beta
    with pytest.raises(DomainError):
        PowerLawAttractiveRepulsive(alpha=2, beta=1.5, r0=1.5, r1=1.0)  # r1 <= r0
    with pytest.raises(DomainError):
        PowerLawRepulsive(alpha=-1)
    with pytest.raises(DomainError):
        GaussianRepulsive(width=0)
