import numpy as np
import pytest

from virialab import DomainError, TorusBox, minimal_image, wrap


def test_wrap_modular_reduction():
    box = TorusBox(1, 10.0)
    assert np.allclose(wrap([10.5], box), [0.5])


def test_wrap_identity():
    box = TorusBox(2, 4.0)
    assert np.allclose(wrap([0.0, 0.0], box), [0.0, 0.0])


def test_wrap_negative():
    box = TorusBox(1, 10.0)
    assert np.allclose(wrap([-0.5], box), [9.5])


def test_wrap_range_and_idempotence():
    box = TorusBox(2, 3.7)
    rng = np.random.default_rng(0)
    p = rng.uniform(-50, 50, size=(200, 2))
    w = wrap(p, box)
    assert np.all(w >= 0) and np.all(w < box.side)
    assert np.array_equal(wrap(w, box), w)
    # residues agree modulo L (0 and L are the same residue)
    res = np.mod(w - p, box.side)
    assert np.all(np.minimum(res, box.side - res) < 1e-9)


def test_wrap_tiny_negative_does_not_return_L():
    box = TorusBox(1, 1.0)
    w = wrap([-1e-30], box)
    assert 0 <= w[0] < 1.0


def test_wrap_rejects_nonfinite():
    box = TorusBox(1, 1.0)
    with pytest.raises(DomainError):
        wrap([np.nan], box)
    with pytest.raises(DomainError):
        wrap([np.inf], box)


def test_minimal_image_periodic_shortcut():
    box = TorusBox(1, 10.0)
    assert np.allclose(minimal_image([9.5], [0.5], box), [-1.0])


def test_minimal_image_identity():
    box = TorusBox(2, 5.0)
    assert np.allclose(minimal_image([1.2, 3.4], [1.2, 3.4], box), [0.0, 0.0])


def test_minimal_image_componentwise():
    box = TorusBox(2, 4.0)
    assert np.allclose(minimal_image([3.9, 0.1], [0.1, 3.9], box), [-0.2, 0.2])


def test_minimal_image_halfbox_convention():
    # components at exactly L/2 map to -L/2 (half-open convention)
    box = TorusBox(1, 8.0)
    assert np.allclose(minimal_image([4.0], [0.0], box), [-4.0])
    assert np.allclose(minimal_image([0.0], [4.0], box), [-4.0])


def test_minimal_image_antisymmetry_and_bound():
    box = TorusBox(2, 6.0)
    rng = np.random.default_rng(1)
    for _ in range(200):
        x = rng.uniform(0, 6, 2)
        y = rng.uniform(0, 6, 2)
        d = minimal_image(x, y, box)
        assert np.allclose(d, -minimal_image(y, x, box))
        assert np.all(np.abs(d) <= 3.0)
        assert np.sqrt(np.sum(d ** 2)) <= 3.0 * np.sqrt(2) + 1e-12
        # equivalent to x - y modulo L
        res = np.mod(d - (x - y), 6.0)
        assert np.all(np.minimum(res, 6.0 - res) < 1e-9)


def test_box_validation():
    with pytest.raises(Exception):
        TorusBox(0, 1.0)
    with pytest.raises(Exception):
        TorusBox(1, -2.0)
