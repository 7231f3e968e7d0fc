"""Periodic-box arithmetic: wrapping and minimal-image displacements."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError


@dataclass(frozen=True)
class TorusBox:
    """Cubic periodic domain of side `side` in `dimension` dimensions.

    Dimensions 1 and 2 are the supported, tested cases; d = 3 is accepted
    but carries no validation data.
    """

    dimension: int
    side: float

    def __post_init__(self):
        if self.dimension not in (1, 2, 3):
            raise ConfigurationError(f"dimension must be 1, 2 or 3, got {self.dimension}")
        if not np.isfinite(self.side) or self.side <= 0:
            raise ConfigurationError(f"side must be positive and finite, got {self.side}")

    @property
    def volume(self) -> float:
        return self.side ** self.dimension


def wrap(position, box: TorusBox):
    """Map a position to its canonical representative in [0, L)^d."""
    p = np.asarray(position, dtype=float)
    if not np.all(np.isfinite(p)):
        raise DomainError("position has non-finite components")
    L = box.side
    w = p - L * np.floor(p / L)
    # floating-point roundup can land exactly on L; fold it back to 0
    return np.where(w >= L, w - L, w)


def minimal_image(x, y, box: TorusBox):
    """Shortest periodic representative of x - y, components in [-L/2, L/2).

    Components at exactly L/2 map to -L/2, which keeps the result
    single-valued at the cost of exact antisymmetry on that null set.
    """
    L = box.side
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    if not np.all(np.isfinite(d)):
        raise DomainError("displacement has non-finite components")
    return d - L * np.floor(d / L + 0.5)
