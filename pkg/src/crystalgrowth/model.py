"""State algebra of the crystal process.

Configurations are pile heights over ``n`` aligned sites, shapes are the
consecutive height differences. Sites are 1-based in the public API, as in
the usual notation ``x(1), ..., x(n)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Boundary",
    "RateTriple",
    "Configuration",
    "Shape",
    "neighbor_count",
    "shape_neighbor_count",
    "transition_rate",
    "deposit",
    "shape_of",
    "shape_step",
    "reflect",
]


class Boundary(enum.Enum):
    """Convention for the virtual heights ``x(0)`` and ``x(n+1)``."""

    ZERO = "zero"
    PERIODIC = "periodic"
    INFINITE = "infinite"
    ZERO_INFINITE = "zero-infinite"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower().replace("_", "-"))
        except ValueError:
            raise ValueError(
                f"unknown boundary {value!r}; expected one of "
                + ", ".join(b.value for b in cls)
            ) from None

    @property
    def code(self):
        """Small integer used by the compiled kernel."""
        return _BOUNDARY_CODES[self]

    @property
    def symmetric(self):
        return self is not Boundary.ZERO_INFINITE


_BOUNDARY_CODES = {
    Boundary.ZERO: 0,
    Boundary.PERIODIC: 1,
    Boundary.INFINITE: 2,
    Boundary.ZERO_INFINITE: 3,
}


@dataclass(frozen=True)
class RateTriple:
    """Deposition rates ``(beta0, beta1, beta2)`` indexed by the number of
    strictly higher neighbours of the receiving site."""

    beta0: float
    beta1: float
    beta2: float

    def __post_init__(self):
        for name in ("beta0", "beta1", "beta2"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be a finite positive rate, got {value!r}")
            object.__setattr__(self, name, value)

    @classmethod
    def parse(cls, text):
        """Parse ``"b0,b1,b2"``."""
        parts = [p for p in str(text).replace(" ", "").split(",") if p]
        if len(parts) != 3:
            raise ValueError(f"expected three comma-separated rates, got {text!r}")
        return cls(*(float(p) for p in parts))

    def __getitem__(self, k):
        return (self.beta0, self.beta1, self.beta2)[k]

    def __iter__(self):
        return iter((self.beta0, self.beta1, self.beta2))

    def as_tuple(self):
        return (self.beta0, self.beta1, self.beta2)

    @property
    def levels(self):
        """The rates in increasing order ``(b0, b1, b2)``."""
        return tuple(sorted(self.as_tuple()))

    @property
    def max_rate(self):
        return max(self.as_tuple())

    @property
    def min_rate(self):
        return min(self.as_tuple())

    @property
    def is_monotone(self):
        return self.beta0 <= self.beta1 <= self.beta2

    @property
    def in_domain_d(self):
        return self.beta0 < self.beta2 < self.beta1

    def __str__(self):
        return f"{self.beta0:g},{self.beta1:g},{self.beta2:g}"


@dataclass(frozen=True)
class Configuration:
    """Pile heights plus the boundary convention."""

    heights: tuple
    boundary: Boundary = Boundary.ZERO

    def __post_init__(self):
        heights = tuple(int(h) for h in self.heights)
        if len(heights) < 1:
            raise ValueError("a configuration needs at least one site")
        if any(h < 0 for h in heights):
            raise ValueError("heights must be nonnegative")
        object.__setattr__(self, "heights", heights)
        object.__setattr__(self, "boundary", Boundary.parse(self.boundary))

    @classmethod
    def zeros(cls, n, boundary=Boundary.ZERO):
        return cls((0,) * n, boundary)

    @classmethod
    def parse(cls, text):
        """Parse the canonical form ``"zero:2,5,3"``."""
        tag, sep, body = str(text).partition(":")
        if not sep:
            raise ValueError(f"expected '<boundary>:<h1>,...,<hn>', got {text!r}")
        heights = [int(p) for p in body.replace(" ", "").split(",") if p]
        return cls(tuple(heights), Boundary.parse(tag))

    def __str__(self):
        return f"{self.boundary.value}:" + ",".join(str(h) for h in self.heights)

    @property
    def n(self):
        return len(self.heights)

    def __le__(self, other):
        return all(a <= b for a, b in zip(self.heights, other.heights))


@dataclass(frozen=True)
class Shape:
    """Height differences ``x(j) - x(j+1)``.

    Non-periodic shapes have ``n - 1`` entries; periodic shapes keep all ``n``
    wraparound differences, which sum to zero.
    """

    diffs: tuple
    boundary: Boundary = Boundary.ZERO

    def __post_init__(self):
        object.__setattr__(self, "diffs", tuple(int(d) for d in self.diffs))
        object.__setattr__(self, "boundary", Boundary.parse(self.boundary))
        if self.boundary is Boundary.PERIODIC and sum(self.diffs) != 0:
            raise ValueError("periodic shape entries must sum to zero")

    @property
    def n(self):
        if self.boundary is Boundary.PERIODIC:
            return len(self.diffs)
        return len(self.diffs) + 1


def _check_site(n, j):
    if not 1 <= j <= n:
        raise IndexError(f"site {j} out of range 1..{n}")


def _count(heights, i, boundary):
    # 0-based i; heights is any sequence
    n = len(heights)
    x = heights[i]
    if i > 0:
        left = heights[i - 1] > x
    elif boundary is Boundary.PERIODIC:
        left = heights[n - 1] > x
    else:
        left = boundary is Boundary.INFINITE
    if i < n - 1:
        right = heights[i + 1] > x
    elif boundary is Boundary.PERIODIC:
        right = heights[0] > x
    else:
        right = boundary in (Boundary.INFINITE, Boundary.ZERO_INFINITE)
    return int(left) + int(right)


def neighbor_count(cfg, j):
    """Number of neighbours of site ``j`` strictly higher than it."""
    _check_site(cfg.n, j)
    return _count(cfg.heights, j - 1, cfg.boundary)


def shape_neighbor_count(shape, j):
    """Same statistic read off a shape (it only depends on the differences)."""
    n = shape.n
    _check_site(n, j)
    h = shape.diffs
    b = shape.boundary
    i = j - 1
    if b is Boundary.PERIODIC:
        return int(h[i - 1] > 0) + int(h[i] < 0)
    left = h[i - 1] > 0 if i > 0 else b is Boundary.INFINITE
    right = h[i] < 0 if i < n - 1 else b in (Boundary.INFINITE, Boundary.ZERO_INFINITE)
    return int(left) + int(right)


def transition_rate(cfg, beta, j):
    return beta[neighbor_count(cfg, j)]


def deposit(cfg, j):
    _check_site(cfg.n, j)
    heights = list(cfg.heights)
    heights[j - 1] += 1
    return Configuration(tuple(heights), cfg.boundary)


def shape_of(cfg):
    x = cfg.heights
    diffs = [x[i] - x[i + 1] for i in range(len(x) - 1)]
    if cfg.boundary is Boundary.PERIODIC:
        diffs.append(x[-1] - x[0])
    return Shape(tuple(diffs), cfg.boundary)


def shape_step(shape, j):
    """Apply the shape move ``f_j`` induced by a deposit at site ``j``."""
    n = shape.n
    _check_site(n, j)
    h = list(shape.diffs)
    i = j - 1
    if shape.boundary is Boundary.PERIODIC:
        h[i] += 1
        h[i - 1] -= 1
    else:
        if i < n - 1:
            h[i] += 1
        if i > 0:
            h[i - 1] -= 1
    return Shape(tuple(h), shape.boundary)


def reflect(cfg):
    """Mirror the configuration left to right."""
    if not cfg.boundary.symmetric:
        raise ValueError("reflection is only defined for symmetric boundaries "
                         "(zero, periodic, infinite)")
    return Configuration(cfg.heights[::-1], cfg.boundary)
