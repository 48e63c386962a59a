"""Boxes, zonotopes, and the containment tests used by the synthesis loop.

Every target set in this package is an axis-aligned box, so deciding
``Z subset B`` for a zonotope ``Z`` reduces to comparing its interval hull
with ``B``. That comparison is exact, not a conservative approximation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .affine_flow import AffineMap

__all__ = [
    "Box",
    "Zonotope",
    "dimset",
    "zonotope_from_box",
    "affine_image",
    "interval_hull",
    "containment_margin",
    "contained_in",
    "bisect",
]


def _frozen(arr) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


def dimset(indices: Iterable[int], n: int | None = None) -> tuple[int, ...]:
    """Normalise a collection of state indices, keeping the caller's order."""
    dims = tuple(int(i) for i in indices)
    if len(set(dims)) != len(dims):
        raise ValueError(f"repeated dimension in {dims}")
    if any(i < 0 for i in dims) or (n is not None and any(i >= n for i in dims)):
        raise ValueError(f"dimension index out of range in {dims} (n={n})")
    return dims


@dataclass(frozen=True, eq=False)
class Box:
    """Closed axis-aligned box ``[lower_0, upper_0] x ... x [lower_n-1, upper_n-1]``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo, hi = _frozen(self.lower), _frozen(self.upper)
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise ValueError(f"bound shapes differ or are not vectors: {lo.shape}, {hi.shape}")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            bad = int(np.argmax(lo > hi))
            raise ValueError(f"lower > upper in dimension {bad}: {lo[bad]} > {hi[bad]}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_intervals(cls, intervals: Sequence[Sequence[float]]) -> "Box":
        arr = np.asarray(intervals, dtype=float).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1])

    @property
    def n(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return (self.lower + self.upper) / 2

    @property
    def halfwidths(self) -> np.ndarray:
        return (self.upper - self.lower) / 2

    def volume(self, dims: Sequence[int] | None = None) -> float:
        dims = range(self.n) if dims is None else dims
        return float(np.prod([self.upper[i] - self.lower[i] for i in dims]))

    def contains(self, x, dims: Sequence[int] | None = None) -> bool:
        x = np.asarray(x, dtype=float)
        dims = list(range(self.n)) if dims is None else list(dims)
        return bool(np.all(self.lower[dims] <= x[dims]) and np.all(x[dims] <= self.upper[dims]))

    def contains_box(self, other: "Box", dims: Sequence[int] | None = None) -> bool:
        dims = list(range(self.n)) if dims is None else list(dims)
        return bool(
            np.all(self.lower[dims] <= other.lower[dims])
            and np.all(other.upper[dims] <= self.upper[dims])
        )

    def inflate(self, eps: float) -> "Box":
        return Box(self.lower - eps, self.upper + eps)

    def project(self, dims: Sequence[int]) -> "Box":
        dims = list(dims)
        return Box(self.lower[dims], self.upper[dims])

    def intervals(self) -> list[tuple[float, float]]:
        return [(float(a), float(b)) for a, b in zip(self.lower, self.upper)]

    def __eq__(self, other):
        if not isinstance(other, Box):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper)

    def __hash__(self):
        return hash((self.lower.tobytes(), self.upper.tobytes()))

    def __repr__(self):
        parts = " x ".join(f"[{a:g},{b:g}]" for a, b in self.intervals())
        return f"Box({parts})"


@dataclass(frozen=True, eq=False)
class Zonotope:
    """``{center + G xi : |xi|_inf <= 1}``; generators are the columns of ``G``."""

    center: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        c = _frozen(self.center)
        G = _frozen(self.G)
        if c.ndim != 1:
            raise ValueError("center must be a vector")
        if G.ndim == 1 and G.size == 0:
            G = _frozen(np.zeros((c.size, 0)))
        if G.ndim != 2 or G.shape[0] != c.size:
            raise ValueError(f"generator matrix shape {G.shape} does not match center dimension {c.size}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "G", G)

    @property
    def n(self) -> int:
        return self.center.size

    @property
    def generators(self) -> list[np.ndarray]:
        return [self.G[:, k] for k in range(self.G.shape[1])]

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Uniform samples of the generator coefficients, mapped into the set (rows)."""
        xi = rng.uniform(-1.0, 1.0, size=(count, self.G.shape[1]))
        return self.center + xi @ self.G.T

    def __repr__(self):
        return f"Zonotope(n={self.n}, generators={self.G.shape[1]})"


def zonotope_from_box(b: Box) -> Zonotope:
    return Zonotope(b.center, np.diag(b.halfwidths))


def affine_image(amap: AffineMap, z: Zonotope) -> Zonotope:
    if amap.n != z.n:
        raise ValueError(f"dimension mismatch: map {amap.n}, zonotope {z.n}")
    return Zonotope(amap.C @ z.center + amap.d, amap.C @ z.G)


def interval_hull(z: Zonotope) -> Box:
    radius = np.abs(z.G).sum(axis=1)
    return Box(z.center - radius, z.center + radius)


def containment_margin(z: Zonotope | Box, b: Box, dims: Sequence[int]) -> np.ndarray:
    """Per-dimension slack of the hull of ``z`` inside ``b`` (negative = sticks out)."""
    hull = z if isinstance(z, Box) else interval_hull(z)
    dims = list(dims)
    return np.minimum(hull.lower[dims] - b.lower[dims], b.upper[dims] - hull.upper[dims])


def contained_in(z: Zonotope, b: Box, dims: Sequence[int], eps: float = 0.0) -> bool:
    """Whether the hull of ``z`` lies in ``b`` widened by ``eps``, on ``dims`` only."""
    if z.n != b.n:
        raise ValueError(f"dimension mismatch: zonotope {z.n}, box {b.n}")
    return bool(np.all(containment_margin(z, b, dims) >= -eps))


def bisect(b: Box, dims: Sequence[int]) -> list[Box]:
    """Split ``b`` at the midpoint of each listed dimension.

    Parts come out in lexicographic order of (low=0, high=1) choices, the
    first listed dimension varying slowest.
    """
    dims = dimset(dims, b.n)
    if not dims:
        raise ValueError("bisect needs at least one dimension")
    mid = b.center
    parts = []
    for choice in itertools.product((0, 1), repeat=len(dims)):
        lo, hi = b.lower.copy(), b.upper.copy()
        for dim, half in zip(dims, choice):
            if half:
                lo[dim] = mid[dim]
            else:
                hi[dim] = mid[dim]
        parts.append(Box(lo, hi))
    return parts
