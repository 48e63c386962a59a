"""Exact sampled-time maps for affine dynamics ``x' = A x + b``.

The flow over a fixed duration is itself affine, ``x(tau) = C x(0) + d``.
Both ``C`` and ``d`` come out of a single exponential of the augmented
matrix ``[[A tau, b tau], [0, 0]]``, so ``A`` never has to be inverted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

__all__ = [
    "ModeDynamics",
    "AffineMap",
    "discretize",
    "compose",
    "apply_point",
]

# Above this 1-norm the exponential of the augmented matrix is not trusted.
_MAX_EXPONENT_NORM = 700.0


def _as_finite_array(value, name: str, ndim: int) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ModeDynamics:
    """Continuous-time affine vector field ``x' = A x + b``."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = _as_finite_array(self.A, "A", 2)
        b = _as_finite_array(self.b, "b", 1)
        if A.shape != (b.size, b.size) or b.size < 1:
            raise ValueError(f"inconsistent shapes: A {A.shape}, b {b.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.b.size


@dataclass(frozen=True, eq=False)
class AffineMap:
    """The map ``x -> C x + d``."""

    C: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        C = _as_finite_array(self.C, "C", 2)
        d = _as_finite_array(self.d, "d", 1)
        if C.shape != (d.size, d.size):
            raise ValueError(f"inconsistent shapes: C {C.shape}, d {d.shape}")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "d", d)

    @property
    def n(self) -> int:
        return self.d.size

    @classmethod
    def identity(cls, n: int) -> "AffineMap":
        return cls(np.eye(n), np.zeros(n))

    def __call__(self, x) -> np.ndarray:
        return apply_point(self, x)

    def __eq__(self, other):
        if not isinstance(other, AffineMap):
            return NotImplemented
        return np.array_equal(self.C, other.C) and np.array_equal(self.d, other.d)

    def __hash__(self):
        return hash((self.C.tobytes(), self.d.tobytes()))

    def __repr__(self):
        return f"AffineMap(n={self.n})"


def discretize(dyn: ModeDynamics, tau: float) -> AffineMap:
    """Return the affine map advancing ``dyn`` by ``tau`` seconds.

    Uses scaling-and-squaring Pade on the (n+1)x(n+1) augmented matrix, which
    stays valid when ``A`` is singular (e.g. the pure integrator ``A = 0``).
    """
    tau = float(tau)
    if not np.isfinite(tau) or tau <= 0:
        raise ValueError(f"tau must be a positive finite number, got {tau}")
    n = dyn.n
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = dyn.A * tau
    M[:n, n] = dyn.b * tau
    norm = np.linalg.norm(M, 1)
    if norm > _MAX_EXPONENT_NORM:
        raise FloatingPointError(
            f"augmented exponent norm {norm:.3g} exceeds {_MAX_EXPONENT_NORM}; reduce tau"
        )
    E = expm(M)
    if not np.all(np.isfinite(E)):
        raise FloatingPointError(f"matrix exponential overflow (exponent norm {norm:.3g})")
    return AffineMap(E[:n, :n], E[:n, n])


def compose(first: AffineMap, second: AffineMap) -> AffineMap:
    """Map equivalent to applying ``first`` and then ``second``."""
    if first.n != second.n:
        raise ValueError(f"dimension mismatch: {first.n} vs {second.n}")
    return AffineMap(second.C @ first.C, second.C @ first.d + second.d)


def apply_point(amap: AffineMap, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (amap.n,):
        raise ValueError(f"point of shape {x.shape} does not match map dimension {amap.n}")
    return amap.C @ x + amap.d
