"""Sampled switched affine systems: modes, patterns, Post and unfoldings."""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .affine_flow import AffineMap, ModeDynamics, compose, discretize
from .geometry import Zonotope, affine_image

__all__ = [
    "Mode",
    "Pattern",
    "SwitchedSystem",
    "post_mode",
    "post_pattern",
    "unfold",
    "admissible_step",
    "enumerate_cycle_patterns",
    "CyclePatterns",
    "KPatterns",
]


@dataclass(frozen=True, order=True)
class Mode:
    """Switch configuration. ``bits[0]`` is S_1 and prints leftmost."""

    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if not bits or any(b not in (0, 1) for b in bits):
            raise ValueError(f"mode bits must be a non-empty 0/1 sequence, got {self.bits!r}")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def parse(cls, text: str) -> "Mode":
        text = text.strip()
        if not text or set(text) - {"0", "1"}:
            raise ValueError(f"not a mode bitstring: {text!r}")
        return cls(tuple(int(c) for c in text))

    @classmethod
    def from_value(cls, value: int, width: int) -> "Mode":
        return _mode_from_value(int(value), int(width))

    @property
    def width(self) -> int:
        return len(self.bits)

    @property
    def value(self) -> int:
        """Integer code with S_1 as the most significant bit."""
        out = 0
        for b in self.bits:
            out = (out << 1) | b
        return out

    @property
    def weight(self) -> int:
        return sum(self.bits)

    def __str__(self):
        return "".join(map(str, self.bits))

    def __repr__(self):
        return f"Mode('{self}')"


@functools.lru_cache(maxsize=None)
def _mode_from_value(value: int, width: int) -> Mode:
    if not 0 <= value < (1 << width):
        raise ValueError(f"mode value {value} out of range for width {width}")
    return Mode(tuple((value >> (width - 1 - j)) & 1 for j in range(width)))


@dataclass(frozen=True)
class Pattern:
    """Finite sequence of modes, each held for one sampling period."""

    modes: tuple[Mode, ...]

    def __post_init__(self):
        modes = tuple(m if isinstance(m, Mode) else Mode.parse(m) for m in self.modes)
        if not modes:
            raise ValueError("a pattern needs at least one mode")
        if len({m.width for m in modes}) != 1:
            raise ValueError("all modes of a pattern must have the same width")
        object.__setattr__(self, "modes", modes)

    @classmethod
    def parse(cls, text: str | Sequence[str]) -> "Pattern":
        """Accept ``"0000->0001->..."`` or a list of bitstrings."""
        if isinstance(text, str):
            parts = [p for p in text.replace("→", "->").split("->")]
        else:
            parts = list(text)
        return cls(tuple(Mode.parse(p) for p in parts))

    def __len__(self):
        return len(self.modes)

    def __iter__(self):
        return iter(self.modes)

    def __getitem__(self, i):
        return self.modes[i]

    def to_strings(self) -> list[str]:
        return [str(m) for m in self.modes]

    def __str__(self):
        return "->".join(self.to_strings())

    def __repr__(self):
        return f"Pattern('{self}')"


class SwitchedSystem:
    """Finite family of affine modes sampled every ``tau`` seconds.

    Per-mode maps are discretized eagerly at construction. Sub-step maps
    (``tau / q``) are built on first request and memoised; the system is
    otherwise immutable.
    """

    def __init__(self, dynamics: Mapping[Mode, ModeDynamics], tau: float):
        if not dynamics:
            raise ValueError("a switched system needs at least one mode")
        dims = {dyn.n for dyn in dynamics.values()}
        widths = {m.width for m in dynamics}
        if len(dims) != 1 or len(widths) != 1:
            raise ValueError("all modes must share state dimension and bit width")
        self.n = dims.pop()
        self.width = widths.pop()
        self.tau = float(tau)
        self.modes: tuple[Mode, ...] = tuple(sorted(dynamics))
        self.dynamics: dict[Mode, ModeDynamics] = {m: dynamics[m] for m in self.modes}
        self._position = {m: k for k, m in enumerate(self.modes)}
        lookup = np.full(1 << self.width, -1, dtype=np.intp)
        for k, m in enumerate(self.modes):
            lookup[m.value] = k
        self._value_to_position = lookup
        self._maps: dict[int, dict[Mode, AffineMap]] = {}
        self._stacks: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self.maps = self.maps_for(1)

    def __repr__(self):
        return f"SwitchedSystem(n={self.n}, modes={len(self.modes)}, tau={self.tau:g})"

    def __getstate__(self):
        # Sub-step caches are cheap to rebuild; keep worker payloads small.
        state = self.__dict__.copy()
        state["_maps"] = {1: self._maps[1]}
        state["_stacks"] = {}
        return state

    def map_of(self, mode: Mode, substeps: int = 1) -> AffineMap:
        try:
            return self.maps_for(substeps)[mode]
        except KeyError:
            raise KeyError(f"unknown mode {mode}") from None

    def maps_for(self, substeps: int = 1) -> dict[Mode, AffineMap]:
        substeps = int(substeps)
        if substeps < 1:
            raise ValueError("substeps must be >= 1")
        if substeps not in self._maps:
            self._maps[substeps] = {
                m: discretize(dyn, self.tau / substeps) for m, dyn in self.dynamics.items()
            }
        return self._maps[substeps]

    def stacked_maps(self, substeps: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """``(C, d)`` arrays of shape (modes, n, n) and (modes, n), in ``self.modes`` order."""
        if substeps not in self._stacks:
            maps = self.maps_for(substeps)
            Cs = np.stack([maps[m].C for m in self.modes])
            ds = np.stack([maps[m].d for m in self.modes])
            self._stacks[substeps] = (Cs, ds)
        return self._stacks[substeps]

    def positions(self, values: np.ndarray) -> np.ndarray:
        """Translate integer mode codes into row indices of :meth:`stacked_maps`."""
        values = np.asarray(values)
        outside = (values < 0) | (values >= self._value_to_position.size)
        if np.any(outside):
            raise KeyError(f"mode code {int(values[outside].flat[0])} out of range for width {self.width}")
        pos = self._value_to_position[values]
        if np.any(pos < 0):
            bad = int(np.asarray(values)[pos < 0].flat[0])
            raise KeyError(f"unknown mode {Mode.from_value(bad, self.width)}")
        return pos

    def pattern_map(self, pattern: Pattern, substeps: int = 1) -> AffineMap:
        """Composed map of a whole pattern."""
        total = AffineMap.identity(self.n)
        for mode in pattern:
            step = self.map_of(mode, substeps)
            for _ in range(substeps):
                total = compose(total, step)
        return total


def post_mode(sys: SwitchedSystem, u: Mode, z: Zonotope) -> Zonotope:
    return affine_image(sys.map_of(u), z)


def post_pattern(sys: SwitchedSystem, pi: Pattern, z: Zonotope) -> Zonotope:
    return affine_image(sys.pattern_map(pi), z)


def unfold(sys: SwitchedSystem, pi: Pattern, z: Zonotope, substeps: int = 1) -> list[Zonotope]:
    """``[X_0, X_1, ..., X_m]`` with ``X_{i+1} = Post_{u_{i+1}}(X_i)``.

    With ``substeps > 1`` every sampling period is split into that many
    equal sub-steps and each intermediate set is included as well.
    """
    sets = [z]
    for mode in pi:
        step = sys.map_of(mode, substeps)
        for _ in range(substeps):
            sets.append(affine_image(step, sets[-1]))
    return sets


def admissible_step(u: Mode, v: Mode, phase: str) -> bool:
    """One switch pair changes, upward while ascending and downward while descending."""
    if u.width != v.width:
        raise ValueError("modes of different widths")
    if phase not in ("ascending", "descending"):
        raise ValueError(f"phase must be 'ascending' or 'descending', got {phase!r}")
    flips = [j for j in range(u.width) if u.bits[j] != v.bits[j]]
    if len(flips) != 1:
        return False
    j = flips[0]
    return v.bits[j] == (1 if phase == "ascending" else 0)


def _check_levels(levels: int) -> int:
    if isinstance(levels, bool) or int(levels) != levels:
        raise ValueError(f"levels must be an integer, got {levels!r}")
    levels = int(levels)
    if levels < 3 or levels % 2 == 0:
        raise ValueError(f"levels must be odd and >= 3, got {levels}")
    return levels


def enumerate_cycle_patterns(levels: int) -> Iterator[Pattern]:
    """Lazily yield every one-cycle staircase pattern for an ``levels``-level converter.

    A pattern is fixed by the order in which the ``levels - 1`` switch pairs
    are turned on and the order in which they are turned off again. Patterns
    are emitted lexicographically over (on-order, off-order).
    """
    width = _check_levels(levels) - 1
    for set_order in itertools.permutations(range(width)):
        rising = [0]
        for bit in set_order:
            rising.append(rising[-1] | (1 << (width - 1 - bit)))
        for clear_order in itertools.permutations(range(width)):
            values = list(rising)
            for bit in clear_order[:-1]:
                values.append(values[-1] & ~(1 << (width - 1 - bit)))
            yield Pattern(tuple(Mode.from_value(v, width) for v in values))


@functools.lru_cache(maxsize=8)
def _cycle_index_array(levels: int) -> np.ndarray:
    width = levels - 1
    perms = np.array(list(itertools.permutations(range(width))), dtype=np.int64)
    weights = 1 << (width - 1 - perms)
    rising = np.concatenate([np.zeros((len(perms), 1), dtype=np.int64), np.cumsum(weights, axis=1)], axis=1)
    falling = (1 << width) - 1 - np.cumsum(weights, axis=1)[:, :-1]
    rows = np.concatenate(
        [np.repeat(rising, len(perms), axis=0), np.tile(falling, (len(perms), 1))], axis=1
    )
    rows.setflags(write=False)
    return rows


class CyclePatterns:
    """Re-iterable source of the one-cycle staircase patterns.

    Besides plain iteration it exposes the whole stream as an integer array
    of mode codes (one row per pattern, same order), which lets the search
    evaluate thousands of candidates per numpy call.
    """

    def __init__(self, levels: int):
        self.levels = _check_levels(levels)
        self.width = self.levels - 1
        self.length = 2 * self.width

    def __iter__(self) -> Iterator[Pattern]:
        return enumerate_cycle_patterns(self.levels)

    def __len__(self):
        return math.factorial(self.width) ** 2

    def index_array(self) -> np.ndarray:
        return _cycle_index_array(self.levels)

    def pattern_at(self, row: int) -> Pattern:
        codes = self.index_array()[row]
        return Pattern(tuple(Mode.from_value(int(v), self.width) for v in codes))

    def __repr__(self):
        return f"CyclePatterns(levels={self.levels})"


class KPatterns:
    """All mode sequences of length 1..k, shorter ones first."""

    def __init__(self, modes: Iterable[Mode], k: int):
        self.modes = tuple(modes)
        if int(k) < 1:
            raise ValueError("k must be >= 1")
        self.k = int(k)

    def __iter__(self) -> Iterator[Pattern]:
        for length in range(1, self.k + 1):
            for seq in itertools.product(self.modes, repeat=length):
                yield Pattern(seq)

    def __len__(self):
        m = len(self.modes)
        return sum(m**length for length in range(1, self.k + 1))

    def __repr__(self):
        return f"KPatterns(modes={len(self.modes)}, k={self.k})"
