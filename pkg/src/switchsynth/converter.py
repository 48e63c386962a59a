"""Flying-capacitor multilevel converter as a sampled switched affine system.

State layout is ``(v_1, ..., v_{l-2}, i)``: the flying-capacitor voltages
followed by the load current. Mode bit ``j`` (0-based) is switch pair
``S_{j+1}``; the complementary switches are implicit.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .affine_flow import ModeDynamics
from .geometry import Box
from .switched_core import CyclePatterns, Mode, SwitchedSystem
from .synthesis import SynthesisProblem

__all__ = [
    "ConverterParams",
    "PRESETS",
    "preset",
    "build_system",
    "mode_dynamics",
    "output_voltage",
    "output_function",
    "output_levels",
    "ideal_setpoints",
    "default_problem",
    "default_start",
    "preset_start",
    "load_params",
]


@dataclass(frozen=True)
class ConverterParams:
    """Electrical and control parameters of an ``levels``-level converter.

    ``cap`` and ``r_par`` hold one value per flying capacitor; a single value
    is broadcast. ``r_par`` are bleed resistances in parallel with each
    capacitor. ``v_high``/``v_low`` default to ``v_input``.
    """

    levels: int
    v_input: float
    r_load: float
    l_load: float
    cap: tuple[float, ...]
    r_par: tuple[float, ...]
    tau: float
    tol: float = 5.0
    epsilon: float = 1.0
    v_high: float | None = None
    v_low: float | None = None

    def __post_init__(self):
        levels = self.levels
        if isinstance(levels, bool) or int(levels) != levels or levels < 3 or levels % 2 == 0:
            raise ValueError(f"levels must be an odd integer >= 3, got {levels!r}")
        object.__setattr__(self, "levels", int(levels))
        ncap = self.levels - 2
        for name in ("cap", "r_par"):
            raw = getattr(self, name)
            vals = tuple(float(v) for v in np.atleast_1d(np.asarray(raw, dtype=float)))
            if len(vals) == 1:
                vals = vals * ncap
            if len(vals) != ncap:
                raise ValueError(f"{name} needs {ncap} values (or one), got {len(vals)}")
            object.__setattr__(self, name, vals)
        for name in ("v_input", "r_load", "l_load", "tau", "tol", "epsilon"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.v_high is None:
            object.__setattr__(self, "v_high", self.v_input)
        if self.v_low is None:
            object.__setattr__(self, "v_low", self.v_input)
        positive = [self.v_input, self.r_load, self.l_load, self.tau, self.v_high, self.v_low]
        positive += list(self.cap) + list(self.r_par)
        if not all(np.isfinite(v) and v > 0 for v in positive):
            raise ValueError("electrical parameters and tau must be positive and finite")
        if not self.tol > 0:
            raise ValueError(f"voltage tolerance must be > 0, got {self.tol}")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")

    @property
    def n_caps(self) -> int:
        return self.levels - 2

    @property
    def n(self) -> int:
        return self.levels - 1

    @property
    def period(self) -> float:
        return 2 * (self.levels - 1) * self.tau

    def with_overrides(self, **overrides) -> "ConverterParams":
        overrides = {k: v for k, v in overrides.items() if v is not None}
        if "levels" in overrides and overrides["levels"] != self.levels:
            # Per-capacitor lists no longer fit; fall back to the first value.
            overrides.setdefault("cap", self.cap[:1])
            overrides.setdefault("r_par", self.r_par[:1])
        return replace(self, **overrides)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cap"] = list(self.cap)
        d["r_par"] = list(self.r_par)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ConverterParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown parameter field(s): {sorted(unknown)}")
        return cls(**data)


PRESETS: dict[str, ConverterParams] = {
    "paper-5level": ConverterParams(
        levels=5, v_input=100.0, r_load=50.0, l_load=0.2,
        cap=(0.0012,), r_par=(20_000.0,), tau=0.02 / 8,
    ),
    "paper-7level": ConverterParams(
        levels=7, v_input=300.0, r_load=50.0, l_load=0.137,
        cap=(0.1,), r_par=(20_000.0,), tau=0.02 / 12,
    ),
}

_START_CURRENT = {"paper-5level": -3.0, "paper-7level": -2.5}


def preset(name: str) -> ConverterParams:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def load_params(path: str | Path) -> ConverterParams:
    with open(path) as fh:
        return ConverterParams.from_dict(json.load(fh))


def mode_dynamics(p: ConverterParams, mode: Mode) -> ModeDynamics:
    if mode.width != p.levels - 1:
        raise ValueError(f"mode {mode} has width {mode.width}, expected {p.levels - 1}")
    n, S = p.n, mode.bits
    A = np.zeros((n, n))
    b = np.zeros(n)
    for j in range(p.n_caps):
        A[j, j] = -1.0 / (p.r_par[j] * p.cap[j])
        A[j, n - 1] = (S[j] - S[j + 1]) / p.cap[j]
        A[n - 1, j] = (S[j + 1] - S[j]) / p.l_load
    A[n - 1, n - 1] = -p.r_load / p.l_load
    b[n - 1] = (S[0] * p.v_high - (1 - S[0]) * p.v_low) / p.l_load
    return ModeDynamics(A, b)


def build_system(p: ConverterParams) -> SwitchedSystem:
    width = p.levels - 1
    modes = [Mode.from_value(v, width) for v in range(1 << width)]
    return SwitchedSystem({m: mode_dynamics(p, m) for m in modes}, p.tau)


def output_voltage(p: ConverterParams, mode: Mode, v: Sequence[float]) -> float:
    """Load voltage produced by ``mode`` with capacitor voltages ``v``."""
    v = np.asarray(v, dtype=float)
    if v.shape != (p.n_caps,):
        raise ValueError(f"expected {p.n_caps} capacitor voltages, got shape {v.shape}")
    S = mode.bits
    vo = sum((S[j + 1] - S[j]) * v[j] for j in range(p.n_caps))
    return float(vo + S[0] * p.v_high - (1 - S[0]) * p.v_low)


def output_function(p: ConverterParams) -> Callable[[Mode, np.ndarray], float]:
    """Output voltage as a function of (mode, full state) for the simulator."""
    ncap = p.n_caps
    return lambda mode, x: output_voltage(p, mode, np.asarray(x)[:ncap])


def output_levels(p: ConverterParams) -> np.ndarray:
    """The ``levels`` ideal output voltages, from ``-v_input`` to ``+v_input``."""
    step = 2 * p.v_input / (p.levels - 1)
    return -p.v_input + step * np.arange(p.levels)


def ideal_setpoints(p: ConverterParams) -> np.ndarray:
    step = 2 * p.v_input / (p.levels - 1)
    return np.array([(p.levels - 1 - j) * step for j in range(1, p.levels - 1)])


def default_start(p: ConverterParams, current: float = 0.0) -> np.ndarray:
    return np.append(ideal_setpoints(p), current)


def preset_start(name: str) -> np.ndarray:
    return default_start(preset(name), _START_CURRENT[name])


def default_problem(
    p: ConverterParams,
    depth: int = 1,
    k: int | None = None,
    eps: float = 0.0,
    substeps: int = 1,
    system: SwitchedSystem | None = None,
) -> SynthesisProblem:
    """Control box around the setpoints, safe box widened by ``epsilon``, current lifted at 0."""
    ideal = ideal_setpoints(p)
    R = Box(ideal - p.tol, ideal + p.tol)
    return SynthesisProblem(
        system=system if system is not None else build_system(p),
        R=R,
        S=R.inflate(p.epsilon),
        controlled_dims=tuple(range(p.n_caps)),
        initial_slice={p.n - 1: (0.0, 0.0)},
        depth=depth,
        k=2 * (p.levels - 1) if k is None else k,
        eps=eps,
        substeps=substeps,
        patterns=CyclePatterns(p.levels),
    )
