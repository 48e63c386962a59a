"""Closed-loop and open-loop simulation with exact affine stepping."""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .geometry import Box
from .switched_core import Mode, Pattern, SwitchedSystem
from .synthesis import Decomposition, OutOfDomainError, controller_lookup

__all__ = [
    "Trace",
    "TraceReport",
    "simulate",
    "check_trace",
    "write_trace_csv",
    "random_start_checks",
]

OutputFn = Callable[[Mode, np.ndarray], float]


@dataclass
class Trace:
    """Sampled trajectory. ``modes[k]`` is active on ``[times[k], times[k+1])``."""

    times: np.ndarray
    states: np.ndarray
    modes: list[Mode]
    outputs: np.ndarray
    patterns: list[Pattern] = field(default_factory=list)
    halted: dict | None = None

    def __len__(self):
        return len(self.times)


def simulate(
    sys: SwitchedSystem,
    controller: Decomposition | Pattern,
    x0,
    cycles: int,
    substeps: int = 1,
    output_fn: OutputFn | None = None,
) -> Trace:
    """Run ``cycles`` pattern applications from ``x0``.

    With a decomposition, the pattern for each cycle is looked up from the
    state at the cycle start. If that state is outside every cell the run
    stops there and ``trace.halted`` records when and why.
    """
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (sys.n,):
        raise ValueError(f"x0 has shape {x.shape}, expected ({sys.n},)")
    if int(cycles) < 0 or int(substeps) < 1:
        raise ValueError("cycles must be >= 0 and substeps >= 1")
    maps = sys.maps_for(substeps)
    dt = sys.tau / substeps
    states, modes, outputs, patterns = [x.copy()], [], [], []
    halted = None
    for cycle in range(int(cycles)):
        if isinstance(controller, Pattern):
            pattern = controller
        else:
            try:
                pattern = controller_lookup(controller, x)
            except OutOfDomainError as exc:
                halted = {"cycle": cycle, "time": (len(states) - 1) * dt, "reason": str(exc)}
                break
        patterns.append(pattern)
        for mode in pattern:
            step = maps[mode]
            for _ in range(substeps):
                outputs.append(output_fn(mode, x) if output_fn else np.nan)
                modes.append(mode)
                x = step.C @ x + step.d
                states.append(x)
    times = np.arange(len(states)) * dt
    return Trace(times, np.array(states), modes, np.array(outputs, dtype=float), patterns, halted)


@dataclass
class TraceReport:
    inside: np.ndarray
    worst_margin: dict[int, float]
    levels: list[float]
    max_level_deviation: float
    halted: dict | None = None

    @property
    def ok(self) -> bool:
        return self.halted is None and bool(self.inside.all())

    @property
    def first_violation(self) -> int | None:
        bad = np.flatnonzero(~self.inside)
        return int(bad[0]) if bad.size else None

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "samples": int(self.inside.size),
            "violations": int((~self.inside).sum()),
            "first_violation": self.first_violation,
            "worst_margin": {str(k): v for k, v in self.worst_margin.items()},
            "output_levels": self.levels,
            "max_level_deviation": self.max_level_deviation,
            "halted": self.halted,
        }


def check_trace(
    trace: Trace,
    S: Box,
    dims: Sequence[int],
    eps: float = 0.0,
    ideal_levels: Sequence[float] | None = None,
) -> TraceReport:
    """Containment of every sample in ``S`` (over ``dims``), margins and output levels."""
    dims = list(dims)
    proj = trace.states[:, dims]
    slack = np.minimum(proj - S.lower, S.upper - proj)
    inside = np.all(slack >= -eps, axis=1)
    worst = {d: float(slack[:, k].min()) for k, d in enumerate(dims)}
    levels, deviation = [], 0.0
    outs = trace.outputs[np.isfinite(trace.outputs)]
    if ideal_levels is not None and outs.size:
        ideal = np.asarray(ideal_levels, dtype=float)
        nearest = ideal[np.abs(outs[:, None] - ideal[None]).argmin(axis=1)]
        levels = sorted(float(v) for v in np.unique(nearest))
        deviation = float(np.abs(outs - nearest).max())
    return TraceReport(inside, worst, levels, deviation, trace.halted)


def write_trace_csv(path: str | Path, trace: Trace, state_names: Sequence[str] | None = None) -> None:
    """One row per sample; mode and vo are blank on the final sample."""
    n = trace.states.shape[1]
    names = list(state_names) if state_names else [f"v{j + 1}" for j in range(n - 1)] + ["i"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *names, "mode", "vo"])
        for k, (t, x) in enumerate(zip(trace.times, trace.states)):
            if k < len(trace.modes):
                tail = [str(trace.modes[k]), f"{trace.outputs[k]:.9g}"]
            else:
                tail = ["", ""]
            w.writerow([f"{t:.9g}", *(f"{v:.9g}" for v in x), *tail])


def write_report_json(path: str | Path, report: TraceReport) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n")


def _one_start(args):
    sys, dec, x0, cycles, S, dims, eps = args
    trace = simulate(sys, dec, x0, cycles)
    return check_trace(trace, S, dims, eps)


def random_start_checks(
    sys: SwitchedSystem,
    dec: Decomposition,
    R: Box,
    S: Box,
    free_values: dict[int, float],
    count: int,
    cycles: int,
    seed: int = 0,
    eps: float = 0.0,
    workers: int = 1,
) -> list[TraceReport]:
    """Closed-loop runs from uniform random starts in ``R``.

    Start points are drawn up front from ``seed``, so results do not depend
    on ``workers``.
    """
    rng = np.random.default_rng(seed)
    dims = list(dec.controlled_dims)
    starts = []
    for _ in range(count):
        x0 = np.zeros(sys.n)
        x0[dims] = rng.uniform(R.lower, R.upper)
        for i, v in free_values.items():
            x0[i] = v
        starts.append(x0)
    jobs = [(sys, dec, x0, cycles, S, dims, eps) for x0 in starts]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_one_start, jobs, chunksize=max(1, count // (4 * workers))))
    return [_one_start(job) for job in jobs]
