"""Safe decompositions: pattern search, recursive bisection, independent checking.

A decomposition is a list of (box, pattern) cells covering the control box
``R``. For every cell, applying the pattern to any state of the box lands
back in ``R`` and never leaves the safe box ``S`` at a switching instant.
The induced controller looks up the cell of the current state at each
cycle start and plays its pattern.

Boxes ``R``, ``S`` and the cells live in the coordinates of the controlled
dimensions only. A cell is lifted into the full state space by fixing every
other dimension to ``initial_slice`` (a point or an interval).
"""

from __future__ import annotations

import functools
import hashlib
import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import Box, Zonotope, bisect, containment_margin, dimset, interval_hull
from .switched_core import CyclePatterns, KPatterns, Pattern, SwitchedSystem, unfold

__all__ = [
    "SynthesisProblem",
    "DecompositionCell",
    "Decomposition",
    "SearchResult",
    "SynthesisFailure",
    "OutOfDomainError",
    "DecompositionFileError",
    "search_pattern",
    "find_pattern",
    "decompose",
    "validate",
    "ValidationReport",
    "CellReport",
    "controller_lookup",
    "decomposition_to_dict",
    "save_decomposition",
    "load_decomposition",
    "problem_from_document",
]

_CHUNK = 8192


class SynthesisFailure(RuntimeError):
    """Raised when some sub-box exhausts the bisection depth."""

    def __init__(self, failed: list["FailedBox"], cells: list["DecompositionCell"], stats: "SearchStats"):
        self.failed = failed
        self.cells = cells
        self.stats = stats
        boxes = ", ".join(repr(f.box) for f in failed[:4])
        more = f" (+{len(failed) - 4} more)" if len(failed) > 4 else ""
        super().__init__(f"no safe pattern for {len(failed)} sub-box(es): {boxes}{more}")


class OutOfDomainError(ValueError):
    """State outside the control box; the induced controller is undefined there."""


class DecompositionFileError(ValueError):
    """Decomposition document is not valid JSON or misses required fields."""


@dataclass(frozen=True, eq=False)
class SynthesisProblem:
    system: SwitchedSystem
    R: Box
    S: Box
    controlled_dims: tuple[int, ...]
    initial_slice: Mapping[int, tuple[float, float]] = field(default_factory=dict)
    depth: int = 1
    k: int = 1
    eps: float = 0.0
    substeps: int = 1
    patterns: CyclePatterns | KPatterns | Sequence[Pattern] | None = None
    # Optional bounds on uncontrolled dimensions at the end of the pattern.
    uncontrolled_bounds: Mapping[int, tuple[float, float]] | None = None

    def __post_init__(self):
        n = self.system.n
        dims = dimset(self.controlled_dims, n)
        if not dims:
            raise ValueError("at least one controlled dimension is required")
        object.__setattr__(self, "controlled_dims", dims)
        if self.R.n != len(dims) or self.S.n != len(dims):
            raise ValueError("R and S must be boxes over the controlled dimensions")
        if not self.S.contains_box(self.R):
            raise ValueError("R must be contained in S")
        free = [i for i in range(n) if i not in dims]
        sl = {int(i): _interval(v) for i, v in dict(self.initial_slice).items()}
        if set(sl) - set(free):
            raise ValueError(f"initial_slice given for controlled or unknown dims: {sorted(set(sl) - set(free))}")
        for i in free:
            sl.setdefault(i, (0.0, 0.0))
        object.__setattr__(self, "initial_slice", dict(sorted(sl.items())))
        if self.uncontrolled_bounds is not None:
            ub = {int(i): _interval(v) for i, v in dict(self.uncontrolled_bounds).items()}
            if set(ub) - set(free):
                raise ValueError("uncontrolled_bounds must refer to uncontrolled dims")
            object.__setattr__(self, "uncontrolled_bounds", dict(sorted(ub.items())))
        if int(self.depth) < 0 or int(self.k) < 1 or int(self.substeps) < 1:
            raise ValueError("need depth >= 0, k >= 1, substeps >= 1")
        object.__setattr__(self, "depth", int(self.depth))
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "substeps", int(self.substeps))
        object.__setattr__(self, "eps", float(self.eps))

    @property
    def free_dims(self) -> tuple[int, ...]:
        return tuple(self.initial_slice)

    def with_depth(self, depth: int) -> "SynthesisProblem":
        return replace(self, depth=depth)

    def pattern_source(self):
        """Candidate patterns in search order, restricted to length <= k."""
        src = self.patterns
        if src is None:
            return KPatterns(self.system.modes, self.k)
        if isinstance(src, CyclePatterns):
            return src if src.length <= self.k else ()
        if isinstance(src, KPatterns):
            return src
        return [p for p in src if len(p) <= self.k]

    def embed(self, box: Box) -> Box:
        """Full-state box: ``box`` on controlled dims, the slice elsewhere."""
        lo = np.zeros(self.system.n)
        hi = np.zeros(self.system.n)
        lo[list(self.controlled_dims)] = box.lower
        hi[list(self.controlled_dims)] = box.upper
        for i, (a, b) in self.initial_slice.items():
            lo[i], hi[i] = a, b
        return Box(lo, hi)

    def lift(self, box: Box) -> Zonotope:
        full = self.embed(box)
        keep = full.halfwidths > 0
        return Zonotope(full.center, np.diag(full.halfwidths)[:, keep])

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        meta = {
            "R": self.R.intervals(),
            "S": self.S.intervals(),
            "dims": list(self.controlled_dims),
            "slice": {str(k): list(v) for k, v in self.initial_slice.items()},
            "bounds": None if self.uncontrolled_bounds is None
            else {str(k): list(v) for k, v in self.uncontrolled_bounds.items()},
            "depth": self.depth, "k": self.k, "eps": self.eps, "substeps": self.substeps,
            "tau": self.system.tau,
            "source": repr(self.patterns),
        }
        h.update(json.dumps(meta, sort_keys=True).encode())
        for m in self.system.modes:
            dyn = self.system.dynamics[m]
            h.update(str(m).encode())
            h.update(np.ascontiguousarray(dyn.A).tobytes())
            h.update(np.ascontiguousarray(dyn.b).tobytes())
        return h.hexdigest()[:16]


def _interval(value) -> tuple[float, float]:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        return (float(arr[0]), float(arr[0]))
    if arr.size != 2 or arr[0] > arr[1]:
        raise ValueError(f"not an interval: {value!r}")
    return (float(arr[0]), float(arr[1]))


@dataclass(frozen=True)
class DecompositionCell:
    box: Box
    pattern: Pattern


@dataclass
class SearchStats:
    patterns_evaluated: int = 0
    searches: int = 0
    wall_time: float = 0.0

    def add(self, other: "SearchResult"):
        self.patterns_evaluated += other.evaluated
        self.searches += 1


@dataclass
class Decomposition:
    cells: list[DecompositionCell]
    controlled_dims: tuple[int, ...]
    fingerprint: str = ""
    stats: SearchStats | None = field(default=None, compare=False, repr=False)

    def __len__(self):
        return len(self.cells)

    def __iter__(self):
        return iter(self.cells)


@dataclass(frozen=True)
class FailedBox:
    box: Box
    best_margin: float
    best_pattern: Pattern | None


@dataclass(frozen=True)
class SearchResult:
    pattern: Pattern | None
    evaluated: int
    best_margin: float
    best_pattern: Pattern | None


# --------------------------------------------------------------------------
# Pattern search
# --------------------------------------------------------------------------


def _code_chunks(source, width: int) -> Iterable[tuple[np.ndarray, object]]:
    """Yield ``(codes, origin)`` blocks of equal-length patterns in source order.

    ``origin`` recovers the Pattern for a row: either the source itself
    (row offsets into its index array) or the explicit list of patterns.
    """
    if hasattr(source, "index_array"):
        arr = source.index_array()
        for start in range(0, len(arr), _CHUNK):
            yield arr[start:start + _CHUNK], (source, start)
        return
    it = iter(source)
    while True:
        block = list(itertools.islice(it, _CHUNK))
        if not block:
            return
        for _, group in itertools.groupby(block, key=len):
            pats = list(group)
            codes = np.array([[m.value for m in p] for p in pats], dtype=np.int64)
            yield codes, pats


def _row_pattern(origin, row: int) -> Pattern:
    if isinstance(origin, tuple):
        source, start = origin
        return source.pattern_at(start + row)
    return origin[row]


def _batch_margins(problem: SynthesisProblem, W: Box, codes: np.ndarray) -> np.ndarray:
    """Worst containment slack of each candidate pattern (rows of ``codes``).

    The slack is the minimum over every unfolding element of its distance
    inside ``S``, and over the final element of its distance inside ``R``
    (plus optional uncontrolled bounds). A pattern is safe iff slack >= -eps.
    """
    system = problem.system
    Cs, ds = system.stacked_maps(problem.substeps)
    pos = system.positions(codes)
    z0 = problem.lift(W)
    B, m = pos.shape
    dims = list(problem.controlled_dims)
    c = np.broadcast_to(z0.center, (B, system.n)).copy()
    G = np.broadcast_to(z0.G, (B,) + z0.G.shape).copy()
    s_lo, s_hi = problem.S.lower, problem.S.upper
    margin = np.full(B, np.inf)
    r = np.abs(G).sum(axis=2)
    margin = np.minimum(margin, _slack(c[:, dims], r[:, dims], s_lo, s_hi))
    for step in range(m):
        Ck = Cs[pos[:, step]]
        dk = ds[pos[:, step]]
        for _ in range(problem.substeps):
            c = np.einsum("bij,bj->bi", Ck, c) + dk
            G = Ck @ G
            r = np.abs(G).sum(axis=2)
            margin = np.minimum(margin, _slack(c[:, dims], r[:, dims], s_lo, s_hi))
    margin = np.minimum(margin, _slack(c[:, dims], r[:, dims], problem.R.lower, problem.R.upper))
    if problem.uncontrolled_bounds:
        free = list(problem.uncontrolled_bounds)
        lo = np.array([v[0] for v in problem.uncontrolled_bounds.values()])
        hi = np.array([v[1] for v in problem.uncontrolled_bounds.values()])
        margin = np.minimum(margin, _slack(c[:, free], r[:, free], lo, hi))
    return margin


def _slack(center, radius, lo, hi) -> np.ndarray:
    return np.minimum(center - radius - lo, hi - center - radius).min(axis=1)


def search_pattern(problem: SynthesisProblem, W: Box, source=None) -> SearchResult:
    """First pattern of ``source`` that is safe for every state of ``W``.

    Candidates are scored in vectorised blocks, but the answer is always the
    earliest safe pattern in source order.
    """
    source = problem.pattern_source() if source is None else source
    evaluated = 0
    best_margin, best_pattern = -np.inf, None
    for codes, origin in _code_chunks(source, problem.system.width):
        margins = _batch_margins(problem, W, codes)
        ok = margins >= -problem.eps
        if ok.any():
            row = int(np.argmax(ok))
            evaluated += row + 1
            pat = _row_pattern(origin, row)
            return SearchResult(pat, evaluated, float(margins[row]), pat)
        evaluated += len(codes)
        row = int(np.argmax(margins))
        if margins[row] > best_margin:
            best_margin, best_pattern = float(margins[row]), _row_pattern(origin, row)
    return SearchResult(None, evaluated, best_margin, best_pattern)


def find_pattern(problem: SynthesisProblem, W: Box, source=None) -> Pattern | None:
    return search_pattern(problem, W, source).pattern


# --------------------------------------------------------------------------
# Decomposition
# --------------------------------------------------------------------------


def _search_task(problem: SynthesisProblem, W: Box) -> SearchResult:
    return search_pattern(problem, W)


def decompose(
    problem: SynthesisProblem,
    W: Box | None = None,
    depth: int | None = None,
    workers: int = 1,
) -> Decomposition:
    """Bisect ``W`` (default ``R``) until every part has a safe pattern.

    Sub-boxes of one bisection may be searched in parallel; results are
    collected in bisection order so the output does not depend on
    ``workers``. Raises :class:`SynthesisFailure` if some part still has no
    pattern after ``depth`` bisections.
    """
    W = problem.R if W is None else W
    depth = problem.depth if depth is None else int(depth)
    if not problem.R.contains_box(W):
        raise ValueError(f"{W!r} is not inside R")
    stats = SearchStats()
    t0 = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            mapper = lambda boxes: list(pool.map(functools.partial(_search_task, problem), boxes))
            cells, failed = _decompose(problem, [W], depth, mapper, stats)
    else:
        mapper = lambda boxes: [_search_task(problem, b) for b in boxes]
        cells, failed = _decompose(problem, [W], depth, mapper, stats)
    stats.wall_time = time.perf_counter() - t0
    if failed:
        raise SynthesisFailure(failed, cells, stats)
    return Decomposition(cells, problem.controlled_dims, problem.fingerprint(), stats)


def _decompose(problem, boxes, depth, mapper, stats):
    cells, failed = [], []
    for box, res in zip(boxes, mapper(boxes)):
        stats.add(res)
        if res.pattern is not None:
            cells.append(DecompositionCell(box, res.pattern))
        elif depth == 0:
            failed.append(FailedBox(box, res.best_margin, res.best_pattern))
        else:
            parts = bisect(box, range(box.n))
            sub_cells, sub_failed = _decompose(problem, parts, depth - 1, mapper, stats)
            cells += sub_cells
            failed += sub_failed
    return cells, failed


# --------------------------------------------------------------------------
# Independent validation
# --------------------------------------------------------------------------


@dataclass
class CellReport:
    index: int
    box: Box
    pattern: Pattern
    inside_R: bool
    post_margin: float
    unfold_margin: float
    end_free_interval: dict[int, tuple[float, float]]
    violation: str | None = None

    @property
    def passed(self) -> bool:
        return self.violation is None

    @property
    def margin(self) -> float:
        return min(self.post_margin, self.unfold_margin)


@dataclass
class ValidationReport:
    cells: list[CellReport]
    covered: bool
    coverage_detail: str

    @property
    def ok(self) -> bool:
        return self.covered and bool(self.cells) and all(c.passed for c in self.cells)

    @property
    def failures(self) -> list[CellReport]:
        return [c for c in self.cells if not c.passed]

    def lines(self) -> list[str]:
        out = []
        for c in self.cells:
            verdict = "PASS" if c.passed else "FAIL"
            cur = " ".join(f"x{i}=[{a:.4g},{b:.4g}]" for i, (a, b) in c.end_free_interval.items())
            line = (
                f"cell {c.index + 1}: {verdict} {c.box!r} {c.pattern} "
                f"post_margin={c.post_margin:+.4f} unfold_margin={c.unfold_margin:+.4f} {cur}"
            )
            if c.violation:
                line += f"  <- {c.violation}"
            out.append(line)
        out.append(f"coverage: {'PASS' if self.covered else 'FAIL'} ({self.coverage_detail})")
        return out


def _check_cell(problem: SynthesisProblem, index: int, cell: DecompositionCell) -> CellReport:
    dims = list(problem.controlled_dims)
    eps = problem.eps
    inside = problem.R.contains_box(cell.box)
    try:
        sets = unfold(problem.system, cell.pattern, problem.lift(cell.box), problem.substeps)
    except KeyError as exc:
        return CellReport(index, cell.box, cell.pattern, inside, -np.inf, -np.inf, {}, f"unknown mode: {exc}")
    R_full, S_full = problem.embed(problem.R), problem.embed(problem.S)
    violation = None if inside else "cell is not inside R"

    unf_margin = np.inf
    for step, z in enumerate(sets):
        per_dim = containment_margin(z, S_full, dims)
        unf_margin = min(unf_margin, float(per_dim.min()))
        if violation is None and np.any(per_dim < -eps):
            j = int(np.argmax(per_dim < -eps))
            violation = f"unfolding element {step} leaves S in dim {dims[j]} by {-per_dim[j]:.4g}"

    final = sets[-1]
    per_dim = containment_margin(final, R_full, dims)
    post_margin = float(per_dim.min())
    if violation is None and np.any(per_dim < -eps):
        j = int(np.argmax(per_dim < -eps))
        violation = f"Post leaves R in dim {dims[j]} by {-per_dim[j]:.4g}"

    hull = interval_hull(final)
    free = {i: (float(hull.lower[i]), float(hull.upper[i])) for i in problem.free_dims}
    if violation is None and problem.uncontrolled_bounds:
        for i, (a, b) in problem.uncontrolled_bounds.items():
            lo, hi = free[i]
            if lo < a - eps or hi > b + eps:
                violation = f"dim {i} ends at [{lo:.4g},{hi:.4g}] outside [{a:g},{b:g}]"
                break
    return CellReport(index, cell.box, cell.pattern, inside, post_margin, unf_margin, free, violation)


def _coverage(boxes: Sequence[Box], R: Box) -> tuple[bool, str]:
    """Exact test of ``union(boxes) == R`` (within R).

    All box faces inside R cut it into elementary boxes; each elementary box
    is either inside some cell or meets none, so testing its midpoint decides it.
    """
    if not boxes:
        return False, "no cells"
    cuts = []
    for d in range(R.n):
        pts = {R.lower[d], R.upper[d]}
        for b in boxes:
            pts.update(x for x in (b.lower[d], b.upper[d]) if R.lower[d] < x < R.upper[d])
        pts = np.array(sorted(pts))
        cuts.append((pts[:-1] + pts[1:]) / 2 if len(pts) > 1 else pts)
    lows = np.array([b.lower for b in boxes])
    highs = np.array([b.upper for b in boxes])
    total = int(np.prod([len(c) for c in cuts]))
    mesh = np.stack(np.meshgrid(*cuts, indexing="ij"), axis=-1).reshape(-1, R.n)
    uncovered = 0
    first = None
    for start in range(0, len(mesh), 65536):
        pts = mesh[start:start + 65536]
        inside = np.all((lows[None] <= pts[:, None]) & (pts[:, None] <= highs[None]), axis=2).any(axis=1)
        if not inside.all():
            uncovered += int((~inside).sum())
            if first is None:
                first = pts[int(np.argmin(inside))]
    vol = sum(b.volume() for b in boxes)
    detail = f"{total} elementary regions, cell volume {vol:.6g} / R volume {R.volume():.6g}"
    if uncovered:
        return False, f"{uncovered} of {detail}; first uncovered point {np.round(first, 6).tolist()}"
    return True, detail


def validate(decomposition: Decomposition, problem: SynthesisProblem, workers: int = 1) -> ValidationReport:
    """Re-check a decomposition cell by cell with plain zonotope arithmetic.

    This path shares no code with the vectorised search: every unfolding
    element is computed step by step and its hull compared with S, the last
    one with R. Coverage of R is decided exactly.
    """
    if tuple(decomposition.controlled_dims) != tuple(problem.controlled_dims):
        raise ValueError("decomposition and problem disagree on controlled dimensions")
    cells = list(decomposition.cells)
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(functools.partial(_check_cell, problem), range(len(cells)), cells))
    else:
        reports = [_check_cell(problem, i, c) for i, c in enumerate(cells)]
    covered, detail = _coverage([c.box for c in cells], problem.R)
    return ValidationReport(reports, covered, detail)


# --------------------------------------------------------------------------
# Induced controller
# --------------------------------------------------------------------------


def controller_lookup(decomposition: Decomposition, x) -> Pattern:
    """Pattern of the first cell containing the controlled part of ``x``."""
    x = np.asarray(x, dtype=float)
    proj = x[list(decomposition.controlled_dims)]
    for cell in decomposition.cells:
        if cell.box.contains(proj):
            return cell.pattern
    raise OutOfDomainError(f"state {proj.tolist()} is outside every cell")


# --------------------------------------------------------------------------
# File format
# --------------------------------------------------------------------------


def _box_dict(b: Box) -> dict:
    return {"lower": [float(v) for v in b.lower], "upper": [float(v) for v in b.upper]}


def decomposition_to_dict(dec: Decomposition, problem: SynthesisProblem, **extra) -> dict:
    doc = {
        "tau": problem.system.tau,
        "eps": problem.eps,
        "R": _box_dict(problem.R),
        "S": _box_dict(problem.S),
        "controlled_dims": list(problem.controlled_dims),
        "initial_slice": {str(k): list(v) for k, v in problem.initial_slice.items()},
        "depth": problem.depth,
        "k": problem.k,
        "substeps": problem.substeps,
        "uncontrolled_bounds": None if problem.uncontrolled_bounds is None
        else {str(k): list(v) for k, v in problem.uncontrolled_bounds.items()},
        "fingerprint": dec.fingerprint,
        "cells": [
            {"box": _box_dict(c.box), "pattern": c.pattern.to_strings()} for c in dec.cells
        ],
    }
    doc.update(extra)
    return doc


def save_decomposition(path: str | Path, dec: Decomposition, problem: SynthesisProblem, **extra) -> None:
    doc = decomposition_to_dict(dec, problem, **extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _read_box(obj, what: str) -> Box:
    try:
        return Box(obj["lower"], obj["upper"])
    except (KeyError, TypeError) as exc:
        raise DecompositionFileError(f"{what}: expected {{lower, upper}} arrays") from exc


def load_decomposition(path: str | Path) -> tuple[Decomposition, dict]:
    """Read a decomposition document; returns it plus the raw metadata.

    Structural problems raise :class:`DecompositionFileError`. A box with
    ``lower > upper`` raises plain ``ValueError`` from :class:`Box`.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DecompositionFileError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise DecompositionFileError(f"{path}: top level must be an object")
    missing = [k for k in ("R", "S", "controlled_dims", "cells") if k not in doc]
    if missing:
        raise DecompositionFileError(f"{path}: missing field(s) {missing}")
    if not isinstance(doc["cells"], list):
        raise DecompositionFileError(f"{path}: cells must be a list")
    cells = []
    for i, raw in enumerate(doc["cells"]):
        if not isinstance(raw, dict) or "box" not in raw or "pattern" not in raw:
            raise DecompositionFileError(f"{path}: cell {i + 1} needs box and pattern")
        try:
            pattern = Pattern.parse(raw["pattern"])
        except (ValueError, TypeError) as exc:
            raise DecompositionFileError(f"{path}: cell {i + 1}: bad pattern ({exc})") from exc
        box = _read_box(raw["box"], f"cell {i + 1}")
        cells.append(DecompositionCell(box, pattern))
    dims = tuple(int(d) for d in doc["controlled_dims"])
    return Decomposition(cells, dims, doc.get("fingerprint", "")), doc


def problem_from_document(doc: dict, system: SwitchedSystem, patterns=None) -> SynthesisProblem:
    """Rebuild the synthesis problem recorded in a decomposition document."""
    slice_ = {int(k): tuple(v) for k, v in doc.get("initial_slice", {}).items()}
    bounds = doc.get("uncontrolled_bounds")
    return SynthesisProblem(
        system=system,
        R=_read_box(doc["R"], "R"),
        S=_read_box(doc["S"], "S"),
        controlled_dims=tuple(doc["controlled_dims"]),
        initial_slice=slice_,
        depth=int(doc.get("depth", 1)),
        k=int(doc.get("k", max((len(c["pattern"]) for c in doc["cells"]), default=1))),
        eps=float(doc.get("eps", 0.0)),
        substeps=int(doc.get("substeps", 1)),
        patterns=patterns,
        uncontrolled_bounds=None if bounds is None else {int(k): tuple(v) for k, v in bounds.items()},
    )
