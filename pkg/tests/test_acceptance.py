"""Acceptance suite: one PASS/FAIL line per criterion, printed at the end of the run.

Each test records its verdict (with the measured numbers) before asserting,
so a failing criterion still reports what was observed.
"""

import json
import time

import numpy as np
import pytest

from oracles import cycle_paths, ode_affine_map
from switchsynth.affine_flow import AffineMap, ModeDynamics, compose, discretize
from switchsynth.cli import main
from switchsynth.converter import build_system, mode_dynamics, output_function, output_levels, preset_start
from switchsynth.geometry import (
    Box,
    Zonotope,
    affine_image,
    bisect,
    contained_in,
    containment_margin,
    interval_hull,
)
from switchsynth.simulator import check_trace, random_start_checks, simulate
from switchsynth.switched_core import CyclePatterns, enumerate_cycle_patterns
from switchsynth.synthesis import load_decomposition, problem_from_document, validate

RESULTS: dict[int, str] = {}


def record(number: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    RESULTS[number] = line
    print(line)
    assert ok, line


def _published(published_file):
    dec, doc = load_decomposition(published_file)
    return dec, doc


def test_criterion_1_five_level_synthesis(tmp_path, published_file, capsys):
    out = tmp_path / "dec5.json"
    t0 = time.perf_counter()
    rc = main(["synth", "--preset", "paper-5level", "--out", str(out)])
    wall = time.perf_counter() - t0
    capsys.readouterr()
    ours = json.loads(out.read_text())["cells"] if rc == 0 else []
    published, _ = _published(published_file)
    expected = [(c.box.lower.tolist(), c.box.upper.tolist()) for c in published.cells]
    got = [(c["box"]["lower"], c["box"]["upper"]) for c in ours]
    ok = rc == 0 and got == expected and wall <= 60
    record(1, ok, f"exit {rc}, {len(got)} cells, boxes equal published V_1..V_8: {got == expected}, "
                  f"wall {wall:.2f}s (limit 60s)")


def test_criterion_2_published_decomposition_validates(published_file, system5):
    dec, doc = _published(published_file)
    prob = problem_from_document(doc, system5)
    report = validate(dec, prob)
    margins = [c.margin for c in report.cells]
    ok = report.ok and prob.eps == 0 and all(m > 0 for m in margins)
    worst = min(margins)
    failing = [c.index + 1 for c in report.failures]
    record(2, ok, f"{len(report.cells)} cells, failing cells {failing}, coverage {report.covered}, "
                  f"min margin {worst:+.4f} V (need all > 0 at eps=0)")


def test_criterion_3_pattern_counts(capsys):
    counts = {}
    for levels in (3, 5, 7):
        assert main(["enumerate", "--levels", str(levels)]) == 0
        counts[levels] = int(capsys.readouterr().out.strip())
    graph = {levels: set(cycle_paths(levels)) for levels in (3, 5)}
    ours = {levels: {tuple(p.to_strings()) for p in enumerate_cycle_patterns(levels)} for levels in (3, 5)}
    structural = True
    for levels in (3, 5, 7):
        width = levels - 1
        codes = CyclePatterns(levels).index_array()
        bits = (codes[..., None] >> np.arange(width)) & 1
        weights = bits.sum(axis=-1)
        profile = list(range(width + 1)) + list(range(width - 1, 0, -1))
        flips = ((codes[:, 1:] ^ codes[:, :-1])[..., None] >> np.arange(width) & 1).sum(axis=-1)
        structural &= bool(np.all(weights == profile) and np.all(flips == 1))
        structural &= len({r.tobytes() for r in codes}) == len(codes)
    ok = counts == {3: 4, 5: 576, 7: 518400} and all(ours[l] == graph[l] for l in (3, 5)) and structural
    record(3, ok, f"counts {counts} (want 4/576/518400), graph-oracle agreement ell=3,5: "
                  f"{all(ours[l] == graph[l] for l in (3, 5))}, structural checks: {structural}")


def test_criterion_4_closed_loop_from_published_start(decomposition5, problem5, params5):
    x0 = preset_start("paper-5level")
    trace = simulate(problem5.system, decomposition5, x0, 50, output_fn=output_function(params5))
    report = check_trace(trace, problem5.S, problem5.controlled_dims, ideal_levels=output_levels(params5))
    levels_ok = report.levels == [-100.0, -50.0, 0.0, 50.0, 100.0] and report.max_level_deviation <= 6
    cycles = len(trace.patterns)
    ok = report.ok and cycles == 50 and levels_ok
    worst = min(report.worst_margin.values())
    halted = f", halted at cycle {trace.halted['cycle']}" if trace.halted else ""
    record(4, ok, f"start {x0.tolist()}: {cycles}/50 cycles{halted}, all samples in S: {bool(report.inside.all())} "
                  f"(worst margin {worst:+.3f} V), levels {report.levels}, "
                  f"max deviation {report.max_level_deviation:.2f} V (limit 6)")


@pytest.mark.slow
def test_criterion_5_seven_level_synthesis(tmp_path, capsys):
    out = tmp_path / "dec7.json"
    t0 = time.perf_counter()
    rc = main(["synth", "--preset", "paper-7level", "--out", str(out)])
    wall = time.perf_counter() - t0
    capsys.readouterr()
    rv = main(["validate", str(out)]) if rc == 0 else None
    capsys.readouterr()
    cells = len(json.loads(out.read_text())["cells"]) if rc == 0 else 0
    ok = rc == 0 and rv == 0 and wall <= 7200
    record(5, ok, f"synth exit {rc}, {cells} cells, validate exit {rv}, wall {wall:.1f}s (limit 7200s)")


def test_criterion_6_discretization_oracle(params5):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 7))
        dyn = ModeDynamics(rng.normal(size=(n, n)), rng.normal(size=n))
        tau = float(rng.uniform(0.01, 1.0))
        m = discretize(dyn, tau)
        C, d = ode_affine_map(dyn.A, dyn.b, tau)
        ref = np.column_stack([C, d])
        worst = max(worst, np.linalg.norm(np.column_stack([m.C, m.d]) - ref) / np.linalg.norm(ref))
    worst_modes = 0.0
    for mode in build_system(params5).modes:
        dyn = mode_dynamics(params5, mode)
        m = discretize(dyn, params5.tau)
        C, d = ode_affine_map(dyn.A, dyn.b, params5.tau)
        ref = np.column_stack([C, d])
        worst_modes = max(worst_modes, np.linalg.norm(np.column_stack([m.C, m.d]) - ref) / np.linalg.norm(ref))
    worst_semi = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 7))
        dyn = ModeDynamics(rng.normal(size=(n, n)), rng.normal(size=n))
        t1, t2 = rng.uniform(0.01, 0.5, size=2)
        whole = discretize(dyn, t1 + t2)
        parts = compose(discretize(dyn, t1), discretize(dyn, t2))
        ref = np.column_stack([whole.C, whole.d])
        worst_semi = max(worst_semi, np.linalg.norm(np.column_stack([parts.C, parts.d]) - ref) / np.linalg.norm(ref))
    ok = worst <= 1e-6 and worst_modes <= 1e-6 and worst_semi <= 1e-10
    record(6, ok, f"random systems max rel err {worst:.2e}, 16 modes {worst_modes:.2e} (limit 1e-6); "
                  f"semigroup {worst_semi:.2e} (limit 1e-10)")


def test_criterion_7_geometry_properties():
    rng = np.random.default_rng(7)
    failures = {"partition": 0, "hull": 0, "sampling": 0, "eps": 0}
    for _ in range(50):
        n = int(rng.integers(1, 6))
        lo = rng.normal(size=n)
        b = Box(lo, lo + rng.uniform(0.1, 3, n))
        dims = sorted(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False).tolist())
        parts = bisect(b, dims)
        pts = rng.uniform(b.lower, b.upper, size=(500, n))
        union = all(any(p.contains(x) for p in parts) for x in pts)
        vol = abs(sum(p.volume() for p in parts) - b.volume()) <= 1e-12 * b.volume()
        disjoint = all(
            np.prod(np.clip(np.minimum(p.upper, q.upper) - np.maximum(p.lower, q.lower), 0, None)) == 0
            for i, p in enumerate(parts) for q in parts[i + 1:]
        )
        failures["partition"] += not (union and vol and disjoint)

        m = int(rng.integers(1, 8))
        z = Zonotope(rng.normal(size=n), rng.normal(size=(n, m)))
        hull = interval_hull(z)
        for row in range(n):
            top = (z.center + z.G @ np.sign(z.G[row]))[row]
            bot = (z.center - z.G @ np.sign(z.G[row]))[row]
            failures["hull"] += not (np.isclose(top, hull.upper[row], rtol=1e-12, atol=1e-12)
                                     and np.isclose(bot, hull.lower[row], rtol=1e-12, atol=1e-12))

        amap = AffineMap(rng.normal(size=(n, n)), rng.normal(size=n))
        image = affine_image(amap, z)
        ih = interval_hull(image)
        src = z.sample(rng, 1000)
        mapped = src @ amap.C.T + amap.d
        slack = 1e-9 * (1 + np.abs(ih.upper).max())
        failures["sampling"] += not (np.all(mapped >= ih.lower - slack) and np.all(mapped <= ih.upper + slack))

        target = Box(rng.normal(size=n) - 2, rng.normal(size=n) + 2)
        verdicts = [contained_in(z, target, range(n), eps) for eps in np.linspace(0, 10, 25)]
        margin = containment_margin(z, target, range(n)).min()
        failures["eps"] += bool(verdicts != sorted(verdicts) or verdicts[0] != (margin >= 0))
    ok = not any(failures.values())
    record(7, ok, f"50 seeded cases per property, failures {failures}")


def test_criterion_8_random_starts(decomposition5, problem5, system5):
    args = (system5, decomposition5, problem5.R, problem5.S, {3: 0.0}, 100, 50)
    one = random_start_checks(*args, seed=8, workers=1)
    eight = random_start_checks(*args, seed=8, workers=8)
    unsafe = sum(not r.ok for r in one)
    same = [r.to_dict() for r in one] == [r.to_dict() for r in eight]
    worst = min(min(r.worst_margin.values()) for r in one)
    ok = unsafe == 0 and same and len(one) == 100
    record(8, ok, f"100 starts x 50 cycles: {unsafe} unsafe, worst margin {worst:+.3f} V, "
                  f"workers 1 vs 8 identical: {same}")
