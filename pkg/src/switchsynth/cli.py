"""Command-line front end: ``switchsynth {synth,validate,simulate,enumerate,model}``.

Exit codes: 0 ok, 1 usage, 2 i/o or malformed file, 3 synthesis failed,
4 validation (or simulated safety check) failed.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import converter as cv
from .simulator import check_trace, random_start_checks, simulate, write_report_json, write_trace_csv
from .switched_core import CyclePatterns, Mode, Pattern
from .synthesis import (
    DecompositionFileError,
    SynthesisFailure,
    decompose,
    load_decomposition,
    problem_from_document,
    save_decomposition,
    validate,
)

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_SYNTH, EXIT_INVALID = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_model_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("converter parameters")
    g.add_argument("--preset", choices=sorted(cv.PRESETS))
    g.add_argument("--params", type=Path, help="parameter JSON file")
    g.add_argument("--levels", type=int)
    g.add_argument("--tau", type=float)
    g.add_argument("--vinput", type=float)
    g.add_argument("--rload", type=float)
    g.add_argument("--lload", type=float)
    g.add_argument("--cap", type=_floats, help="one value or one per capacitor")
    g.add_argument("--rpar", type=_floats, help="one value or one per capacitor")
    g.add_argument("--tol", type=float, help="half-width of the control box (V)")
    g.add_argument("--epsilon", type=float, help="safe-box inflation (V)")


def _add_problem_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("synthesis problem")
    g.add_argument("--depth", type=int, default=None)
    g.add_argument("--k", type=int, default=None, help="pattern length bound")
    g.add_argument("--containment-eps", type=float, default=None, help="containment tolerance (default 0)")
    g.add_argument("--subsample", type=int, default=None, help="check unfoldings every tau/q")
    g.add_argument("--current", type=_floats, default=None,
                   help="current at cycle start: a value or 'lo,hi' (default 0); write negative values as --current=-0.5,0")
    g.add_argument("--strict-current", action="store_true",
                   help="also require the end-of-cycle current to stay in --current")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="switchsynth", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="synthesize a safe decomposition")
    _add_model_flags(s)
    _add_problem_flags(s)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", type=Path, default=Path("decomposition.json"))

    v = sub.add_parser("validate", help="independently re-check a decomposition file")
    v.add_argument("decomposition", type=Path)
    _add_model_flags(v)
    v.add_argument("--containment-eps", type=float, default=None)
    v.add_argument("--workers", type=int, default=1)

    m = sub.add_parser("simulate", help="closed-loop (or fixed-pattern) simulation")
    m.add_argument("decomposition", type=Path, nargs="?")
    _add_model_flags(m)
    m.add_argument("--pattern", help="fixed pattern, e.g. 0000->0001->...")
    m.add_argument("--cycles", type=int, default=50)
    m.add_argument("--subsample", type=int, default=1)
    m.add_argument("--start", type=_floats, help="initial state, comma-separated")
    m.add_argument("--random", type=int, default=0, metavar="N",
                   help="instead of one run, check N random starts in R (current 0)")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--workers", type=int, default=1)
    m.add_argument("--out", type=Path, default=Path("trace.csv"))
    m.add_argument("--report", type=Path, default=None, help="JSON safety report (default: <out>.report.json)")

    e = sub.add_parser("enumerate", help="stream one-cycle staircase patterns")
    e.add_argument("--levels", type=int, required=True)
    e.add_argument("--verbose", action="store_true")

    d = sub.add_parser("model", help="print A_S, b_S and setpoints for a mode")
    _add_model_flags(d)
    d.add_argument("--mode", help="bitstring, S_1 leftmost (default all zeros)")
    return parser


def _params(args, fallback: dict | None = None) -> cv.ConverterParams:
    if args.params is not None:
        base = cv.load_params(args.params)
    elif args.preset:
        base = cv.preset(args.preset)
    elif fallback is not None:
        base = cv.ConverterParams.from_dict(fallback)
    elif args.levels == 7:
        base = cv.preset("paper-7level")
    else:
        base = cv.preset("paper-5level")
    overrides = dict(
        levels=args.levels, tau=args.tau, v_input=args.vinput, r_load=args.rload,
        l_load=args.lload, cap=args.cap, r_par=args.rpar, tol=args.tol, epsilon=args.epsilon,
    )
    if args.levels is not None and args.levels != base.levels and args.tau is None:
        # Keep the 20 ms output period when only the level count changes.
        overrides["tau"] = base.period / (2 * (args.levels - 1))
    return base.with_overrides(**overrides)


def _preset_name(params: cv.ConverterParams) -> str | None:
    for name, p in cv.PRESETS.items():
        if p == params:
            return name
    return None


def _cmd_synth(args) -> int:
    p = _params(args)
    prob = cv.default_problem(
        p,
        depth=1 if args.depth is None else args.depth,
        k=args.k,
        eps=args.containment_eps or 0.0,
        substeps=args.subsample or 1,
    )
    if args.current is not None or args.strict_current:
        cur = args.current if args.current is not None else [0.0]
        interval = (cur[0], cur[-1])
        prob = replace(
            prob,
            initial_slice={p.n - 1: interval},
            uncontrolled_bounds={p.n - 1: interval} if args.strict_current else None,
        )
    print(f"levels={p.levels} n={p.n} tau={p.tau:g}s R={prob.R!r} S={prob.S!r} depth={prob.depth} k={prob.k}")
    t0 = time.perf_counter()
    try:
        dec = decompose(prob, workers=args.workers)
    except SynthesisFailure as exc:
        wall = time.perf_counter() - t0
        print(f"synthesis FAILED after {wall:.2f}s, {exc.stats.patterns_evaluated} pattern evaluations")
        for f in exc.failed:
            print(f"  no pattern for {f.box!r}: best worst-margin {f.best_margin:+.4f} ({f.best_pattern})")
        return EXIT_SYNTH
    wall = time.perf_counter() - t0
    try:
        save_decomposition(args.out, dec, prob, levels=p.levels, params=p.to_dict())
    except OSError as exc:
        print(f"cannot write {args.out}: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"cells: {len(dec)}  wall time: {wall:.2f}s  pattern evaluations: {dec.stats.patterns_evaluated}")
    for i, c in enumerate(dec.cells, 1):
        print(f"  V{i} = {c.box!r}  pi{i} = {c.pattern}")
    print(f"wrote {args.out}")
    return EXIT_OK


def _load(path: Path):
    try:
        return load_decomposition(path)
    except OSError as exc:
        print(f"cannot read {path}: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_IO)
    except DecompositionFileError as exc:
        print(f"malformed decomposition: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_IO)


def _problem_for(doc: dict, args):
    p = _params(args, fallback=doc.get("params"))
    prob = problem_from_document(doc, cv.build_system(p), patterns=CyclePatterns(p.levels))
    return p, prob


def _cmd_validate(args) -> int:
    try:
        dec, doc = _load(args.decomposition)
    except ValueError as exc:
        print(f"cell box invalid: {exc}")
        print("validation FAILED")
        return EXIT_INVALID
    p, prob = _problem_for(doc, args)
    if args.containment_eps is not None:
        prob = replace(prob, eps=args.containment_eps)
    report = validate(dec, prob, workers=args.workers)
    for line in report.lines():
        print(line)
    print(f"validation {'PASSED' if report.ok else 'FAILED'} ({len(report.failures)} failing cell(s))")
    return EXIT_OK if report.ok else EXIT_INVALID


def _default_start(p: cv.ConverterParams) -> np.ndarray:
    name = _preset_name(p)
    return cv.preset_start(name) if name else cv.default_start(p)


def _cmd_simulate(args) -> int:
    if (args.decomposition is None) == (args.pattern is None):
        print("give either a decomposition file or --pattern", file=sys.stderr)
        return EXIT_USAGE
    if args.decomposition is not None:
        try:
            dec, doc = _load(args.decomposition)
        except ValueError as exc:
            print(f"cell box invalid: {exc}", file=sys.stderr)
            return EXIT_INVALID
        p, prob = _problem_for(doc, args)
        controller, S, dims = dec, prob.S, prob.controlled_dims
    else:
        p = _params(args)
        prob = cv.default_problem(p)
        try:
            controller = Pattern.parse(args.pattern)
        except ValueError as exc:
            print(f"bad --pattern: {exc}", file=sys.stderr)
            return EXIT_USAGE
        S, dims = prob.S, prob.controlled_dims
    sys_ = prob.system

    if args.random:
        if args.pattern is not None:
            print("--random needs a decomposition", file=sys.stderr)
            return EXIT_USAGE
        reports = random_start_checks(sys_, dec, prob.R, S, {p.n - 1: 0.0}, args.random, args.cycles,
                                      seed=args.seed, workers=args.workers)
        bad = [i for i, r in enumerate(reports) if not r.ok]
        worst = min(min(r.worst_margin.values()) for r in reports)
        print(f"{args.random} random starts x {args.cycles} cycles: {len(bad)} unsafe, worst margin {worst:+.4f}")
        return EXIT_OK if not bad else EXIT_INVALID

    x0 = np.array(args.start) if args.start else _default_start(p)
    if x0.shape != (p.n,):
        print(f"--start needs {p.n} values", file=sys.stderr)
        return EXIT_USAGE
    try:
        trace = simulate(sys_, controller, x0, args.cycles, args.subsample, cv.output_function(p))
    except KeyError as exc:
        print(f"pattern uses {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = check_trace(trace, S, dims, 0.0, cv.output_levels(p))
    report_path = args.report or args.out.with_suffix(".report.json")
    try:
        write_trace_csv(args.out, trace)
        write_report_json(report_path, report)
    except OSError as exc:
        print(f"cannot write output: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"start {x0.tolist()}  cycles {len(trace.patterns)}  samples {len(trace)}")
    print("worst margin in S per dim: " + ", ".join(f"x{d}={m:+.4f}" for d, m in report.worst_margin.items()))
    print(f"output levels: {report.levels} (max deviation {report.max_level_deviation:.3f} V)")
    if trace.halted:
        print(f"halted: {trace.halted['reason']} at t={trace.halted['time']:.6g}s")
    first = report.first_violation
    if first is not None:
        print(f"left S at sample {first} (t={trace.times[first]:.6g}s)")
    print(f"safe: {report.ok}; wrote {args.out} and {report_path}")
    return EXIT_OK if report.ok else EXIT_INVALID


def _cmd_enumerate(args) -> int:
    try:
        source = CyclePatterns(args.levels)
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    count = 0
    for pat in source:
        count += 1
        if args.verbose:
            print(pat)
    print(count)
    return EXIT_OK


def _cmd_model(args) -> int:
    p = _params(args)
    mode = Mode.parse(args.mode) if args.mode else Mode((0,) * (p.levels - 1))
    dyn = cv.mode_dynamics(p, mode)
    ideal = cv.ideal_setpoints(p)
    with np.printoptions(precision=6, suppress=True, linewidth=120):
        print(f"mode {mode} (levels={p.levels}, tau={p.tau:g}s, period={p.period:g}s)")
        print("A_S =")
        print(dyn.A)
        print(f"b_S = {dyn.b}")
        print(f"ideal setpoints = {ideal}")
    print(f"output voltage at setpoints = {cv.output_voltage(p, mode, ideal):g} V")
    print(json.dumps(p.to_dict()))
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "validate": _cmd_validate,
    "simulate": _cmd_simulate,
    "enumerate": _cmd_enumerate,
    "model": _cmd_model,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except SystemExit as exc:
        return int(exc.code)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, ValueError) else EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
