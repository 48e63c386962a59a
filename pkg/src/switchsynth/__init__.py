"""Pattern-based safety controller synthesis for sampled switched affine systems."""

from .affine_flow import AffineMap, ModeDynamics, apply_point, compose, discretize
from .geometry import (
    Box,
    Zonotope,
    affine_image,
    bisect,
    contained_in,
    interval_hull,
    zonotope_from_box,
)
from .switched_core import (
    CyclePatterns,
    KPatterns,
    Mode,
    Pattern,
    SwitchedSystem,
    admissible_step,
    enumerate_cycle_patterns,
    post_mode,
    post_pattern,
    unfold,
)
from .synthesis import (
    Decomposition,
    DecompositionCell,
    OutOfDomainError,
    SynthesisFailure,
    SynthesisProblem,
    controller_lookup,
    decompose,
    find_pattern,
    load_decomposition,
    save_decomposition,
    validate,
)
from .converter import (
    ConverterParams,
    build_system,
    default_problem,
    ideal_setpoints,
    output_voltage,
    preset,
)
from .simulator import Trace, check_trace, simulate

__version__ = "0.1.0"

__all__ = [
    "AffineMap",
    "ModeDynamics",
    "apply_point",
    "compose",
    "discretize",
    "Box",
    "Zonotope",
    "affine_image",
    "bisect",
    "contained_in",
    "interval_hull",
    "zonotope_from_box",
    "CyclePatterns",
    "KPatterns",
    "Mode",
    "Pattern",
    "SwitchedSystem",
    "admissible_step",
    "enumerate_cycle_patterns",
    "post_mode",
    "post_pattern",
    "unfold",
    "Decomposition",
    "DecompositionCell",
    "OutOfDomainError",
    "SynthesisFailure",
    "SynthesisProblem",
    "controller_lookup",
    "decompose",
    "find_pattern",
    "load_decomposition",
    "save_decomposition",
    "validate",
    "ConverterParams",
    "build_system",
    "default_problem",
    "ideal_setpoints",
    "output_voltage",
    "preset",
    "Trace",
    "check_trace",
    "simulate",
]
