import json

import numpy as np
import pytest

from switchsynth.converter import (
    PRESETS,
    ConverterParams,
    build_system,
    default_problem,
    ideal_setpoints,
    load_params,
    mode_dynamics,
    output_levels,
    output_voltage,
    preset,
    preset_start,
)
from switchsynth.switched_core import CyclePatterns, Mode


def test_mode_0000_matrices(params5):
    dyn = mode_dynamics(params5, Mode.parse("0000"))
    expected = np.diag([-1 / 24, -1 / 24, -1 / 24, -250.0])
    np.testing.assert_allclose(dyn.A, expected, rtol=1e-15)
    np.testing.assert_allclose(dyn.b, [0, 0, 0, -500.0], rtol=1e-15)


def test_mode_1000_couples_first_capacitor(params5):
    dyn = mode_dynamics(params5, Mode.parse("1000"))
    assert dyn.A[0, 3] == pytest.approx(1 / 0.0012)
    assert dyn.A[3, 0] == pytest.approx(-1 / 0.2)
    assert dyn.A[1, 3] == 0 and dyn.A[2, 3] == 0
    assert dyn.b[3] == pytest.approx(100 / 0.2)


def test_mode_counts():
    assert len(build_system(preset("paper-5level")).modes) == 16
    assert len(build_system(preset("paper-7level")).modes) == 64


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_skew_coupling(name):
    # capacitor-current coupling and current-capacitor coupling are negated and rescaled
    p = preset(name)
    for mode in build_system(p).modes:
        A = mode_dynamics(p, mode).A
        for j in range(p.n_caps):
            assert p.cap[j] * A[j, p.n - 1] == pytest.approx(-p.l_load * A[p.n - 1, j])


def test_setpoints():
    np.testing.assert_array_equal(ideal_setpoints(preset("paper-5level")), [150, 100, 50])
    np.testing.assert_array_equal(ideal_setpoints(preset("paper-7level")), [500, 400, 300, 200, 100])
    three = preset("paper-5level").with_overrides(levels=3)
    np.testing.assert_array_equal(ideal_setpoints(three), [100])


def test_output_voltage_examples(params5):
    v = [150, 100, 50]
    assert output_voltage(params5, Mode.parse("0000"), v) == -100
    assert output_voltage(params5, Mode.parse("1111"), v) == 100
    assert output_voltage(params5, Mode.parse("1000"), v) == -50
    assert output_voltage(params5, Mode.parse("0001"), v) == -50
    assert output_voltage(params5, Mode.parse("1100"), v) == 0


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_output_levels_evenly_spaced(name):
    p = preset(name)
    levels = output_levels(p)
    assert len(levels) == p.levels
    np.testing.assert_allclose(np.diff(levels), 2 * p.v_input / (p.levels - 1))
    v = ideal_setpoints(p)
    step = 2 * p.v_input / (p.levels - 1)
    for mode in build_system(p).modes:
        assert output_voltage(p, mode, v) == pytest.approx(-p.v_input + step * mode.weight)


def test_default_problem_boxes(params5):
    prob = default_problem(params5)
    assert prob.R == type(prob.R)([145, 95, 45], [155, 105, 55])
    assert prob.S == type(prob.S)([144, 94, 44], [156, 106, 56])
    assert prob.controlled_dims == (0, 1, 2)
    assert isinstance(prob.patterns, CyclePatterns) and prob.k == 8


def test_preset_starts():
    np.testing.assert_array_equal(preset_start("paper-5level"), [150, 100, 50, -3])
    np.testing.assert_array_equal(preset_start("paper-7level"), [500, 400, 300, 200, 100, -2.5])


def test_parameter_validation(params5):
    with pytest.raises(ValueError):
        params5.with_overrides(tol=0)
    with pytest.raises(ValueError):
        params5.with_overrides(levels=4)
    with pytest.raises(ValueError):
        params5.with_overrides(tau=-1)
    with pytest.raises(ValueError):
        preset("no-such-preset")


def test_params_roundtrip(tmp_path, params5):
    path = tmp_path / "p.json"
    path.write_text(json.dumps(params5.to_dict()))
    assert load_params(path) == params5
    assert ConverterParams.from_dict(params5.to_dict()) == params5


def test_period():
    assert preset("paper-5level").period == pytest.approx(0.02)
    assert preset("paper-7level").period == pytest.approx(0.02)
