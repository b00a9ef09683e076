import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nodectl.errors import BracketError, ParameterError
from nodectl.line import ScalarReluField, phi1, phi2
from nodectl.roots import bisect, expand_bracket, solve_increasing


def test_phi_functions_near_zero_and_far():
    assert phi1(np.array([0.0]))[0] == 1.0
    np.testing.assert_allclose(phi1(np.array([1e-8, 2.0])), [1.0 + 5e-9, math.expm1(2.0) / 2.0], rtol=1e-12)
    np.testing.assert_allclose(phi2(np.array([1e-6, 1.0])), [0.5 + 1e-6 / 6, math.e - 2.0], rtol=1e-10)


def test_single_hinge_flow_is_exponential():
    f = ScalarReluField.hinges([0.5], [0.2])
    np.testing.assert_allclose(f.flow([1.0], 2.0), [0.2 + 0.8 * math.e], rtol=1e-14)


def test_flow_approaches_attracting_kink_without_crossing():
    # relu(-x) gives x' = -x below zero.
    f = ScalarReluField([1.0], [-1.0], [0.0])
    x = f.flow([-1.0], 30.0)
    assert x[0] < 0.0 and abs(x[0] + math.exp(-30.0)) < 1e-15


def test_flow_crosses_kinks_exactly():
    f = ScalarReluField.hinges([1.0, -0.5], [0.0, 1.0])
    # Region [0, 1]: x' = x; above 1: x' = 0.5 x + 0.5.
    t_cross = math.log(1.0 / 0.5)
    x = f.flow([0.5], t_cross + 1.0)[0]
    assert abs(x - (2.0 * math.exp(0.5) - 1.0)) < 1e-13


def test_hitting_time_inverts_flow():
    f = ScalarReluField.hinges([1.0, -0.5, 2.0], [0.0, 1.0, 3.0])
    for t in (0.1, 0.7, 2.3):
        y = f.flow([0.4], t)[0]
        assert abs(f.hitting_time(0.4, y) - t) < 1e-10
    assert f.hitting_time(0.4, -1.0) == math.inf


def test_negative_time_rejected():
    with pytest.raises(ParameterError):
        ScalarReluField.hinges([1.0], [0.0]).flow([1.0], -1.0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_exact_flow_is_a_semigroup(seed):
    rng = np.random.default_rng(seed)
    f = ScalarReluField(rng.normal(size=3), rng.normal(size=3), rng.normal(size=3))
    x0 = rng.uniform(-2, 2, 6)
    s, t = rng.uniform(0, 0.6, 2)
    np.testing.assert_allclose(f.flow(f.flow(x0, s), t), f.flow(x0, s + t), rtol=1e-9, atol=1e-9)


def test_bisect_finds_root():
    r = bisect(lambda x: x**3 - 2.0, 0.0, 2.0, ftol=1e-14)
    assert abs(r - 2 ** (1 / 3)) < 1e-12


def test_bisect_requires_sign_change():
    with pytest.raises(BracketError):
        bisect(lambda x: x * x + 1.0, -1.0, 1.0)


def test_expand_bracket_doubles_outward():
    lo, hi, flo, fhi = expand_bracket(lambda x: x - 37.0)
    assert lo <= 37.0 <= hi and flo <= 0 <= fhi


def test_solve_increasing_handles_infinite_values():
    f = lambda x: math.inf if x > 10 else x - 3.0  # noqa: E731
    assert abs(solve_increasing(f) - 3.0) < 1e-12
