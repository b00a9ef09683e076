import math

import numpy as np
import pytest

from nodectl.core import Dataset
from nodectl.errors import ParameterError
from nodectl.flow import integrate_many, sample_trajectories
from nodectl.shallow import (
    SeparabilityCertificate,
    certificate_for_direction,
    check_assumption1,
    estimate_separability_probability,
    one_dimensional_probability,
    solve_corollary4,
)


def strip_dataset(rng, N, d):
    """Pairs placed in disjoint slabs along a random direction."""
    a = rng.normal(size=d)
    a /= np.linalg.norm(a)
    X, Y = [], []
    for n in range(N):
        level = 2.0 * n + rng.uniform(0.2, 1.8, 2)
        for value, out in zip(level, (X, Y)):
            v = rng.normal(size=d)
            v -= (v @ a) * a
            out.append(value * a + v)
    return Dataset(X, Y), a


def test_certificate_along_axis():
    data = Dataset([[0.1, 5.0], [2.2, -1.0]], [[0.9, -3.0], [2.8, 4.0]])
    cert = certificate_for_direction(data, [1.0, 0.0])
    assert cert is not None and cert.tau == (0, 1)
    assert cert.holds_for(data)


def test_no_certificate_when_spans_overlap():
    data = Dataset([[0.0], [0.5]], [[1.0], [1.5]])
    assert check_assumption1(data) is None


def test_certificate_validates_inputs():
    with pytest.raises(ParameterError):
        SeparabilityCertificate(np.array([2.0, 0.0]), np.array([1.0, 0.0]), (0,))
    with pytest.raises(ParameterError):
        SeparabilityCertificate(np.array([1.0, 0.0]), np.array([0.0, 1.0]), (0,))


@pytest.mark.parametrize("seed", range(5))
def test_constant_control_interpolates_and_confines(seed):
    rng = np.random.default_rng(seed)
    data, _ = strip_dataset(rng, 4, 3)
    cert = check_assumption1(data, seed=seed)
    assert cert is not None
    ctrl = solve_corollary4(data, cert, 1.0)
    sched = ctrl.schedule()
    assert sched.discontinuity_count() == 0 and sched.width == 4
    end, _ = integrate_many(sched, data.X)
    assert np.max(np.linalg.norm(end - data.Y, axis=1)) <= 1e-6
    _, states, _ = sample_trajectories(sched, data.X, samples_per_piece=200)
    proj = states @ cert.a
    for n, k in enumerate(cert.tau):
        assert np.all(proj[k] > -cert.biases[n]) and np.all(proj[k] < -cert.biases[n + 1])


def test_midpoint_rule_also_interpolates():
    rng = np.random.default_rng(3)
    data, _ = strip_dataset(rng, 3, 2)
    cert = check_assumption1(data)
    ctrl = solve_corollary4(data, cert, 1.0, hinge_rule="midpoint")
    end, _ = integrate_many(ctrl.schedule(), data.X)
    assert np.max(np.linalg.norm(end - data.Y, axis=1)) <= 1e-6


def test_certificate_must_hold():
    rng = np.random.default_rng(0)
    data, _ = strip_dataset(rng, 2, 2)
    other, _ = strip_dataset(np.random.default_rng(9), 2, 2)
    cert = check_assumption1(other)
    if not cert.holds_for(data):
        with pytest.raises(ParameterError):
            solve_corollary4(data, cert, 1.0)


@pytest.mark.parametrize("N,expected", [(1, 1.0), (2, 1 / 3), (3, 1 / 15)])
def test_one_dimensional_formula(N, expected):
    assert math.isclose(one_dimensional_probability(N), expected, rel_tol=1e-15)


def test_one_dimensional_formula_matches_enumeration():
    # Count orderings of 2N labelled endpoints in which each pair is contiguous.
    from itertools import permutations

    N = 3
    good = total = 0
    for perm in permutations(range(2 * N)):
        total += 1
        pos = {v: i for i, v in enumerate(perm)}
        spans = sorted((min(pos[2 * n], pos[2 * n + 1]), max(pos[2 * n], pos[2 * n + 1])) for n in range(N))
        good += all(spans[i][1] < spans[i + 1][0] for i in range(N - 1))
    assert math.isclose(good / total, one_dimensional_probability(N))


def test_estimate_is_reproducible_for_a_seed():
    a = estimate_separability_probability(2, 2, 5000, seed=4)
    b = estimate_separability_probability(2, 2, 5000, seed=4)
    assert a == b
    assert a.ci_low <= a.p_hat <= a.ci_high
    assert math.isclose(a.independent_axes_value, 1 - (2 / 3) ** 2)


def test_estimate_rejects_nonpositive_arguments():
    with pytest.raises(ParameterError):
        estimate_separability_probability(0, 2, 10)
