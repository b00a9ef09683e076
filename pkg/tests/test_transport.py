import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nodectl.errors import ParameterError, ResolutionError
from nodectl.flow import ParticleMeasure, integrate_many, push_forward
from nodectl.transport import (
    HyperplaneTask,
    TransportPlanSpec,
    build_delta_targets,
    build_partition,
    compress_support,
    control_hyperplanes,
    error_envelope,
    hyperplane_tasks,
    plan_transport,
    resolution_from_epsilon,
    resolution_statement_form,
    sample_preset,
    uniform_grid_sample,
    wasserstein,
)


@pytest.mark.parametrize("eps,n", [(1.0, 39), (0.5, 77)])
def test_resolution_in_the_plane(eps, n):
    assert resolution_from_epsilon(2, 1.0, eps) == n


def test_resolution_is_strictly_above_threshold():
    for eps in (2.0, 1.0, 0.3):
        n = resolution_from_epsilon(2, 1.0, eps)
        assert error_envelope(2, 1.0, n) < eps
        assert error_envelope(2, 1.0, n - 1) >= eps * (1 - 1e-12) or n == 1


def test_statement_form_is_reported_separately():
    assert resolution_statement_form(2, 1.0, 1.0) != resolution_from_epsilon(2, 1.0, 1.0)


def test_spec_validation():
    with pytest.raises(ParameterError, match="q"):
        TransportPlanSpec(2, 2.5, 1.0, 2, (1, 1))
    with pytest.raises(ParameterError, match="p_split"):
        TransportPlanSpec(2, 1.0, 1.0, 3, (1, 1))
    with pytest.raises(ParameterError, match="delta"):
        TransportPlanSpec(2, 1.0, 1.0, 2, (1, 1), n=4, delta=0.3)


def test_spec_defaults():
    spec = TransportPlanSpec(2, 1.0, 1.0, 3, (1, 2))
    assert spec.n == 39 and spec.delta == 1 / (4 * 39) and spec.meets_formula
    assert spec.discontinuities() == math.ceil(4 / 3) + max(39, math.ceil(39**2 / 2)) - 1


def test_compression_lands_in_unit_cube():
    mu = sample_preset("mixture", 2000, 2, seed=1)
    squeeze = compress_support(mu, 2, 0.2)
    out = push_forward(squeeze, mu)
    assert np.all(out.particles >= -1e-8) and np.all(out.particles <= 1 + 1e-8)
    assert squeeze.discontinuity_count() == math.ceil(4 / 2) - 1


def test_compression_of_points_already_inside_is_identity():
    mu = ParticleMeasure(np.random.default_rng(0).uniform(0.1, 0.9, (50, 3)))
    out = push_forward(compress_support(mu, 3, 0.2), mu)
    np.testing.assert_array_equal(out.particles, mu.particles)


def _cube_cloud(m, d, seed=0):
    return ParticleMeasure(np.random.default_rng(seed).uniform(0, 1, (m, d)))


def test_partition_has_equal_counts():
    tree = build_partition(_cube_cloud(4000, 2), 5)
    assert tree.counts.sum() == 4000
    assert tree.counts.max() - tree.counts.min() <= 2
    for level in tree.cuts:
        assert np.all(np.diff(level, axis=1) > 0)
        assert np.all(level[:, 0] == 0.0) and np.all(level[:, -1] == 1.0)


def test_partition_locate_agrees_with_counts():
    mu = _cube_cloud(3000, 2, seed=2)
    tree = build_partition(mu, 4)
    idx = tree.locate(mu.particles)
    assert np.all(idx >= 0)
    np.testing.assert_array_equal(np.bincount(idx, minlength=16), tree.counts)


def test_partition_needs_enough_particles():
    with pytest.raises(ResolutionError):
        build_partition(_cube_cloud(10, 2), 4)


@pytest.mark.parametrize("n", [2, 5, 8])
def test_target_cells_respect_diameter_bound_exactly(n):
    tree = build_delta_targets(build_partition(_cube_cloud(200 * n * n, 2, seed=n), n), 1 / (4 * n))
    assert tree.diameter_bound_holds()
    assert tree.max_target_diameter_exact() <= Fraction(18, n * n)


def test_first_axis_targets_are_uniform_grid():
    tree = build_delta_targets(build_partition(_cube_cloud(2000, 2), 4), 0.05)
    np.testing.assert_array_equal(tree.targets[0][0], np.arange(5) / 4)


def test_single_cut_doubling_example():
    task = HyperplaneTask(0, [1.0], [math.e], 1, 1)
    sched = control_hyperplanes(task, 1.0)
    assert sched.discontinuity_count() == 0
    assert abs(sched.pieces[0].W[0, 0] - 1.0) < 1e-9
    end, _ = integrate_many(sched, [[1.0]])
    assert abs(end[0, 0] - math.e) < 1e-8


def test_three_cuts_with_one_neuron():
    task = HyperplaneTask(0, [0.2, 0.5, 0.7], [0.3, 0.45, 0.9], 1, 2)
    sched = control_hyperplanes(task, 1.0)
    assert sched.discontinuity_count() == 2
    X0 = np.array([[0.2, 0.1], [0.5, 0.2], [0.7, 0.3]])
    end, _ = integrate_many(sched, X0)
    np.testing.assert_allclose(end[:, 0], [0.3, 0.45, 0.9], atol=1e-8)
    np.testing.assert_array_equal(end[:, 1], X0[:, 1])


def test_hyperplane_task_validation():
    with pytest.raises(ParameterError):
        HyperplaneTask(0, [0.5, 0.4], [0.1, 0.2], 1, 1)
    with pytest.raises(ParameterError):
        HyperplaneTask(0, [0.5], [0.1], 1, 1, floor=0.2)


def test_tasks_include_top_cut():
    tree = build_delta_targets(build_partition(_cube_cloud(2000, 2), 4), 1 / 16)
    tasks, conflicts = hyperplane_tasks(tree, (1, 2))
    assert [t.budget for t in tasks] == [1, 2]
    assert tasks[0].size == 4 and tasks[0].sources[-1] == 1.0 and tasks[0].targets[-1] == 1.0
    assert tasks[1].size <= 4 * 3 + 1
    assert conflicts[0] == 0


@pytest.mark.parametrize(
    "d,p,split,n",
    [(1, 1, (1,), 3), (2, 2, (1, 1), 3), (2, 3, (1, 2), 4), (2, 4, (1, 3), 6), (2, 5, (2, 3), 8), (3, 3, (1, 1, 1), 2)],
)
def test_plan_discontinuity_formula(d, p, split, n):
    mu = sample_preset("gaussian", 30 * n**d, d, seed=n)
    spec = TransportPlanSpec(d, 1.0, 10.0, p, split, n=n)
    plan = plan_transport(mu, spec, 1.0)
    expected = math.ceil(2 * d / p) + max(math.ceil(n**k / pk) for k, pk in enumerate(split, 1)) - 1
    assert plan.schedule.discontinuity_count() == expected == plan.report["claimed_L"]
    assert plan.tree.diameter_bound_holds()


def _brute_force_wq(X, Y, q):
    best = math.inf
    for perm in itertools.permutations(range(len(Y))):
        cost = sum(np.linalg.norm(X[i] - Y[j]) ** q for i, j in enumerate(perm))
        best = min(best, cost)
    return (best / len(X)) ** (1 / q)


@pytest.mark.parametrize("q", [1.0, 1.5, 2.0])
def test_wasserstein_matches_brute_force(q):
    rng = np.random.default_rng(int(q * 10))
    for _ in range(10):
        X, Y = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
        got = wasserstein(ParticleMeasure(X), ParticleMeasure(Y), q)
        assert abs(got - _brute_force_wq(X, Y, q)) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 24))
def test_wasserstein_metric_axioms(seed, m):
    rng = np.random.default_rng(seed)
    A, B, C = (ParticleMeasure(rng.normal(size=(m, 2))) for _ in range(3))
    ab, ba = wasserstein(A, B), wasserstein(B, A)
    assert wasserstein(A, A) == 0.0
    assert abs(ab - ba) <= 1e-10
    assert ab <= wasserstein(A, C) + wasserstein(C, B) + 1e-10


def test_uniform_grid_sample_centres():
    ref = uniform_grid_sample(4, 2)
    assert ref.size == 16
    assert set(np.unique(ref.particles)) == {0.125, 0.375, 0.625, 0.875}


def test_unknown_preset():
    with pytest.raises(ParameterError, match="unknown preset"):
        sample_preset("banana", 10, 2)
