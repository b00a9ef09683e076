"""Exact simultaneous interpolation of finite datasets with piecewise-constant controls.

Two planners are provided:

* :func:`plan_theorem1` works in any dimension ``d >= 2``.  After a change of
  basis in which the inputs have distinct first coordinates and the targets
  have distinct second coordinates, one sweep of pieces moves coordinates
  ``2..d`` of every point onto its target while freezing coordinate 1, and a
  second sweep moves coordinate 1 while freezing the others.
* :func:`plan_corollary2` handles ``d > N``.  A basis in which each input
  already shares its first coordinate with its target makes the second sweep
  unnecessary.

Within one sweep, a piece handles a batch of at most ``p`` points that are
consecutive in the order of the hinge coordinate.  Hinges sit at midpoints
between consecutive points, so inside the strip of the ``i``-th point of a
batch exactly the first ``i`` neurons are active and the velocity is
constant.  Weights then follow from a triangular (cascade) solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import ControlSchedule, Dataset
from .errors import ConditioningError, ParameterError, UnsupportedRegimeError

__all__ = [
    "Provenance",
    "BasisChange",
    "InterpolationPlan",
    "coordinate_change",
    "basis_matched_first_coordinate",
    "plan_theorem1",
    "plan_corollary2",
    "complete_basis",
]

DENOMINATOR_FLOOR = 1e-12
MAX_ROTATION_RETRIES = 32
MARGIN_FACTOR = 1e-9


class Provenance(str, Enum):
    IDENTITY = "identity"
    LEMMA_SEPARATION = "lemma_separation"
    MATCHED_FIRST_COORDINATE = "matched_first_coordinate"


@dataclass(frozen=True)
class BasisChange:
    """Orthonormal basis ``U`` (columns); a point ``x`` has coordinates ``U.T @ x``."""

    U: np.ndarray
    provenance: Provenance

    def __post_init__(self):
        U = np.array(self.U, dtype=np.float64)
        if U.ndim != 2 or U.shape[0] != U.shape[1]:
            raise ParameterError("U must be square")
        if np.max(np.abs(U.T @ U - np.eye(U.shape[0]))) > 1e-12:
            raise ParameterError("U is not orthonormal to 1e-12")
        U.setflags(write=False)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "provenance", Provenance(self.provenance))


@dataclass
class InterpolationPlan:
    basis: BasisChange
    schedule: ControlSchedule
    claimed_L: int
    batches: dict = field(default_factory=dict)
    minimal_L: int | None = None

    def __post_init__(self):
        if self.schedule.discontinuity_count() != self.claimed_L:
            raise AssertionError(
                f"schedule has {self.schedule.discontinuity_count()} discontinuities, claimed {self.claimed_L}"
            )


def _min_gap(values: np.ndarray) -> float:
    if values.size < 2:
        return np.inf
    return float(np.min(np.diff(np.sort(values))))


def _diameter(data: Dataset) -> float:
    P = np.vstack([data.X, data.Y])
    span = P.max(axis=0) - P.min(axis=0)
    return max(float(np.linalg.norm(span)), 1.0)


def complete_basis(first: list[np.ndarray]) -> np.ndarray:
    """Orthonormal matrix whose leading columns are the given orthonormal vectors."""
    d = first[0].size
    M = np.column_stack(first + [np.eye(d)])
    Q = np.linalg.qr(M)[0][:, :d]
    for k, v in enumerate(first):
        Q[:, k] = v
    # Re-orthonormalise the completion against the exact leading vectors.
    for k in range(len(first), d):
        q = Q[:, k] - Q[:, :k] @ (Q[:, :k].T @ Q[:, k])
        Q[:, k] = q / np.linalg.norm(q)
    return Q


def _random_unit(rng: np.random.Generator, d: int) -> np.ndarray:
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def coordinate_change(data: Dataset, seed: int = 0, max_draws: int = 10_000) -> BasisChange:
    """Basis in which the inputs' first and the targets' second coordinates are distinct.

    Canonical axes are tried first, then seeded random unit vectors.  A
    candidate is accepted when the smallest gap between projections exceeds
    ``1e-9`` times the data diameter.
    """
    d = data.dim
    if d < 2:
        raise UnsupportedRegimeError("coordinate change needs d >= 2")
    tol = MARGIN_FACTOR * _diameter(data)
    if _min_gap(data.X[:, 0]) > tol and _min_gap(data.Y[:, 1]) > tol:
        return BasisChange(np.eye(d), Provenance.IDENTITY)
    rng = np.random.default_rng(seed)

    def candidates():
        yield from np.eye(d)
        for _ in range(max_draws):
            yield _random_unit(rng, d)

    u1 = next((u for u in candidates() if _min_gap(data.X @ u) > tol), None)
    if u1 is None:
        raise ConditioningError("no direction separates the inputs' projections")
    u1 = u1 / np.linalg.norm(u1)

    def orth_candidates():
        for v in list(np.eye(d)) + [_random_unit(rng, d) for _ in range(max_draws)]:
            v = v - u1 * (u1 @ v)
            nv = np.linalg.norm(v)
            if nv > 1e-6:
                yield v / nv

    u2 = next((v for v in orth_candidates() if _min_gap(data.Y @ v) > tol), None)
    if u2 is None:
        raise ConditioningError("no direction orthogonal to u1 separates the targets' projections")
    U = complete_basis([u1, u2])
    return BasisChange(U, Provenance.LEMMA_SEPARATION)


def _random_rotation(rng: np.random.Generator, d: int) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    return Q * np.sign(np.diag(R))


def _hinges(values: np.ndarray, order: np.ndarray) -> np.ndarray:
    """Hinge location for every point: midpoint to its predecessor in ``order``.

    The lowest point gets a hinge half the minimum gap below it (gap 1 for a
    single point).
    """
    sv = values[order]
    gaps = np.diff(sv)
    first_gap = float(gaps.min()) if gaps.size else 1.0
    h_sorted = np.empty_like(sv)
    h_sorted[0] = sv[0] - 0.5 * first_gap
    h_sorted[1:] = 0.5 * (sv[1:] + sv[:-1])
    hinges = np.empty_like(values)
    hinges[order] = h_sorted
    return hinges


def _sweep(P: np.ndarray, Q: np.ndarray, axis: int, moved: list[int], batches: list[np.ndarray],
           durations, width: int):
    """Blocks for one sweep that moves coordinates ``moved`` of every point to ``Q``.

    ``batches`` lists point indices (ascending in coordinate ``axis``), one
    batch per piece with the matching entry of ``durations``.  Returns ``(blocks, P_end,
    min_denominator)`` in working coordinates.
    """
    N, d = P.shape
    P = P.copy()
    order = np.concatenate([b for b in batches if b.size]) if N else np.zeros(0, int)
    hinge = _hinges(P[:, axis], order)
    blocks = []
    min_den = np.inf
    e_axis = np.zeros(d)
    e_axis[axis] = 1.0
    for batch, duration in zip(batches, durations):
        W = np.zeros((width, d))
        A = np.tile(e_axis, (width, 1))
        b = np.zeros(width)
        for i, n in enumerate(batch):
            lever = P[n, axis] - hinge[batch[: i + 1]]  # arguments of the active neurons
            den = lever[-1]
            min_den = min(min_den, den)
            drift = duration * (lever[:-1] @ W[:i, moved]) if i else 0.0
            W[i, moved] = (Q[n, moved] - P[n, moved] - drift) / (den * duration)
            b[i] = -hinge[n]
        blocks.append((W, A, b))
        # Every point moves with constant velocity through this piece.
        k = batch.size
        if k:
            act = np.maximum(P[:, [axis]] + b[None, :k], 0.0)
            P[:, moved] += duration * (act @ W[:k][:, moved])
    return blocks, P, min_den


def _split_sorted(order: np.ndarray, pieces: int, p: int) -> list[np.ndarray]:
    """Split ``order`` into ``pieces`` consecutive chunks of at most ``p`` points each."""
    if pieces * p < order.size:
        raise ValueError("not enough capacity")
    return [np.asarray(c, dtype=int) for c in np.array_split(order, pieces)]


def _chunks(order: np.ndarray, p: int) -> list[np.ndarray]:
    return [order[k:k + p] for k in range(0, order.size, p)]


def _piece_durations(T: float, pieces: int) -> np.ndarray:
    # Same boundaries as ControlSchedule.from_blocks, so that the planner and
    # the integrator see bit-identical piece lengths.
    bounds = [T * k / pieces for k in range(pieces + 1)]
    bounds[-1] = float(T)
    return np.diff(bounds)


def _map_back(blocks, U):
    return [(W @ U.T, A @ U.T, b) for W, A, b in blocks]


def _check_common(p, T):
    if int(p) != p or p < 1:
        raise ParameterError(f"width p must be a positive integer, got {p}")
    if not (T > 0 and math.isfinite(T)):
        raise ParameterError(f"horizon T must be positive and finite, got {T}")


def plan_theorem1(data: Dataset, p: int, T: float, seed: int = 0) -> InterpolationPlan:
    """Two-sweep interpolating control with ``L = 2 ceil(N/p) - 1``."""
    _check_common(p, T)
    N, d = data.size, data.dim
    if d < 2:
        raise UnsupportedRegimeError("the two-sweep construction needs d >= 2")
    m = math.ceil(N / p)
    L = 2 * m - 1
    durations = _piece_durations(T, L + 1)
    rng = np.random.default_rng(seed)
    rotation = np.eye(d)
    for attempt in range(MAX_ROTATION_RETRIES + 1):
        rotated = data if attempt == 0 else data.transformed(rotation)
        basis = coordinate_change(rotated, seed=seed + attempt)
        U = rotation @ basis.U
        provenance = basis.provenance if attempt == 0 else Provenance.LEMMA_SEPARATION
        X, Y = data.X @ U, data.Y @ U

        order1 = np.argsort(X[:, 0], kind="stable")
        batches1 = _chunks(order1, p)
        blocks1, mid, den1 = _sweep(X, Y, 0, list(range(1, d)), batches1, durations[:m], p)

        # Coordinates 2..d now carry the targets' values, so the second
        # coordinates inherit the targets' distinctness.
        if _min_gap(mid[:, 1]) <= 0:
            raise AssertionError("intermediate second coordinates are not distinct")
        order2 = np.argsort(mid[:, 1], kind="stable")
        batches2 = _chunks(order2, p)
        blocks2, _, den2 = _sweep(mid, Y, 1, [0], batches2, durations[m:], p)

        if min(den1, den2) >= DENOMINATOR_FLOOR:
            sched = ControlSchedule.from_blocks(T, _map_back(blocks1 + blocks2, U))
            return InterpolationPlan(
                BasisChange(U, provenance),
                sched,
                L,
                {
                    "sweep_1": [b.tolist() for b in batches1],
                    "sweep_2": [b.tolist() for b in batches2],
                },
            )
        rotation = _random_rotation(rng, d)
    raise ConditioningError(
        f"cascade denominators stayed below {DENOMINATOR_FLOOR} after {MAX_ROTATION_RETRIES} rotations"
    )


def basis_matched_first_coordinate(data: Dataset, seed: int = 0, max_draws: int = 10_000) -> BasisChange:
    """Basis whose first vector is orthogonal to every displacement ``x_n - y_n``.

    When the null space has dimension above one, a seeded combination that
    also separates the inputs' first coordinates is preferred.
    """
    N, d = data.size, data.dim
    if d <= N:
        raise UnsupportedRegimeError(f"a matched first coordinate needs d > N (got d={d}, N={N})")
    D = data.X - data.Y
    _, s, Vt = np.linalg.svd(D, full_matrices=True)
    scale = s[0] if s.size and s[0] > 0 else 1.0
    rank = int(np.sum(s > scale * max(N, d) * np.finfo(float).eps))
    null = Vt[rank:]  # rows span the null space
    tol = MARGIN_FACTOR * _diameter(data)
    u = null[0]
    if null.shape[0] > 1 and _min_gap(data.X @ u) <= tol:
        rng = np.random.default_rng(seed)
        for _ in range(max_draws):
            c = null.T @ rng.standard_normal(null.shape[0])
            c /= np.linalg.norm(c)
            if _min_gap(data.X @ c) > tol:
                u = c
                break
    u = u / np.linalg.norm(u)
    return BasisChange(complete_basis([u]), Provenance.MATCHED_FIRST_COORDINATE)


def plan_corollary2(data: Dataset, p: int, T: float, seed: int = 0) -> InterpolationPlan:
    """Single-sweep interpolation for ``d > N`` with ``L = 2 (ceil(N/p) - 1)``.

    The sweep itself needs only ``ceil(N/p)`` pieces; points are spread
    evenly over ``2 ceil(N/p) - 1`` pieces so that the schedule matches the
    stated discontinuity count.  ``minimal_L`` records the smaller count.
    """
    _check_common(p, T)
    N, d = data.size, data.dim
    basis = basis_matched_first_coordinate(data, seed=seed)
    U = basis.U
    X, Y = data.X @ U, data.Y @ U
    if _min_gap(X[:, 0]) <= MARGIN_FACTOR * _diameter(data):
        raise ConditioningError("the matched first coordinate does not separate the inputs")
    m = math.ceil(N / p)
    L = 2 * (m - 1)
    pieces = L + 1
    order = np.argsort(X[:, 0], kind="stable")
    batches = _split_sorted(order, pieces, p)
    blocks, _, den = _sweep(X, Y, 0, list(range(1, d)), batches, _piece_durations(T, pieces), p)
    if den < DENOMINATOR_FLOOR:
        raise ConditioningError(f"cascade denominator {den:.3g} below {DENOMINATOR_FLOOR}")
    sched = ControlSchedule.from_blocks(T, _map_back(blocks, U))
    return InterpolationPlan(basis, sched, L, {"sweep_1": [b.tolist() for b in batches]}, minimal_L=m - 1)
