"""Numerical flows of neural ODEs under piecewise-constant controls.

Integration uses the Dormand-Prince 5(4) embedded pair, vectorised over a
batch of states with an independent step size per state.  A shared step
size would be dragged down by whichever state currently sits on a ReLU kink;
per-state control keeps large batches cheap.  Integration always restarts at
piece boundaries, so no step ever straddles a control discontinuity.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import ControlSchedule
from .errors import DimensionError, DivergenceError, ParameterError

__all__ = [
    "IntegratorOptions",
    "Trajectory",
    "ParticleMeasure",
    "advect",
    "integrate",
    "integrate_many",
    "sample_trajectories",
    "push_forward",
]

# Dormand-Prince 5(4) tableau.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array(_A[6] + [0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


@dataclass(frozen=True)
class IntegratorOptions:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_steps: int = 200_000
    samples_per_piece: int = 200

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ParameterError("abs_tol and rel_tol must be positive")
        if self.max_steps < 1 or self.samples_per_piece < 1:
            raise ParameterError("max_steps and samples_per_piece must be >= 1")

    def halved(self) -> "IntegratorOptions":
        return IntegratorOptions(self.abs_tol / 2, self.rel_tol / 2, self.max_steps, self.samples_per_piece)


DEFAULT_OPTIONS = IntegratorOptions()


@dataclass(frozen=True)
class Trajectory:
    """Sampled solution ``times[k] -> states[k]`` on ``[0, T]``."""

    times: np.ndarray
    states: np.ndarray
    error_estimate: float = 0.0

    def __post_init__(self):
        if self.times.ndim != 1 or self.states.shape[0] != self.times.size:
            raise DimensionError("times and states must have matching lengths")
        if self.times[0] != 0.0 or np.any(np.diff(self.times) <= 0):
            raise ParameterError("trajectory times must start at 0 and strictly increase")

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]


class ParticleMeasure:
    """Weighted particle cloud in ``R^d``; weights are non-negative and sum to one."""

    def __init__(self, particles, weights=None):
        P = np.array(particles, dtype=np.float64)
        if P.ndim == 1:
            P = P[:, None]
        if P.ndim != 2 or P.shape[0] < 1:
            raise DimensionError(f"particles must be (M, d), got {P.shape}")
        if not np.all(np.isfinite(P)):
            raise ParameterError("particles must be finite")
        if weights is None:
            w = np.full(P.shape[0], 1.0 / P.shape[0])
        else:
            w = np.array(weights, dtype=np.float64)
            if w.shape != (P.shape[0],) or np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ParameterError("weights must be finite, non-negative, one per particle")
            if abs(w.sum() - 1.0) > 1e-12:
                raise ParameterError(f"weights sum to {w.sum()!r}, expected 1")
        P.setflags(write=False)
        w.setflags(write=False)
        self.particles = P
        self.weights = w

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    @property
    def size(self) -> int:
        return self.particles.shape[0]

    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def with_particles(self, particles) -> "ParticleMeasure":
        out = ParticleMeasure.__new__(ParticleMeasure)
        P = np.array(particles, dtype=np.float64)
        P.setflags(write=False)
        out.particles = P
        out.weights = self.weights
        return out

    def resample(self, m: int, rng: np.random.Generator) -> "ParticleMeasure":
        """``m`` equally weighted particles drawn from the weights."""
        if self.is_uniform() and m == self.size:
            return self
        if self.is_uniform() and m < self.size:
            idx = rng.choice(self.size, size=m, replace=False)
        else:
            idx = rng.choice(self.size, size=m, replace=True, p=self.weights)
        return ParticleMeasure(self.particles[np.sort(idx)])

    def __repr__(self):
        return f"ParticleMeasure(M={self.size}, d={self.dim})"


def _dopri_segment(f, X, duration, opts, h0, t_offset=0.0):
    """Advance all rows of ``X`` by ``duration`` under the autonomous field ``f``.

    Returns the new states, per-row accumulated local error norms and the
    last accepted step size per row.
    """
    m = X.shape[0]
    X = X.copy()
    err_acc = np.zeros(m)
    t = np.zeros(m)
    h = np.minimum(h0, duration)
    active = np.ones(m, dtype=bool)
    steps = 0
    K = [None] * 7
    while True:
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        steps += 1
        if steps > opts.max_steps:
            raise DivergenceError(
                f"step limit {opts.max_steps} exceeded", time=t_offset + float(t[idx].min()), index=int(idx[0])
            )
        x = X[idx]
        hh = np.minimum(h[idx], duration - t[idx])[:, None]
        K[0] = f(x)
        for s in range(1, 7):
            acc = x.copy()
            for j, a in enumerate(_A[s]):
                if a != 0.0:
                    acc += (hh * a) * K[j]
            K[s] = f(acc)
        # acc now holds the 5th-order solution (row 6 of the tableau equals _B5).
        y5 = acc
        errv = hh * sum(e * k for e, k in zip(_E, K) if e != 0.0)
        scale = opts.abs_tol + opts.rel_tol * np.maximum(np.abs(x), np.abs(y5))
        en = np.sqrt(np.mean((errv / scale) ** 2, axis=1))
        bad = ~np.all(np.isfinite(y5), axis=1)
        if np.any(bad):
            k = int(idx[np.argmax(bad)])
            raise DivergenceError(
                f"non-finite state for row {k} near t={t_offset + t[k]:.6g}",
                time=t_offset + float(t[k]),
                index=k,
            )
        ok = en <= 1.0
        acc_idx = idx[ok]
        X[acc_idx] = y5[ok]
        t[acc_idx] += hh[ok, 0]
        err_acc[acc_idx] += np.sqrt(np.sum(errv[ok] ** 2, axis=1))
        with np.errstate(divide="ignore"):
            fac = np.where(en > 0, _SAFETY * en ** -0.2, _MAX_FACTOR)
        fac = np.clip(fac, _MIN_FACTOR, np.where(ok, _MAX_FACTOR, 1.0))
        h[idx] = hh[:, 0] * fac
        finished = t[idx] >= duration * (1.0 - 1e-15)
        active[idx[finished & ok]] = False
        tiny = h[idx] < 1e-15 * max(duration, 1.0)
        if np.any(tiny & ~ok):
            k = int(idx[np.argmax(tiny & ~ok)])
            raise DivergenceError(
                f"step size underflow for row {k} near t={t_offset + t[k]:.6g}",
                time=t_offset + float(t[k]),
                index=k,
            )
    return X, err_acc, h


def advect(f: Callable, X0, duration: float, opts: IntegratorOptions = DEFAULT_OPTIONS, n_samples=None):
    """Flow the rows of ``X0`` for ``duration`` under an autonomous field.

    Without ``n_samples`` returns ``(X1, err)``.  With ``n_samples`` returns
    ``(times, states, err)`` where ``states`` has shape (m, n_samples + 1, d).
    """
    X = np.array(X0, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError("X0 must be (m, d)")
    if duration < 0:
        raise ParameterError("backward integration is not supported")
    h0 = np.full(X.shape[0], duration)
    if n_samples is None:
        if duration == 0:
            return X, np.zeros(X.shape[0])
        X1, err, _ = _dopri_segment(f, X, duration, opts, h0)
        return X1, err
    times = np.linspace(0.0, duration, n_samples + 1)
    states = np.empty((X.shape[0], n_samples + 1, X.shape[1]))
    states[:, 0] = X
    err = np.zeros(X.shape[0])
    for k in range(n_samples):
        X, e, h = _dopri_segment(f, X, times[k + 1] - times[k], opts, h0, t_offset=times[k])
        h0 = np.maximum(h, 1e-12 * duration)
        err += e
        states[:, k + 1] = X
    return times, states, err


def _check_dim(schedule: ControlSchedule, X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != schedule.dim:
        raise DimensionError(f"points have dimension {X.shape[1]}, schedule has {schedule.dim}")
    return X


def integrate_many(schedule: ControlSchedule, X0, opts: IntegratorOptions = DEFAULT_OPTIONS):
    """Endpoints ``Phi_T(x)`` for every row of ``X0`` and their error estimates."""
    X = _check_dim(schedule, X0).copy()
    err = np.zeros(X.shape[0])
    for pc in schedule.pieces:
        try:
            X, e = advect(pc.field, X, pc.duration, opts)
        except DivergenceError as exc:
            t = None if exc.time is None else pc.t_start + exc.time
            raise DivergenceError(str(exc), time=t, index=exc.index) from exc
        err += e
    return X, err


def sample_trajectories(schedule: ControlSchedule, X0, opts: IntegratorOptions = DEFAULT_OPTIONS, samples_per_piece=None):
    """Dense samples for all rows: ``(times, states[m, K, d], err[m])``."""
    X = _check_dim(schedule, X0).copy()
    n = samples_per_piece or opts.samples_per_piece
    all_t = [np.zeros(1)]
    all_s = [X[:, None, :]]
    err = np.zeros(X.shape[0])
    for pc in schedule.pieces:
        times, states, e = advect(pc.field, X, pc.duration, opts, n_samples=n)
        all_t.append(pc.t_start + times[1:])
        all_s.append(states[:, 1:])
        X = states[:, -1]
        err += e
    times = np.concatenate(all_t)
    times[-1] = schedule.horizon
    return times, np.concatenate(all_s, axis=1), err


def integrate(schedule: ControlSchedule, x0, opts: IntegratorOptions = DEFAULT_OPTIONS, samples_per_piece=None) -> Trajectory:
    """Trajectory of a single point; the last state approximates ``Phi_T(x0)``."""
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 1:
        raise DimensionError("x0 must be a single point")
    times, states, err = sample_trajectories(schedule, x0[None, :], opts, samples_per_piece)
    return Trajectory(times, states[0], float(err[0]))


def _threads():
    try:
        return max(1, int(os.environ.get("NODECTL_THREADS", "1")))
    except ValueError:
        return 1


def push_forward(schedule: ControlSchedule, mu: ParticleMeasure, opts: IntegratorOptions = DEFAULT_OPTIONS, threads=None) -> ParticleMeasure:
    """Advect every particle; weights are carried over untouched.

    Particles may be split into chunks advected concurrently (``threads`` or
    ``NODECTL_THREADS``); output order always matches input order.
    """
    X = _check_dim(schedule, mu.particles)
    threads = threads or _threads()
    chunks = np.array_split(np.arange(X.shape[0]), min(threads, X.shape[0]))

    def run(ix):
        try:
            return integrate_many(schedule, X[ix], opts)[0]
        except DivergenceError as exc:
            k = None if exc.index is None else int(ix[exc.index])
            raise DivergenceError(f"particle {k}: {exc}", time=exc.time, index=k) from exc

    if len(chunks) == 1:
        out = run(chunks[0])
    else:
        with ThreadPoolExecutor(len(chunks)) as pool:
            out = np.concatenate(list(pool.map(run, chunks)))
    return mu.with_particles(out)
