"""Domain types for ReLU neural ODEs and evaluation of their vector field.

The vector field of a width-``p`` neural ODE at a fixed time is

    f(x) = sum_i w_i * max(a_i . x + b_i, 0)

and a :class:`ControlSchedule` holds a piecewise-constant sequence of such
fields over ``[0, T]``.  All arrays are stored as read-only float64 copies so
that instances can be shared freely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DatasetError, DimensionError, ParameterError, ScheduleError

__all__ = [
    "Neuron",
    "Piece",
    "ControlSchedule",
    "Dataset",
    "ArchitectureSpec",
    "eval_field",
    "field_batch",
    "complexity",
    "kappa_min_report",
]


def _frozen(values, ndim=None, name="array"):
    arr = np.array(values, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ScheduleError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Neuron:
    """One summand ``w * relu(a . x + b)`` of the field."""

    w: np.ndarray
    a: np.ndarray
    b: float

    def __post_init__(self):
        w = _frozen(self.w, 1, "w")
        a = _frozen(self.a, 1, "a")
        if w.shape != a.shape or w.size < 1:
            raise DimensionError(f"w and a must share a dimension d >= 1, got {w.shape} and {a.shape}")
        b = float(self.b)
        if not math.isfinite(b):
            raise ScheduleError("bias must be finite")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.w.size

    def __eq__(self, other):
        if not isinstance(other, Neuron):
            return NotImplemented
        return (
            np.array_equal(self.w, other.w)
            and np.array_equal(self.a, other.a)
            and self.b == other.b
        )

    __hash__ = None


def eval_field(neurons: Sequence[Neuron], x) -> np.ndarray:
    """Evaluate ``sum_i w_i relu(a_i . x + b_i)`` at a single point ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"x must be a point, got shape {x.shape}")
    out = np.zeros_like(x)
    for nrn in neurons:
        if nrn.dim != x.size:
            raise DimensionError(f"neuron has dimension {nrn.dim}, point has {x.size}")
        z = float(nrn.a @ x) + nrn.b
        if z > 0.0:
            out = out + nrn.w * z
    return out


def field_batch(W: np.ndarray, A: np.ndarray, b: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Vectorised field for points ``X`` of shape (m, d).

    ``W`` and ``A`` have shape (p, d) with rows ``w_i`` and ``a_i``.
    """
    Z = X @ A.T
    Z += b
    np.maximum(Z, 0.0, out=Z)
    return Z @ W


@dataclass(frozen=True, eq=False)
class Piece:
    """Constant control on ``[t_start, t_end]``; rows of ``W``/``A`` are neurons."""

    t_start: float
    t_end: float
    W: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        W = _frozen(self.W, 2, "W")
        A = _frozen(self.A, 2, "A")
        b = _frozen(self.b, 1, "b")
        if W.shape != A.shape or b.shape != (W.shape[0],):
            raise DimensionError(f"inconsistent piece shapes W{W.shape} A{A.shape} b{b.shape}")
        if W.shape[0] < 1 or W.shape[1] < 1:
            raise ScheduleError("a piece needs p >= 1 neurons in d >= 1 dimensions")
        t0, t1 = float(self.t_start), float(self.t_end)
        if not (math.isfinite(t0) and math.isfinite(t1)) or not t1 > t0:
            raise ScheduleError(f"piece interval [{t0}, {t1}] is empty or non-finite")
        object.__setattr__(self, "t_start", t0)
        object.__setattr__(self, "t_end", t1)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_neurons(cls, t_start, t_end, neurons: Sequence[Neuron]) -> "Piece":
        if not neurons:
            raise ScheduleError("a piece needs at least one neuron")
        return cls(
            t_start,
            t_end,
            np.stack([n.w for n in neurons]),
            np.stack([n.a for n in neurons]),
            np.array([n.b for n in neurons]),
        )

    @property
    def width(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @property
    def neurons(self) -> list[Neuron]:
        return [Neuron(self.W[i], self.A[i], self.b[i]) for i in range(self.width)]

    def field(self, X: np.ndarray) -> np.ndarray:
        return field_batch(self.W, self.A, self.b, X)


class ControlSchedule:
    """Piecewise-constant control ``(W, A, b)`` on ``[0, T]``.

    Pieces are stored with absolute boundaries; consecutive pieces must abut
    exactly and every piece must carry the same number of neurons.
    """

    def __init__(self, pieces: Iterable[Piece]):
        pieces = tuple(pieces)
        if not pieces:
            raise ScheduleError("schedule has no pieces")
        if pieces[0].t_start != 0.0:
            raise ScheduleError(f"first piece starts at {pieces[0].t_start}, expected 0")
        width, dim = pieces[0].width, pieces[0].dim
        for k, (prev, nxt) in enumerate(zip(pieces, pieces[1:])):
            if prev.t_end != nxt.t_start:
                raise ScheduleError(
                    f"pieces {k} and {k + 1} do not abut: {prev.t_end} != {nxt.t_start}"
                )
        for k, pc in enumerate(pieces):
            if pc.width != width:
                raise ScheduleError(f"piece {k} has width {pc.width}, expected {width}")
            if pc.dim != dim:
                raise ScheduleError(f"piece {k} has dimension {pc.dim}, expected {dim}")
        self._pieces = pieces

    @classmethod
    def from_blocks(cls, horizon, blocks, durations=None) -> "ControlSchedule":
        """Assemble from ``(W, A, b)`` blocks; equal durations unless given."""
        blocks = list(blocks)
        if durations is None:
            bounds = [horizon * k / len(blocks) for k in range(len(blocks) + 1)]
        else:
            bounds = [0.0]
            for dt in durations:
                bounds.append(bounds[-1] + dt)
        bounds[-1] = float(horizon)
        return cls(
            Piece(bounds[k], bounds[k + 1], W, A, b) for k, (W, A, b) in enumerate(blocks)
        )

    @property
    def pieces(self) -> tuple[Piece, ...]:
        return self._pieces

    @property
    def horizon(self) -> float:
        return self._pieces[-1].t_end

    @property
    def width(self) -> int:
        return self._pieces[0].width

    @property
    def dim(self) -> int:
        return self._pieces[0].dim

    def discontinuity_count(self) -> int:
        return len(self._pieces) - 1

    def architecture(self) -> "ArchitectureSpec":
        return ArchitectureSpec(self.discontinuity_count(), self.width, self.dim)

    def then(self, other: "ControlSchedule") -> "ControlSchedule":
        """Concatenate ``other`` after this schedule (widths are zero-padded)."""
        if other.dim != self.dim:
            raise DimensionError("cannot concatenate schedules of different dimension")
        p = max(self.width, other.width)
        shift = self.horizon
        out = [_pad_piece(pc, p, 0.0) for pc in self._pieces]
        out += [_pad_piece(pc, p, shift) for pc in other.pieces]
        return ControlSchedule(out)

    def field_at(self, t: float, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        for pc in self._pieces:
            if t < pc.t_end or pc is self._pieces[-1]:
                return pc.field(X)
        raise AssertionError("unreachable")

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "width": self.width,
            "dim": self.dim,
            "pieces": [
                {
                    "t_start": pc.t_start,
                    "t_end": pc.t_end,
                    "W": pc.W.tolist(),
                    "A": pc.A.tolist(),
                    "b": pc.b.tolist(),
                }
                for pc in self._pieces
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ControlSchedule":
        sched = cls(
            Piece(pc["t_start"], pc["t_end"], pc["W"], pc["A"], pc["b"]) for pc in data["pieces"]
        )
        if "horizon" in data and float(data["horizon"]) != sched.horizon:
            raise ScheduleError(f"horizon {data['horizon']} disagrees with last piece end {sched.horizon}")
        if "width" in data and int(data["width"]) != sched.width:
            raise ScheduleError(f"declared width {data['width']} != piece width {sched.width}")
        if "dim" in data and int(data["dim"]) != sched.dim:
            raise ScheduleError(f"declared dim {data['dim']} != piece dim {sched.dim}")
        return sched

    def __eq__(self, other):
        if not isinstance(other, ControlSchedule):
            return NotImplemented
        if len(self._pieces) != len(other._pieces):
            return False
        return all(
            p.t_start == q.t_start
            and p.t_end == q.t_end
            and np.array_equal(p.W, q.W)
            and np.array_equal(p.A, q.A)
            and np.array_equal(p.b, q.b)
            for p, q in zip(self._pieces, other._pieces)
        )

    __hash__ = None

    def __repr__(self):
        return (
            f"ControlSchedule(T={self.horizon:g}, pieces={len(self._pieces)}, "
            f"p={self.width}, d={self.dim})"
        )


def _pad_piece(pc: Piece, p: int, shift: float) -> Piece:
    extra = p - pc.width
    W, A, b = pc.W, pc.A, pc.b
    if extra:
        W = np.vstack([W, np.zeros((extra, pc.dim))])
        A = np.vstack([A, np.zeros((extra, pc.dim))])
        b = np.concatenate([b, np.zeros(extra)])
    return Piece(pc.t_start + shift, pc.t_end + shift, W, A, b)


class Dataset:
    """``N`` input/target pairs in ``R^d`` with pairwise-distinct inputs and targets."""

    def __init__(self, X, Y):
        X = np.array(X, dtype=np.float64)
        Y = np.array(Y, dtype=np.float64)
        if X.ndim != 2 or X.shape != Y.shape or X.shape[0] < 1 or X.shape[1] < 1:
            raise DimensionError(f"inputs {X.shape} and targets {Y.shape} must both be (N, d)")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise DatasetError("dataset contains non-finite coordinates")
        for name, P in (("x", X), ("y", Y)):
            dup = _first_duplicate(P)
            if dup is not None:
                n, m = dup
                raise DatasetError(
                    f"duplicate {name}: pairs {n} and {m} share {name} = {P[n].tolist()}; "
                    "inputs and targets must be pairwise distinct"
                )
        X.setflags(write=False)
        Y.setflags(write=False)
        self.X = X
        self.Y = Y

    @property
    def size(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def pairs(self):
        return list(zip(self.X, self.Y))

    def transformed(self, U: np.ndarray) -> "Dataset":
        """Coordinates in the orthonormal basis whose columns are ``U``."""
        return Dataset(self.X @ U, self.Y @ U)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "pairs": [{"x": x.tolist(), "y": y.tolist()} for x, y in zip(self.X, self.Y)],
        }

    def __repr__(self):
        return f"Dataset(N={self.size}, d={self.dim})"


def _first_duplicate(P: np.ndarray):
    order = np.lexsort(P.T[::-1])
    S = P[order]
    same = np.all(S[1:] == S[:-1], axis=1)
    if np.any(same):
        k = int(np.argmax(same))
        n, m = sorted((int(order[k]), int(order[k + 1])))
        return n, m
    return None


@dataclass(frozen=True)
class ArchitectureSpec:
    depth_transitions: int
    width: int
    dim: int

    def __post_init__(self):
        if self.depth_transitions < 0 or self.width < 1 or self.dim < 1:
            raise ParameterError(f"invalid architecture {self}")


def complexity(spec: ArchitectureSpec) -> int:
    """Total parameter count ``(L + 1) * p * (2d + 1)``."""
    return (spec.depth_transitions + 1) * spec.width * (2 * spec.dim + 1)


def kappa_min_report(N: int, d: int) -> dict:
    """Minimal complexity over the ``L = 2 ceil(N/p) - 1`` family, two ways.

    The parameter count evaluated at ``p = 1`` gives ``(4d + 2) N``; the
    published closed form reads ``(4d + 2)(N + 1)``.  Both are returned and
    the mismatch is flagged rather than resolved.
    """
    best = min(
        complexity(ArchitectureSpec(2 * math.ceil(N / p) - 1, p, d)) for p in range(1, N + 1)
    )
    from_formula = (4 * d + 2) * N
    closed_form = (4 * d + 2) * (N + 1)
    return {
        "kappa_min_from_parameter_count": from_formula,
        "kappa_min_scanned_over_p": best,
        "kappa_min_published_closed_form": closed_form,
        "flagged": from_formula != closed_form,
        "note": (
            f"(L+1)*p*(2d+1) with L = 2*ceil(N/p)-1 at p = 1 gives (4d+2)*N = {from_formula}; "
            f"the published closed form (4d+2)*(N+1) gives {closed_form}; "
            "the two differ by 4d+2 and the discrepancy is reported, not resolved"
        ),
    }
