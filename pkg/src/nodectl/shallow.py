"""Autonomous (single-piece) interpolation for strip-separable datasets.

A dataset is strip separable along a unit direction ``a`` when parallel
hyperplanes ``a . x = -b_n`` cut space into strips that each hold exactly one
input together with its target.  Working in a frame whose first axis is
``a``, neurons are added one strip at a time, from the lowest strip up.  The
hinge of neuron ``n`` lies below strip ``n`` and above every lower strip, so
it never disturbs points that are already controlled; it only has to fight
the drift field ``s_{n-1} x^(1) + c_{n-1}`` accumulated from the neurons below.

The first weight component comes from a scalar root find on the exact
endpoint of the affine first-coordinate ODE.  The remaining components enter
the endpoint affinely and are solved in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from .core import ControlSchedule, Dataset, Neuron, Piece
from .errors import ConditioningError, NumericError, ParameterError
from .interp import complete_basis
from .roots import solve_increasing

__all__ = [
    "SeparabilityCertificate",
    "ShallowControl",
    "SeparabilityEstimate",
    "check_assumption1",
    "certificate_for_direction",
    "solve_pair",
    "solve_corollary4",
    "estimate_separability_probability",
    "one_dimensional_probability",
]

DEFAULT_DIRECTIONS = 256
ROOT_FTOL = 1e-12
SLOPE_FLOOR = 1e-10
MAX_BIAS_PERTURBATIONS = 16


@dataclass(frozen=True)
class SeparabilityCertificate:
    """Direction ``a``, decreasing biases ``b_1 > ... > b_{N+1}`` and strip order ``tau``.

    Pair ``tau[n]`` lies strictly between ``-b_n`` and ``-b_{n+1}`` along ``a``.
    """

    a: np.ndarray
    biases: np.ndarray
    tau: tuple
    provenance: str = ""

    def __post_init__(self):
        a = np.array(self.a, dtype=np.float64)
        b = np.array(self.biases, dtype=np.float64)
        if abs(np.linalg.norm(a) - 1.0) > 1e-12:
            raise ParameterError("certificate direction must be a unit vector")
        if b.ndim != 1 or b.size != len(self.tau) + 1 or np.any(np.diff(b) >= 0):
            raise ParameterError("certificate biases must be N + 1 strictly decreasing values")
        if sorted(self.tau) != list(range(len(self.tau))):
            raise ParameterError("tau must be a permutation")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "biases", b)
        object.__setattr__(self, "tau", tuple(int(t) for t in self.tau))

    def holds_for(self, data: Dataset) -> bool:
        px, py = data.X @ self.a, data.Y @ self.a
        lower, upper = -self.biases[:-1], -self.biases[1:]
        t = np.array(self.tau)
        return bool(
            np.all(lower < px[t]) and np.all(px[t] < upper) and np.all(lower < py[t]) and np.all(py[t] < upper)
        )


def certificate_for_direction(data: Dataset, a, provenance: str = "") -> SeparabilityCertificate | None:
    """Certificate along ``a`` if the pairs' projected intervals are pairwise disjoint."""
    a = np.asarray(a, dtype=np.float64)
    a = a / np.linalg.norm(a)
    px, py = data.X @ a, data.Y @ a
    lo, hi = np.minimum(px, py), np.maximum(px, py)
    tau = np.argsort(lo, kind="stable")
    lo_s, hi_s = lo[tau], hi[tau]
    if np.any(hi_s[:-1] >= lo_s[1:]):
        return None
    gaps = lo_s[1:] - hi_s[:-1]
    outer = float(gaps.mean()) if gaps.size else 1.0
    bounds = np.concatenate([[lo_s[0] - outer], 0.5 * (hi_s[:-1] + lo_s[1:]), [hi_s[-1] + outer]])
    if np.any(np.diff(bounds) <= 0):
        return None
    return SeparabilityCertificate(a, -bounds, tuple(tau.tolist()), provenance)


def check_assumption1(data: Dataset, seed: int = 0, n_directions: int = DEFAULT_DIRECTIONS) -> SeparabilityCertificate | None:
    """Search canonical axes, then seeded random directions, for a strip certificate.

    Returns ``None`` when no tested direction separates the pairs; that is
    not a proof that none exists.
    """
    d = data.dim
    for k in range(d):
        cert = certificate_for_direction(data, np.eye(d)[k], provenance=f"axis e_{k + 1}")
        if cert is not None:
            return cert
    rng = np.random.default_rng(seed)
    for j in range(n_directions):
        v = rng.standard_normal(d)
        cert = certificate_for_direction(data, v / np.linalg.norm(v), provenance=f"random direction {j}")
        if cert is not None:
            return cert
    return None


def _phi1(u: float) -> float:
    return 1.0 if u == 0.0 else math.expm1(u) / u


def _phi2(u: float) -> float:
    if abs(u) < 1e-4:
        return 0.5 + u / 6.0 + u * u / 24.0
    return (math.expm1(u) - u) / (u * u)


def _first_coordinate_endpoint(x0: float, s: float, beta: float, T: float) -> float:
    """``x(T)`` for ``x' = s x + beta``, ``x(0) = x0``, guarded against overflow."""
    u = s * T
    if u > 700.0:
        v = s * x0 + beta
        return math.copysign(math.inf, v) if v != 0 else x0
    return x0 * math.exp(u) + beta * T * _phi1(u)


def solve_pair(x, y, b: float, T: float, s_prev=None, c_prev=None):
    """Weight ``w`` steering ``x`` to ``y`` under ``s_prev x^(1) + c_prev + w (x^(1) + b)``.

    Coordinates are in the certificate frame; ``x^(1) + b`` and ``y^(1) + b``
    must be positive.  Returns ``(w, s_new, c_new)``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d = x.size
    s_prev = np.zeros(d) if s_prev is None else np.asarray(s_prev, dtype=np.float64)
    c_prev = np.zeros(d) if c_prev is None else np.asarray(c_prev, dtype=np.float64)
    if not (x[0] + b > 0 and y[0] + b > 0):
        raise ParameterError("both endpoints must lie on the active side of the hinge")

    def f(z):
        return _first_coordinate_endpoint(x[0], s_prev[0] + z, z * b + c_prev[0], T) - y[0]

    z1 = solve_increasing(f, ftol=ROOT_FTOL, label="first-coordinate weight")
    s1 = s_prev[0] + z1
    beta = z1 * b + c_prev[0]
    u = s1 * T
    if u > 700.0:
        raise NumericError(f"expansion rate {s1:.3g} overflows over the horizon")
    integral = x[0] * T * _phi1(u) + beta * T * T * _phi2(u)
    slope = integral + b * T
    if not abs(slope) >= SLOPE_FLOOR:
        raise ConditioningError(f"transverse slope {slope:.3g} is degenerate")
    w = np.empty(d)
    w[0] = z1
    w[1:] = (y[1:] - x[1:] - s_prev[1:] * integral - c_prev[1:] * T) / slope
    return w, s_prev + w, c_prev + w * b


@dataclass
class ShallowControl:
    """Constant control with one neuron per pair, plus the drift bookkeeping."""

    neurons: list
    horizon: float
    certificate: SeparabilityCertificate
    frame: np.ndarray
    hinges: np.ndarray
    drift_trace: list = field(default_factory=list)

    def schedule(self) -> ControlSchedule:
        return ControlSchedule([Piece.from_neurons(0.0, self.horizon, self.neurons)])


def _solve_at_hinge(x, y, hinge: float, floor: float, T: float, s, c):
    """``solve_pair`` with the bias nudged if the transverse slope degenerates."""
    b = -hinge
    for _ in range(MAX_BIAS_PERTURBATIONS + 1):
        try:
            return (b,) + solve_pair(x, y, b, T, s, c)
        except ConditioningError:
            # Nudge the hinge while keeping it between ``floor`` and the pair.
            step = 1e-6 * (1.0 + abs(b))
            b = b + step if -(b + step) > floor else b - step
    raise NumericError("transverse slope stayed degenerate after bias perturbation")


def solve_corollary4(data: Dataset, cert: SeparabilityCertificate, T: float,
                     hinge_rule: str = "conditioned", n_candidates: int = 24) -> ShallowControl:
    """One constant piece with ``N`` neurons interpolating a strip-separable dataset.

    ``hinge_rule="midpoint"`` puts each hinge halfway between the strip's
    lower boundary and the pair.  The default ``"conditioned"`` also tries
    hinges spread over the whole admissible gap (above the previous pair,
    below this one) and keeps the one with the smallest expansion rate
    ``s_n`` along the pair's strip; the endpoint's sensitivity to
    perturbations grows like ``exp(s_n T)``.
    """
    if not (T > 0 and math.isfinite(T)):
        raise ParameterError("T must be positive and finite")
    if hinge_rule not in ("midpoint", "conditioned"):
        raise ParameterError(f"unknown hinge rule {hinge_rule!r}")
    if not cert.holds_for(data):
        raise ParameterError("certificate does not hold for this dataset")
    d = data.dim
    R = complete_basis([cert.a])
    X, Y = data.X @ R, data.Y @ R
    lower = -cert.biases[:-1]
    s = np.zeros(d)
    c = np.zeros(d)
    neurons, hinges, trace = [], [], []
    prev_top = None
    for n, k in enumerate(cert.tau):
        bottom = min(X[k, 0], Y[k, 0])
        floor = lower[n] if prev_top is None else prev_top
        candidates = [0.5 * (lower[n] + bottom)]
        if hinge_rule == "conditioned":
            candidates += list(floor + (bottom - floor) * np.linspace(0.02, 0.98, n_candidates))
        best, failure = None, None
        for hinge in candidates:
            try:
                sol = _solve_at_hinge(X[k], Y[k], hinge, floor, T, s, c)
            except NumericError as exc:
                failure = exc
                continue
            rate = max(sol[2][0], 0.0)
            if best is None or rate < best[0] - 1e-12:
                best = (rate, sol)
        if best is None:
            raise NumericError(f"pair {k}: no admissible hinge gave a usable weight ({failure})")
        b, w, s, c = best[1]
        prev_top = max(X[k, 0], Y[k, 0])
        hinges.append(-b)
        trace.append({"pair": int(k), "s": s.tolist(), "c": c.tolist()})
        neurons.append(Neuron(R @ w, cert.a, b))
    return ShallowControl(neurons, float(T), cert, R, np.array(hinges), trace)


def one_dimensional_probability(N: int) -> float:
    """Probability that ``N`` random pairs on a line have disjoint spans: ``N! 2^N / (2N)!``."""
    return math.factorial(N) * 2**N / math.factorial(2 * N)


@dataclass(frozen=True)
class SeparabilityEstimate:
    d: int
    N: int
    trials: int
    successes: int
    p_hat: float
    sigma: float
    ci_low: float
    ci_high: float
    independent_axes_value: float
    asymptotic_lower_bound: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _axis_separable(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """For arrays (trials, N, d): does some axis give pairwise disjoint pair spans?"""
    lo, hi = np.minimum(X, Y), np.maximum(X, Y)
    order = np.argsort(lo, axis=1)
    lo_s = np.take_along_axis(lo, order, axis=1)
    hi_s = np.take_along_axis(hi, order, axis=1)
    per_axis = np.all(hi_s[:, :-1, :] < lo_s[:, 1:, :], axis=1)
    return np.any(per_axis, axis=1)


def estimate_separability_probability(d: int, N: int, trials: int, seed: int = 0, chunk: int = 20_000) -> SeparabilityEstimate:
    """Monte Carlo probability that uniform pairs in ``[0,1]^d`` are separable along an axis.

    Trials are drawn in chunks, each from its own generator spawned from
    ``seed``, so the result does not depend on how chunks are scheduled.
    """
    if d < 1 or N < 1 or trials < 1:
        raise ParameterError("d, N and trials must be positive")
    n_chunks = math.ceil(trials / chunk)
    seqs = np.random.SeedSequence(seed).spawn(n_chunks)
    successes = 0
    for j, ss in enumerate(seqs):
        m = min(chunk, trials - j * chunk)
        rng = np.random.default_rng(ss)
        X = rng.random((m, N, d))
        Y = rng.random((m, N, d))
        successes += int(np.count_nonzero(_axis_separable(X, Y)))
    p_hat = successes / trials
    ci = binomtest(successes, trials).proportion_ci(confidence_level=0.95, method="wilson")
    p1 = one_dimensional_probability(N)
    asym = 1.0 - (1.0 - (math.e / (2 * N)) ** N / math.sqrt(2.0)) ** d
    return SeparabilityEstimate(
        d=d,
        N=N,
        trials=trials,
        successes=successes,
        p_hat=p_hat,
        sigma=math.sqrt(p_hat * (1.0 - p_hat) / trials),
        ci_low=float(ci.low),
        ci_high=float(ci.high),
        independent_axes_value=1.0 - (1.0 - p1) ** d,
        asymptotic_lower_bound=asym,
    )
