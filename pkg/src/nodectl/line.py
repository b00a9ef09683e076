"""Exact flows of scalar ReLU fields ``f(x) = sum_i w_i relu(a_i x + b_i)``.

On each interval between consecutive kinks the field is affine,
``f(x) = alpha x + beta``, so the flow is available in closed form:

    x(t) = x0 + f(x0) t phi1(alpha t),   phi1(u) = expm1(u) / u.

The time needed to reach a point ``y`` in the same region is
``log1p(alpha (y - x0) / f(x0)) / alpha``.  Chaining regions gives the exact
flow, which the planners use instead of numerical integration.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError


def phi1(u):
    u = np.asarray(u, dtype=np.float64)
    out = np.ones_like(u)
    nz = u != 0
    with np.errstate(over="ignore", invalid="ignore"):
        out[nz] = np.expm1(u[nz]) / u[nz]
    return out


def phi2(u):
    """``(e^u - 1 - u) / u^2`` with its series near zero."""
    u = np.asarray(u, dtype=np.float64)
    out = np.empty_like(u)
    small = np.abs(u) < 1e-4
    us = u[small]
    out[small] = 0.5 + us / 6.0 + us * us / 24.0
    ub = u[~small]
    with np.errstate(over="ignore", invalid="ignore"):
        out[~small] = (np.expm1(ub) - ub) / (ub * ub)
    return out


class ScalarReluField:
    """Scalar field with finitely many kinks and its exact flow."""

    def __init__(self, w, a, b):
        w = np.atleast_1d(np.asarray(w, dtype=np.float64))
        a = np.atleast_1d(np.asarray(a, dtype=np.float64))
        b = np.atleast_1d(np.asarray(b, dtype=np.float64))
        if not (w.shape == a.shape == b.shape):
            raise ParameterError("w, a and b must have equal length")
        self.w, self.a, self.b = w, a, b
        live = (a != 0) & (w != 0)
        kinks = np.unique(-b[live] / a[live])
        self.kinks = kinks
        # Representative point in every region to read off the affine pieces.
        if kinks.size:
            reps = np.concatenate([[kinks[0] - 1.0], 0.5 * (kinks[1:] + kinks[:-1]), [kinks[-1] + 1.0]])
        else:
            reps = np.zeros(1)
        on = ((np.outer(reps, a) + b) > 0) & (a != 0)  # (regions, p)
        # Neurons with a == 0 contribute the constant w * relu(b) everywhere.
        const = np.sum(w[a == 0] * np.maximum(b[a == 0], 0.0))
        self.alpha = on.astype(float) @ (w * a)
        self.beta = on.astype(float) @ (w * b) + const

    @classmethod
    def hinges(cls, weights, hinges):
        """``sum_i w_i relu(x - h_i)``."""
        weights = np.atleast_1d(np.asarray(weights, dtype=np.float64))
        return cls(weights, np.ones_like(weights), -np.atleast_1d(np.asarray(hinges, dtype=np.float64)))

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.maximum(np.multiply.outer(x, self.a) + self.b, 0.0) @ self.w

    def flow(self, x0, t):
        """Exact ``Phi_t(x0)`` for an array of starting points and ``t >= 0``."""
        x = np.array(x0, dtype=np.float64, ndmin=1)
        shape = x.shape
        x = x.ravel().copy()
        rem = np.broadcast_to(np.asarray(t, dtype=np.float64), shape).ravel().copy()
        if np.any(rem < 0):
            raise ParameterError("flow time must be non-negative")
        kinks = self.kinks
        nk = kinks.size
        todo = np.flatnonzero(rem > 0)
        for _ in range(nk + 2):
            if todo.size == 0:
                break
            xs = x[todo]
            # Region to the right of a kink when moving right, to the left otherwise.
            r_right = np.searchsorted(kinks, xs, side="right")
            fr = self.alpha[r_right] * xs + self.beta[r_right]
            r_left = np.searchsorted(kinks, xs, side="left")
            fl = self.alpha[r_left] * xs + self.beta[r_left]
            up = fr > 0
            down = ~up & (fl < 0)
            moving = up | down
            region = np.where(up, r_right, r_left)
            f0 = np.where(up, fr, fl)
            al = self.alpha[region]
            bound = np.where(
                up,
                np.where(region < nk, kinks[np.minimum(region, nk - 1)] if nk else np.inf, np.inf),
                np.where(region > 0, kinks[np.maximum(region - 1, 0)] if nk else -np.inf, -np.inf),
            )
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                ratio = al * (bound - xs) / f0
                reach = np.where(
                    np.isfinite(bound),
                    np.where(al == 0, (bound - xs) / f0, np.where(1 + ratio > 0, np.log1p(ratio) / al, np.inf)),
                    np.inf,
                )
            rt = rem[todo]
            crosses = moving & (reach < rt)
            stays = moving & ~crosses
            with np.errstate(over="ignore", invalid="ignore"):
                x_end = xs + f0 * rt * phi1(al * rt)
            new = np.where(crosses, bound, np.where(stays, x_end, xs))
            x[todo] = new
            rem[todo] = np.where(crosses, rt - reach, 0.0)
            todo = todo[crosses]
        return x.reshape(shape)

    def hitting_time(self, x0: float, y: float) -> float:
        """Time for the trajectory from ``x0`` to reach ``y`` (``inf`` if never)."""
        x0, y = float(x0), float(y)
        if x0 == y:
            return 0.0
        total = 0.0
        x = x0
        kinks = self.kinks
        for _ in range(kinks.size + 2):
            if y > x:
                r = int(np.searchsorted(kinks, x, side="right"))
                f0 = self.alpha[r] * x + self.beta[r]
                if f0 <= 0:
                    return np.inf
                bound = min(y, kinks[r]) if r < kinks.size else y
            else:
                r = int(np.searchsorted(kinks, x, side="left"))
                f0 = self.alpha[r] * x + self.beta[r]
                if f0 >= 0:
                    return np.inf
                bound = max(y, kinks[r - 1]) if r > 0 else y
            al = self.alpha[r]
            if al == 0:
                dt = (bound - x) / f0
            else:
                arg = al * (bound - x) / f0
                if 1 + arg <= 0:
                    return np.inf
                dt = np.log1p(arg) / al
            total += dt
            x = bound
            if x == y:
                return total
        return total
