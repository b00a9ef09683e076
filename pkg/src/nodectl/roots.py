"""Bracketed scalar root finding for monotone-in-the-limit equations."""

from __future__ import annotations

import math
from typing import Callable

from .errors import BracketError


def expand_bracket(f: Callable[[float], float], start: float = 1.0, max_doublings: int = 80, label: str = ""):
    """Find ``lo < hi`` with ``f(lo) <= 0 <= f(hi)``.

    Assumes ``f`` is negative far to the left and positive far to the right.
    Both ends start at ``-start`` and ``+start`` and double until the signs
    separate.  Returns ``(lo, hi, f(lo), f(hi))``.
    """
    lo, hi = -start, start
    flo, fhi = f(lo), f(hi)
    for _ in range(max_doublings):
        if flo > 0:
            hi, fhi = lo, flo
            lo *= 2.0
            flo = f(lo)
            continue
        if fhi < 0 or math.isnan(fhi):
            if fhi < 0:
                lo, flo = hi, fhi
            hi *= 2.0
            fhi = f(hi)
            continue
        if math.isnan(flo):
            lo *= 2.0
            flo = f(lo)
            continue
        return lo, hi, flo, fhi
    raise BracketError(f"{label}: no sign change within [{lo:.3g}, {hi:.3g}] (f = {flo:.3g}, {fhi:.3g})")


def bisect(f: Callable[[float], float], lo: float, hi: float, flo=None, fhi=None,
           ftol: float = 1e-12, max_iter: int = 200, label: str = "") -> float:
    """Bisection on a sign-changing bracket.

    Stops when ``|f| <= ftol``, when the bracket can no longer be split in
    floating point, or after ``max_iter`` halvings.  Infinite values of ``f``
    are fine as long as their sign is meaningful.
    """
    flo = f(lo) if flo is None else flo
    fhi = f(hi) if fhi is None else fhi
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if not (flo < 0 < fhi or fhi < 0 < flo):
        raise BracketError(f"{label}: [{lo}, {hi}] does not bracket a root (f = {flo}, {fhi})")
    if flo > 0:
        lo, hi, flo, fhi = hi, lo, fhi, flo
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        fm = f(mid)
        if math.isnan(fm):
            raise BracketError(f"{label}: f is NaN at {mid}")
        if abs(fm) <= ftol:
            return mid
        if fm < 0:
            lo, flo = mid, fm
        else:
            hi, fhi = mid, fm
    return lo if abs(flo) <= abs(fhi) else hi


def solve_increasing(f: Callable[[float], float], start: float = 1.0, ftol: float = 1e-12,
                     max_iter: int = 200, label: str = "") -> float:
    """Root of ``f`` that is negative at ``-inf`` and positive at ``+inf``."""
    lo, hi, flo, fhi = expand_bracket(f, start, label=label)
    return bisect(f, lo, hi, flo, fhi, ftol=ftol, max_iter=max_iter, label=label)
