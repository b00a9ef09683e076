"""Lipschitz tube fields that interpolate a dataset, and shallow ReLU surrogates.

Each pair ``(x_n, y_n)`` is joined by a C^1 curve (straight legs with filleted
corners), extended slightly past both ends.  The field inside the tube of
radius ``r`` around curve ``n`` is

    V(x) = v_n * t(s) * bump(rho / r) * taper(s)

where ``s`` and ``rho`` are the arclength and distance of the closest curve
point, ``t`` the unit tangent, ``bump(u) = (1 + cos(pi u)) / 2`` and the taper
equals one between ``x_n`` and ``y_n`` and falls to zero along the
extensions.  ``V`` vanishes outside the tubes, and traversal at speed
``v_n = length_n / T`` brings ``x_n`` to ``y_n`` at time ``T``.

The surrogate is a random-feature network ``W relu(A x + b)`` fitted by
ridge regression, and :func:`gronwall_certificate` turns its sup error into
per-point endpoint bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial import cKDTree

from .core import ControlSchedule, Dataset, Piece
from .errors import DimensionError, DivergenceError, NumericError, ParameterError, RoutingError
from .flow import IntegratorOptions, advect, sample_trajectories

__all__ = [
    "Curve",
    "CurveBundle",
    "LipschitzField",
    "FieldApprox",
    "GridSpec",
    "GronwallReport",
    "build_field",
    "fit_shallow_field",
    "gronwall_certificate",
    "spectral_norm",
]

MAX_ROUTING_RETRIES = 64
CANDIDATES_PER_RETRY = 32
MAX_TURN = math.radians(120.0)
FILLET_FRACTION = 0.4


def _bump(u):
    u = np.clip(u, 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * u))


@dataclass
class Curve:
    """Densely sampled C^1 path; ``s = 0`` at the start pair point, ``s = length`` at the end."""

    points: np.ndarray
    tangents: np.ndarray
    s: np.ndarray
    length: float
    extension: float
    min_fillet_radius: float
    waypoints: list = field(default_factory=list)

    @property
    def stationary(self) -> bool:
        return self.length == 0.0

    @property
    def max_curvature(self) -> float:
        return 0.0 if not math.isfinite(self.min_fillet_radius) else 1.0 / self.min_fillet_radius

    def taper(self, s):
        s = np.asarray(s, dtype=np.float64)
        e = self.extension
        out = np.ones_like(s)
        below, above = s < 0, s > self.length
        out[below] = _bump(-s[below] / e)
        out[above] = _bump((s[above] - self.length) / e)
        return out

    def project(self, X: np.ndarray, tree: cKDTree, radius: float):
        """Closest-point data for rows of ``X`` within ``radius`` of the samples.

        Returns ``(idx, rho, s, tangent)`` for the rows that are close enough.
        """
        dist, nearest = tree.query(X, distance_upper_bound=radius)
        idx = np.flatnonzero(np.isfinite(dist))
        if idx.size == 0:
            return idx, np.zeros(0), np.zeros(0), np.zeros((0, X.shape[1]))
        P = X[idx]
        i = nearest[idx]
        m = self.points.shape[0]
        best_rho = np.full(idx.size, np.inf)
        best_s = np.zeros(idx.size)
        best_t = np.zeros((idx.size, X.shape[1]))
        for lo in (np.clip(i - 1, 0, m - 2), np.clip(i, 0, m - 2)):
            a, b = self.points[lo], self.points[lo + 1]
            seg = b - a
            L2 = np.einsum("ij,ij->i", seg, seg)
            frac = np.clip(np.einsum("ij,ij->i", P - a, seg) / L2, 0.0, 1.0)
            foot = a + frac[:, None] * seg
            rho = np.linalg.norm(P - foot, axis=1)
            better = rho < best_rho
            tan = (1 - frac)[:, None] * self.tangents[lo] + frac[:, None] * self.tangents[lo + 1]
            tan /= np.linalg.norm(tan, axis=1, keepdims=True)
            best_rho = np.where(better, rho, best_rho)
            best_s = np.where(better, self.s[lo] + frac * (self.s[lo + 1] - self.s[lo]), best_s)
            best_t = np.where(better[:, None], tan, best_t)
        return idx, best_rho, best_s, best_t


def _fillet_path(nodes: list[np.ndarray], spacing: float, extension: float):
    """Samples of the filleted polyline through ``nodes`` plus straight extensions."""
    dirs, lens = [], []
    for a, b in zip(nodes[:-1], nodes[1:]):
        v = b - a
        lens.append(float(np.linalg.norm(v)))
        dirs.append(v / lens[-1])
    # Tangent length cut from each leg at every interior corner.
    cuts, radii, angles = [0.0], [], []
    for k in range(1, len(nodes) - 1):
        cosang = float(np.clip(dirs[k - 1] @ dirs[k], -1.0, 1.0))
        phi = math.acos(cosang)
        angles.append(phi)
        if phi < 1e-12:
            radii.append(math.inf)
            cuts.append(0.0)
            continue
        tlen = FILLET_FRACTION * min(lens[k - 1], lens[k])
        radii.append(tlen / math.tan(phi / 2))
        cuts.append(tlen)
    cuts.append(0.0)

    pts, tans, arcs = [], [], []
    run = [-extension]  # exact arclength at the end of the last appended chunk

    def line(a, u, length, include_start):
        n = max(1, int(math.ceil(length / spacing)))
        ts = np.linspace(0.0, length, n + 1)
        if not include_start:
            ts = ts[1:]
        pts.append(a + ts[:, None] * u)
        tans.append(np.tile(u, (ts.size, 1)))
        arcs.append(run[0] + ts)
        run[0] += length

    start, u0 = nodes[0], dirs[0]
    line(start - extension * u0, u0, extension, True)
    for k in range(len(dirs)):
        a = nodes[k] + cuts[k] * dirs[k]
        leg = lens[k] - cuts[k] - cuts[k + 1]
        line(a, dirs[k], leg, False)
        if k < len(dirs) - 1 and math.isfinite(radii[k]) and cuts[k + 1] > 0:
            rad, phi = radii[k], angles[k]
            u_in, u_out = dirs[k], dirs[k + 1]
            nrm = u_out - u_in * (u_in @ u_out)
            nrm /= np.linalg.norm(nrm)
            A = nodes[k + 1] - cuts[k + 1] * u_in
            centre = A + rad * nrm
            n = max(2, int(math.ceil(rad * phi / spacing)))
            th = np.linspace(0.0, phi, n + 1)[1:]
            pts.append(centre - rad * np.outer(np.cos(th), nrm) + rad * np.outer(np.sin(th), u_in))
            tans.append(np.outer(np.cos(th), u_in) + np.outer(np.sin(th), nrm))
            arcs.append(run[0] + rad * th)
            run[0] += rad * phi
    end, u1 = nodes[-1], dirs[-1]
    line(end, u1, extension, False)
    P = np.vstack(pts)
    Tn = np.vstack(tans)
    s = np.concatenate(arcs)
    # The start point sits at s = 0; the end point at the total length.
    length = run[0] - extension
    keep = np.concatenate([[True], np.diff(s) > 1e-14])
    return P[keep], Tn[keep], s[keep], float(length), min(radii, default=math.inf), angles


def _make_curve(x, y, waypoints, spacing, extension) -> Curve:
    if np.array_equal(x, y):
        P = np.asarray(x, dtype=np.float64)[None, :]
        return Curve(P, np.zeros_like(P), np.zeros(1), 0.0, extension, math.inf, [])
    nodes = [np.asarray(x, float)] + [np.asarray(w, float) for w in waypoints] + [np.asarray(y, float)]
    P, Tn, s, length, rmin, _ = _fillet_path(nodes, spacing, extension)
    return Curve(P, Tn, s, length, extension, rmin, [np.asarray(w).tolist() for w in waypoints])


def _turns_ok(nodes) -> bool:
    for a, b, c in zip(nodes[:-2], nodes[1:-1], nodes[2:]):
        u, v = b - a, c - b
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        if nu < 1e-9 or nv < 1e-9:
            return False
        if math.acos(float(np.clip(u @ v / (nu * nv), -1.0, 1.0))) > MAX_TURN:
            return False
    return True


def _clearance(P: np.ndarray, others: list[np.ndarray]) -> float:
    if not others:
        return math.inf
    Q = np.vstack(others)
    return float(cKDTree(Q).query(P)[0].min())


@dataclass
class CurveBundle:
    curves: list
    tube_radius: float
    R: float
    spacing: float

    @property
    def dim(self) -> int:
        return self.curves[0].points.shape[1]

    def min_separation(self) -> float:
        """Smallest sampled distance between distinct curves."""
        best = math.inf
        for i, ci in enumerate(self.curves):
            for cj in self.curves[i + 1:]:
                best = min(best, float(cKDTree(cj.points).query(ci.points)[0].min()))
        return best


def _route(data: Dataset, R: float, seed: int, spacing: float, extension: float, clearance: float, margin: float):
    rng = np.random.default_rng(seed)
    d = data.dim
    N = data.size
    curves: list[Curve] = []
    endpoints = [np.vstack([data.X[n], data.Y[n]]) for n in range(N)]
    lo, hi = -R + margin, R - margin

    def acceptable(curve: Curve, n: int) -> float:
        if np.any(curve.points < lo) or np.any(curve.points > hi):
            return -math.inf
        others = [c.points for c in curves] + [endpoints[m] for m in range(len(curves) + 1, N)]
        return _clearance(curve.points, others)

    for n in range(N):
        x, y = data.X[n], data.Y[n]
        best = _make_curve(x, y, [], spacing, extension)
        if best.stationary or acceptable(best, n) >= clearance:
            curves.append(best)
            continue
        found = None
        for attempt in range(MAX_ROUTING_RETRIES):
            options = []
            for _ in range(CANDIDATES_PER_RETRY):
                k = 1 + int(rng.integers(0, 2))
                wps = list(rng.uniform(lo, hi, size=(k, d)))
                nodes = [x] + wps + [y]
                if not _turns_ok(nodes):
                    continue
                cand = _make_curve(x, y, wps, spacing, extension)
                if acceptable(cand, n) >= clearance:
                    options.append(cand)
            if options:
                found = min(options, key=lambda c: c.length)
                break
        if found is None:
            straight = _make_curve(x, y, [], spacing, extension)
            others = [(m, c) for m, c in enumerate(curves)]
            worst = min(others, key=lambda mc: _clearance(straight.points, [mc[1].points]), default=(None, None))[0]
            raise RoutingError(f"pair {n} could not be routed clear of pair {worst} after {MAX_ROUTING_RETRIES} retries")
        curves.append(found)
    return curves


class LipschitzField:
    """Tube field ``V``; call it on an (m, d) array of points."""

    def __init__(self, bundle: CurveBundle, T: float):
        self.bundle = bundle
        self.T = float(T)
        self.speeds = np.array([c.length / T for c in bundle.curves])
        self._trees = [cKDTree(c.points) for c in bundle.curves]
        r = bundle.tube_radius
        L = 0.0
        for c, v in zip(bundle.curves, self.speeds):
            if c.stationary:
                continue
            kappa = c.max_curvature
            shrink = 1.0 - r * kappa
            L = max(L, v * (math.pi / (2 * r) + kappa / shrink + (math.pi / (2 * c.extension)) / shrink))
        self.lipschitz_estimate = L
        self.endpoint_errors: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.bundle.dim

    @property
    def R(self) -> float:
        return self.bundle.R

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise DimensionError(f"points have dimension {X.shape[1]}, field has {self.dim}")
        out = np.zeros_like(X)
        r = self.bundle.tube_radius
        reach = r + 2 * self.bundle.spacing
        for c, v, tree in zip(self.bundle.curves, self.speeds, self._trees):
            if c.stationary or v == 0:
                continue
            idx, rho, s, tan = c.project(X, tree, reach)
            if idx.size:
                out[idx] += (v * _bump(rho / r) * c.taper(s))[:, None] * tan
        return out

    def flow(self, X0, opts: IntegratorOptions = IntegratorOptions()):
        return advect(self, np.atleast_2d(X0), self.T, opts)[0]


def build_field(data: Dataset, R: float, T: float, seed: int = 0, spacing: float | None = None,
                verify: bool = True) -> LipschitzField:
    """Route disjoint curves inside ``[-R, R]^d`` and assemble the tube field."""
    if not (T > 0 and R > 0):
        raise ParameterError("R and T must be positive")
    d = data.dim
    if d < 2:
        raise ParameterError("curve routing needs d >= 2")
    pts = np.vstack([data.X, data.Y])
    if np.any(np.abs(pts) >= R):
        raise ParameterError("all points must lie strictly inside [-R, R]^d")
    # Separation between endpoints of different pairs sets the routing scale.
    sep = math.inf
    N = data.size
    for n in range(N):
        for m in range(n + 1, N):
            Pn = np.vstack([data.X[n], data.Y[n]])
            Pm = np.vstack([data.X[m], data.Y[m]])
            sep = min(sep, float(np.min(np.linalg.norm(Pn[:, None] - Pm[None], axis=2))))
    if not math.isfinite(sep):
        sep = R
    boundary_gap = float(R - np.abs(pts).max())
    clearance = 0.25 * min(sep, 2 * boundary_gap)
    margin = min(0.5 * boundary_gap, clearance)
    extension = 0.5 * clearance
    spacing = spacing or min(clearance / 50.0, R / 500.0)
    curves = _route(data, R, seed, spacing, extension, clearance, margin)
    bundle = CurveBundle(curves, 1.0, R, spacing)
    sep_curves = bundle.min_separation() if N > 1 else math.inf
    wall = min(float(np.min(R - np.abs(c.points))) for c in curves)
    fillet = min(c.min_fillet_radius for c in curves)
    r = min(0.5 * (sep_curves - spacing), wall, 0.5 * fillet, R)
    if not r > 0:
        raise RoutingError(f"no positive tube radius (separation {sep_curves:.3g}, wall {wall:.3g})")
    bundle.tube_radius = r
    V = LipschitzField(bundle, T)
    if verify:
        V.endpoint_errors = np.linalg.norm(V.flow(data.X) - data.Y, axis=1)
    return V


@dataclass(frozen=True)
class GridSpec:
    """Training grid ``points_per_axis^d`` (capped) and a half-cell-offset validation grid."""

    points_per_axis: int = 33
    max_points: int = 100_000
    validation_cells: int = 64
    max_validation: int = 200_000


def _training_grid(R: float, d: int, spec: GridSpec, rng: np.random.Generator) -> np.ndarray:
    g = np.linspace(-R, R, spec.points_per_axis)
    G = np.stack(np.meshgrid(*([g] * d), indexing="ij"), axis=-1).reshape(-1, d)
    if G.shape[0] > spec.max_points:
        G = G[np.sort(rng.choice(G.shape[0], spec.max_points, replace=False))]
    return G


def _validation_grid(R: float, d: int, spec: GridSpec) -> np.ndarray:
    n = spec.validation_cells
    while n ** d > spec.max_validation and n > 2:
        n -= 1
    h = 2 * R / n
    g = -R + h * (np.arange(n) + 0.5)
    return np.stack(np.meshgrid(*([g] * d), indexing="ij"), axis=-1).reshape(-1, d)


def spectral_norm(M: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000, seed: int = 0) -> float:
    """Largest singular value by power iteration on ``M^T M``."""
    M = np.asarray(M, dtype=np.float64)
    if not np.any(M):
        return 0.0
    v = np.random.default_rng(seed).standard_normal(M.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iter):
        u = M.T @ (M @ v)
        nu = np.linalg.norm(u)
        if nu == 0:
            return 0.0
        v = u / nu
        new = math.sqrt(nu)
        if abs(new - sigma) <= tol * max(new, 1.0):
            return float(np.linalg.norm(M @ v))
        sigma = new
    return float(np.linalg.norm(M @ v))


@dataclass
class FieldApprox:
    """Surrogate ``V_NN(x) = W relu(A x + b)`` with its error and Lipschitz certificates."""

    W: np.ndarray  # (p, d): row i is the outer weight of neuron i
    A: np.ndarray  # (p, d)
    b: np.ndarray  # (p,)
    sup_error_grid: float
    lipschitz_NN: float
    kappa: int
    ridge: float
    R: float

    @property
    def width(self) -> int:
        return self.W.shape[0]

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.maximum(X @ self.A.T + self.b, 0.0) @ self.W

    def schedule(self, T: float) -> ControlSchedule:
        return ControlSchedule([Piece(0.0, T, self.W, self.A, self.b)])


def fit_shallow_field(V: LipschitzField, p: int, grid: GridSpec = GridSpec(), seed: int = 0,
                      ridge: float = 1e-8) -> FieldApprox:
    """Random ReLU features shared by all components, outer weights by ridge regression."""
    if p < 1:
        raise ParameterError("p must be >= 1")
    d, R = V.dim, V.R
    # Separate streams make the width-p features a prefix of any wider draw with the same seed.
    dir_rng, centre_rng, grid_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    A = dir_rng.standard_normal((p, d))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    # Kinks pass through uniformly drawn centres in the box, so no feature is wasted outside it.
    centres = centre_rng.uniform(-R, R, (p, d))
    b = -np.einsum("ij,ij->i", A, centres)
    G = _training_grid(R, d, grid, grid_rng)
    target = V(G)
    if not np.any(target):
        W = np.zeros((p, d))
        lam = ridge
    else:
        Phi = np.maximum(G @ A.T + b, 0.0)
        gram = Phi.T @ Phi
        rhs = Phi.T @ target
        scale = max(float(np.trace(gram)) / p, 1e-300)
        lam = ridge
        while True:
            try:
                W = cho_solve(cho_factor(gram + lam * scale * np.eye(p)), rhs)
                break
            except LinAlgError:
                if lam >= 1e-2:
                    raise NumericError("normal equations stayed singular up to ridge 1e-2")
                lam = min(lam * 10.0, 1e-2)
    H = _validation_grid(R, d, grid)
    err = np.linalg.norm(V(H) - np.maximum(H @ A.T + b, 0.0) @ W, axis=1)
    lip = spectral_norm(W.T) * spectral_norm(A)
    return FieldApprox(W, A, b, float(err.max()), lip, (d + 2) * p * d, lam, R)


@dataclass(frozen=True)
class GronwallReport:
    bound: np.ndarray
    measured: np.ndarray
    margin: np.ndarray
    certified: np.ndarray
    lipschitz_used: float

    def to_dict(self) -> dict:
        return {
            "bound": self.bound.tolist(),
            "measured": self.measured.tolist(),
            "margin": self.margin.tolist(),
            "certified": self.certified.tolist(),
            "lipschitz_used": self.lipschitz_used,
        }


def gronwall_certificate(V: LipschitzField, approx: FieldApprox, data: Dataset, T: float,
                         opts: IntegratorOptions = IntegratorOptions(), samples: int = 200) -> GronwallReport:
    """Endpoint bound ``eps T exp(min(L_V, |W||A|) T)`` against the surrogate's actual flow.

    A point whose surrogate trajectory leaves ``[-R, R]^d`` is not certified.
    """
    lip = min(V.lipschitz_estimate, approx.lipschitz_NN)
    bound = approx.sup_error_grid * T * math.exp(lip * T)
    N = data.size
    sched = approx.schedule(T)
    try:
        _, states, _ = sample_trajectories(sched, data.X, opts, samples)
        endpoints = states[:, -1]
        inside = np.all(np.abs(states) <= approx.R, axis=(1, 2))
    except DivergenceError:
        endpoints = np.full_like(data.X, np.nan)
        inside = np.zeros(N, dtype=bool)
    measured = np.linalg.norm(endpoints - data.Y, axis=1)
    bounds = np.full(N, bound)
    return GronwallReport(bounds, measured, bounds - measured, inside, lip)
