"""``nodectl`` command line: synthesize, verify and export neural ODE controls.

Every run writes into ``--out``:

* ``manifest.json``  resolved configuration (every default included) and timing
* ``report.json``    results and verification gates; deterministic for a fixed config
* ``schedule.json``  the control, when the command produces or reads one
* ``trajectories.csv`` sampled trajectories ``point_id, t, x_1..x_d``
* ``plot.svg``       a figure of the run

Exit status: 0 when every gate passes, 2 when a gate fails, 3 for unreadable
or invalid input, 4 for numerical failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import ControlSchedule, Dataset, complexity, kappa_min_report
from .errors import NodeCtlError, NumericError, ParseError
from .fieldapprox import GridSpec, build_field, fit_shallow_field, gronwall_certificate
from .flow import IntegratorOptions, ParticleMeasure, integrate_many, push_forward, sample_trajectories
from .interp import plan_corollary2, plan_theorem1
from .io import (
    parse_dataset,
    parse_schedule,
    read_points_csv,
    write_json,
    write_trajectories_csv,
)
from .plotting import plot_clouds, plot_interval, plot_sweep, plot_trajectories
from .shallow import check_assumption1, estimate_separability_probability, one_dimensional_probability, solve_corollary4
from .transport import (
    PRESETS,
    TransportPlanSpec,
    error_envelope,
    plan_transport,
    sample_preset,
    uniform_grid_sample,
    wasserstein,
)

EXIT_OK, EXIT_GATE, EXIT_PARSE, EXIT_NUMERIC = 0, 2, 3, 4
COMMANDS = ("interpolate", "shallow", "basis", "field-fit", "transport", "verify", "simulate", "mc-prob")
TRAJECTORY_LIMIT = 64


@dataclass
class RunConfig:
    command: str
    out: str = "nodectl-out"
    data: str | None = None
    schedule: str | None = None
    points: str | None = None
    measure: str | None = None
    preset: str = "mixture"
    particles: int = 10_000
    seed: int = 0
    T: float = 1.0
    tol: float = 1e-6
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    samples_per_piece: int = 20
    shallow_tol: float = 1e-13
    p: int | None = None
    p_split: list | None = None
    p_sweep: list = field(default_factory=lambda: [32, 64, 128, 256])
    q: float = 1.0
    epsilon: float = 1.0
    R: float | None = None
    n: int | None = None
    delta: float | None = None
    reference_per_axis: int = 64
    sampling_allowance: float = 0.05
    d: int = 1
    N: int = 2
    trials: int = 100_000

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ParseError(f"unknown command {self.command!r}")
        if self.seed < 0:
            raise ParseError("seed must be a non-negative integer")
        for name in ("data", "schedule", "points", "measure"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise ParseError(f"--{name} file not found: {path}")

    @property
    def integrator(self) -> IntegratorOptions:
        return IntegratorOptions(self.abs_tol, self.rel_tol)


def _need(cfg: RunConfig, *names: str) -> None:
    for name in names:
        if getattr(cfg, name) is None:
            raise ParseError(f"{cfg.command} needs --{name.replace('_', '-')}")


def _gate(name: str, value, threshold, passed: bool) -> dict:
    return {"name": name, "value": value, "threshold": threshold, "passed": bool(passed)}


def _kappa(schedule: ControlSchedule) -> dict:
    arch = schedule.architecture()
    return {
        "L": arch.depth_transitions,
        "p": arch.width,
        "d": arch.dim,
        "kappa": complexity(arch),
        "kappa_formula": "(L+1)*p*(2d+1)",
    }


def _export_trajectories(out: Path, schedule: ControlSchedule, X: np.ndarray, cfg: RunConfig, targets=None,
                         title: str = "") -> None:
    X = X[:TRAJECTORY_LIMIT]
    times, states, _ = sample_trajectories(schedule, X, cfg.integrator, cfg.samples_per_piece)
    write_trajectories_csv(out / "trajectories.csv", times, states)
    plot_trajectories(out / "plot.svg", times, states,
                      None if targets is None else targets[:TRAJECTORY_LIMIT], title)


def _endpoint_gate(schedule: ControlSchedule, data: Dataset, cfg: RunConfig,
                   opts: IntegratorOptions | None = None) -> tuple[dict, dict]:
    end, _ = integrate_many(schedule, data.X, opts or cfg.integrator)
    errors = np.linalg.norm(end - data.Y, axis=1)
    worst = float(errors.max())
    return ({"endpoint_errors": errors.tolist(), "max_endpoint_error": worst},
            _gate("endpoint_tolerance", worst, cfg.tol, worst <= cfg.tol))


def _write_schedule(out: Path, schedule: ControlSchedule) -> None:
    write_json(out / "schedule.json", schedule.to_dict())


# ---------------------------------------------------------------- commands


def _interpolate(cfg: RunConfig, out: Path) -> tuple[dict, list]:
    _need(cfg, "data")
    data = parse_dataset(cfg.data)
    p = cfg.p or 1
    plan = plan_theorem1(data, p, cfg.T, seed=cfg.seed)
    sched = plan.schedule
    _write_schedule(out, sched)
    errs, gate = _endpoint_gate(sched, data, cfg)
    _export_trajectories(out, sched, data.X, cfg, data.Y, "two-sweep interpolation")
    kmin = kappa_min_report(data.size, data.dim)
    report = {
        "N": data.size,
        "claimed_L": plan.claimed_L,
        "achieved_L": sched.discontinuity_count(),
        "basis_provenance": plan.basis.provenance.value,
        "batches": plan.batches,
        **errs,
        "complexity": _kappa(sched),
        "kappa_min": kmin,
        "notes": [kmin["note"]] if kmin["flagged"] else [],
    }
    gates = [gate, _gate("discontinuity_count", sched.discontinuity_count(), plan.claimed_L,
                         sched.discontinuity_count() == plan.claimed_L)]
    return report, gates


def _basis(cfg: RunConfig, out: Path) -> tuple[dict, list]:
    _need(cfg, "data")
    data = parse_dataset(cfg.data)
    p = cfg.p or 1
    plan = plan_corollary2(data, p, cfg.T, seed=cfg.seed)
    sched = plan.schedule
    _write_schedule(out, sched)
    errs, gate = _endpoint_gate(sched, data, cfg)
    _export_trajectories(out, sched, data.X, cfg, data.Y, "matched-coordinate interpolation")
    report = {
        "N": data.size,
        "claimed_L": plan.claimed_L,
        "achieved_L": sched.discontinuity_count(),
        "minimal_L": plan.minimal_L,
        "basis_provenance": plan.basis.provenance.value,
        "batches": plan.batches,
        **errs,
        "complexity": _kappa(sched),
    }
    gates = [gate, _gate("discontinuity_count", sched.discontinuity_count(), plan.claimed_L,
                         sched.discontinuity_count() == plan.claimed_L)]
    return report, gates


def _shallow(cfg: RunConfig, out: Path) -> tuple[dict, list]:
    _need(cfg, "data")
    data = parse_dataset(cfg.data)
    cert = check_assumption1(data, seed=cfg.seed)
    if cert is None:
        report = {"N": data.size, "certificate": None,
                  "reason": "no tested direction separates the pairs into strips"}
        plot_trajectories(out / "plot.svg", [0.0], data.X[:TRAJECTORY_LIMIT, None, :], data.Y[:TRAJECTORY_LIMIT],
                          "no strip certificate")
        return report, [_gate("strip_certificate", False, True, False)]
    ctrl = solve_corollary4(data, cert, cfg.T)
    sched = ctrl.schedule()
    _write_schedule(out, sched)
    # A single expanding piece amplifies integration error by exp(rate * T).
    tight = IntegratorOptions(min(cfg.abs_tol, cfg.shallow_tol), min(cfg.rel_tol, cfg.shallow_tol))
    errs, gate = _endpoint_gate(sched, data, cfg, tight)
    _export_trajectories(out, sched, data.X, cfg, data.Y, "constant control")
    report = {
        "N": data.size,
        "claimed_L": 0,
        "achieved_L": sched.discontinuity_count(),
        "certificate": {"direction": cert.a.tolist(), "biases": cert.biases.tolist(),
                        "order": list(cert.tau), "provenance": cert.provenance},
        "hinges": ctrl.hinges.tolist(),
        **errs,
        "complexity": _kappa(sched),
    }
    return report, [gate, _gate("strip_certificate", True, True, True)]


def _field_fit(cfg: RunConfig, out: Path) -> tuple[dict, list]:
    _need(cfg, "data")
    data = parse_dataset(cfg.data)
    R = cfg.R if cfg.R is not None else 1.5 * max(1.0, float(np.abs(np.vstack([data.X, data.Y])).max()))
    V = build_field(data, R, cfg.T, seed=cfg.seed)
    widths = sorted(int(p) for p in cfg.p_sweep)
    sweep, fits = [], []
    for p in widths:
        fit = fit_shallow_field(V, p, GridSpec(), seed=cfg.seed)
        fits.append(fit)
        sweep.append({"p": p, "sup_error_grid": fit.sup_error_grid, "lipschitz_NN": fit.lipschitz_NN,
                      "kappa_componentwise": fit.kappa,
                      "kappa_piecewise": complexity(fit.schedule(cfg.T).architecture()), "ridge": fit.ridge})
    best = fits[-1]
    cert = gronwall_certificate(V, best, data, cfg.T, cfg.integrator)
    sched = best.schedule(cfg.T)
    _write_schedule(out, sched)
    times, states, _ = sample_trajectories(sched, data.X, cfg.integrator, cfg.samples_per_piece)
    write_trajectories_csv(out / "trajectories.csv", times, states)
    plot_sweep(out / "plot.svg", widths, [s["sup_error_grid"] for s in sweep], "surrogate error versus width")
    errors = [s["sup_error_grid"] for s in sweep]
    sound = bool(np.all(cert.margin[cert.certified] >= 0))
    report = {
        "N": data.size,
        "R": R,
        "tube_radius": V.bundle.tube_radius,
        "lipschitz_V_estimate": V.lipschitz_estimate,
        "field_endpoint_errors": None if V.endpoint_errors is None else np.asarray(V.endpoint_errors).tolist(),
        "sweep": sweep,
        "error_non_increasing": bool(np.all(np.diff(errors) <= 0)),
        "gronwall": cert.to_dict(),
        "complexity": _kappa(sched),
    }
    gates = [_gate("gronwall_soundness", sound, True, sound)]
    return report, gates


def _load_measure(cfg: RunConfig, d: int) -> ParticleMeasure:
    if cfg.measure is not None:
        return ParticleMeasure(read_points_csv(cfg.measure))
    if cfg.preset not in PRESETS:
        raise ParseError(f"unknown preset {cfg.preset!r}; choose from {sorted(PRESETS)}")
    return sample_preset(cfg.preset, cfg.particles, d, seed=cfg.seed)


def _transport(cfg: RunConfig, out: Path) -> tuple[dict, list]:
    mu = _load_measure(cfg, cfg.d)
    d = mu.dim
    p = cfg.p if cfg.p is not None else d + 1
    split = cfg.p_split if cfg.p_split is not None else _default_split(p, d)
    spec = TransportPlanSpec(d, cfg.q, cfg.epsilon, p, tuple(int(s) for s in split), n=cfg.n, delta=cfg.delta)
    plan = plan_transport(mu, spec, cfg.T, cfg.integrator)
    _write_schedule(out, plan.schedule)
    final = push_forward(plan.schedule, mu, cfg.integrator)
    reference = uniform_grid_sample(cfg.reference_per_axis, d)
    w_final = wasserstein(final, reference, q=cfg.q, seed=cfg.seed)
    w_start = wasserstein(mu, reference, q=cfg.q, seed=cfg.seed)
    w_compressed = wasserstein(plan.compressed, reference, q=cfg.q, seed=cfg.seed)
    times, states, _ = sample_trajectories(plan.schedule, mu.particles[:TRAJECTORY_LIMIT], cfg.integrator, 4)
    write_trajectories_csv(out / "trajectories.csv", times, states)
    plot_clouds(out / "plot.svg", mu.particles, final.particles, "transport to the unit cube")
    envelope = error_envelope(d, cfg.q, spec.n)
    report = dict(plan.report)
    report.update({
        "particles": mu.size,
        "reference_points": reference.size,
        "W_q_initial": w_start,
        "W_q_compressed": w_compressed,
        "W_q_final": w_final,
        "complexity": _kappa(plan.schedule),
    })
    allowance = cfg.sampling_allowance
    gates = [
        _gate("discontinuity_count", plan.report["achieved_L"], plan.report["claimed_L"],
              plan.report["achieved_L"] == plan.report["claimed_L"]),
        _gate("wasserstein_within_epsilon", w_final, cfg.epsilon + allowance, w_final <= cfg.epsilon + allowance),
        _gate("wasserstein_within_envelope", w_final, envelope + allowance, w_final <= envelope + allowance),
    ]
    return report, gates


def _default_split(p: int, d: int) -> list[int]:
    if p < d:
        raise ParseError(f"--p {p} cannot give every one of {d} axes a neuron")
    # Deeper axes carry n^k cuts, so they get the larger share.
    weights = np.array([k for k in range(1, d + 1)], dtype=float)
    split = np.ones(d, dtype=int)
    for _ in range(p - d):
        k = int(np.argmax(weights / split))
        split[k] += 1
    return split.tolist()


def _verify(cfg: RunConfig, out: Path) -> tuple[dict, list]:
    _need(cfg, "schedule", "data")
    sched = parse_schedule(cfg.schedule)
    data = parse_dataset(cfg.data)
    if sched.dim != data.dim:
        raise ParseError(f"schedule dimension {sched.dim} differs from data dimension {data.dim}")
    errs, gate = _endpoint_gate(sched, data, cfg)
    _export_trajectories(out, sched, data.X, cfg, data.Y, "verification")
    report = {"N": data.size, "achieved_L": sched.discontinuity_count(), **errs, "complexity": _kappa(sched)}
    return report, [gate]


def _simulate(cfg: RunConfig, out: Path) -> tuple[dict, list]:
    _need(cfg, "schedule", "points")
    sched = parse_schedule(cfg.schedule)
    P = read_points_csv(cfg.points)
    if P.shape[1] != sched.dim:
        raise ParseError(f"points have {P.shape[1]} columns, schedule has dimension {sched.dim}")
    times, states, err = sample_trajectories(sched, P, cfg.integrator, cfg.samples_per_piece)
    write_trajectories_csv(out / "trajectories.csv", times, states)
    plot_trajectories(out / "plot.svg", times, states[:TRAJECTORY_LIMIT], None, "simulation")
    report = {"points": int(P.shape[0]), "endpoints": states[:, -1].tolist(),
              "error_estimates": err.tolist(), "complexity": _kappa(sched)}
    return report, []


def _mc_prob(cfg: RunConfig, out: Path) -> tuple[dict, list]:
    est = estimate_separability_probability(cfg.d, cfg.N, cfg.trials, seed=cfg.seed)
    report = {"estimate": est.to_dict()}
    gates = []
    if cfg.d == 1:
        exact = one_dimensional_probability(cfg.N)
        report["exact_one_dimensional"] = exact
        gates.append(_gate("one_dimensional_formula_3sigma", abs(est.p_hat - exact), 3 * est.sigma,
                           abs(est.p_hat - exact) <= 3 * est.sigma))
    if cfg.N == 2:
        ref = est.independent_axes_value
        gates.append(_gate("independent_axes_3sigma", abs(est.p_hat - ref), 3 * est.sigma,
                           abs(est.p_hat - ref) <= 3 * est.sigma))
    plot_interval(out / "plot.svg", est.p_hat, est.ci_low, est.ci_high,
                  report.get("exact_one_dimensional", est.independent_axes_value if cfg.N == 2 else None),
                  f"axis separability, d={cfg.d}, N={cfg.N}")
    return report, gates


_HANDLERS = {
    "interpolate": _interpolate,
    "shallow": _shallow,
    "basis": _basis,
    "field-fit": _field_fit,
    "transport": _transport,
    "verify": _verify,
    "simulate": _simulate,
    "mc-prob": _mc_prob,
}


# ---------------------------------------------------------------- driver


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, (NodeCtlError, ValueError)):
        return EXIT_PARSE
    return EXIT_NUMERIC


def run(cfg: RunConfig) -> int:
    """Execute one command, write its artifacts and return the exit status."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    manifest = {"nodectl_version": __version__, "config": dataclasses.asdict(cfg),
                "integrator": dataclasses.asdict(cfg.integrator),
                "threads": os.environ.get("NODECTL_THREADS", "1")}
    report: dict = {"command": cfg.command, "seed": cfg.seed}
    try:
        body, gates = _HANDLERS[cfg.command](cfg, out)
        report.update(body)
        report["gates"] = gates
        passed = all(g["passed"] for g in gates)
        report["status"] = "ok" if passed else "verification_failed"
        failed = [g["name"] for g in gates if not g["passed"]]
        if failed:
            report["failed_invariants"] = failed
        code = EXIT_OK if passed else EXIT_GATE
    except Exception as exc:  # every failure still leaves a structured report
        code = _exit_code(exc)
        report["status"] = "error"
        report["error"] = {"type": type(exc).__name__, "message": str(exc), "exit_code": code}
    manifest["timing"] = {"started_unix": started, "elapsed_seconds": time.time() - started}
    manifest["exit_code"] = code
    write_json(out / "report.json", report)
    write_json(out / "manifest.json", manifest)
    return code


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nodectl", description="Control synthesis for ReLU neural ODEs.")
    parser.add_argument("--version", action="version", version=f"nodectl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", default="nodectl-out", help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--T", type=float, default=1.0, help="time horizon")
        sp.add_argument("--tol", type=float, default=1e-6, help="endpoint tolerance of the verification gate")
        sp.add_argument("--abs-tol", type=float, default=1e-10, help="integrator absolute tolerance")
        sp.add_argument("--rel-tol", type=float, default=1e-10, help="integrator relative tolerance")
        sp.add_argument("--samples-per-piece", type=int, default=20)

    for name in ("interpolate", "basis", "shallow"):
        sp = sub.add_parser(name)
        common(sp)
        sp.add_argument("--data", required=True)
        if name != "shallow":
            sp.add_argument("--p", type=int, default=1)
        else:
            sp.add_argument("--shallow-tol", type=float, default=1e-13,
                            help="integrator tolerance used to verify the constant control")

    sp = sub.add_parser("field-fit")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--R", type=float, default=None, help="half-width of the box (default 1.5 x max |coordinate|)")
    sp.add_argument("--p-sweep", type=_int_list, default=[32, 64, 128, 256])

    sp = sub.add_parser("transport")
    common(sp)
    sp.add_argument("--measure", default=None, help="CSV point cloud, one particle per row")
    sp.add_argument("--preset", default="mixture", choices=sorted(PRESETS))
    sp.add_argument("--particles", type=int, default=10_000)
    sp.add_argument("--d", type=int, default=2, help="dimension for presets")
    sp.add_argument("--q", type=float, default=1.0)
    sp.add_argument("--epsilon", type=float, default=1.0)
    sp.add_argument("--p", type=int, default=None)
    sp.add_argument("--p-split", type=_int_list, default=None)
    sp.add_argument("--n", type=int, default=None, help="override the resolution")
    sp.add_argument("--delta", type=float, default=None, help="override the target displacement")
    sp.add_argument("--reference-per-axis", type=int, default=64)
    sp.add_argument("--sampling-allowance", type=float, default=0.05)

    sp = sub.add_parser("verify")
    common(sp)
    sp.add_argument("--schedule", required=True)
    sp.add_argument("--data", required=True)

    sp = sub.add_parser("simulate")
    common(sp)
    sp.add_argument("--schedule", required=True)
    sp.add_argument("--points", required=True)

    sp = sub.add_parser("mc-prob")
    common(sp)
    sp.add_argument("--d", type=int, default=1)
    sp.add_argument("--N", type=int, default=2)
    sp.add_argument("--trials", type=int, default=100_000)
    return parser


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    known = {f.name for f in dataclasses.fields(RunConfig)}
    values = {k: v for k, v in vars(ns).items() if k in known and v is not None}
    return RunConfig(**values)


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(ns)
    except NodeCtlError as exc:
        out = Path(getattr(ns, "out", "nodectl-out"))
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "report.json", {"command": ns.command, "status": "error",
                                         "error": {"type": type(exc).__name__, "message": str(exc),
                                                   "exit_code": EXIT_PARSE}})
        print(f"nodectl: {exc}", file=sys.stderr)
        return EXIT_PARSE
    code = run(cfg)
    if code:
        print(f"nodectl {cfg.command}: exit {code}, see {Path(cfg.out) / 'report.json'}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
