"""Command-line front end.

Subcommands::

    multicoag validate [--seed N] [--out DIR]
    multicoag simulate --config run.toml [--out DIR] [--seed N] [--threads N]
    multicoag moments  --config run.toml ...
    multicoag localise --config run.toml ...
    multicoag compare  --config run.toml [--solvers grid,ssa] ...

Exit codes: 0 all checks passed, 1 configuration error, 2 numerical abort,
3 at least one check failed.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from . import export, solver_grid, solver_ssa, suites
from .composition import WeightParams
from .config import DiagnosticSpec, RunConfig, load_config
from .errors import ConfigError, NumericalError
from .solver_grid import GridSpec, SourceSpec, Trajectory, snapshot_times

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK = 0, 1, 2, 3
THREADS_ENV = "MULTICOAG_THREADS"
DEFAULT_OUT = "multicoag_out"
DEFAULT_MOMENTS = ((1.0, 1.0), (0.5, 0.9), (0.0, 0.0))

logger = logging.getLogger("multicoag")


def resolve_threads(flag: int | None) -> int:
    """``--threads`` wins over ``MULTICOAG_THREADS``; default 1."""
    if flag is not None:
        value = flag
    else:
        env = os.environ.get(THREADS_ENV)
        if env is None or env == "":
            return 1
        try:
            value = int(env)
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
    if value < 1:
        raise ConfigError("thread count must be at least 1")
    return value


# -- running solvers ----------------------------------------------------------


class Run:
    """Trajectories produced for one configuration."""

    def __init__(self, cfg: RunConfig, threads: int):
        self.cfg = cfg
        self.threads = threads
        self.grid: Trajectory | None = None
        self.ssa: solver_ssa.EnsembleResult | None = None

    @property
    def source(self) -> SourceSpec:
        return SourceSpec(self.cfg.source)

    def run_grid(self, spec: GridSpec | None = None) -> Trajectory:
        spec = spec or self.cfg.grid
        traj = solver_grid.simulate(self.cfg.init, self.cfg.kernel, self.source, spec,
                                    threads=self.threads)
        if spec is self.cfg.grid:
            self.grid = traj
        return traj

    def run_ssa(self) -> solver_ssa.EnsembleResult:
        cfg = self.cfg
        self.ssa = solver_ssa.run(
            cfg.init, cfg.kernel, self.source, V=cfg.ssa.volume, replicas=cfg.ssa.replicas,
            seed=cfg.seed, times=snapshot_times(cfg.grid), N=cfg.grid.N, threads=self.threads,
        )
        return self.ssa

    def execute(self, solvers) -> None:
        if "grid" in solvers:
            self.run_grid()
        if "ssa" in solvers:
            self.run_ssa()

    @property
    def primary(self) -> Trajectory:
        return self.grid if self.grid is not None else self.ssa.trajectory

    @property
    def f0(self):
        # particle ensembles start from a random sample of f0, so checks use the first snapshot
        return self.cfg.init if self.grid is not None else None

    def trajectories(self) -> dict[str, Trajectory]:
        out = {}
        if self.grid is not None:
            out["grid"] = self.grid
        if self.ssa is not None:
            out["ssa"] = self.ssa.trajectory
        return out


def write_outputs(run: Run, out: Path, reports: list[diag.CheckReport]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, traj in run.trajectories().items():
        fname = f"trajectory_{name}.csv"
        export.write_trajectory_csv(traj, out / fname)
        files[name] = fname
    files["reports"] = "reports.json"
    export.write_json(export.manifest(run.cfg, run.trajectories(), files, solver_ssa.RNG_NAME),
                      out / "manifest.json")
    write_reports(reports, out)


def write_reports(reports: list[diag.CheckReport], out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    export.write_json([r.to_dict() for r in reports], out / "reports.json")


# -- diagnostics --------------------------------------------------------------


class _CappedSize:
    def __init__(self, cap: float):
        self.cap = cap

    def __call__(self, x):
        return np.minimum(np.asarray(x, dtype=float).sum(axis=-1), self.cap)


class _PowerPhi:
    def __init__(self, p: float):
        self.p = p

    def __call__(self, r):
        return np.asarray(r, dtype=float) ** self.p


def localisation_reports(run: Run, params: dict) -> list[diag.CheckReport]:
    cfg, traj = run.cfg, run.primary
    th0 = diag.theta0(cfg.init)
    stats = diag.trajectory_direction_stats(traj, th0)
    m0 = cfg.init.weights @ cfg.init.points
    mz = cfg.source.weights @ cfg.source.points if len(cfg.source) else np.zeros(cfg.dimension)
    # in-box mass is m0 + t mz minus what left the box, so its direction is known exactly
    expected_mass = m0[None, :] + traj.times[:, None] * mz[None, :] - traj.lost_mass
    expected = expected_mass / expected_mass.sum(axis=1, keepdims=True)
    dev = np.array([np.max(np.abs(st.mean_direction - e)) for st, e in zip(stats, expected)])
    where = int(np.argmax(dev))
    worst = float(dev[where])
    reports = [diag._report("mean_direction", worst, params["tol"], (float(traj.times[where]),),
                            f"theta0={th0.tolist()}",
                            mean_direction=[s.mean_direction for s in stats])]
    variances = np.array([s.directional_variance for s in stats])
    i_ref = int(np.argmin(np.abs(traj.times - params["t_ref"])))
    v_ref, v_end = variances[i_ref], variances[-1]
    reports.append(diag.CheckReport(
        "directional_variance_trend", bool(v_end < v_ref), float(v_end - v_ref), 0.0,
        (float(traj.times[i_ref]), float(traj.times[-1])),
        f"variance {v_ref:.6g} at t={traj.times[i_ref]:.6g}, {v_end:.6g} at t={traj.times[-1]:.6g} "
        "(pass iff it decreased)",
        {"variance": variances},
    ))
    lp = diag.LocalisationParams(params["gamma"], params["delta"], tuple(th0.tolist()))
    fractions = [diag.localisation_fraction(traj.measure(i), t, lp) if t > 0 else float("nan")
                 for i, t in enumerate(traj.times)]
    reports.append(diag.CheckReport(
        "localisation_fraction", True, 0.0, 0.0, None,
        f"fraction of mass in the window-and-cone set (delta={params['delta']}, "
        f"gamma={params['gamma']}); reported only", {"fraction": fractions},
    ))
    return reports


def compare_reports(run: Run, nsigma: float = 3.0) -> list[diag.CheckReport]:
    """Grid versus particle ensemble: weighted distance series and moment agreement.

    The grid error budget is a Richardson estimate from a rerun at ``dt/2``.
    """
    cfg = run.cfg
    k = cfg.kernel
    grid, ens = run.grid, run.ssa
    half = replace(cfg.grid, dt=cfg.grid.dt / 2, output_every=2 * cfg.grid.output_every)
    fine = run.run_grid(half)
    w = solver_grid.lattice_weight(WeightParams(-k.theta1, k.theta2), grid.points)
    axes = tuple(range(1, grid.densities.ndim))
    grid_err = np.sum(np.abs(grid.densities - fine.densities) * w, axis=axes) * 16.0 / 15.0
    ssa_band = nsigma * np.sum(ens.trajectory.stderr * w, axis=axes)
    reports = [diag.uniqueness_compare(grid, ens.trajectory, k.theta1, k.theta2,
                                       tol=grid_err + ssa_band + 1e-12)]
    for name, power in (("M0", 0.0), ("M1", 1.0), ("M2", 2.0)):
        wp = WeightParams(power, power)
        g = grid.moments(wp)
        g_err = np.abs(g - fine.moments(wp)) * 16.0 / 15.0
        reports.append(diag.moment_agreement(g, ens.mean(name), ens.stderr(name), g_err,
                                             nsigma, name=f"moment_agreement({name})"))
    return reports


def run_diagnostic(run: Run, spec: DiagnosticSpec) -> list[diag.CheckReport]:
    cfg, traj, p = run.cfg, run.primary, spec.params
    zeta = cfg.source
    if spec.type == "mass_conservation":
        if run.grid is None:
            m0 = cfg.init.weights @ cfg.init.points
            mz = zeta.weights @ zeta.points if len(zeta) else np.zeros(cfg.dimension)
            expected = m0[None, :] + run.ssa.times[:, None] * mz[None, :]
            se = run.ssa.stderr("mass")
            return [diag.moment_agreement(expected, run.ssa.mean("mass"), se, 0.0, 3.0,
                                          name="mass_conservation(ensemble)")]
        return [diag.mass_conservation_residual(traj, run.f0, zeta, tol=p["tol"])]
    if spec.type == "sublinear_moment":
        return [diag.sublinear_moment_check(traj, run.f0, zeta, WeightParams(p["alpha"], p["beta"]),
                                            tol=p["tol"])]
    if spec.type == "phi_moment":
        return [diag.phi_moment_check(traj, run.f0, zeta, _PowerPhi(p["power"]), p["alpha"],
                                      tol=p["tol"])]
    if spec.type == "time_lipschitz":
        return [diag.time_lipschitz_check(traj, cfg.kernel.theta1, ratio_tol=p["ratio_tol"])]
    if spec.type == "weak_residual":
        return [diag.weak_solution_residual(traj, cfg.kernel, run.f0, zeta, _CappedSize(p["cap"]),
                                            dt=cfg.grid.dt, C=p["C"])]
    if spec.type == "localisation":
        return localisation_reports(run, p)
    if spec.type == "uniqueness":
        if run.grid is None or run.ssa is None:
            return []
        return compare_reports(run, p["nsigma"])
    if spec.type == "higher_moments":
        return [diag.higher_moment_growth(traj, p["exponents"])]
    raise ConfigError(f"unknown diagnostic {spec.type}")  # unreachable after validation


# -- subcommands ----------------------------------------------------------------


def _load(args) -> RunConfig:
    if not args.config:
        raise ConfigError("--config is required for this subcommand")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _out_dir(args, cfg: RunConfig | None) -> Path:
    if args.out:
        return Path(args.out)
    if cfg is not None and cfg.out:
        return Path(cfg.out)
    return Path(DEFAULT_OUT)


def _solvers(cfg: RunConfig) -> tuple[str, ...]:
    return ("grid", "ssa") if cfg.solver == "both" else (cfg.solver,)


def cmd_validate(args, threads: int) -> list[diag.CheckReport]:
    seed = args.seed if args.seed is not None else 0
    reports = suites.validate_all(seed=seed)
    write_reports(reports, _out_dir(args, None))
    return reports


def cmd_simulate(args, threads: int) -> list[diag.CheckReport]:
    cfg = _load(args)
    run = Run(cfg, threads)
    run.execute(_solvers(cfg))
    reports = []
    for spec in cfg.diagnostics:
        reports += run_diagnostic(run, spec)
    write_outputs(run, _out_dir(args, cfg), reports)
    return reports


def cmd_moments(args, threads: int) -> list[diag.CheckReport]:
    cfg = _load(args)
    run = Run(cfg, threads)
    run.execute(_solvers(cfg))
    specs = [s for s in cfg.diagnostics if s.type in ("sublinear_moment", "phi_moment", "higher_moments")]
    if not any(s.type == "sublinear_moment" for s in specs):
        specs = [DiagnosticSpec("sublinear_moment", {"alpha": a, "beta": b, "tol": 1e-8})
                 for a, b in DEFAULT_MOMENTS] + specs
    if not any(s.type == "higher_moments" for s in specs):
        specs.append(DiagnosticSpec("higher_moments", {"exponents": [2.0, 3.0]}))
    reports = []
    for spec in specs:
        reports += run_diagnostic(run, spec)
    write_outputs(run, _out_dir(args, cfg), reports)
    return reports


def cmd_localise(args, threads: int) -> list[diag.CheckReport]:
    cfg = _load(args)
    run = Run(cfg, threads)
    run.execute(_solvers(cfg))
    specs = [s for s in cfg.diagnostics if s.type == "localisation"]
    if not specs:
        specs = [DiagnosticSpec("localisation", {"delta": 0.5, "gamma": cfg.kernel.gamma,
                                                 "t_ref": 1.0, "tol": 1e-10})]
    reports = []
    for spec in specs:
        reports += run_diagnostic(run, spec)
    write_outputs(run, _out_dir(args, cfg), reports)
    return reports


def cmd_compare(args, threads: int) -> list[diag.CheckReport]:
    cfg = _load(args)
    solvers = tuple(s.strip() for s in args.solvers.split(","))
    if sorted(solvers) != ["grid", "ssa"]:
        raise ConfigError(f"--solvers must name grid and ssa, got {args.solvers!r}")
    if cfg.kernel.outside_class:
        raise ConfigError(f"kernel '{cfg.kernel.name}' is outside the uniqueness class")
    run = Run(cfg, threads)
    run.execute(solvers)
    nsigma = next((s.params["nsigma"] for s in cfg.diagnostics if s.type == "uniqueness"), 3.0)
    reports = compare_reports(run, nsigma)
    reports.append(diag.mass_conservation_residual(run.grid, cfg.init, cfg.source))
    write_outputs(run, _out_dir(args, cfg), reports)
    return reports


COMMANDS = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "moments": cmd_moments,
    "localise": cmd_localise,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")
    common.add_argument("--threads", type=int,
                        help=f"worker count (overrides ${THREADS_ENV}; results do not depend on it)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser = argparse.ArgumentParser(prog="multicoag", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="run the property suites")
    sub.add_parser("simulate", parents=[common], help="run solvers and configured diagnostics")
    sub.add_parser("moments", parents=[common], help="moment inequality checks")
    sub.add_parser("localise", parents=[common], help="direction statistics and localisation")
    cmp_ = sub.add_parser("compare", parents=[common], help="grid versus particle solver")
    cmp_.add_argument("--solvers", default="grid,ssa", help="solvers to compare (grid,ssa)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = resolve_threads(args.threads)
        reports = COMMANDS[args.command](args, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for r in reports:
        print(r.line())
    failed = sum(not r.passed for r in reports)
    print(f"{len(reports) - failed}/{len(reports)} checks passed")
    return EXIT_CHECK if failed else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
