"""Command-line entry point.

Exit status: 0 when every asserted tolerance holds, 1 when a tolerance
fails, 2 for usage errors, 3 for invalid parameters and 4 when the output
directory cannot be written.
"""

from __future__ import annotations

import argparse
import configparser
import io
import logging
import math
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from .benchmarks import SURFSUB_DT, SURFSUB_T, run_surfsub, surfsub_mesh
from .diagnostics import check_conformity
from .export import export_interface_profile, export_vtu, snapshot, snapshot_name
from .linear_system import InaccurateSolveError, SingularSystemError
from .manufactured import (ExactSolution, derive_data, rate_checks, run_convergence,
                           steady_parameters, transient_parameters)
from .mesh import MeshError
from .parameters import InvalidParameterError, ParameterSet

log = logging.getLogger("sbhdg")

EXIT_OK, EXIT_TOLERANCE, EXIT_USAGE, EXIT_PARAMETER, EXIT_OUTPUT = 0, 1, 2, 3, 4
COMMANDS = ("converge-steady", "converge-transient", "surfsub-demo", "check")
PARAM_NAMES = tuple(f.name for f in fields(ParameterSet))
CONFORMITY_TOL = 1e-10
DIV_TOL = 1e-11


class UsageError(Exception):
    pass


class OutputError(Exception):
    pass


@dataclass
class RunConfig:
    """Everything that determines a run; ``to_text``/``from_text`` give a
    canonical INI form that round-trips."""

    command: str
    k: int | None = None
    levels: int | None = None
    case: str = "steady"
    which: int = 1
    T: float | None = None
    dt: float | None = None
    scheme: str = "BE"
    every: int = 10
    out: str = "sbhdg-out"
    workers: int = 1
    seed: int = 0
    params: dict = field(default_factory=dict)

    RUN_KEYS = ("command", "k", "levels", "case", "which", "T", "dt", "scheme", "every",
                "out", "workers", "seed")

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if self.case not in ("steady", "transient"):
            raise UsageError(f"case must be steady or transient, got {self.case!r}")
        if self.scheme not in ("BE", "BDF2"):
            raise UsageError(f"scheme must be BE or BDF2, got {self.scheme!r}")
        unknown = set(self.params) - set(PARAM_NAMES)
        if unknown:
            raise UsageError(f"unknown parameter(s): {', '.join(sorted(unknown))}")
        self.params = {key: float(v) for key, v in self.params.items()}
        for key, flag in (("k", "--k"), ("dt", "--dt")):
            if key in self.params:
                raise UsageError(f"set {key} with {flag}")

    def resolved(self) -> "RunConfig":
        """Fill command-dependent defaults."""
        c = RunConfig(**{f.name: getattr(self, f.name) for f in fields(self)})
        if c.k is None:
            c.k = 2
        if c.levels is None:
            c.levels = {"check": 1}.get(c.command, 4)
        if c.command == "surfsub-demo":
            c.T = SURFSUB_T if c.T is None else c.T
            c.dt = SURFSUB_DT if c.dt is None else c.dt
        elif c.T is None and (c.command == "converge-transient"
                              or (c.command == "check" and c.case == "transient")):
            c.T = 0.01
        return c

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp["run"] = {key: _fmt(getattr(self, key)) for key in self.RUN_KEYS
                     if getattr(self, key) is not None}
        cp["params"] = {key: _fmt(self.params[key]) for key in sorted(self.params)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str, **overrides) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise UsageError(f"unreadable config: {exc}") from exc
        run = dict(cp["run"]) if cp.has_section("run") else {}
        unknown = set(run) - set(cls.RUN_KEYS)
        if unknown:
            raise UsageError(f"unknown run key(s): {', '.join(sorted(unknown))}")
        kwargs = {}
        for key, value in run.items():
            kwargs[key] = _parse(key, value)
        params = dict(cp["params"]) if cp.has_section("params") else {}
        try:
            kwargs["params"] = {key: float(v) for key, v in params.items()}
        except ValueError as exc:
            raise InvalidParameterError(str(exc)) from exc
        for key, value in overrides.items():
            if key == "params":
                kwargs.setdefault("params", {}).update(value)
            elif value is not None:
                kwargs[key] = value
        if "command" not in kwargs:
            raise UsageError("no command given")
        return cls(**kwargs)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(key: str, value: str):
    try:
        if key in ("k", "levels", "which", "every", "workers", "seed"):
            return int(value)
        if key in ("T", "dt"):
            return float(value)
    except ValueError as exc:
        raise InvalidParameterError(f"{key}: {exc}") from exc
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sbhdg", description="HDG solver for the coupled Stokes-Biot problem.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--k", type=int, help="polynomial degree (default 2)")
    p.add_argument("--levels", type=int, help="number of refinement levels")
    p.add_argument("--case", choices=("steady", "transient"), help="manufactured case for check")
    p.add_argument("--beta", type=float, help="interior penalty for both subdomains")
    p.add_argument("--tau", type=float, help="steady regularization weight")
    p.add_argument("--dt", type=float, help="time step (surfsub-demo)")
    p.add_argument("--T", type=float, help="final time")
    p.add_argument("--set", dest="which", type=int, choices=(1, 2, 3), help="benchmark parameter set")
    p.add_argument("--scheme", choices=("BE", "BDF2"), help="benchmark time scheme (default BE)")
    p.add_argument("--every", type=int, help="write a benchmark snapshot every N steps (default 10)")
    p.add_argument("--param", action="append", default=[], metavar="NAME=VALUE",
                   help="override a physical parameter; repeatable")
    p.add_argument("--out", help="output directory (default $SBHDG_OUT or ./sbhdg-out)")
    p.add_argument("--workers", type=int, help="assembly threads")
    p.add_argument("--seed", type=int, help="seed recorded with the run")
    p.add_argument("--config", help="INI file with [run] and [params] sections")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    params = {}
    for item in args.param:
        if "=" not in item:
            raise UsageError(f"--param expects NAME=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        try:
            params[key.strip()] = float(value)
        except ValueError as exc:
            raise InvalidParameterError(f"{key}: {exc}") from exc
    if args.beta is not None:
        params["beta_s"] = params["beta_b"] = args.beta
    if args.tau is not None:
        params["tau"] = args.tau
    out = args.out
    if out is None and args.config is None:
        out = os.environ.get("SBHDG_OUT")
    overrides = dict(command=args.command, k=args.k, levels=args.levels, case=args.case,
                     which=args.which, T=args.T, dt=args.dt, scheme=args.scheme,
                     every=args.every, out=out, workers=args.workers, seed=args.seed,
                     params=params)
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        cfg = RunConfig.from_text(text, **overrides)
        if cfg.out is None:
            cfg.out = os.environ.get("SBHDG_OUT", "sbhdg-out")
        return cfg
    kwargs = {key: v for key, v in overrides.items() if v is not None}
    kwargs.setdefault("out", "sbhdg-out")
    return RunConfig(**kwargs)


def _prepare_out(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OutputError(f"output directory {out} is not writable: {exc}") from exc
    return out


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise OutputError(str(exc)) from exc


def _manufactured_params(cfg: RunConfig, case: str) -> ParameterSet:
    make = steady_parameters if case == "steady" else transient_parameters
    return make(cfg.k, **cfg.params)


def _converge(cfg: RunConfig, case: str, out: Path) -> int:
    from .plotting import plot_convergence

    params = _manufactured_params(cfg, case)
    ex = ExactSolution(params, time_dependent=(case == "transient"))
    data = derive_data(ex, params, case)
    worst = {"value": 0.0}

    def callback(mesh, state, hist):
        mode = state.info["mode"]
        rep = check_conformity(state, hist, mode, data)
        worst["value"] = max(worst["value"], rep.worst())

    T = cfg.T if cfg.T is not None else 0.01
    report = run_convergence(case, cfg.k, cfg.levels, params, callback=callback,
                             workers=cfg.workers, T=T)
    stem = f"converge-{case}_k{cfg.k}"
    _write(out / f"{stem}.csv", report.to_csv())
    plot_convergence(report, out / f"{stem}.png")
    ok = True
    print(f"{'field':<6}{'rate':>8}  window")
    for chk in rate_checks(report):
        hi = "inf" if math.isinf(chk.high) else f"{chk.high:.1f}"
        print(f"{chk.field:<6}{chk.rate:>8.3f}  [{chk.low:.1f}, {hi}]  {'ok' if chk.passed else 'FAIL'}")
        ok &= chk.passed
    div_ok = all(d <= DIV_TOL * n for d, n in zip(report.div_us, report.norms["us"]))
    print(f"div us relative max {max(d / n for d, n in zip(report.div_us, report.norms['us'])):.2e}"
          f"  {'ok' if div_ok else 'FAIL'}")
    conf_ok = worst["value"] <= CONFORMITY_TOL
    print(f"conformity worst relative {worst['value']:.2e}  {'ok' if conf_ok else 'FAIL'}")
    return EXIT_OK if ok and div_ok and conf_ok else EXIT_TOLERANCE


def _check(cfg: RunConfig, out: Path) -> int:
    from .drivers import initialize, march, solve_steady
    from .manufactured import level_meshes, transient_grid

    case = cfg.case
    params = _manufactured_params(cfg, case)
    ex = ExactSolution(params, time_dependent=(case == "transient"))
    data = derive_data(ex, params, case)
    mesh = level_meshes(cfg.levels)[-1]
    reports = []
    if case == "steady":
        state = solve_steady(mesh, params, data, workers=cfg.workers)
        reports.append((0, check_conformity(state, (), "steady", data)))
    else:
        def callback(state, used):
            reports.append((state.info["step"],
                            check_conformity(state, used, state.info["mode"], data)))

        init = initialize(mesh, params, ex.ub, ex.grad_ub, ex.pp, 0.0)
        march(mesh, params, data, transient_grid(mesh.h, cfg.T), init, "BDF2", callback,
              keep="last", workers=cfg.workers)
    lines = []
    for step, rep in reports:
        if len(reports) > 1:
            print(f"step {step}")
        print(rep.table(CONFORMITY_TOL))
        lines.append("\n".join(f"{step},{row}" for row in rep.to_csv().splitlines()[1:]))
    _write(out / f"check_{case}_k{cfg.k}.csv",
           "step,check,raw,scale,relative,data_offset\n" + "\n".join(lines) + "\n")
    ok = all(rep.passed(CONFORMITY_TOL) for _, rep in reports)
    return EXIT_OK if ok else EXIT_TOLERANCE


def _surfsub(cfg: RunConfig, out: Path) -> int:
    from .plotting import plot_interface_profile, plot_snapshot

    mesh = surfsub_mesh(cfg.levels)
    case = f"surfsub{cfg.which}"
    last = {}

    def on_step(state, rate):
        n = state.info["step"]
        last["state"], last["rate"] = state, rate
        if cfg.every > 0 and n % cfg.every == 0:
            export_vtu(snapshot(state, rate), out / snapshot_name(case, n))

    run = run_surfsub(cfg.which, mesh, cfg.k, cfg.T, cfg.dt, cfg.scheme, on_step,
                      cfg.workers, **cfg.params)
    state, rate = last["state"], last["rate"]
    n = state.info["step"]
    snap = snapshot(state, rate)
    export_vtu(snap, out / snapshot_name(case, n))
    prof = export_interface_profile(state, out / f"{case}_interface.csv", rate)
    plot_snapshot(snap, out / f"{case}_fields.png", f"parameter set {cfg.which}, t = {state.t:g}")
    plot_interface_profile(prof, out / f"{case}_interface.png")
    rows = ["step,t,interface_flux,vertical_jump,worst_conformity,finite"]
    for r in run.records:
        rows.append(f"{r.step},{r.t:.6g},{r.conformity.relative('interface_flux'):.3e},"
                    f"{r.profile.vertical_jump():.3e},{r.conformity.worst():.3e},{int(r.finite)}")
    _write(out / f"{case}_steps.csv", "\n".join(rows) + "\n")
    finite = run.all_finite()
    flux = run.max_flux_defect()
    jump = run.max_vertical_jump()
    print(f"steps {len(run.records)}  finite {finite}")
    print(f"interface flux defect max {flux:.2e}  {'ok' if flux <= CONFORMITY_TOL else 'FAIL'}")
    print(f"vertical velocity jump max {jump:.2e}  {'ok' if jump <= CONFORMITY_TOL else 'FAIL'}")
    print(f"traction mismatch (rms, not asserted) {prof.traction_mismatch():.2e}")
    ok = finite and flux <= CONFORMITY_TOL and jump <= CONFORMITY_TOL
    return EXIT_OK if ok else EXIT_TOLERANCE


def run(cfg: RunConfig) -> int:
    cfg = cfg.resolved()
    if cfg.k < 1 or cfg.levels < 1 or cfg.workers < 1:
        raise InvalidParameterError("k, levels and workers must be positive")
    if cfg.command.startswith("converge") and cfg.levels < 2:
        raise InvalidParameterError("convergence runs need at least two levels")
    out = _prepare_out(cfg.out)
    _write(out / "config.ini", cfg.to_text())
    if cfg.command == "converge-steady":
        return _converge(cfg, "steady", out)
    if cfg.command == "converge-transient":
        return _converge(cfg, "transient", out)
    if cfg.command == "check":
        return _check(cfg, out)
    return _surfsub(cfg, out)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        return run(cfg)
    except UsageError as exc:
        print(f"sbhdg: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvalidParameterError, MeshError) as exc:
        print(f"sbhdg: invalid parameter: {exc}", file=sys.stderr)
        return EXIT_PARAMETER
    except OutputError as exc:
        print(f"sbhdg: {exc}", file=sys.stderr)
        return EXIT_OUTPUT
    except (SingularSystemError, InaccurateSolveError) as exc:
        print(f"sbhdg: solver failure: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE


if __name__ == "__main__":
    sys.exit(main())
