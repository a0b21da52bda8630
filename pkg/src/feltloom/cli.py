"""Command-line front end: validate, plan, emit, simulate, calibrate and report.

Exit status is 0 on success, 1 on a domain error (bad model, unreachable
plan, failed simulation, rejected envelope) and 2 on a usage error. Data goes
to stdout or the ``-o`` file; every diagnostic goes to stderr.
"""
from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

from . import fixtures
from .config import Config, ConfigError, load_config, time_section
from .data import DataError, phone_times, read_timing_csv
from .mesh import MeshError, TriMesh, load_mesh, validate_envelope
from .plan import METHODS, FabricationPlan, PlanParams
from .process import NeedleSpec, ProcessError, calibrate, estimate_time
from .program import (EmitError, MachineProgram, Mat, ParseError, emit, geometry_hash, parse,
                      program_counts)
from .simulator import SimulationError, counts_for_time, simulate
from .transforms import plan_method, profile_for

FIXTURES = {
    "sphere": fixtures.sphere_model,
    "cylinder": fixtures.cylinder_model,
    "phone": fixtures.phone_model,
    "fish": fixtures.fish_model,
}


class UsageError(Exception):
    pass


# input helpers ----------------------------------------------------------------

def read_model(source: str) -> TriMesh:
    """An STL path, or ``fixture:<name>`` for a built-in workpiece."""
    if source.startswith("fixture:"):
        name = source.split(":", 1)[1]
        if name not in FIXTURES:
            raise UsageError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURES)}")
        return FIXTURES[name]()
    try:
        with open(source, "rb") as fh:
            return load_mesh(fh)
    except OSError as exc:
        raise UsageError(f"cannot read model {source}: {exc.strerror}") from None


def read_program(path: str) -> MachineProgram:
    try:
        if path == "-":
            return parse(sys.stdin.read())
        with open(path, encoding="utf-8") as fh:
            return parse(fh.read())
    except OSError as exc:
        raise UsageError(f"cannot read program {path}: {exc.strerror}") from None


def write_out(path: str | None, text: str):
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def program_material(program: MachineProgram, cfg: Config):
    name = next((i.name for i in program.commands if isinstance(i, Mat)), cfg.plan.material)
    return cfg.models.material(name)


def check_geometry(program: MachineProgram, cfg: Config):
    if program.geometry_hash and program.geometry_hash != geometry_hash(cfg.geometry):
        print("warning: program was emitted for a different platform geometry",
              file=sys.stderr)


def plan_params(cfg: Config, args) -> PlanParams:
    kw = {}
    if args.line_width is not None:
        kw["line_width"] = args.line_width
    if args.ratio is not None:
        kw["crossed_ratio"] = args.ratio
    if args.tension is not None:
        kw["tension"] = args.tension
    if args.material is not None:
        kw["material"] = args.material
    if args.needle is not None:
        kw["needle"] = NeedleSpec.parse(args.needle)
    return replace(cfg.plan, **kw) if kw else cfg.plan


def make_plan(cfg: Config, mesh: TriMesh, method: str, params: PlanParams) -> FabricationPlan:
    profile = profile_for(mesh, params.line_width)
    return plan_method(method, mesh, profile, params=params, models=cfg.models,
                       env=cfg.envelope, geom=cfg.geometry)


def summary_text(plan: FabricationPlan, cfg: Config) -> str:
    lines = [f"{k} {v}" for k, v in plan.summary().items()]
    c, f, s = estimate_time(plan, cfg.models.time)
    lines += [f"coil_s {c:.3f}", f"felt_s {f:.3f}", f"system_s {s:.3f}",
              f"total_s {c + f + s:.3f}"]
    return "\n".join(lines) + "\n"


# subcommands ------------------------------------------------------------------

def cmd_validate(args, cfg: Config) -> int:
    mesh = read_model(args.model)
    profile = profile_for(mesh, cfg.plan.line_width)
    report = validate_envelope(profile.shifted(-profile.z_min), cfg.envelope)
    write_out(args.output, report.to_text())
    return 0 if report.accepted else 1


def cmd_plan(args, cfg: Config) -> int:
    mesh = read_model(args.model)
    plan = make_plan(cfg, mesh, args.method, plan_params(cfg, args))
    program = emit(plan, cfg.geometry, cfg.envelope)
    if args.output:
        write_out(args.output, program.serialize())
        sys.stdout.write(summary_text(plan, cfg))
    else:
        sys.stdout.write(program.serialize())
        sys.stderr.write(summary_text(plan, cfg))
    return 0


def cmd_emit(args, cfg: Config) -> int:
    """Re-emit a program in canonical form after checking it parses."""
    program = read_program(args.program)
    check_geometry(program, cfg)
    write_out(args.output, program.serialize())
    return 0


def _run_seed(job):
    program, material, models, seed, sim = job
    return simulate(program, material, models, seed, sim)


def cmd_simulate(args, cfg: Config) -> int:
    program = read_program(args.program)
    check_geometry(program, cfg)
    material = program_material(program, cfg)
    sim = cfg.sim_params()
    if args.seeds is None:
        report, fld = simulate(program, material, cfg.models, args.seed, sim,
                               return_field=True)
        write_out(args.output, report.to_text())
        if args.dump:
            write_out(args.dump, fld.dump())
        return 0
    if args.seeds < 2:
        raise UsageError("--seeds needs at least 2 runs to measure a spread")
    if args.dump:
        raise UsageError("--dump applies to single-seed runs only")
    seeds = range(args.seed, args.seed + args.seeds)
    jobs = [(program, material, cfg.models, s, sim) for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            reports = list(pool.map(_run_seed, jobs))
    else:
        reports = [_run_seed(j) for j in jobs]
    vols = [r.volume_cm3 for r in reports]
    lines = [f"seed {r.seed} volume_cm3 {r.volume_cm3:.6f} mass_g {r.total_mass:.6f}"
             for r in reports]
    lines.append(f"volume_mean_cm3 {sum(vols) / len(vols):.6f}")
    lines.append(f"volume_spread_cm3 {max(vols) - min(vols):.6f}")
    write_out(args.output, "\n".join(lines) + "\n")
    return 0


def cmd_calibrate(args, cfg: Config) -> int:
    if args.times:
        try:
            with open(args.times, encoding="utf-8") as fh:
                table = read_timing_csv(fh.read())
        except OSError as exc:
            raise UsageError(f"cannot read times {args.times}: {exc.strerror}") from None
    else:
        table = phone_times()
    unknown = sorted(set(table) - set(METHODS))
    if unknown:
        raise DataError(f"timing table has unknown method(s): {', '.join(unknown)}")
    mesh = read_model(args.model)
    obs = []
    for method in METHODS:
        if method in table:
            plan = make_plan(cfg, mesh, method, cfg.plan)
            obs.append((plan, table[method].times))
    result = calibrate(obs)
    out = time_section(result.model)
    out += f"# rms relative error {result.rms_relative_error:.4f}\n"
    write_out(args.output, out)
    return 0


def cmd_report(args, cfg: Config) -> int:
    program = read_program(args.program)
    check_geometry(program, cfg)
    c = program_counts(program)
    coil, felt, system = estimate_time(counts_for_time(c), cfg.models.time)
    lines = [
        f"instructions {len(program.commands)}",
        f"horizontal_cycles {c.horizontal_cycles:.6f}",
        f"crossed_cycles {c.crossed_cycles:.6f}",
        f"punches {int(c.punches)}",
        f"repositions {int(c.repositions)}",
        f"tilt_reversals {c.tilt_reversals}",
        f"axle_steps {c.rot_steps}",
        f"coil_s {coil:.3f}",
        f"felt_s {felt:.3f}",
        f"system_s {system:.3f}",
        f"total_s {coil + felt + system:.3f}",
    ]
    write_out(args.output, "\n".join(lines) + "\n")
    return 0


# parser -----------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="feltloom", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="config file (default: $FELTLOOM_CONFIG, then built-ins)")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def model_arg(p, required=True, default=None):
        p.add_argument("--model", required=required, default=default,
                       help="STL file, or fixture:<sphere|cylinder|phone|fish>")

    p = sub.add_parser("validate", help="check a model fits the work envelope")
    p.add_argument("model", help="STL file, or fixture:<name>")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("plan", help="plan a model with one method and emit its program")
    p.add_argument("--method", required=True, choices=METHODS)
    model_arg(p)
    p.add_argument("-o", "--output", help="program file; the summary then goes to stdout")
    p.add_argument("--line-width", type=float)
    p.add_argument("--ratio", type=int, help="crossed-coiling ratio in percent")
    p.add_argument("--tension")
    p.add_argument("--material")
    p.add_argument("--needle", help="<tip>_<gauge>, e.g. triangle_thick")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("emit", help="parse a program and write it in canonical form")
    p.add_argument("program", help="program file, or - for stdin")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_emit)

    p = sub.add_parser("simulate", help="run a program through the density simulator")
    p.add_argument("program", help="program file, or - for stdin")
    p.add_argument("--seed", type=int, default=1, help="first seed (default 1)")
    p.add_argument("--seeds", type=int, help="run this many seeds and report the volume spread")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for --seeds")
    p.add_argument("--dump", help="write the density field as 'z r theta mass' rows")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="fit the time model to measured times")
    p.add_argument("--times", help="CSV of method,felting,coiling,system (default: shipped "
                                   "phone measurements)")
    model_arg(p, required=False, default="fixture:phone")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("report", help="work counts and time estimate of a program")
    p.add_argument("program", help="program file, or - for stdin")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_report)
    return ap


DOMAIN_ERRORS = (ConfigError, DataError, MeshError, ParseError, EmitError, ProcessError,
                 SimulationError, ValueError)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("feltloom: a command is required (see --help)")
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except DOMAIN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except KeyboardInterrupt:
        return 130


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
