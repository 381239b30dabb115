"""Command-line front end: ``smllg {check,mesh-info,run,ensemble,convergence}``."""
from __future__ import annotations

import argparse
import logging
import shlex
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence

from .checks import SUITES, run_checks
from .config import SimConfig, parse_config
from .ensemble import StudyRow, convergence_study, run_ensemble
from .errors import ConfigError, InvariantViolation, SimulationError, SolverError
from .mesh import verify_offdiagonal_condition, write_mesh
from .output import (write_energy_csv, write_error_csv, write_manifest, write_paths_csv,
                     write_plot_script)
from .stepper import mesh_for

log = logging.getLogger("smllg")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", help="key = value config file")
    p.add_argument("--set", dest="overrides", metavar="KEY=VALUE", action="append", default=[],
                   help="override one config key (repeatable)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides config 'out')")
    p.add_argument("--workers", metavar="N", type=int, default=1, help="parallel path workers")
    p.add_argument("--retain-paths", metavar="N", type=int,
                   help="individual path traces kept in energy.csv")
    p.add_argument("--allow-unstable-theta", action="store_true",
                   help="run theta < 1/2 even when k >= h^2/2")
    p.add_argument("--no-wallclock", action="store_true",
                   help="write 0 in the wallclock_s column so reruns are byte-identical")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="smllg",
                                     description="Stochastic Maxwell-LLG finite element solver")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("check", parents=[common], help="run the self-check suites")
    p.add_argument("--suite", action="append", choices=sorted(SUITES),
                   help="run only this suite (repeatable)")
    p = sub.add_parser("mesh-info", parents=[common], help="describe the configured mesh")
    p.add_argument("--dump", metavar="FILE", help="also write the mesh in text format")
    sub.add_parser("run", parents=[common], help="simulate a single Wiener path (index 0)")
    sub.add_parser("ensemble", parents=[common], help="Monte Carlo over L paths")
    sub.add_parser("convergence", parents=[common], help="error study over n_list x k_ratios")
    return parser


def resolve_config(args) -> SimConfig:
    overrides = list(args.overrides)
    if args.out is not None:
        overrides.append(f"out = {args.out}")
    if args.retain_paths is not None:
        overrides.append(f"retain = {args.retain_paths}")
    if args.allow_unstable_theta:
        overrides.append("allow_unstable_theta = true")
    return parse_config(args.config, overrides)


def _out_dir(config: SimConfig) -> Path:
    out = Path(config.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"out: cannot create output directory {out}: {exc}") from None
    return out


def _finish(out: Path, config: SimConfig, argv: Sequence[str], extra: dict) -> None:
    write_plot_script(out / "plot.gp")
    write_manifest(out / "manifest.txt", config, "smllg " + " ".join(shlex.quote(a) for a in argv),
                   extra)


def cmd_check(config: SimConfig, args) -> int:
    results = run_checks(config, args.suite)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.seconds:6.2f}s  {r.detail}")
    return 0 if all(r.passed for r in results) else InvariantViolation.exit_code


def cmd_mesh_info(config: SimConfig, args) -> int:
    mesh = mesh_for(config)
    report = verify_offdiagonal_condition(mesh)
    print(f"n = {config.n}, h = 1/n = {config.h:.6g}, largest tet diameter {mesh.h:.6g}")
    print(f"vertices {mesh.n_vertices}, edges {mesh.n_edges}, tets {mesh.n_tets}")
    print(f"ferromagnet tets {len(mesh.d_tets)}, ferromagnet vertices {mesh.n_d_vertices}")
    print(f"stiffness off-diagonal condition: {'pass' if report.passed else 'FAIL'}"
          f" (largest off-diagonal {report.worst_entry:.3e})")
    if args.dump:
        with open(args.dump, "w") as fh:
            write_mesh(mesh, fh)
    return 0


def _ensemble_outputs(config: SimConfig, args, argv, retain: int) -> int:
    out = _out_dir(config)
    t0 = time.perf_counter()
    res = run_ensemble(config, workers=args.workers, retain=retain)
    wall = time.perf_counter() - t0
    write_energy_csv(out / "energy.csv", res)
    write_paths_csv(out / "paths.csv", res)
    row = StudyRow(config.n, config.k, res.mean_sphere_error_sq, res.L, wall, config.J,
                   config.k * config.n)
    write_error_csv(out / "error.csv", [row], wallclock=not args.no_wallclock)
    _finish(out, config, argv, {"paths": res.L, "mean_sphere_error_sq": repr(res.mean_sphere_error_sq)})
    print(f"L = {res.L}: E[E^2] = {res.mean_sphere_error_sq:.6e}; wrote {out}")
    return 0


def cmd_run(config: SimConfig, args, argv) -> int:
    return _ensemble_outputs(config.replace(L=1), args, argv, retain=1)


def cmd_ensemble(config: SimConfig, args, argv) -> int:
    return _ensemble_outputs(config, args, argv, retain=config.retain)


def cmd_convergence(config: SimConfig, args, argv) -> int:
    out = _out_dir(config)
    rows = convergence_study(config, workers=args.workers)
    write_error_csv(out / "error.csv", rows, wallclock=not args.no_wallclock)
    _finish(out, config, argv, {"rows": len(rows)})
    for r in rows:
        print(f"n = {r.n:3d}  k = {r.k:.6g}  E[E^2] = {r.mean_sphere_error_sq:.6e}  ({r.wallclock:.1f}s)")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        if args.command == "check":
            return cmd_check(config, args)
        if args.command == "mesh-info":
            return cmd_mesh_info(config, args)
        handler = {"run": cmd_run, "ensemble": cmd_ensemble, "convergence": cmd_convergence}
        return handler[args.command](config, args, argv)
    except (ConfigError, SolverError, InvariantViolation, SimulationError) as exc:
        print(f"smllg: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"smllg: cannot write output: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
