"""Command-line front end: ``run``, ``validate`` and ``sweep-epsilon``.

Exit status is 0 on success, 1 for configuration errors and 2 when the
solver or the continuation fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bvp import BvpError
from .config import (
    OUT_DIR_ENV,
    ConfigError,
    RunConfig,
    config_for_case,
    load_config,
    parse_formats,
)
from .continuation import ContinuationStall, run_continuation
from .postprocess import Trajectory, classify_arcs, diagnostics, harvested_energy, sample_trajectory


EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2

CSV_COLUMNS = ("t", "x1", "x2", "x3", "lam1", "lam2", "lam3", "u", "u_trig", "H1", "H", "E_cum")
CONVERGED = "converged"
FAILED = "solver-failure"


@dataclass
class RunSummary:
    case: str
    status: str
    energy_J: Optional[float] = None
    energy_MJ: Optional[float] = None
    arcs: Optional[str] = None
    arc_segments: list = field(default_factory=list)
    final_epsilon: Optional[float] = None
    mesh_points: Optional[int] = None
    wall_clock_s: float = 0.0
    diagnostics: Optional[dict] = None
    message: str = ""
    trace: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunSummary":
        return cls(**data)


def _fmt(x: float) -> str:
    # repr round-trips doubles exactly and never uses a locale decimal comma.
    return repr(float(x))


def write_trajectory_csv(path: Path, traj: Trajectory) -> None:
    cols = np.vstack(
        [
            traj.t,
            traj.z,
            traj.control.u,
            traj.control.u_trig,
            traj.control.h1,
            traj.control.hamiltonian,
            traj.energy,
        ]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in cols.T:
            writer.writerow([_fmt(v) for v in row])


def execute(cfg: RunConfig):
    """Continuation plus post-processing. Returns ``(summary, trajectory)``;
    the trajectory is ``None`` when the solve failed."""
    start = time.perf_counter()
    case = cfg.case
    try:
        solution, trace = run_continuation(case, cfg.schedule, cfg.solver, resolution=cfg.output.resolution)
    except ContinuationStall as exc:
        return (
            RunSummary(
                case=case.name,
                status=FAILED,
                wall_clock_s=time.perf_counter() - start,
                message=str(exc),
                trace=exc.trace.to_dict(),
            ),
            None,
        )
    eps = trace.successes()[-1].epsilon
    p = case.params.with_epsilon(eps)
    traj = sample_trajectory(solution, p, case.force, cfg.output.resolution)
    arcs = classify_arcs(traj, p)
    energy = harvested_energy(traj)
    report = diagnostics(traj, p, case.force, arcs)
    summary = RunSummary(
        case=case.name,
        status=CONVERGED,
        energy_J=energy,
        energy_MJ=energy / 1e6,
        arcs=arcs.label,
        arc_segments=arcs.to_list(),
        final_epsilon=eps,
        mesh_points=solution.mesh_points,
        wall_clock_s=time.perf_counter() - start,
        diagnostics=report.to_dict(),
        trace=trace.to_dict(),
    )
    return summary, traj


def _load(args) -> RunConfig:
    if args.config and args.case:
        raise ConfigError("--case", "give either --case or --config, not both")
    if args.config:
        return load_config(args.config)
    return config_for_case(args.case or "case1")


def _out_dir(cfg: RunConfig, args) -> Path:
    out = cfg.output_dir(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args) -> int:
    cfg = _load(args)
    formats = parse_formats(args.format) if args.format else cfg.output.formats
    out = _out_dir(cfg, args)
    summary, traj = execute(cfg)
    stem = cfg.case.name
    if "json" in formats or traj is None:
        (out / f"{stem}_summary.json").write_text(summary.to_json() + "\n")
    if traj is not None and "csv" in formats:
        write_trajectory_csv(out / f"{stem}_trajectory.csv", traj)
    if traj is None:
        print(f"{stem}: solver failure: {summary.message}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"{stem}: energy {summary.energy_MJ:.4f} MJ, arcs {summary.arcs}, {summary.mesh_points} nodes, {summary.wall_clock_s:.1f} s")
    return EXIT_OK


def cmd_validate(args) -> int:
    path = args.path or args.config
    if not path:
        raise ConfigError("--config", "validate needs a config path")
    cfg = load_config(path)
    print(f"{path}: valid ({cfg.case.name}, eps {cfg.schedule.eps_start:g} -> {cfg.schedule.eps_target:g})")
    return EXIT_OK


def parse_eps_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError("--eps", f"not a comma-separated list of numbers: {text!r}") from exc
    if not values or any(not (v > 0 and np.isfinite(v)) for v in values):
        raise ConfigError("--eps", "values must be positive and finite")
    if any(b >= a for a, b in zip(values, values[1:])):
        raise ConfigError("--eps", "values must be strictly decreasing")
    return values


def _sweep_config(cfg: RunConfig, eps_list: Sequence[float]) -> RunConfig:
    schedule = replace(cfg.schedule, eps_start=max(cfg.schedule.eps_start, eps_list[0]), eps_target=eps_list[-1])
    return replace(cfg, schedule=schedule, case=cfg.case.with_epsilon(schedule.eps_start))


def _sweep_point(cfg: RunConfig, eps: float):
    """One independent continuation down to ``eps`` (used with ``--jobs``)."""
    sub = _sweep_config(cfg, [eps])
    try:
        _, trace = run_continuation(sub.case, sub.schedule, sub.solver, resolution=sub.output.resolution)
    except (ContinuationStall, BvpError) as exc:
        return eps, None, str(exc)
    return eps, trace.successes()[-1].energy_J, ""


def sweep_epsilon(cfg: RunConfig, eps_list: Sequence[float], jobs: int = 1):
    """Energy at each listed epsilon. Returns ``(rows, error)`` where rows
    holds the points that converged, in list order."""
    eps_list = list(eps_list)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_point, [cfg] * len(eps_list), eps_list))
        rows = [(e, E) for e, E, _ in results if E is not None]
        errors = [msg for _, E, msg in results if E is None]
        return rows, (errors[0] if errors else "")

    sub = _sweep_config(cfg, eps_list)
    tf = sub.schedule.tf_target
    try:
        _, trace = run_continuation(sub.case, sub.schedule, sub.solver, eps_stops=eps_list, resolution=sub.output.resolution)
        error = ""
    except ContinuationStall as exc:
        trace, error = exc.trace, str(exc)
    rows = []
    for eps in eps_list:
        rec = trace.at_epsilon(eps, tf)
        if rec is None:
            break
        rows.append((eps, rec.energy_J))
    return rows, error


def cmd_sweep(args) -> int:
    cfg = _load(args)
    eps_list = parse_eps_list(args.eps)
    if args.jobs < 1:
        raise ConfigError("--jobs", "must be at least 1")
    out = _out_dir(cfg, args)
    rows, error = sweep_epsilon(cfg, eps_list, args.jobs)
    stem = cfg.case.name
    with open(out / f"{stem}_sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("epsilon", "energy_J"))
        for eps, energy in rows:
            writer.writerow((_fmt(eps), _fmt(energy)))
    points = out / f"{stem}_sweep_points"
    points.mkdir(exist_ok=True)
    for eps, energy in rows:
        (points / f"eps_{eps:.6g}.json").write_text(json.dumps({"epsilon": eps, "energy_J": energy, "energy_MJ": energy / 1e6}) + "\n")
    for eps, energy in rows:
        print(f"eps {eps:g}: {energy / 1e6:.6f} MJ")
    if error:
        print(f"{stem}: sweep stopped: {error}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="etrm-wec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log continuation progress (-vv for solver detail)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--case", help="built-in case: case1, case2 or case3")
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--out-dir", help=f"output directory (overrides ${OUT_DIR_ENV} and the config)")

    run = sub.add_parser("run", help="solve one case and write its trajectory and summary")
    common(run)
    run.add_argument("--format", help="comma-separated subset of csv,json")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="check a configuration without solving")
    val.add_argument("path", nargs="?", help="config file")
    val.add_argument("--config", help="config file (alternative to the positional path)")
    val.set_defaults(func=cmd_validate)

    sweep = sub.add_parser("sweep-epsilon", help="harvested energy at a decreasing list of epsilon values")
    common(sweep)
    sweep.add_argument("--eps", default="0.1,0.03,0.01,0.003", help="strictly decreasing comma-separated list")
    sweep.add_argument("--jobs", type=int, default=1, help="solve sweep points in parallel processes")
    sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.verbose < 2:
        logging.getLogger("etrm_wec.bvp").setLevel(logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BvpError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
