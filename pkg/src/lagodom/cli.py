"""Command-line interface: simulate scans, run odometry, evaluate, dump maps."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .config import Config, ConfigError, load_config
from .evaluation import (
    EvaluationError,
    Trajectory,
    evaluate_windows,
    timing_stats,
)
from .fileio import (
    FileFormatError,
    read_scan,
    read_trajectory,
    write_eval_csv,
    write_map,
    write_scan,
    write_timing_csv,
    write_trajectory,
)
from .pipeline import create
from .sim import SimSpecError, generate_trajectory, load_sim_spec, simulate_scan

log = logging.getLogger("lagodom.cli")


def _parse_windows(raw: str):
    try:
        values = [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad window list {raw!r}")
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("windows must be positive meters")
    return values


def _add_run_arguments(sub):
    group = sub.add_mutually_exclusive_group(required=True)
    group.add_argument("--scans", help="directory of scan files")
    group.add_argument("--sim", help="formsim v1 spec to simulate from")
    sub.add_argument("--config", help="'key = value' parameter file")
    sub.add_argument("--seed", type=int, default=None,
                     help="simulation seed (default: the spec's)")
    sub.add_argument("--smoothing", choices=["on", "off"], default=None)
    sub.add_argument("--point-features", choices=["on", "off"], default=None)


def _load_run_config(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    overrides = {}
    if args.smoothing is not None:
        overrides["smoothing"] = args.smoothing == "on"
    if args.point_features is not None:
        overrides["point_features"] = args.point_features == "on"
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg.validate()


def _simulated_scans(spec_path, seed):
    spec = load_sim_spec(spec_path)
    base = spec.sensor.seed if seed is None else seed
    traj = generate_trajectory(spec.trajectory, seed=base)
    scans = [
        simulate_scan(
            spec.scene, spec.sensor, pose, seed=1000 * base + i,
            index=i, timestamp=t,
        )
        for i, (t, pose) in enumerate(traj)
    ]
    gt = Trajectory.from_rows(traj)
    return scans, gt, spec


def _stored_scans(scan_dir):
    paths = sorted(Path(scan_dir).glob("scan_*.txt"))
    if not paths:
        raise FileFormatError(f"{scan_dir}: no scan files (scan_*.txt)")
    return [read_scan(p) for p in paths]


def _run_odometry(args):
    cfg = _load_run_config(args)
    gt = None
    if args.sim:
        scans, gt, _ = _simulated_scans(args.sim, args.seed)
    else:
        scans = _stored_scans(args.scans)
    session = create(cfg)
    for scan in scans:
        session.push(scan)
    result = session.finish()
    est = Trajectory(
        np.array([e.timestamp for e in result.estimates]),
        [e.pose for e in result.estimates],
    )
    return est, result, gt


def cmd_sim(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scans, gt, spec = _simulated_scans(args.spec, args.seed)
    for scan in scans:
        write_scan(
            out / f"scan_{scan.index:06d}.txt", scan,
            min_range=spec.sensor.min_range, max_range=spec.sensor.max_range,
        )
    write_trajectory(out / "gt.txt", gt)
    log.info("wrote %d scans and gt.txt to %s", len(scans), out)
    return 0


def cmd_odom(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    est, result, gt = _run_odometry(args)
    write_trajectory(out / "est.txt", est)
    write_map(out / "map.txt", result.map)
    write_timing_csv(out / "timing.csv", result.estimates)
    if gt is not None:
        write_trajectory(out / "gt.txt", gt)
    stats = timing_stats([e.seconds for e in result.estimates])
    log.info(
        "processed %d scans at %.1f Hz mean (min %.1f Hz)",
        stats.n_scans, stats.mean_hz, stats.min_hz,
    )
    return 0


def cmd_eval(args) -> int:
    gt = read_trajectory(args.gt)
    est = read_trajectory(args.est)
    rows = evaluate_windows(gt, est, args.rte_windows, max_dt=args.max_dt)
    for j, rte, count in rows:
        if rte is None:
            log.warning("window %g m exceeds the shared trajectory", j)
            print(f"rte[{j:g} m] = n/a (0 subsequences)")
        else:
            print(f"rte[{j:g} m] = {rte:.6f} m over {count} subsequences")
    if args.out:
        write_eval_csv(args.out, rows)
    return 0


def cmd_map_dump(args) -> int:
    _, result, _ = _run_odometry(args)
    write_map(args.out, result.map)
    log.info("wrote %d map points to %s", len(result.map), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lagodom",
        description="Fixed-lag smoothing LiDAR odometry toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_odom = sub.add_parser("odom", help="run odometry over scans")
    _add_run_arguments(p_odom)
    p_odom.add_argument("--out", required=True, help="output directory")
    p_odom.set_defaults(func=cmd_odom)

    p_eval = sub.add_parser("eval", help="windowed relative error of est vs gt")
    p_eval.add_argument("--gt", required=True)
    p_eval.add_argument("--est", required=True)
    p_eval.add_argument("--rte-windows", type=_parse_windows,
                        default=[1.0, 30.0], help="comma list of meters")
    p_eval.add_argument("--max-dt", type=float, default=0.05)
    p_eval.add_argument("--out", help="CSV destination")
    p_eval.set_defaults(func=cmd_eval)

    p_sim = sub.add_parser("sim", help="generate scan files from a spec")
    p_sim.add_argument("--spec", required=True)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.set_defaults(func=cmd_sim)

    p_map = sub.add_parser("map-dump", help="run odometry, write only the map")
    _add_run_arguments(p_map)
    p_map.add_argument("--out", required=True, help="map file destination")
    p_map.set_defaults(func=cmd_map_dump)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileFormatError, ConfigError, SimSpecError, EvaluationError,
            OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
