"""Command-line entry point: ``atma parse|calibrate|thresholds|simulate``.

Exit codes: 0 success, 2 I/O failure, 3 input format or validation failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from typing import Optional

from . import __version__
from .calibration import (
    CalibrationError,
    calibrate_deceleration,
    calibrate_gap_error,
    decel_to_dict,
    gap_error_to_dict,
    read_stop_runs,
)
from .guidance import THRESHOLDS, UNITS, ModelParams, parse_grid, plot_series, threshold_table
from .logs import (
    FOLLOWER_HEADER,
    LEADER_HEADER,
    LogFormatError,
    LogSession,
    gap_error_series,
    parse_follower_log,
    parse_leader_log,
    session_summary,
    sniff_log_kind,
)
from .simulator import (
    SimConfig,
    Trajectory,
    analytic_stop,
    simulate_emergency_stop,
    simulate_intersection,
    simulate_lane_change,
    simulate_newell_follower,
    verify_thresholds,
)
from .units import Deceleration, Distance, Duration, Speed

LOG = logging.getLogger("atma")

EXIT_OK, EXIT_IO, EXIT_FORMAT = 0, 2, 3

# flag dest -> flat ModelParams key
PARAM_FLAGS = {
    "alpha_lt": "alpha_lt",
    "alpha_gv_emergency": "alpha_gv_emergency",
    "alpha_gv_comfort": "alpha_gv_comfort",
    "t_rps": "t_rps",
    "epsilon": "epsilon",
    "gap_command": "gap_command",
    "truck_length": "truck_length",
    "lane_width": "lane_width",
    "lanes_crossed": "lanes_crossed",
    "median_offset": "median_offset",
    "ffs_mph": "ffs_mph",
}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_FORMAT):
        super().__init__(message)
        self.code = code


def _json_default(obj):
    if hasattr(obj, "value"):
        return obj.value
    if hasattr(obj, "isoformat"):
        return obj.isoformat()
    if hasattr(obj, "tolist"):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _clean(obj):
    # JSON has no inf/nan
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _dump_json(data) -> str:
    return json.dumps(_clean(data), indent=2, default=_json_default) + "\n"


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        try:
            with open(out, "w", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise CliError(f"cannot write {out}: {exc}", EXIT_IO) from None
    else:
        sys.stdout.write(text)


def _load_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise CliError(f"{path}: expected a JSON object")
    return data


def _check_readable(path: str) -> None:
    if not os.path.isfile(path) or not os.access(path, os.R_OK):
        raise CliError(f"cannot read {path}", EXIT_IO)


# ---------------------------------------------------------------- config

def _add_param_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model parameters (override --config)")
    g.add_argument("--alpha-lt", type=float, help="truck max deceleration, ft/s^2 (12.4)")
    g.add_argument("--alpha-gv-emergency", type=float,
                   help="general-vehicle emergency deceleration, ft/s^2 (14.8)")
    g.add_argument("--alpha-gv-comfort", type=float,
                   help="general-vehicle comfortable deceleration, ft/s^2 (11.2)")
    g.add_argument("--t-rps", type=float, help="driver reaction time, s (2.5)")
    g.add_argument("--epsilon", type=float, help="follower gap-error allowance, ft (6)")
    g.add_argument("--gap-command", type=float, help="command gap L_gap, ft (100)")
    g.add_argument("--truck-length", type=float, help="truck length, ft (40)")
    g.add_argument("--lane-width", type=float, help="lane width, ft (12)")
    g.add_argument("--lanes-crossed", type=int, help="lanes crossed going straight (4)")
    g.add_argument("--median-offset", type=float, help="turn radius offset, ft (6)")
    g.add_argument("--ffs-mph", type=float, help="free-flow speed, mph (70)")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--dt", type=float, help="simulation step, s (0.1)")


def resolve_config(args) -> dict:
    """Merge defaults < config file < flags. Returns params, sim config, grid."""
    file_cfg = _load_json(args.config) if getattr(args, "config", None) else {}
    model_cfg = dict(file_cfg.get("model", {}))
    if "model" not in file_cfg:
        model_cfg = {k: v for k, v in file_cfg.items() if k not in ("sim", "grid", "gaps")}
    for dest, key in PARAM_FLAGS.items():
        val = getattr(args, dest, None)
        if val is not None:
            model_cfg[key] = val
    try:
        params = ModelParams.from_dict(model_cfg).check_operating_range()
    except (ValueError, TypeError) as exc:
        raise CliError(f"invalid model parameters: {exc}") from None

    sim_cfg = dict(file_cfg.get("sim", {}))
    if getattr(args, "dt", None) is not None:
        sim_cfg["dt"] = args.dt
    try:
        sim = SimConfig(**sim_cfg)
    except (ValueError, TypeError) as exc:
        raise CliError(f"invalid sim config: {exc}") from None

    grid_spec = getattr(args, "grid", None) or file_cfg.get("grid") or "5:15:1"
    try:
        grid = parse_grid(str(grid_spec))
        if any(v <= 0 for v in grid):
            raise ValueError("grid speeds must be positive")
    except ValueError as exc:
        raise CliError(f"invalid grid {grid_spec!r}: {exc}") from None
    return {"params": params, "sim": sim, "grid": grid, "grid_spec": str(grid_spec),
            "gaps": file_cfg.get("gaps")}


def _effective(cfg: dict) -> dict:
    return {"model": cfg["params"].to_dict(), "sim": {"dt": cfg["sim"].dt,
            "horizon": cfg["sim"].horizon}, "grid": cfg["grid_spec"]}


# ---------------------------------------------------------------- parse

def _parse_modes(text: Optional[str]):
    if text is None or text.lower() == "all":
        return None
    return [m.strip().upper() for m in text.split(",") if m.strip()]


def cmd_parse(args) -> int:
    session = LogSession()
    parsed_out = []
    for path in args.paths:
        _check_readable(path)
        kind = args.vehicle
        if kind == "auto":
            kind = sniff_log_kind(path)
            if kind is None:
                raise CliError(f"{path}: header matches neither leader nor follower layout")
        parser = parse_leader_log if kind == "leader" else parse_follower_log
        try:
            parsed = parser(path)
        except LogFormatError as exc:
            raise CliError(f"{path}: {exc}") from None
        except OSError as exc:
            raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from None
        for w in parsed.warnings:
            print(f"warning: {path}: {w}", file=sys.stderr)
        (session.leader if kind == "leader" else session.follower).extend(parsed.records)
        session.sources.append(path)
        session.warnings.extend(parsed.warnings)
        parsed_out.append((path, kind, parsed))

    if args.summary:
        try:
            summary = session_summary(session, _parse_modes(args.modes))
        except ValueError as exc:
            raise CliError(str(exc)) from None
        _emit(_dump_json(summary), args.out)
        return EXIT_OK

    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        kinds = {k for _, k, _ in parsed_out}
        if len(kinds) > 1:
            raise CliError("csv output needs logs of a single vehicle kind")
        w.writerow(LEADER_HEADER if kinds == {"leader"} else FOLLOWER_HEADER)
        for _, _, parsed in parsed_out:
            for rec in parsed.records:
                w.writerow(rec.to_row())
        _emit(buf.getvalue(), args.out)
        return EXIT_OK

    payload = {
        "files": [
            {
                "source": path,
                "vehicle": kind,
                "records": [vars(r) for r in parsed.records],
                "warnings": [{"row": w.row, "message": w.message} for w in parsed.warnings],
            }
            for path, kind, parsed in parsed_out
        ]
    }
    _emit(_dump_json(payload), args.out)
    return EXIT_OK


# ---------------------------------------------------------------- calibrate

def _read_gap_errors(path: str, modes) -> list[float]:
    kind = sniff_log_kind(path)
    if kind == "follower":
        parsed = parse_follower_log(path)
        for w in parsed.warnings:
            print(f"warning: {path}: {w}", file=sys.stderr)
        return gap_error_series(parsed.records, modes).tolist()
    if kind == "leader":
        raise CliError(f"{path}: leader logs carry no gap data")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise CliError(f"{path}: empty gap-error file")
    header = [c.strip().lower() for c in rows[0]]
    col = 0
    body = rows
    try:
        float(rows[0][0])
    except ValueError:
        body = rows[1:]
        names = [n for n in ("gap_error_ft", "gap_error", "error") if n in header]
        if names:
            col = header.index(names[0])
        elif len(header) != 1:
            raise CliError(f"{path}: no gap_error column") from None
    try:
        return [float(r[col]) for r in body]
    except (ValueError, IndexError) as exc:
        raise CliError(f"{path}: bad gap-error value: {exc}") from None


def cmd_calibrate(args) -> int:
    out = {"metadata": {"tool": "atma", "version": __version__}}
    if args.stops:
        _check_readable(args.stops)
        try:
            cal = calibrate_deceleration(read_stop_runs(args.stops))
        except CalibrationError as exc:
            raise CliError(str(exc)) from None
        out["deceleration"] = decel_to_dict(cal)
        print(f"recommended alpha_lt = {cal.max_decel:.2f} ft/s^2 "
              f"(rounded {cal.max_decel:.1f})", file=sys.stderr)
    if args.gap_errors:
        _check_readable(args.gap_errors)
        try:
            errors = _read_gap_errors(args.gap_errors, _parse_modes(args.modes))
            cal = calibrate_gap_error(errors, args.percentile / 100.0, args.bin_width)
        except (CalibrationError, LogFormatError, ValueError) as exc:
            raise CliError(f"{args.gap_errors}: {exc}") from None
        for w in cal.warnings:
            print(f"warning: {w}", file=sys.stderr)
        out["gap_error"] = gap_error_to_dict(cal)
        out["gap_error"]["modes"] = args.modes
    _emit(_dump_json(out), args.out)
    return EXIT_OK


# ---------------------------------------------------------------- thresholds

def _table_text(table) -> str:
    names = list(THRESHOLDS)
    head = ["mph"] + [f"{n} [{UNITS[n]}]" for n in names] + [f"SAF {n}" for n in names]
    lines = ["  ".join(f"{h:>14}" for h in head)]
    for row in table.rows():
        cells = [f"{row['speed_mph']:>14g}"]
        cells += [f"{row[n]:>14.2f}" for n in names]
        cells += [f"{row['saf_' + n]:>14.3f}" for n in names]
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n"


def cmd_thresholds(args) -> int:
    cfg = resolve_config(args)
    try:
        table = threshold_table(cfg["grid"], cfg["params"])
    except ValueError as exc:
        raise CliError(str(exc)) from None

    if args.format == "json":
        data = table.to_dict()
        data["effective_config"] = _effective(cfg)
        _emit(_dump_json(data), args.out)
    elif args.format == "csv":
        buf = io.StringIO()
        rows = table.rows()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(v)) for k, v in r.items()})
        _emit(buf.getvalue(), args.out)
    elif args.format == "table":
        _emit(_table_text(table), args.out)
    else:
        out_dir = args.out or "."
        try:
            os.makedirs(out_dir, exist_ok=True)
            for name, arr in plot_series(table).items():
                with open(os.path.join(out_dir, f"{name}.txt"), "w") as fh:
                    fh.write(f"# speed_mph {name}_{UNITS[name]}\n")
                    for v, y in arr:
                        fh.write(f"{v!r} {y!r}\n")
        except OSError as exc:
            raise CliError(f"cannot write plot files: {exc}", EXIT_IO) from None
    return EXIT_OK


# ---------------------------------------------------------------- simulate

def _num(d: dict, key: str) -> float:
    if key not in d:
        raise CliError(f"scenario missing {key!r}")
    try:
        val = float(d[key])
    except (TypeError, ValueError):
        raise CliError(f"scenario field {key!r} must be numeric") from None
    if not math.isfinite(val):
        raise CliError(f"scenario field {key!r} must be finite")
    return val


def run_scenario(scn: dict, params: ModelParams, sim: SimConfig,
                 trajectory_out: Optional[str] = None) -> dict:
    kind = scn.get("type")
    try:
        if "params" in scn:
            params = ModelParams.from_dict(scn["params"], base=params)
        if "sim" in scn:
            sim = SimConfig(**{"dt": sim.dt, "horizon": sim.horizon, **scn["sim"]})
        if kind == "emergency_stop":
            v = Speed.from_mph(_num(scn, "speed_mph"))
            a = Deceleration(_num(scn, "decel_fps2") if "decel_fps2" in scn
                             else params.alpha_lt.value)
            r = Duration(float(scn.get("reaction_s", 0.0)))
            res = simulate_emergency_stop(v, a, sim, r)
            ref = analytic_stop(v, a)
            return {"type": kind, "stop_time_s": res.stop_time.value,
                    "stop_distance_ft": res.stop_distance.value,
                    "analytic_braking_time_s": ref.stop_time.value,
                    "analytic_braking_distance_ft": ref.stop_distance.value}
        if kind == "lane_change":
            v = Speed.from_mph(_num(scn, "speed_mph"))
            res = simulate_lane_change(Duration(_num(scn, "headway_gap_s")), v, params, sim)
            return {"type": kind, **res.to_dict()}
        if kind == "intersection":
            v = Speed.from_mph(_num(scn, "speed_mph"))
            res = simulate_intersection(Duration(_num(scn, "available_time_s")),
                                        scn.get("movement", "straight"), v, params, sim)
            return {"type": kind, **res.to_dict()}
        if kind == "newell":
            leader = scn.get("leader") or {}
            traj = Trajectory.from_knots(leader["times"], leader["positions"],
                                         int(leader.get("lane", 2)))
            fol = simulate_newell_follower(traj, Duration(_num(scn, "tau_s")),
                                           Distance(_num(scn, "d_ft")))
            if trajectory_out:
                fol.to_csv(trajectory_out)
            return {"type": kind, "follower": {"time_s": fol.t.tolist(),
                                               "position_ft": fol.x.tolist(),
                                               "speed_fps": fol.v.tolist(),
                                               "lane": fol.lane.tolist()}}
    except CliError:
        raise
    except OSError as exc:
        raise CliError(f"cannot write trajectory: {exc}", EXIT_IO) from None
    except (ValueError, TypeError, KeyError) as exc:
        raise CliError(f"malformed {kind} scenario: {exc}") from None
    raise CliError(f"unknown scenario type {kind!r}")


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    out = {"metadata": {"tool": "atma", "version": __version__},
           "effective_config": _effective(cfg)}
    code = EXIT_OK
    if not args.scenario and not args.verify_thresholds:
        raise CliError("nothing to do: give --scenario and/or --verify-thresholds")
    if args.scenario:
        scn = _load_json(args.scenario)
        out["result"] = run_scenario(scn, cfg["params"], cfg["sim"], args.trajectory_out)
    if args.verify_thresholds:
        gaps = args.gaps or cfg["gaps"] or [100.0, 200.0]
        if isinstance(gaps, str):
            gaps = [float(g) for g in gaps.split(",")]
        report = verify_thresholds(cfg["grid"], gaps, cfg["params"], cfg["sim"])
        out["verification"] = report
        print(f"max |closed-form - simulated| = {report['max_abs_gap_s']:.2e} s "
              f"(dt = {cfg['sim'].dt})", file=sys.stderr)
        if not report["within_one_dt"]:
            code = 1
    _emit(_dump_json(out), args.out)
    return code


# ---------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="atma", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"atma {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="parse leader/follower telemetry logs")
    p.add_argument("paths", nargs="+")
    p.add_argument("--vehicle", choices=("leader", "follower", "auto"), default="auto")
    p.add_argument("--summary", action="store_true", help="print session summary only")
    p.add_argument("--modes", default=None,
                   help="modes feeding summary gap-error stats, e.g. RUN,ROLLOUT (default all)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("calibrate", help="calibrate deceleration and gap-error allowance")
    p.add_argument("--stops", help="stop-test CSV")
    p.add_argument("--gap-errors", help="follower log or one-column gap-error CSV")
    p.add_argument("--modes", default="RUN", help="follower modes to keep (default RUN)")
    p.add_argument("--percentile", type=float, default=95.0)
    p.add_argument("--bin-width", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("thresholds", help="evaluate guidance thresholds over a speed grid")
    _add_param_flags(p)
    p.add_argument("--grid", help="start:stop[:step] in mph (default 5:15:1)")
    p.add_argument("--format", choices=("json", "csv", "plot", "table"), default="json")
    p.add_argument("--out", help="output file, or directory for --format plot")
    p.set_defaults(func=cmd_thresholds)

    p = sub.add_parser("simulate", help="run a scenario or verify thresholds by simulation")
    _add_param_flags(p)
    p.add_argument("--scenario", help="scenario JSON file")
    p.add_argument("--verify-thresholds", action="store_true")
    p.add_argument("--grid", help="start:stop[:step] in mph (default 5:15:1)")
    p.add_argument("--gaps", help="comma-separated command gaps, ft (default 100,200)")
    p.add_argument("--trajectory-out", help="CSV path for a newell scenario's follower path")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if args.command == "calibrate" and not (args.stops or args.gap_errors):
        parser.error("calibrate needs --stops and/or --gap-errors")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
