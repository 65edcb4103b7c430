"""Calibrate truck deceleration and follow-gap error from field data."""
from __future__ import annotations

import csv
import logging
import math
import os
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .units import Deceleration, Distance, Duration, Speed

LOG = logging.getLogger(__name__)

STOP_CSV_COLUMNS = ("button", "set_gap", "speed_mph", "run", "stop_time_s", "stop_dist_ft")


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class StopTestRun:
    set_speed: Speed
    stop_time: Duration
    stop_distance: Distance
    button: str = ""
    run: int = 1
    set_gap: str = ""

    @property
    def label(self) -> str:
        return f"{self.button or 'stop'} {self.set_speed.mph:g} mph run {self.run}"

    @property
    def decel(self) -> float:
        return self.set_speed.value / self.stop_time.value

    @property
    def distance_decel(self) -> Optional[float]:
        # v^2 / 2d, diagnostic only
        if self.stop_distance.value <= 0:
            return None
        return self.set_speed.value ** 2 / (2.0 * self.stop_distance.value)


@dataclass
class DecelGroup:
    speed_mph: float
    runs: list[StopTestRun]
    per_run_decel: list[float]
    avg_decel: float
    max_decel: float
    sd_stop_time: float
    sd_stop_distance: float
    distance_decel: list[Optional[float]]


@dataclass
class DecelCalibration:
    groups: list[DecelGroup]
    per_run_decel: list[float]
    avg_decel: float
    max_decel: float

    @property
    def alpha_lt(self) -> Deceleration:
        """Recommended design deceleration: the largest observed."""
        return Deceleration(self.max_decel)


@dataclass
class GapErrorCalibration:
    epsilon: float  # ft
    sample_count: int
    positive_count: int
    percentile: float
    bin_edges: list[float] = field(default_factory=list)
    bin_counts: list[int] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def epsilon_distance(self) -> Distance:
        return Distance(self.epsilon)


def population_sd(samples: Sequence[float]) -> float:
    """Standard deviation with divisor n."""
    values = [float(x) for x in samples]
    if not values:
        raise CalibrationError("population_sd needs at least one sample")
    mean = math.fsum(values) / len(values)
    return math.sqrt(math.fsum((x - mean) ** 2 for x in values) / len(values))


def calibrate_deceleration(runs: Iterable[StopTestRun]) -> DecelCalibration:
    """Estimate per-run deceleration as set speed / stop time.

    Runs are grouped by set speed (first-seen order) and sorted by run index
    within each group.
    """
    runs = list(runs)
    if not runs:
        raise CalibrationError("no stop-test runs supplied")
    for r in runs:
        if r.stop_time.value <= 0:
            raise CalibrationError(f"{r.label}: stop time must be positive")

    grouped: "OrderedDict[float, list[StopTestRun]]" = OrderedDict()
    for r in runs:
        grouped.setdefault(r.set_speed.value, []).append(r)

    groups = []
    for _, members in grouped.items():
        members = sorted(members, key=lambda r: r.run)
        decels = [r.decel for r in members]
        groups.append(DecelGroup(
            speed_mph=members[0].set_speed.mph,
            runs=members,
            per_run_decel=decels,
            avg_decel=math.fsum(decels) / len(decels),
            max_decel=max(decels),
            sd_stop_time=population_sd([r.stop_time.value for r in members]),
            sd_stop_distance=population_sd([r.stop_distance.value for r in members]),
            distance_decel=[r.distance_decel for r in members],
        ))

    all_decels = [d for g in groups for d in g.per_run_decel]
    return DecelCalibration(
        groups=groups,
        per_run_decel=all_decels,
        avg_decel=math.fsum(all_decels) / len(all_decels),
        max_decel=max(all_decels),
    )


def nearest_rank(values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile: the ceil(q*n)-th smallest value (1-based)."""
    if not 0 < q <= 1:
        raise ValueError(f"quantile must be in (0, 1], got {q}")
    ordered = sorted(values)
    if not ordered:
        raise ValueError("nearest_rank of empty sequence")
    # round() guards against 0.95*100 = 95.00000000000001
    rank = max(1, math.ceil(round(q * len(ordered), 9)))
    return ordered[rank - 1]


def calibrate_gap_error(errors: Sequence[float], percentile: float = 0.95,
                        bin_width: float = 1.0) -> GapErrorCalibration:
    """Follow-distance error allowance from signed gap errors.

    Only positive errors (follower closer than commanded) count toward the
    percentile. The histogram covers all errors for reporting.
    """
    arr = np.asarray(errors, dtype=float)
    if arr.size == 0:
        raise CalibrationError("gap error series is empty")
    if bin_width <= 0:
        raise CalibrationError("bin_width must be positive")

    positive = arr[arr > 0]
    warnings = []
    if positive.size == 0:
        warnings.append("no positive gap errors; epsilon set to 0")
        LOG.warning(warnings[-1])
        epsilon = 0.0
    else:
        epsilon = float(nearest_rank(positive.tolist(), percentile))

    lo = math.floor(arr.min() / bin_width) * bin_width
    hi = math.ceil(arr.max() / bin_width) * bin_width
    if hi <= lo:
        hi = lo + bin_width
    edges = np.arange(lo, hi + bin_width / 2, bin_width)
    counts, edges = np.histogram(arr, bins=edges)
    return GapErrorCalibration(
        epsilon=epsilon,
        sample_count=int(arr.size),
        positive_count=int(positive.size),
        percentile=percentile,
        bin_edges=[float(e) for e in edges],
        bin_counts=[int(c) for c in counts],
        warnings=warnings,
    )


def read_stop_runs(path: str | os.PathLike) -> list[StopTestRun]:
    """Load stop-test runs from CSV with columns
    button,set_gap,speed_mph,run,stop_time_s,stop_dist_ft."""
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise CalibrationError(f"{path}: empty stop-test file")
        names = [n.strip().lower() for n in reader.fieldnames]
        missing = [c for c in STOP_CSV_COLUMNS if c not in names]
        if missing:
            raise CalibrationError(f"{path}: missing columns {', '.join(missing)}")
        runs = []
        for i, raw in enumerate(reader, start=1):
            row = {k.strip().lower(): (v or "").strip() for k, v in raw.items() if k}
            try:
                runs.append(StopTestRun(
                    set_speed=Speed.from_mph(float(row["speed_mph"])),
                    stop_time=Duration(float(row["stop_time_s"])),
                    stop_distance=Distance(float(row["stop_dist_ft"])),
                    button=row["button"],
                    run=int(row["run"]),
                    set_gap=row["set_gap"],
                ))
            except ValueError as exc:
                raise CalibrationError(f"{path}: row {i}: {exc}") from None
    if not runs:
        raise CalibrationError(f"{path}: no stop-test runs")
    return runs


def decel_to_dict(cal: DecelCalibration) -> dict:
    return {
        "alpha_lt_fps2": cal.max_decel,
        "avg_decel_fps2": cal.avg_decel,
        "max_decel_fps2": cal.max_decel,
        "per_run_decel_fps2": cal.per_run_decel,
        "groups": [
            {
                "speed_mph": g.speed_mph,
                "runs": [r.run for r in g.runs],
                "stop_time_s": [r.stop_time.value for r in g.runs],
                "stop_distance_ft": [r.stop_distance.value for r in g.runs],
                "per_run_decel_fps2": g.per_run_decel,
                "avg_decel_fps2": g.avg_decel,
                "max_decel_fps2": g.max_decel,
                "sd_stop_time_s": g.sd_stop_time,
                "sd_stop_distance_ft": g.sd_stop_distance,
                "distance_based_decel_fps2": g.distance_decel,
            }
            for g in cal.groups
        ],
        "rounded": {
            "alpha_lt_fps2": round(cal.max_decel, 1),
            "groups": [
                {
                    "speed_mph": g.speed_mph,
                    "avg_decel_fps2": round(g.avg_decel, 1),
                    "max_decel_fps2": round(g.max_decel, 1),
                    "sd_stop_time_s": round(g.sd_stop_time, 2),
                    "sd_stop_distance_ft": round(g.sd_stop_distance, 2),
                }
                for g in cal.groups
            ],
        },
    }


def gap_error_to_dict(cal: GapErrorCalibration) -> dict:
    return {
        "epsilon_ft": cal.epsilon,
        "percentile": cal.percentile,
        "rule": "nearest-rank over positive errors",
        "sample_count": cal.sample_count,
        "positive_count": cal.positive_count,
        "histogram": {"bin_edges_ft": cal.bin_edges, "counts": cal.bin_counts},
        "warnings": cal.warnings,
        "rounded": {"epsilon_ft": round(cal.epsilon)},
    }
