"""Closed-form operating thresholds for a leader/follower attenuator truck pair.

Covers minimum following distance for both trucks, the critical time
headway for a two-truck lane change, intersection clearance time, the
linear speed/spacing law, and a forward-difference speed elasticity (SAF).
All inputs and outputs are in canonical units (ft, s, ft/s, ft/s^2).
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .units import (
    Deceleration,
    Distance,
    Duration,
    RoadGeometry,
    Speed,
    VehicleSpec,
    intersection_length,
    left_turn_path_length,
)

GAP_COMMAND_RANGE = (25.0, 1500.0)  # ft, operator UI limits

# Published headline values that the formulas do not reproduce.
DEVIATION_NOTES = {
    "s_ft_upper": (
        "Published FT follow-distance upper endpoint is 30 ft; the formula "
        "v^2/(2*alpha_lt) + epsilon gives 25.5 ft at 15 mph. Formula value reported."),
    "t_turn_200ft_10mph": (
        "Published 25 s clearance at 10 mph is not reproduced by "
        "(48 + L_gap + 2*40)/v: L_gap=200 ft gives 22.4 s, L_gap=100 ft gives 15.5 s. "
        "Formula value reported."),
    "saf_ft_low": (
        "Published FT SAF low endpoint is 0.67; forward difference with dv=1 mph "
        "at 5 mph gives about 0.58. Rule: SAF = ((f(v+dv)-f(v))/f(v)) / (dv/v)."),
}


class DivergenceError(ValueError):
    """A threshold that divides by operating speed was asked for v = 0."""


def _default_truck() -> VehicleSpec:
    return VehicleSpec(max_decel=Deceleration(12.4), length=Distance(40.0),
                       reaction_time=Duration(2.5))


@dataclass(frozen=True)
class ModelParams:
    """Model inputs. Defaults are the calibrated field values.

    ``alpha_lt`` and ``t_rps`` drive every formula; ``truck`` contributes
    its length to the clearance-time models.
    """

    alpha_lt: Deceleration = Deceleration(12.4)
    alpha_gv_comfort: Deceleration = Deceleration(11.2)
    alpha_gv_emergency: Deceleration = Deceleration(14.8)
    t_rps: Duration = Duration(2.5)
    epsilon: Distance = Distance(6.0)
    gap_command: Distance = Distance(100.0)
    truck: VehicleSpec = field(default_factory=_default_truck)
    geometry: RoadGeometry = field(default_factory=RoadGeometry)
    ffs: Speed = Speed.from_mph(70.0)

    def check_operating_range(self) -> "ModelParams":
        lo, hi = GAP_COMMAND_RANGE
        if not lo <= self.gap_command.value <= hi:
            raise ValueError(
                f"gap_command {self.gap_command.value} ft outside operator range [{lo}, {hi}] ft")
        return self

    def to_dict(self) -> dict:
        return {
            "alpha_lt": self.alpha_lt.value,
            "alpha_gv_comfort": self.alpha_gv_comfort.value,
            "alpha_gv_emergency": self.alpha_gv_emergency.value,
            "t_rps": self.t_rps.value,
            "epsilon": self.epsilon.value,
            "gap_command": self.gap_command.value,
            "truck_length": self.truck.length.value,
            "lane_width": self.geometry.lane_width.value,
            "lanes_crossed": self.geometry.lanes_crossed,
            "median_offset": self.geometry.median_offset.value,
            "ffs_mph": self.ffs.mph,
        }

    @classmethod
    def from_dict(cls, data: dict, base: Optional["ModelParams"] = None) -> "ModelParams":
        """Build params from flat keys (see ``to_dict``); unknown keys raise."""
        p = base or cls()
        known = set(p.to_dict())
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown model parameter(s): {', '.join(sorted(unknown))}")
        d = {**p.to_dict(), **data}
        truck = replace(p.truck, length=Distance(float(d["truck_length"])),
                        max_decel=Deceleration(float(d["alpha_lt"])),
                        reaction_time=Duration(float(d["t_rps"])))
        geometry = RoadGeometry(lane_width=Distance(float(d["lane_width"])),
                                lanes_crossed=int(d["lanes_crossed"]),
                                median_offset=Distance(float(d["median_offset"])))
        return cls(
            alpha_lt=Deceleration(float(d["alpha_lt"])),
            alpha_gv_comfort=Deceleration(float(d["alpha_gv_comfort"])),
            alpha_gv_emergency=Deceleration(float(d["alpha_gv_emergency"])),
            t_rps=Duration(float(d["t_rps"])),
            epsilon=Distance(float(d["epsilon"])),
            gap_command=Distance(float(d["gap_command"])),
            truck=truck,
            geometry=geometry,
            ffs=Speed.from_mph(float(d["ffs_mph"])),
        )

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "ModelParams":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def with_(self, **overrides) -> "ModelParams":
        """Copy with flat-key overrides, e.g. ``p.with_(gap_command=200)``."""
        return ModelParams.from_dict(overrides, base=self)


def newell_spacing(v: Speed, tau: Duration, d: Distance) -> Distance:
    """Linear spacing/speed law: standstill distance plus distance covered in tau."""
    return Distance(d.value + v.value * tau.value)


def spatial_delay(v: Speed, alpha: Deceleration) -> Distance:
    """Braking distance from v to rest at constant deceleration."""
    return Distance(v.value ** 2 / (2.0 * alpha.value))


def min_follow_distance_lt(v: Speed, p: ModelParams) -> Distance:
    """Human-driven lead truck: reaction distance plus braking distance."""
    return Distance(spatial_delay(v, p.alpha_lt).value + v.value * p.t_rps.value)


def min_follow_distance_ft(v: Speed, p: ModelParams) -> Distance:
    # The automated follower has no reaction term but carries the gap-keeping error.
    return Distance(spatial_delay(v, p.alpha_lt).value + p.epsilon.value)


def _require_moving(v: Speed, what: str) -> None:
    if v.value <= 0:
        raise DivergenceError(f"{what} diverges at zero operating speed")


def lane_change_components(v_lt: Speed, p: ModelParams) -> tuple[Duration, Duration, Duration]:
    """The three headway terms of the two-truck lane change.

    Returns ``(t1, t2, t3)``: lead-truck stopping headway, time for the
    follower to cover the command gap, and lag-vehicle stopping headway.
    """
    _require_moving(v_lt, "follower lane-change time")
    t1 = p.t_rps.value + v_lt.value / p.alpha_lt.value
    t2 = p.gap_command.value / v_lt.value
    t3 = p.t_rps.value + p.ffs.value / p.alpha_gv_emergency.value
    return Duration(t1), Duration(t2), Duration(t3)


def critical_gap(v_lt: Speed, p: ModelParams) -> Duration:
    t1, t2, t3 = lane_change_components(v_lt, p)
    return Duration(t1.value + t2.value + t3.value)


def system_length(p: ModelParams) -> float:
    """Both trucks plus the clear gap between them, ft."""
    return p.gap_command.value + 2.0 * p.truck.length.value


def intersection_clearance_straight(v_lt: Speed, p: ModelParams) -> Duration:
    _require_moving(v_lt, "intersection clearance")
    return Duration((intersection_length(p.geometry).value + system_length(p)) / v_lt.value)


def intersection_clearance_turn(v_lt: Speed, p: ModelParams) -> Duration:
    _require_moving(v_lt, "intersection clearance")
    return Duration((left_turn_path_length(p.geometry).value + system_length(p)) / v_lt.value)


def saf(model: Callable[[Speed], object], v_mph: float, dv_mph: float = 1.0) -> float:
    """Speed elasticity of a threshold by forward difference, normalized at v.

    ``model`` maps a Speed to a quantity (anything with ``.value``) or a float.
    """
    if v_mph <= 0 or dv_mph <= 0:
        raise ValueError("SAF needs v > 0 and dv > 0")

    def f(v):
        out = model(Speed.from_mph(v))
        return float(getattr(out, "value", out))

    base = f(v_mph)
    if base == 0:
        raise ZeroDivisionError(f"threshold is zero at {v_mph} mph; SAF undefined")
    return ((f(v_mph + dv_mph) - base) / base) / (dv_mph / v_mph)


THRESHOLDS: dict[str, Callable[[Speed, ModelParams], object]] = {
    "s_lt": min_follow_distance_lt,
    "s_ft": min_follow_distance_ft,
    "t_c": critical_gap,
    "t_straight": intersection_clearance_straight,
    "t_turn": intersection_clearance_turn,
}

UNITS = {"s_lt": "ft", "s_ft": "ft", "t_c": "s", "t_straight": "s", "t_turn": "s"}


@dataclass
class GuidanceThresholds:
    speeds_mph: list[float]
    values: dict[str, list[float]]
    saf: dict[str, list[float]]
    dv_mph: float
    params: ModelParams

    def rows(self) -> list[dict]:
        out = []
        for i, v in enumerate(self.speeds_mph):
            row = {"speed_mph": v}
            for name in THRESHOLDS:
                row[name] = self.values[name][i]
            for name in THRESHOLDS:
                row[f"saf_{name}"] = self.saf[name][i]
            out.append(row)
        return out

    def rounded_rows(self) -> list[dict]:
        # headline figures are whole feet / whole seconds, SAF to two decimals
        out = []
        for row in self.rows():
            r = {"speed_mph": row["speed_mph"]}
            for name in THRESHOLDS:
                r[name] = round(row[name])
                r[f"saf_{name}"] = round(row[f"saf_{name}"], 2)
            out.append(r)
        return out

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "dv_mph": self.dv_mph,
            "units": UNITS,
            "rows": self.rows(),
            "rounded": self.rounded_rows(),
            "notes": dict(DEVIATION_NOTES),
        }


def speed_grid(start_mph: float, stop_mph: float, step_mph: float = 1.0) -> list[float]:
    """Inclusive grid start, start+step, ..., stop."""
    if step_mph <= 0:
        raise ValueError("grid step must be positive")
    if stop_mph < start_mph:
        raise ValueError("grid stop must not be below start")
    n = int(math.floor((stop_mph - start_mph) / step_mph + 1e-9)) + 1
    return [round(start_mph + i * step_mph, 10) for i in range(n)]


def parse_grid(spec: str) -> list[float]:
    """Parse ``start:stop:step`` (step optional, default 1)."""
    parts = spec.split(":")
    if len(parts) not in (2, 3):
        raise ValueError(f"grid must be start:stop[:step], got {spec!r}")
    nums = [float(x) for x in parts]
    return speed_grid(*nums)


def threshold_table(speeds_mph: Sequence[float], p: ModelParams,
                    dv_mph: Optional[float] = None) -> GuidanceThresholds:
    """Evaluate all thresholds and their SAFs at each grid speed.

    SAF at a grid point uses the next speed v + dv; ``dv_mph`` defaults to
    the grid step (1 mph for a single-point grid).
    """
    speeds = [float(v) for v in speeds_mph]
    if not speeds:
        raise ValueError("speed grid is empty")
    if any(v <= 0 for v in speeds):
        raise ValueError("grid speeds must be positive")
    if any(b <= a for a, b in zip(speeds, speeds[1:])):
        raise ValueError("grid speeds must be strictly increasing")
    if dv_mph is None:
        dv_mph = speeds[1] - speeds[0] if len(speeds) > 1 else 1.0

    values = {name: [] for name in THRESHOLDS}
    safs = {name: [] for name in THRESHOLDS}
    for v in speeds:
        for name, fn in THRESHOLDS.items():
            try:
                values[name].append(float(fn(Speed.from_mph(v), p).value))
                safs[name].append(saf(lambda s, fn=fn: fn(s, p), v, dv_mph))
            except (ValueError, ZeroDivisionError) as exc:
                raise ValueError(f"{name} at {v} mph: {exc}") from exc
    return GuidanceThresholds(speeds_mph=speeds, values=values, saf=safs,
                              dv_mph=dv_mph, params=p)


def saf_range(model: Callable[[Speed], object], speeds_mph: Sequence[float],
              dv_mph: float = 1.0) -> tuple[float, float]:
    """(min, max) SAF over intervals [v, v+dv] lying inside the grid."""
    top = max(speeds_mph)
    vals = [saf(model, v, dv_mph) for v in speeds_mph if v + dv_mph <= top + 1e-9]
    return min(vals), max(vals)


def lane_change_saf_range(p: ModelParams, speeds_mph: Sequence[float],
                          ffs_mph: Sequence[float] = (35, 40, 45, 50, 55, 60, 65, 70),
                          dv_mph: float = 1.0) -> tuple[float, float]:
    """Critical-gap SAF extremes across a family of free-flow speeds."""
    lo, hi = math.inf, -math.inf
    for f in ffs_mph:
        q = replace(p, ffs=Speed.from_mph(f))
        a, b = saf_range(lambda s: critical_gap(s, q), speeds_mph, dv_mph)
        lo, hi = min(lo, a), max(hi, b)
    return lo, hi


def plot_series(table: GuidanceThresholds) -> dict[str, np.ndarray]:
    """Two-column (speed_mph, value) arrays per threshold, ready for plotting."""
    v = np.asarray(table.speeds_mph, dtype=float)
    return {name: np.column_stack([v, np.asarray(table.values[name])]) for name in THRESHOLDS}
