"""Time-stepping kinematic scenes used to cross-check the closed-form thresholds.

Everything here is explicit first-order integration on a fixed step with
piecewise-constant acceleration. Positions are 1-D along the travel path
in feet; lanes are small integers (2 = work lane, 1 = target lane).
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .guidance import ModelParams, critical_gap, intersection_clearance_straight, \
    intersection_clearance_turn
from .units import Deceleration, Distance, Duration, Speed, intersection_length, \
    left_turn_path_length

GENERAL_VEHICLE_LENGTH = 15.0  # ft; assumption, affects simulator margins only


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.1
    horizon: Optional[float] = None  # s; None sizes the run from the scene
    time_tol: float = 1e-9

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.horizon is not None and self.horizon < self.dt:
            raise ValueError("horizon must be at least one step")


class Trajectory:
    """Time-stamped samples of (position, speed, lane) along a 1-D path."""

    def __init__(self, t, x, v, lane=None):
        self.t = np.asarray(t, dtype=float)
        self.x = np.asarray(x, dtype=float)
        self.v = np.asarray(v, dtype=float)
        self.lane = (np.full(self.t.shape, 2, dtype=int) if lane is None
                     else np.asarray(lane, dtype=int))
        n = self.t.size
        if n == 0:
            raise ValueError("trajectory needs at least one sample")
        if not (self.x.shape == self.v.shape == self.lane.shape == (n,)):
            raise ValueError("trajectory arrays must have equal length")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if np.any(self.v < 0):
            raise ValueError("trajectory speeds must be non-negative")

    def __len__(self):
        return self.t.size

    def position_at(self, t):
        """Piecewise-linear position; raises outside the sampled time span."""
        t = np.asarray(t, dtype=float)
        if np.any(t < self.t[0] - 1e-12) or np.any(t > self.t[-1] + 1e-12):
            raise ValueError("time outside trajectory span")
        return np.interp(t, self.t, self.x)

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s", "position_ft", "speed_fps", "lane"])
            for row in zip(self.t, self.x, self.v, self.lane):
                w.writerow([repr(float(row[0])), repr(float(row[1])),
                            repr(float(row[2])), int(row[3])])

    @classmethod
    def from_knots(cls, times, positions, lane: int = 2) -> "Trajectory":
        """Piecewise-linear path through (time, position) knots.

        The speed at each knot is the slope of the segment it starts; the
        last knot repeats the final slope.
        """
        t = np.asarray(times, dtype=float)
        x = np.asarray(positions, dtype=float)
        slopes = np.diff(x) / np.diff(t)
        v = np.append(slopes, slopes[-1] if slopes.size else 0.0)
        return cls(t, x, v, np.full(t.shape, lane))

    @classmethod
    def constant_speed(cls, v: float, duration: float, dt: float,
                       x0: float = 0.0, lane: int = 2) -> "Trajectory":
        n = int(round(duration / dt)) + 1
        t = np.arange(n) * dt
        return cls(t, x0 + v * t, np.full(n, v), np.full(n, lane))


def simulate_newell_follower(leader: Trajectory, tau: Duration, d: Distance) -> Trajectory:
    """Follower path as the leader's path shifted tau later and d further back.

    The follower trails the leader, so the space shift is subtracted.
    """
    if tau.value < 0 or d.value < 0:
        raise ValueError("tau and d must be non-negative")
    return Trajectory(leader.t + tau.value, leader.x - d.value, leader.v.copy(),
                      leader.lane.copy())


class EmergencyStop(NamedTuple):
    stop_time: Duration
    stop_distance: Distance


def simulate_emergency_stop(v0: Speed, alpha: Deceleration, cfg: SimConfig = SimConfig(),
                            reaction: Duration = Duration(0.0)) -> EmergencyStop:
    """Integrate a coast-then-brake stop with explicit Euler.

    Distance uses the speed at the start of each step (first-order error
    in dt). The final step is shortened so the speed lands exactly on 0.
    """
    t, x, v = 0.0, 0.0, v0.value
    dt = cfg.dt
    while t < reaction.value - cfg.time_tol:
        h = min(dt, reaction.value - t)
        x += v * h
        t += h
    while v > 0:
        to_rest = v / alpha.value
        if to_rest <= dt:
            x += v * to_rest
            t += to_rest
            v = 0.0
        else:
            x += v * dt
            v -= alpha.value * dt
            t += dt
    return EmergencyStop(Duration(t), Distance(x))


def analytic_stop(v0: Speed, alpha: Deceleration) -> EmergencyStop:
    return EmergencyStop(Duration(v0.value / alpha.value),
                         Distance(v0.value ** 2 / (2 * alpha.value)))


@dataclass
class _Actor:
    name: str
    x: float  # front bumper
    v: float
    lane: int
    length: float
    accel: float = 0.0
    brake_at: Optional[float] = None  # time braking begins
    decel: float = 0.0
    crossed_at: Optional[float] = None

    @property
    def rear(self) -> float:
        return self.x - self.length


@dataclass
class SafetyOutcome:
    collision: bool
    safe: bool
    min_headway_time: float  # s
    min_spacing: float  # ft, negative means overlap
    conditions: dict  # name -> {"ok": bool, "slack_s": float}
    events: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "collision": self.collision,
            "safe": self.safe,
            "min_headway_time_s": self.min_headway_time,
            "min_spacing_ft": self.min_spacing,
            "conditions": self.conditions,
            "events": self.events,
        }


def _stop_duration(v: float, alpha: float, reaction: float, cfg: SimConfig) -> float:
    return simulate_emergency_stop(Speed(v), Deceleration(alpha), cfg,
                                   Duration(reaction)).stop_time.value


def _step_until(actors, cfg, until: Callable[[float], bool], t_max: float, on_step):
    """Advance all actors with explicit Euler, recording merge-point crossings."""
    t = 0.0
    dt = cfg.dt
    while t < t_max and not until(t):
        for a in actors:
            x_old, v_old = a.x, a.v
            a.x = x_old + v_old * dt
            if a.brake_at is not None and t + dt > a.brake_at and a.v > 0:
                a.v = max(0.0, a.v - a.decel * min(dt, t + dt - a.brake_at))
            if a.crossed_at is None and x_old < 0.0 <= a.x and v_old > 0:
                a.crossed_at = t + (0.0 - x_old) / v_old
        t += dt
        on_step(t)
    return t


def simulate_lane_change(headway_gap: Duration, v_lt: Speed, p: ModelParams,
                         cfg: SimConfig = SimConfig(),
                         gv_length: float = GENERAL_VEHICLE_LENGTH) -> SafetyOutcome:
    """Two-truck lane change into a target-lane gap of ``headway_gap`` seconds.

    The target lane carries a lead and a lag car at free-flow speed whose
    fronts pass the merge point ``headway_gap`` apart. The lead truck merges
    as soon as its time headway behind the lead car covers its own full
    stop (reaction plus braking, integrated here). The follower merges at
    the same point after covering the command gap. Checked conditions:

    * ``lead_headway``: lead-truck headway to the lead car >= its stop duration
    * ``no_cut_in``: the lag car reaches the merge point after the follower
    * ``lag_stop``: lag-car headway to the follower >= its stop duration, and
      braking after the follower enters its lane ends without contact
    """
    if headway_gap.value <= 0:
        raise ValueError("headway_gap must be positive")
    if v_lt.value <= 0:
        raise ValueError("v_lt must be positive")
    ffs = p.ffs.value
    truck = p.truck.length.value
    gap = p.gap_command.value

    need_lt = _stop_duration(v_lt.value, p.alpha_lt.value, p.t_rps.value, cfg)
    need_lag = _stop_duration(ffs, p.alpha_gv_emergency.value, p.t_rps.value, cfg)

    # Nominal pass: everyone at constant speed, measure merge-point crossings.
    def scene():
        lead = _Actor("lead", 0.0, ffs, 1, gv_length, crossed_at=0.0)
        lag = _Actor("lag", -headway_gap.value * ffs, ffs, 1, gv_length)
        lt = _Actor("LT", -need_lt * v_lt.value, v_lt.value, 2, truck)
        ft = _Actor("FT", lt.x - gap, v_lt.value, 2, truck)
        return lead, lag, lt, ft

    lead, lag, lt, ft = scene()
    actors = [lead, lag, lt, ft]
    events = [{"t": 0.0, "who": "lead", "event": "at merge point", "x": 0.0, "pass": "nominal"}]
    if lag.x >= 0:
        lag.crossed_at = 0.0
    t_max = cfg.horizon or (headway_gap.value + need_lt + gap / v_lt.value + 10.0)
    _step_until(actors, cfg, lambda t: all(a.crossed_at is not None for a in actors),
                t_max, lambda t: None)
    for a in (lt, ft, lag):
        if a.crossed_at is not None:
            kind = "changes lane" if a.name in ("LT", "FT") else "at merge point"
            events.append({"t": a.crossed_at, "who": a.name, "event": kind, "x": 0.0,
                           "pass": "nominal"})

    inf = math.inf
    t_lt = lt.crossed_at if lt.crossed_at is not None else inf
    t_ft = ft.crossed_at if ft.crossed_at is not None else inf
    t_lag = lag.crossed_at if lag.crossed_at is not None else inf
    h_lt = t_lt - lead.crossed_at
    h_lag = t_lag - t_ft

    tol = cfg.time_tol
    conditions = {
        "lead_headway": {"ok": h_lt - need_lt >= -tol, "slack_s": h_lt - need_lt},
        "no_cut_in": {"ok": h_lag >= -tol, "slack_s": h_lag},
        "lag_stop": {"ok": h_lag - need_lag >= -tol, "slack_s": h_lag - need_lag},
    }

    # Hazard pass: the lag car reacts to the follower entering its lane.
    min_spacing = inf
    collision = False
    if math.isfinite(t_ft):
        lead, lag, lt, ft = scene()
        lag.brake_at = t_ft + p.t_rps.value
        lag.decel = p.alpha_gv_emergency.value
        spacing = []
        stopped = []

        def watch(t):
            nonlocal collision
            if lag.v == 0.0 and not stopped:
                stopped.append(t)
                events.append({"t": t, "who": "lag", "event": "stopped", "x": lag.x,
                               "pass": "hazard"})
            s = [lead.rear - lt.x]
            if t >= t_ft:
                s.append(lt.rear - ft.x)
                # whichever of follower / lag car is behind the other
                s.append(ft.rear - lag.x if lag.x <= ft.x else lag.rear - ft.x)
            m = min(s)
            spacing.append(m)
            if m <= 0 and not collision:
                collision = True
                events.append({"t": t, "who": "lag", "event": "contact", "x": lag.x,
                               "pass": "hazard"})

        t_end = cfg.horizon or (t_ft + need_lag + 10.0)
        _step_until([lead, lag, lt, ft], cfg, lambda t: False, t_end, watch)
        min_spacing = min(spacing) if spacing else inf
        if collision:
            conditions["lag_stop"]["ok"] = False

    safe = all(c["ok"] for c in conditions.values()) and not collision
    events.sort(key=lambda e: (e["pass"] != "nominal", e["t"], e["who"]))
    return SafetyOutcome(collision=collision, safe=safe,
                         min_headway_time=min(h_lt, h_lag), min_spacing=min_spacing,
                         conditions=conditions, events=events)


@dataclass
class IntersectionOutcome:
    passed: bool
    required_time: float  # s
    margin: float  # s, available - required
    path_length: float  # ft

    def to_dict(self) -> dict:
        return {"passed": self.passed, "required_time_s": self.required_time,
                "margin_s": self.margin, "path_length_ft": self.path_length}


def movement_length(movement: str, p: ModelParams) -> float:
    if movement == "straight":
        return intersection_length(p.geometry).value
    if movement == "left":
        return left_turn_path_length(p.geometry).value
    raise ValueError(f"movement must be 'straight' or 'left', got {movement!r}")


def simulate_intersection(available_time: Duration, movement: str, v_lt: Speed,
                          p: ModelParams, cfg: SimConfig = SimConfig()) -> IntersectionOutcome:
    """Drive the truck pair from the stop bar until the follower's rear clears
    the far side; pass if that happens within ``available_time``."""
    if v_lt.value <= 0:
        raise ValueError("v_lt must be positive")
    far_side = movement_length(movement, p)
    truck = p.truck.length.value
    gap = p.gap_command.value
    path = far_side + gap + 2 * truck

    front = 0.0
    t = 0.0
    required = math.inf
    t_max = cfg.horizon or (path / v_lt.value + 10 * cfg.dt)
    while t < t_max:
        ft_rear_old = front - truck - gap - truck
        front += v_lt.value * cfg.dt
        ft_rear = front - truck - gap - truck
        if ft_rear >= far_side:
            required = t + (far_side - ft_rear_old) / v_lt.value
            break
        t += cfg.dt

    margin = available_time.value - required
    if abs(margin) <= cfg.time_tol:
        margin = 0.0
    return IntersectionOutcome(passed=margin >= 0, required_time=required,
                               margin=margin, path_length=path)


def bisect_boundary(is_safe: Callable[[float], bool], lo: float, hi: float,
                    tol: float = 1e-4, max_hi: float = 1e5) -> float:
    """Smallest value >= lo where a monotone predicate turns true.

    ``hi`` is an initial guess, doubled until the predicate holds.
    """
    while not is_safe(hi):
        lo, hi = hi, 2 * hi
        if hi > max_hi:
            raise ValueError(f"predicate not satisfied below {max_hi}")
    if is_safe(lo):
        return lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if is_safe(mid):
            hi = mid
        else:
            lo = mid
    return hi


def lane_change_boundary(v_lt: Speed, p: ModelParams, cfg: SimConfig = SimConfig(),
                         tol: float = 1e-4) -> float:
    """Smallest headway gap (s) the lane-change scene accepts."""
    return bisect_boundary(
        lambda h: simulate_lane_change(Duration(h), v_lt, p, cfg).safe, 1e-3, 16.0, tol)


def intersection_boundary(movement: str, v_lt: Speed, p: ModelParams,
                          cfg: SimConfig = SimConfig(), tol: float = 1e-4) -> float:
    return bisect_boundary(
        lambda a: simulate_intersection(Duration(a), movement, v_lt, p, cfg).passed,
        0.0, 16.0, tol)


def verify_thresholds(speeds_mph, gaps_ft, p: ModelParams, cfg: SimConfig = SimConfig()) -> dict:
    """Compare closed-form thresholds with simulated boundaries over a grid."""
    rows = []
    for gap in gaps_ft:
        q = p.with_(gap_command=gap)
        for v_mph in speeds_mph:
            v = Speed.from_mph(v_mph)
            checks = {
                "t_c": (critical_gap(v, q).value, lane_change_boundary(v, q, cfg)),
                "t_straight": (intersection_clearance_straight(v, q).value,
                               intersection_boundary("straight", v, q, cfg)),
                "t_turn": (intersection_clearance_turn(v, q).value,
                           intersection_boundary("left", v, q, cfg)),
            }
            for name, (closed, simulated) in checks.items():
                rows.append({"gap_ft": gap, "speed_mph": v_mph, "threshold": name,
                             "closed_form_s": closed, "simulated_s": simulated,
                             "abs_gap_s": abs(closed - simulated)})
    worst = max(r["abs_gap_s"] for r in rows) if rows else 0.0
    return {"dt": cfg.dt, "max_abs_gap_s": worst, "within_one_dt": worst <= cfg.dt,
            "rows": rows}
