"""Unit-safe scalar quantities and shared vehicle/road parameters.

Canonical units are feet, seconds, ft/s and ft/s^2. Miles per hour only
appear at the edges (constructors, CLI flags, report columns).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

FPS_PER_MPH = 5280.0 / 3600.0


def mph_to_fps(v: float) -> float:
    if v < 0:
        raise ValueError(f"speed must be non-negative, got {v} mph")
    return v * 5280.0 / 3600.0


def fps_to_mph(v: float) -> float:
    if v < 0:
        raise ValueError(f"speed must be non-negative, got {v} ft/s")
    return v * 3600.0 / 5280.0


def _check_finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")


@dataclass(frozen=True, order=True)
class Speed:
    """Speed in ft/s."""

    value: float

    def __post_init__(self):
        _check_finite("speed", self.value)
        if self.value < 0:
            raise ValueError(f"speed must be non-negative, got {self.value} ft/s")

    @classmethod
    def from_mph(cls, v: float) -> "Speed":
        return cls(mph_to_fps(v))

    @property
    def mph(self) -> float:
        return fps_to_mph(self.value)


@dataclass(frozen=True, order=True)
class Distance:
    """Non-negative length in feet. Signed gap errors are kept as plain floats."""

    value: float

    def __post_init__(self):
        _check_finite("distance", self.value)
        if self.value < 0:
            raise ValueError(f"distance must be non-negative, got {self.value} ft")

    def __add__(self, other: "Distance") -> "Distance":
        return Distance(self.value + other.value)


@dataclass(frozen=True, order=True)
class Duration:
    """Time span in seconds."""

    value: float

    def __post_init__(self):
        _check_finite("duration", self.value)
        if self.value < 0:
            raise ValueError(f"duration must be non-negative, got {self.value} s")

    def __add__(self, other: "Duration") -> "Duration":
        return Duration(self.value + other.value)


@dataclass(frozen=True, order=True)
class Deceleration:
    """Deceleration magnitude in ft/s^2 (strictly positive)."""

    value: float

    def __post_init__(self):
        _check_finite("deceleration", self.value)
        if self.value <= 0:
            raise ValueError(f"deceleration must be positive, got {self.value} ft/s^2")


@dataclass(frozen=True)
class VehicleSpec:
    max_decel: Deceleration
    length: Distance = Distance(40.0)
    reaction_time: Duration = Duration(2.5)

    def __post_init__(self):
        if self.length.value <= 0:
            raise ValueError("vehicle length must be positive")


@dataclass(frozen=True)
class RoadGeometry:
    """Intersection layout: crossed lanes of equal width plus a turn-radius offset.

    ``median_offset`` is the extra radius added to two lane widths when
    sizing the left-turn arc (6 ft in the reference layout).
    """

    lane_width: Distance = Distance(12.0)
    lanes_crossed: int = 4
    median_offset: Distance = field(default=Distance(6.0))

    def __post_init__(self):
        if self.lane_width.value <= 0:
            raise ValueError("lane_width must be positive")
        if int(self.lanes_crossed) != self.lanes_crossed or self.lanes_crossed < 1:
            raise ValueError(f"lanes_crossed must be an integer >= 1, got {self.lanes_crossed}")


def intersection_length(geom: RoadGeometry) -> Distance:
    return Distance(geom.lanes_crossed * geom.lane_width.value)


def turn_radius(geom: RoadGeometry) -> Distance:
    return Distance(2.0 * geom.lane_width.value + geom.median_offset.value)


def quarter_arc_length(radius: Distance) -> Distance:
    return Distance(math.pi * radius.value / 2.0)


def left_turn_path_length(geom: RoadGeometry) -> Distance:
    """Quarter-circle arc swept by a left turn, pi * r / 2."""
    return quarter_arc_length(turn_radius(geom))
