"""Parsing and summarizing leader/follower truck telemetry logs.

Both logs are comma separated with a header row. The leader log has 9
columns, the follower log 19. Malformed data rows are skipped with a
warning; only a missing or mismatched header aborts parsing.
"""
from __future__ import annotations

import csv
import datetime as dt
import enum
import io
import math
import os
from dataclasses import dataclass, field, fields
from typing import Iterable, Optional, Sequence, TextIO, Union

import numpy as np


class LogFormatError(ValueError):
    """Fatal problem with a log file as a whole (empty input, bad header)."""


class OperatingMode(str, enum.Enum):
    IDLE = "IDLE"
    ROLLOUT = "ROLLOUT"
    RUN = "RUN"

    @classmethod
    def parse(cls, token: str) -> "OperatingMode":
        try:
            return cls(token.strip())
        except ValueError:
            raise ValueError(f"unknown operating mode {token!r}") from None


# Accepted header spellings per column, compared after dropping whitespace and case-folding.
LEADER_COLUMNS = (
    ("timestamp",),
    ("veh", "lcb"),
    ("crumb",),
    ("stamp",),
    ("lat",),
    ("lon",),
    ("alt",),
    ("heading",),
    ("velocity",),
)

FOLLOWER_COLUMNS = (
    ("timestamp",),
    ("veh",),
    ("crumb",),
    ("stamp",),
    ("lat",),
    ("lon",),
    ("alt",),
    ("heading",),
    ("hdg(desired)",),
    ("velocity",),
    ("vel(desired)",),
    ("gap",),
    ("gap(desired)",),
    ("#sats",),
    ("valid",),
    ("cte",),
    ("accel",),
    ("steer",),
    ("state",),
)

LEADER_HEADER = ("TIMESTAMP", "VEH", "CRUMB", "STAMP", "LAT", "LON", "ALT", "HEADING", "VELOCITY")
FOLLOWER_HEADER = (
    "TIMESTAMP", "VEH", "CRUMB", "STAMP", "LAT", "LON", "ALT", "HEADING", "HDG (Desired)",
    "VELOCITY", "VEL (Desired)", "GAP", "GAP (Desired)", "#SATS", "VALID", "CTE", "ACCEL",
    "STEER", "STATE",
)


@dataclass(frozen=True)
class ParseWarning:
    row: int  # 1-based data row, header excluded
    message: str

    def __str__(self):
        return f"row {self.row}: {self.message}"


@dataclass(frozen=True)
class LeaderRecord:
    timestamp: dt.time
    veh_tag: str
    crumb_id: int
    gps_stamp: int  # ms
    lat: float
    lon: float
    alt: float
    heading: float
    velocity: float  # as logged; unit is not trustworthy

    def to_row(self) -> list[str]:
        return [_format_value(getattr(self, f.name)) for f in fields(self)]


@dataclass(frozen=True)
class FollowerRecord:
    timestamp: dt.time
    veh_tag: str
    crumb_id: int
    gps_stamp: int
    lat: float
    lon: float
    alt: float
    heading: float
    heading_desired: float
    velocity: float
    velocity_desired: float
    gap: float  # ft
    gap_desired: float  # ft
    num_sats: int
    gps_valid: bool
    cte: float  # ft, signed
    accel_cmd: float
    steer_cmd: float
    state: OperatingMode

    @property
    def gap_error(self) -> float:
        """Desired minus actual gap; positive means the follower is too close."""
        return self.gap_desired - self.gap

    def to_row(self) -> list[str]:
        return [_format_value(getattr(self, f.name)) for f in fields(self)]


@dataclass
class ParsedLog:
    records: list
    warnings: list[ParseWarning] = field(default_factory=list)
    source: Optional[str] = None


@dataclass
class LogSession:
    leader: list[LeaderRecord] = field(default_factory=list)
    follower: list[FollowerRecord] = field(default_factory=list)
    sources: list[str] = field(default_factory=list)
    warnings: list[ParseWarning] = field(default_factory=list)


def _format_value(value) -> str:
    if isinstance(value, dt.time):
        text = value.strftime("%H:%M:%S.%f").rstrip("0")
        return text + "0" if text.endswith(".") else text
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, OperatingMode):
        return value.value
    if isinstance(value, float):
        text = repr(value)
        return text[:-2] if text.endswith(".0") else text
    return str(value)


def parse_timestamp(token: str) -> dt.time:
    token = token.strip()
    for fmt in ("%H:%M:%S.%f", "%H:%M:%S"):
        try:
            return dt.datetime.strptime(token, fmt).time()
        except ValueError:
            continue
    raise ValueError(f"bad timestamp {token!r}")


def _parse_float(token: str) -> float:
    value = float(token)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {token!r}")
    return value


def _parse_int(token: str) -> int:
    return int(token.strip())


def _parse_flag(token: str) -> bool:
    token = token.strip()
    if token not in ("0", "1"):
        raise ValueError(f"flag must be 0 or 1, got {token!r}")
    return token == "1"


def _normalize(name: str) -> str:
    return "".join(name.split()).casefold()


def _open_text(source: Union[str, os.PathLike, TextIO, Iterable[str]]):
    # A str without newline or delimiter is taken as a path, so missing files raise.
    is_path = isinstance(source, os.PathLike) or (
        isinstance(source, str) and source
        and not any(ch in source for ch in "\n,\t"))
    if is_path:
        with open(source, newline="", encoding="utf-8-sig") as fh:
            return fh.read(), os.fspath(source)
    if isinstance(source, str):
        return source, None
    if hasattr(source, "read"):
        return source.read(), getattr(source, "name", None)
    return "".join(source), None


def _rows(text: str) -> list[list[str]]:
    first = text.split("\n", 1)[0]
    delimiter = "\t" if "\t" in first and "," not in first else ","
    return [row for row in csv.reader(io.StringIO(text), delimiter=delimiter)]


def _check_header(header: Sequence[str], spec, kind: str) -> None:
    names = [_normalize(h) for h in header]
    if len(names) != len(spec):
        raise LogFormatError(
            f"{kind} log header has {len(names)} columns, expected {len(spec)}")
    for i, (name, accepted) in enumerate(zip(names, spec)):
        if name not in accepted:
            raise LogFormatError(
                f"{kind} log column {i + 1} is {header[i]!r}, expected {accepted[0].upper()!r}")


def _parse_leader_row(row: Sequence[str]) -> LeaderRecord:
    rec = LeaderRecord(
        timestamp=parse_timestamp(row[0]),
        veh_tag=row[1].strip(),
        crumb_id=_parse_int(row[2]),
        gps_stamp=_parse_int(row[3]),
        lat=_parse_float(row[4]),
        lon=_parse_float(row[5]),
        alt=_parse_float(row[6]),
        heading=_parse_float(row[7]),
        velocity=_parse_float(row[8]),
    )
    if rec.crumb_id < 0:
        raise ValueError(f"negative crumb id {rec.crumb_id}")
    if not 0.0 <= rec.heading < 360.0:
        raise ValueError(f"heading {rec.heading} outside [0, 360)")
    return rec


def _parse_follower_row(row: Sequence[str]) -> FollowerRecord:
    rec = FollowerRecord(
        timestamp=parse_timestamp(row[0]),
        veh_tag=row[1].strip(),
        crumb_id=_parse_int(row[2]),
        gps_stamp=_parse_int(row[3]),
        lat=_parse_float(row[4]),
        lon=_parse_float(row[5]),
        alt=_parse_float(row[6]),
        heading=_parse_float(row[7]),
        heading_desired=_parse_float(row[8]),
        velocity=_parse_float(row[9]),
        velocity_desired=_parse_float(row[10]),
        gap=_parse_float(row[11]),
        gap_desired=_parse_float(row[12]),
        num_sats=_parse_int(row[13]),
        gps_valid=_parse_flag(row[14]),
        cte=_parse_float(row[15]),
        accel_cmd=_parse_float(row[16]),
        steer_cmd=_parse_float(row[17]),
        state=OperatingMode.parse(row[18]),
    )
    if rec.crumb_id < 0:
        raise ValueError(f"negative crumb id {rec.crumb_id}")
    if rec.num_sats < 0:
        raise ValueError(f"negative satellite count {rec.num_sats}")
    if not 0.0 <= rec.heading < 360.0:
        raise ValueError(f"heading {rec.heading} outside [0, 360)")
    return rec


def _parse(source, spec, row_parser, kind: str) -> ParsedLog:
    text, name = _open_text(source)
    rows = [r for r in _rows(text) if any(cell.strip() for cell in r)]
    if not rows:
        raise LogFormatError(f"{kind} log is empty")
    _check_header(rows[0], spec, kind)

    out = ParsedLog(records=[], source=name)
    last_stamp = None
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != len(spec):
            out.warnings.append(ParseWarning(i, f"expected {len(spec)} fields, got {len(row)}"))
            continue
        try:
            rec = row_parser(row)
        except ValueError as exc:
            out.warnings.append(ParseWarning(i, str(exc)))
            continue
        if last_stamp is not None and rec.gps_stamp < last_stamp:
            out.warnings.append(ParseWarning(
                i, f"gps stamp {rec.gps_stamp} decreases from {last_stamp}"))
        last_stamp = rec.gps_stamp
        out.records.append(rec)
    return out


def parse_leader_log(source) -> ParsedLog:
    """Parse a leader truck log from a path, raw text, or an open text stream."""
    return _parse(source, LEADER_COLUMNS, _parse_leader_row, "leader")


def parse_follower_log(source) -> ParsedLog:
    """Parse a follower truck log from a path, raw text, or an open text stream."""
    return _parse(source, FOLLOWER_COLUMNS, _parse_follower_row, "follower")


def sniff_log_kind(source) -> Optional[str]:
    """Return 'leader', 'follower' or None by inspecting the header row only."""
    text, _ = _open_text(source)
    rows = _rows(text.split("\n", 1)[0])
    if not rows:
        return None
    for kind, spec in (("leader", LEADER_COLUMNS), ("follower", FOLLOWER_COLUMNS)):
        try:
            _check_header(rows[0], spec, kind)
            return kind
        except LogFormatError:
            pass
    return None


def _mode_set(modes) -> Optional[frozenset]:
    if modes is None or modes == "all":
        return None
    if isinstance(modes, (str, OperatingMode)):
        modes = [modes]
    return frozenset(OperatingMode.parse(m) if isinstance(m, str) else m for m in modes)


def gap_error_series(records: Iterable[FollowerRecord], modes=(OperatingMode.RUN,)) -> np.ndarray:
    """Signed gap errors (desired - actual, ft) for records in ``modes``.

    ``modes=None`` or ``"all"`` keeps every record.
    """
    keep = _mode_set(modes)
    return np.array(
        [r.gap_error for r in records if keep is None or r.state in keep], dtype=float)


def _span_seconds(records) -> Optional[float]:
    if not records:
        return None
    stamps = [r.gps_stamp for r in records]
    return (max(stamps) - min(stamps)) / 1000.0


def session_summary(session: LogSession, modes=None) -> dict:
    """Aggregate counts and error statistics for a parsed session.

    Gap-error SD uses the population divisor, same as the calibration code.
    """
    counts = {m.value: 0 for m in OperatingMode}
    for r in session.follower:
        counts[r.state.value] += 1
    errors = gap_error_series(session.follower, modes)
    ctes = [abs(r.cte) for r in session.follower]
    keep = _mode_set(modes)
    return {
        "leader_records": len(session.leader),
        "follower_records": len(session.follower),
        "mode_counts": counts,
        "leader_span_s": _span_seconds(session.leader),
        "follower_span_s": _span_seconds(session.follower),
        "max_abs_cte_ft": max(ctes) if ctes else None,
        "gap_error_modes": "all" if keep is None else sorted(m.value for m in keep),
        "gap_error_count": int(errors.size),
        "gap_error_mean_ft": float(errors.mean()) if errors.size else None,
        "gap_error_sd_ft": float(errors.std(ddof=0)) if errors.size else None,
        "warnings": len(session.warnings),
        "sources": list(session.sources),
    }


def load_session(paths: Iterable[Union[str, os.PathLike]]) -> LogSession:
    """Parse several log files, sorting each into leader or follower by header."""
    session = LogSession()
    for path in paths:
        kind = sniff_log_kind(path)
        if kind is None:
            raise LogFormatError(f"{path}: header matches neither leader nor follower layout")
        parsed = parse_leader_log(path) if kind == "leader" else parse_follower_log(path)
        (session.leader if kind == "leader" else session.follower).extend(parsed.records)
        session.sources.append(os.fspath(path))
        session.warnings.extend(parsed.warnings)
    return session
