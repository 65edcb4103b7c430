import datetime as dt
import io

import pytest

from atma.logs import (
    LogFormatError,
    LogSession,
    OperatingMode,
    gap_error_series,
    load_session,
    parse_follower_log,
    parse_leader_log,
    session_summary,
    sniff_log_kind,
)

LEADER_HEAD = "TIMESTAMP,VEH,CRUMB,STAMP,LAT,LON,ALT,HEADING,VELOCITY\n"
FOLLOWER_HEAD = ("TIMESTAMP,VEH,CRUMB,STAMP,LAT,LON,ALT,HEADING,HDG (Desired),VELOCITY,"
                 "VEL (Desired),GAP,GAP (Desired),#SATS,VALID,CTE,ACCEL,STEER,STATE\n")


def follower_row(stamp=0, gap=28.48, desired=30.5, cte=0.0, state="RUN", valid="1"):
    return (f"12:00:00.{stamp % 10},FLW,1,{1000 + stamp},38.7,-93.26,233.8,103.4,105.0,"
            f"10.0,10.0,{gap},{desired},19,{valid},{cte},-100,0,{state}\n")


def test_leader_first_row_matches_screenshot(leader_csv):
    parsed = parse_leader_log(leader_csv)
    assert len(parsed.records) == 10
    assert parsed.warnings == []
    r = parsed.records[0]
    assert r.timestamp == dt.time(12, 32, 35, 800000)
    assert r.veh_tag == "LDR"
    assert r.crumb_id == 6630
    assert r.gps_stamp == 18323570
    assert (r.lat, r.lon, r.alt) == (38.69311, -93.261, -0.024)
    assert r.heading == 280.004
    assert r.velocity == 281.0


def test_follower_first_row_matches_screenshot(follower_csv):
    parsed = parse_follower_log(follower_csv)
    assert len(parsed.records) == 10
    r = parsed.records[0]
    assert r.gap == 28.48
    assert r.gap_desired == 30.5
    assert r.cte == 0.0
    assert r.state is OperatingMode.IDLE
    assert r.num_sats == 19
    assert r.gps_valid is True
    assert r.heading_desired == 105.085
    assert r.accel_cmd == -100


def test_header_only_leader_file():
    parsed = parse_leader_log(LEADER_HEAD)
    assert parsed.records == [] and parsed.warnings == []


def test_malformed_middle_row_is_skipped():
    text = (LEADER_HEAD
            + "12:32:35.8,LDR,1,100,38.6,-93.2,0,280,10\n"
            + "12:32:35.9,LDR,2,110,38.6,-93.2,0,oops,10\n"
            + "12:32:36.0,LDR,3,120,38.6,-93.2,0,280,10\n")
    parsed = parse_leader_log(text)
    assert [r.crumb_id for r in parsed.records] == [1, 3]
    assert len(parsed.warnings) == 1
    assert parsed.warnings[0].row == 2
    assert "row 2" in str(parsed.warnings[0])


def test_wrong_field_count_warns():
    parsed = parse_leader_log(LEADER_HEAD + "12:32:35.8,LDR,1,100\n")
    assert parsed.records == []
    assert "expected 9 fields" in parsed.warnings[0].message


@pytest.mark.parametrize("text", ["", "\n\n"])
def test_empty_file_is_fatal(text):
    with pytest.raises(LogFormatError):
        parse_leader_log(text)


def test_bad_header_is_fatal():
    with pytest.raises(LogFormatError):
        parse_leader_log("TIME,VEH,CRUMB,STAMP,LAT,LON,ALT,HEADING,VELOCITY\n")
    with pytest.raises(LogFormatError):
        parse_follower_log(LEADER_HEAD)


def test_header_matching_is_lenient():
    head = " timestamp , LCB ,crumb,Stamp,lat,lon,alt,heading,velocity\r\n"
    parsed = parse_leader_log(head + "12:32:35.8,LDR,1,100,38.6,-93.2,0,280,10\r\n")
    assert len(parsed.records) == 1
    f = parse_follower_log(FOLLOWER_HEAD.replace("HDG (Desired)", "hdg(desired)") + follower_row())
    assert len(f.records) == 1


def test_state_tokens():
    text = FOLLOWER_HEAD + follower_row(state="RUN") + follower_row(1, state="CRUISE")
    parsed = parse_follower_log(text)
    assert parsed.records[0].state is OperatingMode.RUN
    assert len(parsed.warnings) == 1 and parsed.warnings[0].row == 2


def test_gps_valid_flag():
    parsed = parse_follower_log(FOLLOWER_HEAD + follower_row(valid="1") + follower_row(1, valid="0")
                                + follower_row(2, valid="2"))
    assert [r.gps_valid for r in parsed.records] == [True, False]
    assert len(parsed.warnings) == 1


def test_out_of_range_heading_warns():
    parsed = parse_leader_log(LEADER_HEAD + "12:32:35.8,LDR,1,100,38.6,-93.2,0,360,10\n")
    assert parsed.records == [] and "heading" in parsed.warnings[0].message


def test_decreasing_stamp_is_a_warning_not_an_error():
    text = (LEADER_HEAD + "12:32:35.8,LDR,1,200,38.6,-93.2,0,280,10\n"
            + "12:32:35.9,LDR,2,100,38.6,-93.2,0,280,10\n")
    parsed = parse_leader_log(text)
    assert len(parsed.records) == 2
    assert "decreases" in parsed.warnings[0].message


def test_tab_separated_screenshot_text_is_accepted(leader_csv):
    text = leader_csv.read_text().replace(",", "\t")
    assert len(parse_leader_log(text).records) == 10


def test_stream_input(leader_csv):
    assert len(parse_leader_log(io.StringIO(leader_csv.read_text())).records) == 10


def test_missing_file_raises():
    with pytest.raises(FileNotFoundError):
        parse_leader_log("does/not/exist.csv")


@pytest.mark.parametrize("path", ["leader_sample.csv", "follower_sample.csv"])
def test_reserialization_is_lossless(data_dir, path):
    lines = (data_dir / path).read_text().splitlines()[1:]
    parser = parse_leader_log if path.startswith("leader") else parse_follower_log
    records = parser(data_dir / path).records
    for line, rec in zip(lines, records):
        original = line.split(",")
        again = rec.to_row()
        assert again[0] == original[0]
        for a, b in zip(original[1:], again[1:]):
            try:
                assert float(a) == float(b)
            except ValueError:
                assert a == b


def test_gap_error_series_sign_and_filter(follower_csv):
    recs = parse_follower_log(follower_csv).records
    errs = gap_error_series(recs, modes=None)
    assert errs[0] == pytest.approx(2.02, abs=1e-12)
    assert len(errs) == 10
    assert gap_error_series(recs).size == 0  # default filter keeps RUN only, all rows IDLE
    assert len(gap_error_series(recs, "IDLE")) == 10


def test_gap_error_values():
    recs = parse_follower_log(FOLLOWER_HEAD + follower_row(gap=30.5, desired=30.5)
                              + follower_row(1, gap=103, desired=100)).records
    assert gap_error_series(recs).tolist() == [0.0, -3.0]


def test_gap_error_series_length_matches_filter():
    rows = [follower_row(i, state=s) for i, s in enumerate(["RUN", "IDLE", "ROLLOUT", "RUN"])]
    recs = parse_follower_log(FOLLOWER_HEAD + "".join(rows)).records
    assert len(gap_error_series(recs, ["RUN"])) == 2
    assert len(gap_error_series(recs, ["RUN", "ROLLOUT"])) == 3
    assert len(gap_error_series(recs, "all")) == 4


def test_summary_of_screenshot(follower_csv, leader_csv):
    session = load_session([leader_csv, follower_csv])
    s = session_summary(session)
    assert s["mode_counts"] == {"IDLE": 10, "ROLLOUT": 0, "RUN": 0}
    assert s["leader_records"] == 10
    assert s["leader_span_s"] == pytest.approx(0.1)
    assert s["gap_error_mean_ft"] == pytest.approx(2.02)
    assert s["gap_error_sd_ft"] == pytest.approx(0.0, abs=1e-12)


def test_summary_max_abs_cte():
    ctes = [-0.3, 0.1, 0.2, -0.1, 0.5, 0.0, 0.3, -0.2, 0.4, 0.1]
    rows = "".join(follower_row(i, cte=c) for i, c in enumerate(ctes))
    session = LogSession(follower=parse_follower_log(FOLLOWER_HEAD + rows).records)
    assert session_summary(session)["max_abs_cte_ft"] == 0.5


def test_summary_gap_error_sd_is_population():
    rows = "".join(follower_row(i, gap=30.5 - e) for i, e in enumerate([1.0, 2.0, 3.0]))
    session = LogSession(follower=parse_follower_log(FOLLOWER_HEAD + rows).records)
    s = session_summary(session)
    assert s["gap_error_mean_ft"] == pytest.approx(2.0)
    assert s["gap_error_sd_ft"] == pytest.approx((2 / 3) ** 0.5)


def test_summary_zero_run_rows(follower_csv):
    session = load_session([follower_csv])
    assert session_summary(session, ["RUN"])["gap_error_count"] == 0
    assert session_summary(session)["mode_counts"]["RUN"] == 0


def test_sniff(leader_csv, follower_csv):
    assert sniff_log_kind(leader_csv) == "leader"
    assert sniff_log_kind(follower_csv) == "follower"
    assert sniff_log_kind("a,b,c\n") is None
