import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atma.guidance import (
    ModelParams,
    critical_gap,
    intersection_clearance_straight,
    intersection_clearance_turn,
    newell_spacing,
    spatial_delay,
)
from atma.simulator import (
    SimConfig,
    Trajectory,
    analytic_stop,
    bisect_boundary,
    intersection_boundary,
    lane_change_boundary,
    simulate_emergency_stop,
    simulate_intersection,
    simulate_lane_change,
    simulate_newell_follower,
    verify_thresholds,
)
from atma.units import Deceleration, Distance, Duration, Speed

P = ModelParams()
CFG = SimConfig()


def mph(v):
    return Speed.from_mph(v)


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory([0, 0], [0, 1], [1, 1])
    with pytest.raises(ValueError):
        Trajectory([0, 1], [0, 1], [1, -1])
    with pytest.raises(ValueError):
        Trajectory([0, 1], [0], [1, 1])
    with pytest.raises(ValueError):
        SimConfig(dt=0)
    with pytest.raises(ValueError):
        SimConfig(dt=0.1, horizon=0.01)


def test_newell_identity():
    lead = Trajectory.constant_speed(10, 5, 0.1)
    f = simulate_newell_follower(lead, Duration(0), Distance(0))
    assert np.array_equal(f.t, lead.t) and np.array_equal(f.x, lead.x)


def test_newell_constant_speed_spacing():
    v = 44 / 3
    d = spatial_delay(Speed(v), Deceleration(12.4))
    lead = Trajectory.constant_speed(v, 20, 0.1)
    f = simulate_newell_follower(lead, Duration(2.5), d)
    t = np.linspace(3, 20, 50)
    spacing = lead.position_at(t) - f.position_at(t)
    assert spacing == pytest.approx(newell_spacing(Speed(v), Duration(2.5), d).value, abs=1e-9)
    assert spacing[0] == pytest.approx(45.34, abs=0.01)


def test_newell_speed_change_delayed_by_tau():
    # leader at v1 until t=5, then v2
    lead = Trajectory.from_knots([0, 5, 15], [0, 5 * 20, 5 * 20 + 10 * 10])
    f = simulate_newell_follower(lead, Duration(2.5), Distance(30))
    lead_kink = lead.t[np.argmax(np.diff(lead.v) != 0) + 1]
    fol_kink = f.t[np.argmax(np.diff(f.v) != 0) + 1]
    assert fol_kink - lead_kink == pytest.approx(2.5)


def test_newell_lane_is_copied():
    lead = Trajectory([0, 1, 2], [0, 10, 20], [10, 10, 10], [2, 1, 1])
    f = simulate_newell_follower(lead, Duration(1), Distance(5))
    assert f.lane.tolist() == [2, 1, 1]


def random_leader(rng):
    n = int(rng.integers(2, 12))
    t = np.cumsum(rng.uniform(0.2, 5.0, n))
    t = np.concatenate([[0.0], t])
    x = np.concatenate([[rng.uniform(-100, 100)], rng.uniform(0, 40, n)]).cumsum()
    return Trajectory.from_knots(t, x)


def test_newell_translation_randomized():
    rng = np.random.default_rng(11)
    for _ in range(100):
        lead = random_leader(rng)
        tau, d = rng.uniform(0, 4), rng.uniform(0, 60)
        f = simulate_newell_follower(lead, Duration(tau), Distance(d))
        assert np.max(np.abs(f.position_at(lead.t + tau) - lead.x + d)) <= 1e-9


def test_emergency_stop_table_run():
    res = simulate_emergency_stop(mph(10), Deceleration(9.40))
    assert res.stop_time.value == pytest.approx(1.56, abs=0.01)


def test_emergency_stop_zero_speed():
    res = simulate_emergency_stop(Speed(0), Deceleration(3))
    assert res == (Duration(0), Distance(0))


def test_emergency_stop_analytic_distance():
    ref = analytic_stop(mph(15), Deceleration(12.36))
    assert ref.stop_distance.value == pytest.approx(19.58, abs=5e-3)
    sim = simulate_emergency_stop(mph(15), Deceleration(12.36))
    assert abs(sim.stop_distance.value - ref.stop_distance.value) <= CFG.dt * 22


@given(st.floats(1, 40), st.floats(2, 20), st.sampled_from([0.2, 0.1, 0.05]))
@settings(max_examples=50)
def test_emergency_stop_within_one_step(v, a, dt):
    sim = simulate_emergency_stop(Speed(v), Deceleration(a), SimConfig(dt=dt))
    ref = analytic_stop(Speed(v), Deceleration(a))
    assert abs(sim.stop_time.value - ref.stop_time.value) <= dt
    assert abs(sim.stop_distance.value - ref.stop_distance.value) <= dt * v


@pytest.mark.parametrize("v_mph, a", [(10, 9.4), (15, 12.36), (30, 14.8)])
def test_emergency_stop_first_order(v_mph, a):
    ref = analytic_stop(mph(v_mph), Deceleration(a)).stop_distance.value
    errs = [simulate_emergency_stop(mph(v_mph), Deceleration(a), SimConfig(dt=d)).stop_distance.value - ref
            for d in (0.1, 0.05, 0.025)]
    for coarse, fine in zip(errs, errs[1:]):
        assert coarse / fine == pytest.approx(2.0, abs=0.2)


def test_emergency_stop_reaction_phase():
    res = simulate_emergency_stop(mph(10), Deceleration(12.4), CFG, Duration(2.5))
    assert res.stop_time.value == pytest.approx(2.5 + (44 / 3) / 12.4, abs=1e-9)


def test_lane_change_at_critical_gap():
    v = mph(10)
    out = simulate_lane_change(critical_gap(v, P), v, P)
    assert out.safe and not out.collision
    for c in out.conditions.values():
        assert c["ok"]
    assert abs(out.conditions["lead_headway"]["slack_s"]) < CFG.dt
    assert abs(out.conditions["lag_stop"]["slack_s"]) < CFG.dt


def test_lane_change_supercritical():
    v = mph(10)
    out = simulate_lane_change(Duration(critical_gap(v, P).value + 10), v, P)
    assert out.safe
    assert out.conditions["lag_stop"]["slack_s"] == pytest.approx(10, abs=1e-6)


def test_lane_change_subcritical():
    v = mph(10)
    out = simulate_lane_change(Duration(critical_gap(v, P).value - 1), v, P)
    assert not out.safe
    assert not all(c["ok"] for c in out.conditions.values())


def test_lane_change_cut_in_and_contact():
    # lag car arrives between the trucks: the follower would be cut off
    v = mph(10)
    out = simulate_lane_change(Duration(5), v, P)
    assert not out.conditions["no_cut_in"]["ok"]
    assert out.collision == (out.min_spacing <= 0)


def test_lane_change_events_deterministic():
    v = mph(12)
    a = simulate_lane_change(Duration(21.3), v, P)
    b = simulate_lane_change(Duration(21.3), v, P)
    assert a.to_dict() == b.to_dict()
    whos = [e["who"] for e in a.events if e["pass"] == "nominal"]
    assert whos == ["lead", "LT", "FT", "lag"]


def test_lane_change_rejects_bad_input():
    with pytest.raises(ValueError):
        simulate_lane_change(Duration(0), mph(10), P)
    with pytest.raises(ValueError):
        simulate_lane_change(Duration(10), Speed(0), P)


def test_intersection_at_boundary():
    v = mph(10)
    for move, fn in (("straight", intersection_clearance_straight),
                     ("left", intersection_clearance_turn)):
        out = simulate_intersection(fn(v, P), move, v, P)
        assert out.passed
        assert 0 <= out.margin < CFG.dt


def test_intersection_no_time():
    assert not simulate_intersection(Duration(0), "straight", mph(10), P).passed


def test_intersection_too_short():
    out = simulate_intersection(Duration(14), "straight", mph(10), P)
    assert not out.passed
    assert out.required_time == pytest.approx(15.545, abs=1e-3)


def test_intersection_bad_movement():
    with pytest.raises(ValueError):
        simulate_intersection(Duration(10), "right", mph(10), P)


def test_bisect_boundary():
    assert bisect_boundary(lambda x: x >= 3.3, 0, 1, tol=1e-6) == pytest.approx(3.3, abs=1e-6)
    assert bisect_boundary(lambda x: True, 0, 1) == 0
    with pytest.raises(ValueError):
        bisect_boundary(lambda x: False, 0, 1, max_hi=100)


@given(st.integers(5, 15), st.sampled_from([100.0, 200.0]))
@settings(max_examples=15, deadline=None)
def test_oracle_equivalence_property(v_mph, gap):
    q = P.with_(gap_command=gap)
    v = mph(v_mph)
    assert abs(lane_change_boundary(v, q) - critical_gap(v, q).value) <= CFG.dt
    assert abs(intersection_boundary("straight", v, q) - intersection_clearance_straight(v, q).value) <= CFG.dt
    assert abs(intersection_boundary("left", v, q) - intersection_clearance_turn(v, q).value) <= CFG.dt


def test_verify_thresholds_report():
    rep = verify_thresholds([10], [100], P)
    assert rep["within_one_dt"]
    assert {r["threshold"] for r in rep["rows"]} == {"t_c", "t_straight", "t_turn"}


def test_trajectory_csv(tmp_path):
    path = tmp_path / "t.csv"
    Trajectory.constant_speed(10, 1, 0.5).to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "time_s,position_ft,speed_fps,lane"
    assert len(lines) == 4
