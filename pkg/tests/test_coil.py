import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from feltloom.coil import (AXLE_STEPS, HIGH, LOW, NONE, TENSIONS, CoilError, CoilPass,
                           TensionLevel, check_tension_levels, crossed_coil, crossed_leg_steps,
                           crossed_pose_targets, crossed_tilt, helix_length, horizontal_coil,
                           ratio_schedule, split_steps, spread_leg_steps, tension_to_gear_ratio,
                           tilt_reversals)
from feltloom.kinematics import UnreachableError, reachable, work_pose, StewartGeometry
from feltloom.mesh import WorkEnvelope


@pytest.mark.parametrize("ratio,crossed", [(0, 0), (25, 50), (50, 100), (75, 150), (100, 200)])
def test_ratio_schedule_counts(ratio, crossed):
    s = ratio_schedule(200, ratio)
    assert (s.crossed_cycles, s.horizontal_cycles) == (crossed, 200 - crossed)
    # ten repeats of a 20-cycle block, crossed cycles first
    groups, acc, cur = [], 0, []
    for b in s.blocks:
        cur.append(b)
        acc += b.cycles
        if acc == 20:
            groups.append(cur)
            cur, acc = [], 0
    assert acc == 0 and len(groups) == 10
    for g in groups:
        assert sum(b.cycles for b in g if b.kind == "crossed") == ratio * 20 // 100
        kinds = [b.kind for b in g]
        assert kinds == sorted(kinds)  # "crossed" sorts before "horizontal"


def test_ratio_schedule_rejects_unsupported():
    with pytest.raises(CoilError):
        ratio_schedule(200, 30)
    with pytest.raises(CoilError):
        ratio_schedule(210, 25)


@given(st.floats(1, 25), st.floats(0.5, 5), st.floats(0.1, 10))
def test_helix_length_matches_arc_length_integral(r, pitch, turns):
    speed = lambda t: math.sqrt((2 * math.pi * r) ** 2 + pitch ** 2)  # |d(curve)/dt| per turn
    xyz = lambda t: np.array([r * math.cos(2 * math.pi * t), r * math.sin(2 * math.pi * t),
                              pitch * t])
    numeric, _ = quad(lambda t: np.linalg.norm(
        (xyz(t + 1e-6) - xyz(t - 1e-6)) / 2e-6), 0, turns, limit=200)
    assert helix_length(r, pitch, turns) == pytest.approx(numeric, rel=1e-5)
    assert helix_length(r, pitch, turns) == pytest.approx(speed(0) * turns)


def test_horizontal_coil_layers_alternate():
    s = horizontal_coil(0, 20, 5, 2.5, layers=3)
    assert [b.direction for b in s.blocks] == [1, -1, 1]
    assert [b.radius_at_start for b in s.blocks] == [5, 7.5, 10]
    assert all(b.cycles == 8 for b in s.blocks)
    with pytest.raises(CoilError):
        horizontal_coil(0, 2, 5, 2.5)


def test_crossed_slope_limit():
    with pytest.raises(CoilError):
        crossed_coil(0, 20, 10, 2.5, 4, 61)
    with pytest.raises(ValueError):
        CoilPass("crossed", 0, 20, 10, 4, 2.5, 0.0)


def test_crossed_pose_targets_alternate_tilt():
    p = CoilPass("crossed", 0, 20, 10, 3, 2.5, 60)
    poses = crossed_pose_targets(p)
    assert len(poses) == 3 * 20
    tilt = crossed_tilt(60)
    assert tilt == 10.0
    for c in range(3):
        up = poses[c * 20:c * 20 + 10]
        down = poses[c * 20 + 10:(c + 1) * 20]
        assert all(q[4] == tilt for q in up) and all(q[4] == -tilt for q in down)
        assert up[-1][2] == pytest.approx(20 - 1.25)
        assert down[-1][2] == pytest.approx(1.25)
    assert tilt_reversals(poses) == 2 * 3
    geom, env = StewartGeometry(), WorkEnvelope()
    assert all(reachable(work_pose(*q, env, geom), geom) for q in poses)


def test_crossed_reach_check_raises_on_tiny_platform():
    geom = StewartGeometry(horn_length=5.0, rod_length=220.0)
    with pytest.raises(UnreachableError):
        crossed_coil(0, 75, 10, 2.5, 2, 60, geom=geom)


@given(st.integers(10, 400), st.integers(2, 12))
def test_spread_leg_steps_never_worse(nominal, cycles):
    leg = spread_leg_steps(nominal, cycles)
    assert abs(leg - nominal) <= max(1, round(nominal * 0.1))

    def min_gap(l):
        starts = sorted((k * 2 * l) % AXLE_STEPS for k in range(cycles))
        return min([b - a for a, b in zip(starts, starts[1:])]
                   + [starts[0] + AXLE_STEPS - starts[-1]])
    assert min_gap(leg) >= min_gap(nominal)


def test_spread_leg_steps_breaks_whole_revolutions():
    # a leg of half a revolution stacks every cycle at the same angle
    leg = spread_leg_steps(100, 5)
    assert leg != 100


@given(st.integers(0, 10000), st.integers(1, 50))
def test_split_steps_sums(total, parts):
    s = split_steps(total, parts)
    assert sum(s) == total and len(s) == parts and max(s) - min(s) <= 1


def test_crossed_leg_steps_climb_at_slope():
    p = CoilPass("crossed", 0, 40, 10, 1, 2.5, 45)
    steps = crossed_leg_steps(p)
    revs = steps / AXLE_STEPS
    climb = 2 * math.pi * 10 * revs * math.tan(math.radians(45))
    assert climb == pytest.approx(40 - 2.5, abs=2 * math.pi * 10 / AXLE_STEPS)


def test_tension_levels_order():
    check_tension_levels(TENSIONS)
    assert NONE.jitter_sigma > LOW.jitter_sigma > HIGH.jitter_sigma
    with pytest.raises(ValueError):
        check_tension_levels({"none": NONE, "low": HIGH, "high": LOW})
    with pytest.raises(ValueError):
        TensionLevel("medium", 0.1, 0.1, 1.0)


def test_gear_ratio_feeds_more_with_less_tension():
    ratios = [tension_to_gear_ratio(t, 2.5, 10.0).feeder_steps_per_axle_cycle
              for t in (NONE, LOW, HIGH)]
    assert ratios[0] > ratios[1] > ratios[2]
    # high tension feeds exactly the circumference
    assert ratios[2] == round(AXLE_STEPS * 2 * math.pi * 10 / 50)
    with pytest.raises(CoilError):
        tension_to_gear_ratio(LOW, 2.5, 0.0)
