import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from feltloom.felt import (COUPON_AREA_MM2, CannotAddMaterialError, FeltOp, FeltPlanError,
                           UnreachableStationError, compression_plan, felt_around, felt_vertical,
                           inward_approach, punches_per_station, required_density,
                           stations_for_ring, surface_elevation, total_punches)
from feltloom.mesh import RadialProfile, WorkEnvelope
from feltloom.process import DensityCurve, NeedleSpec, density_after

NEEDLE = NeedleSpec()
CURVE = DensityCurve()


@given(st.floats(0.5, 25), st.floats(1, 5))
def test_stations_tile_the_ring(radius, footprint):
    n = stations_for_ring(radius, footprint)
    assert n * footprint >= 2 * math.pi * radius - 1e-6
    assert n == 1 or (n - 1) * footprint < 2 * math.pi * radius


def test_punches_per_station_scales_coupon_area():
    # a station covering the whole coupon area needs the coupon punch count
    assert punches_per_station(120, 25.0, 25.0) == 120
    assert punches_per_station(120, 2.5, 2.5) == math.ceil(120 * 6.25 / COUPON_AREA_MM2)
    assert punches_per_station(0.001, 1, 1) == 1


@given(st.floats(0.05, 0.2), st.floats(0, 5), st.floats(6, 25), st.floats(0.01, 0.99))
def test_required_density_conserves_mass(d, core, r_cur, frac):
    r_tgt = core + (r_cur - core) * frac
    d2 = required_density(d, r_cur, r_tgt, core)
    assert d2 * (r_tgt ** 2 - core ** 2) == pytest.approx(d * (r_cur ** 2 - core ** 2))
    assert d2 >= d


def _profiles(cur, tgt):
    return RadialProfile.uniform(0, 2.5 * len(cur), cur), RadialProfile.uniform(0, 2.5 * len(tgt), tgt)


def test_compression_plan_reaches_required_density():
    cur, tgt = _profiles([14.0, 14.0, 14.0], [14.0, 12.0, 11.0])
    ops = compression_plan(cur, tgt, NEEDLE, CURVE, 0.08, 3.0)
    zs = sorted({op.z for op in ops})
    assert zs == [3.75, 6.25]  # the first slab already matches
    for z, r_t in ((3.75, 12.0), (6.25, 11.0)):
        ring = [op for op in ops if op.z == z]
        assert len(ring) == stations_for_ring(14.0)
        # equivalent coupon punches the ring delivers
        n_eq = sum(op.punches for op in ring) * COUPON_AREA_MM2 / (2 * math.pi * 14.0 * 2.5)
        need = required_density(0.08, 14.0, r_t, 3.0)
        assert density_after(n_eq, NEEDLE, CURVE) >= need - 1e-12


def test_compression_plan_rejects_growth_and_mismatch():
    cur, tgt = _profiles([10.0, 10.0], [10.0, 11.0])
    with pytest.raises(CannotAddMaterialError) as e:
        compression_plan(cur, tgt, NEEDLE, CURVE)
    assert e.value.slabs == [1]
    with pytest.raises(FeltPlanError):
        compression_plan(RadialProfile.uniform(0, 5, [10, 10]),
                         RadialProfile.uniform(0, 7.5, [9, 9, 9]), NEEDLE, CURVE)


def test_compression_plan_clamps_at_saturation():
    cur, tgt = _profiles([20.0, 20.0], [20.0, 3.5])
    ops = compression_plan(cur, tgt, NEEDLE, CURVE, 0.1, 3.0)
    assert ops and total_punches(ops) < 10 ** 7


def test_surface_elevation_clamps():
    assert surface_elevation(0.0) == 0.0
    assert surface_elevation(-1.0) == 0.0  # never point the needle down
    assert surface_elevation(10.0, 10.0) == 10.0
    assert surface_elevation(math.tan(math.radians(4))) == pytest.approx(4)


def test_felt_around_and_vertical():
    ops = felt_around(30, 8, 5, NEEDLE, 12.0)
    assert [op.axle_angle for op in ops] == [k * 45.0 for k in range(8)]
    assert total_punches(ops) == 40
    side = felt_vertical(90.0, 10, 20, 2.5, 3, NEEDLE, 12.0)
    assert [op.z for op in side] == [10, 12.5, 15, 17.5, 20]
    with pytest.raises(FeltPlanError):
        felt_around(100, 8, 5, NEEDLE)
    with pytest.raises(UnreachableStationError):
        felt_around(30, 8, 5, NEEDLE, 45.0)


def test_felt_op_validation():
    with pytest.raises(ValueError):
        FeltOp((10, 0, 5), inward_approach(), 0, NEEDLE)
    with pytest.raises(ValueError):
        FeltOp((10, 0, 5), inward_approach(), 1, NEEDLE, mode="zigzag")
    op = FeltOp((3, 4, 5), inward_approach(), 2, NEEDLE)
    assert op.radius == 5 and op.z == 5
