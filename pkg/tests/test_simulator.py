import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feltloom.process import MATERIALS, NeedleSpec, ProcessModels
from feltloom.program import Dwell, Feed, Felt, MachineProgram, Mat, Pose, Rot
from feltloom.simulator import (EnvelopeOverflowError, NeedleProtectionError, SimParams,
                                SimulationError, coupon_field, felt_region, predicted_strength,
                                region_mean_density, sigma_for_slack, simulate)
from feltloom.coil import TENSIONS

from simprogs import random_program

WOOL = MATERIALS["wool"]
MODELS = ProcessModels()
LAM = WOOL.linear_density * 1e-3  # g per mm


@settings(max_examples=15)
@given(st.integers(0, 10 ** 6))
def test_deposit_mass_and_felting_conservation(seed):
    coil, full = random_program(random.Random(seed))
    a = simulate(coil, WOOL, MODELS, seed=3)
    b = simulate(full, WOOL, MODELS, seed=3)
    assert a.total_mass == pytest.approx(LAM * a.path_length, rel=5e-3)
    assert abs(b.total_mass - a.total_mass) <= 1e-12 * a.total_mass
    assert b.path_length == a.path_length


def test_same_seed_same_report_and_seeds_differ():
    coil, _ = random_program(random.Random(5))
    assert simulate(coil, WOOL, MODELS, 7).to_text() == simulate(coil, WOOL, MODELS, 7).to_text()
    vols = {round(simulate(coil, WOOL, MODELS, s).volume_cm3, 9) for s in (1, 2, 3)}
    assert len(vols) > 1
    with pytest.raises(SimulationError):
        simulate(coil, WOOL, MODELS, 0)


@given(st.lists(st.floats(0, 3000), min_size=2, max_size=6))
def test_density_monotone_in_punches(counts):
    needle = NeedleSpec()
    dens = []
    for n in sorted(counts):
        fld, (lo, hi) = coupon_field()
        m0 = fld.total_mass
        felt_region(fld, lo, hi, n, needle, MODELS.curve)
        assert abs(fld.total_mass - m0) <= 1e-12 * m0
        dens.append(region_mean_density(fld, lo, hi))
    assert all(a <= b + 1e-12 for a, b in zip(dens, dens[1:]))
    assert dens[0] >= MODELS.curve.d0 - 1e-9
    assert dens[-1] <= MODELS.curve.d_max[needle] + 1e-9


def test_coupon_density_follows_curve():
    from feltloom.process import density_after
    needle = NeedleSpec()
    fld, (lo, hi) = coupon_field()
    felt_region(fld, lo, hi, 400, needle, MODELS.curve)
    assert region_mean_density(fld, lo, hi) == pytest.approx(
        density_after(400, needle, MODELS.curve), rel=1e-9)


def test_predicted_strength_scales_to_needle_maxima():
    for needle in (NeedleSpec("triangle", "thick"), NeedleSpec("star", "thin")):
        fld, region = coupon_field()
        felt_region(fld, *region, 1e6, needle, MODELS.curve)
        t, c = predicted_strength(fld, region, MODELS, needle)
        tmax, cmax = MODELS.strength.max_tensile[needle], MODELS.strength.max_compressive[needle]
        assert t == pytest.approx(tmax, rel=1e-6) and c == pytest.approx(cmax, rel=1e-6)
    loose, region = coupon_field()
    t0, c0 = predicted_strength(loose, region, MODELS, crossed_ratio=0)
    t100, c100 = predicted_strength(loose, region, MODELS, crossed_ratio=100)
    assert t0 < 1.0 < t100 and c0 < 1.0 and c100 < 1.0


def _bare_felt_program(z):
    return MachineProgram((25, 75, 40), "", (Mat("wool"), Pose(10, 0, z), Felt(1000, 10)))


def test_needle_protection_on_bare_core():
    with pytest.raises(NeedleProtectionError):
        simulate(_bare_felt_program(30), WOOL, MODELS)


def test_overflow_is_reported():
    ins = [Mat("wool"), Pose(0, 0, 30), Feed(200, 200), Rot(200 * 400, 400)]
    with pytest.raises(EnvelopeOverflowError):
        simulate(MachineProgram((25, 75, 40), "", tuple(ins)), WOOL, MODELS)


def test_sigma_interpolates_between_levels():
    t = TENSIONS
    assert sigma_for_slack(t["high"].slack_factor, t) == pytest.approx(t["high"].jitter_sigma)
    assert sigma_for_slack(t["none"].slack_factor, t) == pytest.approx(t["none"].jitter_sigma)
    mid = sigma_for_slack(1.01, t)
    assert t["high"].jitter_sigma < mid < t["low"].jitter_sigma
    assert sigma_for_slack(5.0, t) == pytest.approx(t["none"].jitter_sigma)


def test_report_text_and_dump():
    coil, _ = random_program(random.Random(11))
    rep, fld = simulate(coil, WOOL, MODELS, 2, return_field=True)
    text = rep.to_text()
    assert text.startswith("seed 2\ntotal_mass_g ")
    assert "profile z=" in text
    rows = fld.dump().splitlines()
    assert rows[0].startswith("#")
    mass = sum(float(r.split()[3]) for r in rows[1:])
    assert mass == pytest.approx(rep.total_mass, rel=1e-6)


@pytest.mark.parametrize("name,method", [("sphere", "regular"), ("cylinder", "fit"),
                                         ("phone", "embroidered")])
def test_plans_simulate_near_target(plan_for, name, method):
    plan, program, target = plan_for(name, method)
    rep = simulate(program, plan.material, MODELS, 1,
                   profile_slabs=(target.z_min, target.z_max, target.n))
    assert np.abs(rep.profile.r_max - target.r_max).max() <= 2 * 2.5
