import pytest

from feltloom.data import (DataError, fish_times, needle_strengths, phone_times,
                           read_strength_csv, read_timing_csv)
from feltloom.process import NeedleSpec, ProcessModels, parse_mmss

# measured values (coiling, felting, system), seconds
PHONE = {"fit": (297, 243, 47), "regular": (366, 483, 65), "embroidered": (285, 404, 61)}
FISH = {"fit": (438, 453, 69), "regular": (439, 950, 71), "embroidered": (462, 906, 72)}
STRENGTH = {
    "triangle_thin": (95.38, 2.38), "triangle_thick": (122.46, 8.82),
    "star_thin": (89.78, 1.12), "star_thick": (107.86, 4.32),
    "spiral_thin": (92.04, 1.88), "spiral_thick": (107.04, 2.44),
}


@pytest.mark.parametrize("table,expected", [(phone_times, PHONE), (fish_times, FISH)])
def test_shipped_timing_tables(table, expected):
    rows = table()
    assert {m: r.times for m, r in rows.items()} == expected
    for m, r in rows.items():
        assert r.total == sum(expected[m])


def test_shipped_strengths_match_model_defaults():
    table = needle_strengths()
    assert {n.key: v for n, v in table.items()} == STRENGTH
    s = ProcessModels().strength
    for n, (t, c) in table.items():
        assert s.max_tensile[n] == t and s.max_compressive[n] == c


def test_mmss():
    assert parse_mmss("4:03") == 243
    assert parse_mmss(" 15:50 ") == 950
    assert parse_mmss("12.5") == 12.5


def test_timing_csv_errors():
    ok = "# note\nmethod,felting,coiling,system\nfit,1:00,2:00,0:30\n"
    assert read_timing_csv(ok)["fit"].times == (120, 60, 30)
    with pytest.raises(DataError, match="empty"):
        read_timing_csv("method,felting,coiling,system\n")
    with pytest.raises(DataError, match="duplicate"):
        read_timing_csv(ok + "fit,1,2,3\n")
    with pytest.raises(DataError, match="row 1"):
        read_timing_csv("method,felting\nfit,1:00\n")
    with pytest.raises(DataError):
        read_timing_csv("method,felting,coiling,system\nfit,soon,2,3\n")


def test_strength_csv_errors():
    got = read_strength_csv("needle,tensile_N,compressive_N\nstar-thin,1,2\n")
    assert got == {NeedleSpec("star", "thin"): (1.0, 2.0)}
    with pytest.raises(DataError):
        read_strength_csv("needle,tensile_N\nstar_thin,1\n")
