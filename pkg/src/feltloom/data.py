"""Shipped measurement tables and their CSV readers."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources

from .process import NeedleSpec, parse_mmss


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class TimingRow:
    method: str
    coil: float  # seconds
    felt: float
    system: float

    @property
    def times(self) -> tuple[float, float, float]:
        return self.coil, self.felt, self.system

    @property
    def total(self) -> float:
        return self.coil + self.felt + self.system


def _rows(text: str):
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(lines))))


def read_timing_csv(text: str) -> dict[str, TimingRow]:
    """Rows of ``method,felting,coiling,system`` with m:ss or plain-second cells."""
    out = {}
    for k, row in enumerate(_rows(text), start=1):
        try:
            r = TimingRow(row["method"].strip(), parse_mmss(row["coiling"]),
                          parse_mmss(row["felting"]), parse_mmss(row["system"]))
        except (KeyError, AttributeError, ValueError):
            raise DataError(f"timing row {k}: need method, felting, coiling, system") from None
        if r.method in out:
            raise DataError(f"timing row {k}: duplicate method {r.method!r}")
        out[r.method] = r
    if not out:
        raise DataError("timing table is empty")
    return out


def read_strength_csv(text: str) -> dict[NeedleSpec, tuple[float, float]]:
    out = {}
    for k, row in enumerate(_rows(text), start=1):
        try:
            out[NeedleSpec.parse(row["needle"].strip())] = (float(row["tensile_N"]),
                                                            float(row["compressive_N"]))
        except (KeyError, AttributeError, ValueError):
            raise DataError(f"strength row {k}: need needle, tensile_N, compressive_N") from None
    return out


def shipped_text(name: str) -> str:
    return resources.files("feltloom").joinpath("data").joinpath(name).read_text(encoding="utf-8")


def phone_times() -> dict[str, TimingRow]:
    return read_timing_csv(shipped_text("phone_times.csv"))


def fish_times() -> dict[str, TimingRow]:
    return read_timing_csv(shipped_text("fish_times.csv"))


def needle_strengths() -> dict[NeedleSpec, tuple[float, float]]:
    return read_strength_csv(shipped_text("needle_strength.csv"))
