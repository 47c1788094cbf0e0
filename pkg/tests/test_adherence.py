import csv
from datetime import date, timedelta

import numpy as np
import pytest

import oracles
from survrisk.adherence import (
    CombineRule, adherence_table, coverage_timeline, effective_supply, mpr, pdc, pdc_multiclass, write_adherence,
)
from survrisk.ehr import Dataset, DispensingRecord, Encounter, EncounterType, Ethnicity, Patient, Route, Sex
from survrisk.errors import EmptyPeriod

D0 = date(2021, 1, 1)


def fill(day, supply, cls="MET", route=Route.ORAL, pid="P"):
    return DispensingRecord(pid, cls, D0 + timedelta(days=day), supply, route)


def test_full_year():
    r = pdc([fill(0, 365)], D0, 365)
    assert r.pdc == 1.0 and r.label and r.mpr == 1.0


def test_shift_rule_and_mpr_overrun():
    two = [fill(0, 30), fill(20, 30)]
    assert pdc(two, D0, 60).pdc == 1.0
    assert mpr(two, D0, 60) == 1.0
    three = two + [fill(25, 30)]
    assert pdc(three, D0, 60).pdc == 1.0
    assert mpr(three, D0, 60) == 1.5


def test_insulin_adjustment():
    f = fill(0, 30, route=Route.INSULIN)
    assert effective_supply(f) == 45 and effective_supply(f, insulin_adjust=False) == 30
    assert coverage_timeline([f], D0, 100).numerator == 45
    assert effective_supply(fill(0, 1, route=Route.INSULIN)) == 2  # 1.5 rounds half up
    assert mpr([f], D0, 30) == 1.0
    assert mpr([f], D0, 30, insulin_adjust=True) == 1.5


def test_multiclass_rules():
    a = [fill(0, 30, "A")]
    b = [fill(30, 30, "B")]
    res = {r: pdc_multiclass({"A": a, "B": b}, D0, 60, rule=r).pdc for r in CombineRule}
    assert res == {CombineRule.ANY_COVERED: 1.0, CombineRule.ALL_COVERED: 0.0, CombineRule.MEAN_OF_CLASS_MEANS: 0.5}
    both = {"A": [fill(0, 60, "A")], "B": [fill(0, 60, "B")]}
    assert all(pdc_multiclass(both, D0, 60, rule=r).pdc == 1.0 for r in CombineRule)
    one = {"A": [fill(5, 20, "A")]}
    assert len({pdc_multiclass(one, D0, 60, rule=r).pdc for r in CombineRule}) == 1
    with pytest.raises(ValueError):
        pdc_multiclass({}, D0, 60)


def test_mpr_examples():
    assert mpr([fill(0, 30)], D0, 30) == 1.0
    assert mpr([fill(0, 30), fill(10, 30)], D0, 30) == 2.0
    assert mpr([], D0, 30) == 0.0
    assert mpr([fill(40, 30)], D0, 30) == 0.0


def test_hospital_days_and_empty_period():
    f = [fill(0, 10)]
    hosp = [D0 + timedelta(days=k) for k in range(10, 20)]
    tl = coverage_timeline(f, D0, 30, hosp)
    assert tl.denominator == 20 and tl.numerator == 10
    assert pdc(f, D0, 30, hosp).pdc == 0.5
    with pytest.raises(EmptyPeriod):
        pdc(f, D0, 3, [D0, D0 + timedelta(days=1), D0 + timedelta(days=2)])
    with pytest.raises(EmptyPeriod):
        mpr(f, D0, 0)


def test_gap_statistic():
    r = pdc([fill(0, 10), fill(200, 10)], D0, 365, gap_days=90)
    assert r.longest_gap == 190 and r.gap_discontinued and not r.label


@pytest.mark.parametrize("seed", range(10))
def test_matches_day_walk_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(20, 120))
    raw = [(int(rng.integers(-10, n + 10)), int(rng.integers(1, 40)), bool(rng.random() < 0.3)) for _ in range(6)]
    hosp = sorted({int(d) for d in rng.integers(0, n, 4)})
    fills = [fill(d, s, route=Route.INSULIN if ins else Route.ORAL) for d, s, ins in raw]
    got = pdc(fills, D0, n, [D0 + timedelta(days=h) for h in hosp]).pdc
    assert got == pytest.approx(oracles.pdc(raw, n, hosp), abs=1e-15)


def test_adherence_table(tmp_path):
    p = Patient("P1", date(1960, 1, 1), Sex.FEMALE, Ethnicity.NOT_HISPANIC_OR_LATINO)
    q = Patient("P2", date(1960, 1, 1), Sex.MALE, Ethnicity.NOT_HISPANIC_OR_LATINO)
    disp = [fill(0, 365, "MET", pid="P1"), fill(0, 180, "SU", pid="P1"), fill(10, 30, "MET", pid="P2")]
    encs = [Encounter("E1", "P2", D0 + timedelta(days=50), EncounterType.INPATIENT, (), (), {})]
    ds = Dataset([p, q], encs, disp, date(2020, 1, 1), date(2023, 1, 1))
    rows = adherence_table(ds)
    assert [(r["patient_id"], r["drug_class"]) for r in rows] == [
        ("P1", "MET"), ("P1", "SU"), ("P1", "ALL"), ("P2", "MET")]
    assert rows[0]["pdc"] == 1.0 and rows[0]["label"] == 1
    assert rows[2]["pdc"] == pytest.approx(180 / 365)
    assert rows[3]["pdc"] == pytest.approx(30 / 364)
    out = tmp_path / "adh.csv"
    write_adherence(rows, out)
    header = next(csv.reader(open(out)))
    assert header == ["patient_id", "drug_class", "pdc", "mpr", "label", "gap_discontinued"]
