import json
import math
from datetime import date, timedelta

import numpy as np
import pandas as pd
import pytest

from survrisk.ehr import Dataset, Encounter, EncounterType, Ethnicity, LabKind, LabResult, LabSetting, Patient, Sex
from survrisk.errors import AllMissingColumn, UnknownColumn
from survrisk.features import (
    EncounterFeatures, FeatureKind, FeatureSpec, FittedPreprocessor, age_bucket, fit_transform,
)

C, B, N, D, K = (FeatureKind.CONTINUOUS, FeatureKind.BINARY, FeatureKind.COUNT, FeatureKind.DAYS_SINCE,
                 FeatureKind.CATEGORICAL)


def test_age_buckets():
    assert age_bucket(18) == "18-39"
    assert age_bucket(59) == "40-59"
    assert age_bucket(80) == "80-109"
    assert age_bucket(float("nan")) is None


def test_extraction_windows():
    d0 = date(2019, 1, 1)
    p = Patient("P", date(1950, 6, 1), Sex.MALE, Ethnicity.HISPANIC_OR_LATINO)
    a1c = lambda v, d: LabResult(LabKind.A1C, v, d, LabSetting.OUTPATIENT)  # noqa: E731
    encs = [
        Encounter("old", "P", d0 - timedelta(days=400), EncounterType.OUTPATIENT, ("J06.9",),
                  (a1c(9.0, d0 - timedelta(days=400)),), {}),
        Encounter("ed", "P", d0 - timedelta(days=30), EncounterType.EMERGENCY, ("M54.5",),
                  (a1c(6.0, d0 - timedelta(days=30)),), {"systolic": 130.0}),
        Encounter("now", "P", d0, EncounterType.EMERGENCY, ("E11.9",), (a1c(7.0, d0),), {"systolic": 150.0}),
    ]
    ds = Dataset([p], encs, [], date(2017, 1, 1), date(2020, 1, 1))
    fx = EncounterFeatures()
    f = fx.extract(ds, p, encs[2])
    assert f["age"] == 68 and f["sex_female"] == 0 and f["ethnicity_hispanic"] == 1
    assert f["a1c_mean_365"] == pytest.approx(6.5)
    assert f["a1c_last_365"] == 7.0 and f["a1c_max_365"] == 7.0
    assert f["systolic_mean_365"] == pytest.approx(140.0)
    assert f["days_since_ed"] == 30 and f["ed_count_365"] == 1
    assert math.isnan(f["days_since_inpatient"])
    assert f["dx_M54.5_12m"] == 1 and f["dx_J06.9_12m"] == 0
    assert "dx_E11.9_12m" not in f
    assert [s.name for s in fx.specs(ds)][-2:] == ["dx_J06.9_12m", "dx_M54.5_12m"]


def frame():
    return pd.DataFrame({
        "age": [30.0, 35.0, 70.0, 75.0, 72.0, 31.0],
        "sex_female": [1.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        "lab": [5.0, np.nan, 8.0, 10.0, np.nan, 7.0],
        "flag": [1.0, 0.0, np.nan, 1.0, 0.0, 0.0],
        "since": [10.0, np.nan, 40.0, 5.0, 60.0, np.nan],
        "kind": ["a", "b", "a", None, "c", "b"],
    })


SPECS = [FeatureSpec("age", C), FeatureSpec("sex_female", B), FeatureSpec("lab", C), FeatureSpec("flag", B),
         FeatureSpec("since", D), FeatureSpec("kind", K)]


def test_imputation_rules():
    m, pre = fit_transform(frame(), SPECS)
    raw = m.values * np.array([pre.stats[n].scale for n in m.names]) + np.array([pre.stats[n].center for n in m.names])
    col = {n: raw[:, j] for j, n in enumerate(m.names)}
    # lab: row 1 (18-39, female) -> mean of cell {5, 7}; row 4 (60-79, male) -> mean of {8, 10}
    assert col["lab"][1] == pytest.approx(6.0)
    assert col["lab"][4] == pytest.approx(9.0)
    assert col["flag"][2] == 0.0
    assert col["since"][1] == 60.0 and col["since"][5] == 60.0
    assert m.imputed[1, m.names.index("lab")]
    assert m.names[-3:] == ["kind=a", "kind=b", "kind=c"]
    assert all(col["kind=a"] + col["kind=b"] + col["kind=c"] <= 1)


def test_zscore_after_imputation():
    m, _ = fit_transform(frame(), SPECS)
    cont = [j for j, c in enumerate(m.columns) if c.kind is C]
    assert cont == [m.names.index("age"), m.names.index("lab")]
    assert np.allclose(m.values[:, cont].mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(m.values[:, cont].std(axis=0), 1.0)
    # non-continuous columns keep their imputed raw values
    assert set(np.unique(m.values[:, m.names.index("flag")])) <= {0.0, 1.0}


def test_outlier_cutoff():
    vals = [1.0] * 30 + [100.0]
    f = pd.DataFrame({"age": [40.0] * 31, "sex_female": [1.0] * 31, "x": vals})
    specs = [FeatureSpec("age", C), FeatureSpec("sex_female", B), FeatureSpec("x", C)]
    m, pre = fit_transform(f, specs)
    cutoff = np.mean(vals) + 3 * np.std(vals)
    assert pre.stats["x"].outlier_cutoff == pytest.approx(cutoff)
    assert m.imputed[-1, 2]


def test_all_missing_column():
    f = frame()
    f["lab"] = np.nan
    with pytest.raises(AllMissingColumn):
        fit_transform(f, SPECS)


def test_transform_matches_and_serializes():
    m, pre = fit_transform(frame(), SPECS)
    again = pre.transform(frame())
    assert np.array_equal(again.values, m.values)
    back = FittedPreprocessor.from_dict(json.loads(json.dumps(pre.to_dict())))
    assert np.array_equal(back.transform(frame()).values, m.values)


def test_transform_column_checks():
    _, pre = fit_transform(frame(), SPECS)
    with pytest.raises(UnknownColumn):
        pre.transform(frame().assign(extra=1.0))
    with pytest.raises(UnknownColumn):
        pre.transform(frame().drop(columns=["lab"]))
    m = pre.transform(frame().drop(columns=["lab"]), allow_missing=True)
    assert m.imputed[:, m.names.index("lab")].all()


def test_duplicate_names_rejected():
    with pytest.raises(ValueError):
        fit_transform(frame(), SPECS + [FeatureSpec("age", C)])


def simple(values, name="lab"):
    n = len(values)
    return pd.DataFrame({"age": [50.0] * n, "sex_female": [1.0] * n, name: values})


SIMPLE = [FeatureSpec("age", C), FeatureSpec("sex_female", B), FeatureSpec("lab", C)]


def test_zscore_example_and_tolerance():
    m, _ = fit_transform(simple([1.0, 2.0, 3.0]), SIMPLE)
    col = m.values[:, 2]
    assert abs(col.mean()) < 1e-9 and abs(col.std() - 1.0) < 1e-9


def test_days_since_example():
    f = pd.DataFrame({"age": [50.0] * 3, "sex_female": [1.0] * 3, "since": [10.0, np.nan, 40.0]})
    m, _ = fit_transform(f, [FeatureSpec("age", C), FeatureSpec("sex_female", B), FeatureSpec("since", D)])
    assert m.values[1, 2] == 40.0


def test_planted_outlier_becomes_cell_mean():
    vals = [1.0 if k % 2 else -1.0 for k in range(99)] + [50.0]
    m, pre = fit_transform(simple(vals), SIMPLE)
    st = pre.stats["lab"]
    assert m.imputed[-1, 2]
    # all rows share one (age bucket, sex) cell, so the imputed value is the mean of the 99 kept values
    assert m.values[-1, 2] * st.scale + st.center == pytest.approx(np.mean(vals[:99]), abs=1e-12)


def test_frozen_outlier_cutoff_at_transform():
    _, pre = fit_transform(simple([1.0, 2.0, 3.0, 2.0]), SIMPLE)
    st = pre.stats["lab"]
    test = pre.transform(simple([st.outlier_cutoff + 1.0, 2.0]))
    imputed_value = st.impute_cells.get("40-59|1", st.impute_global)
    assert test.values[0, 2] == pytest.approx((imputed_value - st.center) / st.scale)
    assert test.imputed[0, 2] and not test.imputed[1, 2]


def test_empty_test_set_and_no_leakage():
    train = frame()
    _, pre = fit_transform(train, SPECS)
    before = json.dumps(pre.to_dict(), sort_keys=True)
    empty = pre.transform(train.iloc[:0])
    assert empty.values.shape == (0, len(empty.names))
    pre.transform(train.assign(lab=train["lab"] * 100))
    assert json.dumps(pre.to_dict(), sort_keys=True) == before
    once = pre.transform(train)
    assert np.array_equal(once.values, pre.transform(train).values)
