from datetime import date, timedelta

import pytest

from survrisk.ehr import (
    Dataset, Encounter, EncounterType, Ethnicity, LabKind, LabResult, LabSetting, Patient, Sex,
)
from survrisk.errors import EmptyCohort, InvalidConfig
from survrisk.labeling import (
    CohortSpec, EventKind, EventRecord, Task, build_instances, detect_events, label_table, months_between,
    read_instances, split_train_test, write_instances,
)

BASE = date(2017, 1, 2)


class NoFeatures:
    def extract(self, dataset, patient, encounter):
        return {"age": float(patient.age_at(encounter.date))}


def lab(kind, value, d, setting=LabSetting.OUTPATIENT):
    return LabResult(kind, value, d, setting)


def enc(eid, pid, d, labs=(), dx=(), etype=EncounterType.OUTPATIENT):
    return Encounter(eid, pid, d, etype, tuple(dx), tuple(labs), {})


def patient(pid="P", born=date(1960, 1, 1)):
    return Patient(pid, born, Sex.FEMALE, Ethnicity.NOT_HISPANIC_OR_LATINO)


def dataset(encounters, patients=None):
    return Dataset(patients or [patient()], encounters, [], date(2016, 1, 1), date(2020, 6, 30))


def test_months_truncate_toward_zero():
    assert months_between(BASE, BASE + timedelta(days=62)) == 2
    assert months_between(BASE, BASE - timedelta(days=31)) == -1
    assert months_between(BASE, BASE + timedelta(days=30)) == 0


def test_dm_needs_two_abnormal_results_within_window():
    d1, d2 = date(2018, 1, 1), date(2018, 1, 20)
    ds = dataset([enc("a", "P", d1, [lab(LabKind.A1C, 7.0, d1)]), enc("b", "P", d2, [lab(LabKind.FPG, 140, d2)])])
    kinds = {e.kind: e.first_date for e in detect_events(ds)}
    assert kinds[EventKind.DM] == d2


def test_dm_not_detected_when_results_far_apart():
    d1, d2 = date(2018, 1, 1), date(2018, 3, 1)
    ds = dataset([enc("a", "P", d1, [lab(LabKind.A1C, 7.0, d1)]), enc("b", "P", d2, [lab(LabKind.A1C, 7.1, d2)])])
    assert EventKind.DM not in {e.kind for e in detect_events(ds)}


def test_inpatient_glucose_does_not_count():
    d1 = date(2018, 1, 1)
    ds = dataset([enc("a", "P", d1, [lab(LabKind.FPG, 110, d1, LabSetting.OTHER)])])
    assert detect_events(ds) == []
    ds = dataset([enc("a", "P", d1, [lab(LabKind.FPG, 110, d1)])])
    assert [e.kind for e in detect_events(ds)] == [EventKind.PreDM]


def test_uncontrolled_and_complication_codes():
    d1, d2 = date(2018, 1, 1), date(2018, 5, 1)
    ds = dataset([enc("a", "P", d1, [lab(LabKind.A1C, 9.4, d1)]), enc("b", "P", d2, dx=["E11.21"])])
    kinds = {e.kind: e.first_date for e in detect_events(ds)}
    assert kinds[EventKind.UncontrolledDM] == d1
    assert kinds[EventKind.DiabeticNephropathy] == d2


def timeline():
    t = [BASE + timedelta(days=31 * i) for i in range(8)]
    pats = [patient("P1"), patient("P2"), patient("P3")]
    encs = [enc("E1_1", "P1", t[0]), enc("E2_1", "P1", t[2]), enc("E3_1", "P1", t[5]), enc("E4_1", "P1", t[7]),
            enc("E1_2", "P2", t[1]), enc("E2_2", "P2", t[3]),
            enc("E1_3", "P3", t[2]), enc("E2_3", "P3", t[3]), enc("E3_3", "P3", t[5])]
    events = [EventRecord("P1", EventKind.DM, t[4]), EventRecord("P3", EventKind.DM, t[7])]
    spec = CohortSpec(Task.PreDMtoDM, window=(date(2017, 1, 1), date(2017, 12, 31)), left_censor_days=0,
                      confirmation_lookahead_days=0, prerequisite=())
    return dataset(encs, pats), events, spec


def test_timeline_labels():
    ds, events, spec = timeline()
    rows = label_table(ds, events, spec)
    assert [r.observed_time for r in rows] == [4, 2, -1, -3, 2, 0, 5, 4, 2]
    assert [r.event_indicator for r in rows] == [1, 1, 1, 1, 0, 0, 1, 1, 1]
    assert [r.used for r in rows] == [True, True, False, False, True, True, True, True, True]


def test_prerequisite_required():
    ds, events, _ = timeline()
    spec = CohortSpec(Task.PreDMtoDM, window=(date(2017, 1, 1), date(2017, 12, 31)), left_censor_days=0)
    assert all(r.remark == "no prerequisite event" for r in label_table(ds, events, spec))
    with pytest.raises(EmptyCohort):
        build_instances(ds, events, spec, NoFeatures())


def test_t1dm_excluded():
    ds, events, spec = timeline()
    events = events + [EventRecord("P2", EventKind.T1DM, date(2016, 6, 1))]
    rows = [r for r in label_table(ds, events, spec) if r.patient_id == "P2"]
    assert all(r.remark == "T1DM" for r in rows)


def test_pregnancy_excluded_within_lookback():
    d = date(2018, 6, 1)
    encs = [enc("a", "P", d - timedelta(days=100), dx=["Z34.90"]), enc("b", "P", d),
            enc("c", "P", d + timedelta(days=300))]
    spec = CohortSpec(Task.PreDMtoDM, left_censor_days=0, prerequisite=())
    rows = label_table(dataset(encs), [], spec)
    assert [r.remark for r in rows] == ["pregnant", "pregnant", ""]


def test_age_filter():
    d = date(2018, 6, 1)
    ds = dataset([enc("a", "P", d), enc("b", "P", d + timedelta(days=40))], [patient(born=date(2005, 1, 1))])
    rows = label_table(ds, [], CohortSpec(Task.PreDMtoDM, left_censor_days=0, prerequisite=()))
    assert all(r.remark == "age out of range" for r in rows)


def test_left_censor_guard():
    d = date(2018, 6, 1)
    ds = dataset([enc("a", "P", d), enc("b", "P", d + timedelta(days=40)), enc("c", "P", d + timedelta(days=120))])
    rows = label_table(ds, [], CohortSpec(Task.PreDMtoDM, prerequisite=()))
    assert [r.used for r in rows] == [False, False, True]


def test_cohort_spec_validation():
    with pytest.raises(InvalidConfig):
        CohortSpec.from_dict({"task": "PreDMtoDM", "min_age": 50, "max_age": 40})
    with pytest.raises(InvalidConfig):
        CohortSpec.from_dict({"task": "PreDMtoDM", "bogus": 1})


def test_split_sizes_and_determinism(small_dataset):
    spec = CohortSpec(Task.PreDMtoDM)
    inst = build_instances(small_dataset, detect_events(small_dataset), spec, NoFeatures())
    train, test = split_train_test(inst, 0.7, seed=4)
    assert len(train) == int(0.7 * len(inst) + 0.5)
    assert len(train) + len(test) == len(inst)
    again, _ = split_train_test(inst, 0.7, seed=4)
    assert train == again


def test_instances_csv_round_trip(tmp_path, small_dataset):
    inst = build_instances(small_dataset, detect_events(small_dataset), CohortSpec(Task.PreDMtoDM))[:5]
    write_instances(inst, tmp_path / "i.csv")
    back, names = read_instances(tmp_path / "i.csv")
    assert [b.encounter_id for b in back] == [i.encounter_id for i in inst]
    assert names == list(inst[0].features)
    assert [b.observed_time for b in back] == [i.observed_time for i in inst]
