from datetime import date

import pytest

from survrisk.ehr import (
    Dataset, Encounter, EncounterType, Ethnicity, LabKind, LabResult, LabSetting, Patient, Sex, age_on,
    load_dataset, write_dataset,
)
from survrisk.errors import MissingColumn, UnknownPatient, UnparseableValue
from survrisk.synthetic import SyntheticConfig, generate_synthetic

PATIENTS = "patient_id,birth_date,sex,ethnicity\nP1,1970-05-01,Female,HispanicOrLatino\n"
HEADER = "encounter_id,patient_id,date,encounter_type,diagnoses\n"


def write(tmp_path, patients=PATIENTS, encounters=HEADER, **extra):
    (tmp_path / "patients.csv").write_text(patients)
    (tmp_path / "encounters.csv").write_text(encounters)
    for name, text in extra.items():
        (tmp_path / f"{name}.csv").write_text(text)
    return tmp_path


def test_age_is_whole_years():
    assert age_on(date(1970, 5, 1), date(2020, 4, 30)) == 49
    assert age_on(date(1970, 5, 1), date(2020, 5, 1)) == 50


def test_empty_encounters_file(tmp_path):
    ds = load_dataset(write(tmp_path))
    assert len(ds.patients) == 1 and ds.encounters == []


def test_minimal_dataset(tmp_path):
    ds = load_dataset(write(tmp_path, encounters=HEADER + "E1,P1,2018-02-03,Outpatient,I10;E78.5\n"))
    assert len(ds.encounters) == 1
    assert ds.encounters[0].diagnoses == ("I10", "E78.5")


def test_unknown_patient_names_encounter(tmp_path):
    with pytest.raises(UnknownPatient, match="E9"):
        load_dataset(write(tmp_path, encounters=HEADER + "E9,P2,2018-02-03,Outpatient,\n"))


def test_missing_column(tmp_path):
    with pytest.raises(MissingColumn, match="sex"):
        load_dataset(write(tmp_path, patients="patient_id,birth_date,ethnicity\n"))


def test_unparseable_value_reports_row(tmp_path):
    enc = HEADER + "E1,P1,2018-02-03,Outpatient,\nE2,P1,2018-13-03,Outpatient,\n"
    with pytest.raises(UnparseableValue) as err:
        load_dataset(write(tmp_path, encounters=enc))
    assert err.value.row == 3 and err.value.column == "date"


def test_lab_out_of_range_rejected(tmp_path):
    enc = HEADER + "E1,P1,2018-02-03,Outpatient,\n"
    labs = "patient_id,date,kind,value,setting\nP1,2018-02-03,A1C,25,Outpatient\n"
    with pytest.raises(UnparseableValue):
        load_dataset(write(tmp_path, encounters=enc, labs=labs))


def test_lab_value_bounds():
    with pytest.raises(ValueError):
        LabResult(LabKind.FPG, 0.0, date(2020, 1, 1), LabSetting.OUTPATIENT)
    LabResult(LabKind.A1C, 20.0, date(2020, 1, 1), LabSetting.OUTPATIENT)


def test_column_mapping(tmp_path):
    write(tmp_path, patients="pid,dob,gender,eth\nP1,1970-05-01,Male,NotHispanicOrLatino\n")
    schema = {"columns": {"patients": {"patient_id": "pid", "birth_date": "dob", "sex": "gender",
                                       "ethnicity": "eth"}}}
    ds = load_dataset(tmp_path, schema)
    assert ds.patients[0].sex is Sex.MALE


def test_round_trip(tmp_path):
    ds = generate_synthetic(SyntheticConfig(n_patients=20, seed=5))
    write_dataset(ds, tmp_path)
    back = load_dataset(tmp_path)
    assert back.patients == ds.patients
    assert back.encounters == ds.encounters
    assert back.dispensings == ds.dispensings
    assert (back.observation_start, back.observation_end) == (ds.observation_start, ds.observation_end)


def test_generator_is_deterministic():
    a = generate_synthetic(SyntheticConfig(n_patients=30, seed=9))
    b = generate_synthetic(SyntheticConfig(n_patients=30, seed=9))
    c = generate_synthetic(SyntheticConfig(n_patients=30, seed=10))
    assert a.encounters == b.encounters
    assert a.encounters != c.encounters


def test_generated_dataset_is_valid(small_dataset):
    small_dataset.validate()
    for e in small_dataset.encounters:
        assert small_dataset.observation_start <= e.date <= small_dataset.observation_end


def test_dataset_indexes():
    p = Patient("A", date(1980, 1, 1), Sex.FEMALE, Ethnicity.NOT_HISPANIC_OR_LATINO)
    encs = [Encounter("e2", "A", date(2019, 3, 1), EncounterType.OUTPATIENT, (), (), {}),
            Encounter("e1", "A", date(2019, 1, 1), EncounterType.EMERGENCY, (), (), {})]
    ds = Dataset([p], encs, [], date(2019, 1, 1), date(2019, 12, 31))
    assert [e.encounter_id for e in ds.encounters_by_patient["A"]] == ["e1", "e2"]
