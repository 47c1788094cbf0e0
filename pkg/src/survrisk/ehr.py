"""Patient/encounter data model, CSV ingestion and serialization.

A dataset on disk is a directory of CSV files plus a ``schema.json`` sidecar
that declares the observation window, the file names and the column mapping
(canonical name -> header in the file).
"""
from __future__ import annotations

import csv
import enum
import json
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from datetime import date
from functools import cached_property
from pathlib import Path
from typing import Any

from .errors import DataError, MissingColumn, UnknownPatient, UnparseableValue


class Sex(str, enum.Enum):
    FEMALE = "Female"
    MALE = "Male"


class Ethnicity(str, enum.Enum):
    HISPANIC_OR_LATINO = "HispanicOrLatino"
    NOT_HISPANIC_OR_LATINO = "NotHispanicOrLatino"


class EncounterType(str, enum.Enum):
    EMERGENCY = "Emergency"
    INPATIENT = "Inpatient"
    OUTPATIENT = "Outpatient"


class LabKind(str, enum.Enum):
    A1C = "A1C"
    FPG = "FPG"
    TWO_HOUR_PG = "TwoHourPG"
    RPG = "RPG"


class LabSetting(str, enum.Enum):
    OUTPATIENT = "Outpatient"
    OTHER = "Other"


class Route(str, enum.Enum):
    ORAL = "Oral"
    INSULIN = "Insulin"


VITAL_NAMES = ("systolic", "diastolic", "bmi", "ldl", "hdl", "triglycerides")

# upper bounds on plausible lab values; A1C in percent, glucose in mg/dL
LAB_MAX = {LabKind.A1C: 20.0, LabKind.FPG: 1500.0, LabKind.TWO_HOUR_PG: 1500.0, LabKind.RPG: 1500.0}


def age_on(birth_date: date, on: date) -> int:
    """Whole years between ``birth_date`` and ``on`` (floor)."""
    years = on.year - birth_date.year
    if (on.month, on.day) < (birth_date.month, birth_date.day):
        years -= 1
    return years


@dataclass(frozen=True)
class Patient:
    patient_id: str
    birth_date: date
    sex: Sex
    ethnicity: Ethnicity

    def age_at(self, on: date) -> int:
        return age_on(self.birth_date, on)


@dataclass(frozen=True)
class LabResult:
    kind: LabKind
    value: float
    date: date
    setting: LabSetting

    def __post_init__(self):
        if not (math.isfinite(self.value) and 0 < self.value <= LAB_MAX[self.kind]):
            raise ValueError(f"{self.kind.value} value {self.value} outside (0, {LAB_MAX[self.kind]:g}]")


@dataclass(frozen=True)
class Encounter:
    encounter_id: str
    patient_id: str
    date: date
    encounter_type: EncounterType
    diagnoses: tuple[str, ...] = ()
    labs: tuple[LabResult, ...] = ()
    vitals: dict[str, float] = field(default_factory=dict, hash=False)


@dataclass(frozen=True)
class DispensingRecord:
    patient_id: str
    drug_class: str
    fill_date: date
    days_supply: int
    route: Route = Route.ORAL

    def __post_init__(self):
        if self.days_supply < 1:
            raise ValueError(f"days_supply must be >= 1, got {self.days_supply}")


@dataclass(frozen=True)
class Dataset:
    patients: list[Patient]
    encounters: list[Encounter]
    dispensings: list[DispensingRecord]
    observation_start: date
    observation_end: date

    def __post_init__(self):
        if self.observation_start > self.observation_end:
            raise DataError("observation_start must not be after observation_end")

    @cached_property
    def patient_index(self) -> dict[str, Patient]:
        return {p.patient_id: p for p in self.patients}

    @cached_property
    def encounters_by_patient(self) -> dict[str, list[Encounter]]:
        """Encounters per patient sorted by (date, encounter_id)."""
        out: dict[str, list[Encounter]] = {p.patient_id: [] for p in self.patients}
        for enc in self.encounters:
            out.setdefault(enc.patient_id, []).append(enc)
        for encs in out.values():
            encs.sort(key=lambda e: (e.date, e.encounter_id))
        return out

    @cached_property
    def labs_by_patient(self) -> dict[str, list[LabResult]]:
        out: dict[str, list[LabResult]] = {p.patient_id: [] for p in self.patients}
        for enc in self.encounters:
            out.setdefault(enc.patient_id, []).extend(enc.labs)
        for labs in out.values():
            labs.sort(key=lambda lab: lab.date)
        return out

    def validate(self) -> None:
        seen = set()
        for p in self.patients:
            if p.patient_id in seen:
                raise DataError(f"duplicate patient_id {p.patient_id!r}")
            seen.add(p.patient_id)
        for enc in self.encounters:
            if enc.patient_id not in seen:
                raise UnknownPatient(enc.encounter_id, enc.patient_id)
            if not (self.observation_start <= enc.date <= self.observation_end):
                raise DataError(f"encounter {enc.encounter_id!r} dated {enc.date} outside observation window")


# ---------------------------------------------------------------------------
# CSV schema

FILE_COLUMNS: dict[str, tuple[str, ...]] = {
    "patients": ("patient_id", "birth_date", "sex", "ethnicity"),
    "encounters": ("encounter_id", "patient_id", "date", "encounter_type", "diagnoses"),
    "labs": ("patient_id", "date", "kind", "value", "setting"),
    "vitals": ("patient_id", "date", "name", "value"),
    "dispensings": ("patient_id", "drug_class", "fill_date", "days_supply", "route"),
}
REQUIRED_FILES = ("patients", "encounters")


def default_schema(observation_start: date | None = None, observation_end: date | None = None) -> dict[str, Any]:
    schema: dict[str, Any] = {
        "files": {name: f"{name}.csv" for name in FILE_COLUMNS},
        "columns": {name: {c: c for c in cols} for name, cols in FILE_COLUMNS.items()},
    }
    if observation_start is not None:
        schema["observation_start"] = observation_start.isoformat()
    if observation_end is not None:
        schema["observation_end"] = observation_end.isoformat()
    return schema


class _Rows:
    """Iterates a CSV file yielding (line_number, canonical-keyed row)."""

    def __init__(self, path: Path, kind: str, mapping: Mapping[str, str]):
        self.path = path
        self.kind = kind
        self.mapping = mapping

    def __iter__(self):
        with open(self.path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            for canonical in FILE_COLUMNS[self.kind]:
                if self.mapping.get(canonical, canonical) not in header:
                    raise MissingColumn(self.path.name, self.mapping.get(canonical, canonical))
            for line_no, raw in enumerate(reader, start=2):
                yield line_no, {c: (raw[self.mapping.get(c, c)] or "").strip() for c in FILE_COLUMNS[self.kind]}


def _parse(fn, file: str, row: int, column: str, value: str):
    try:
        return fn(value)
    except (ValueError, KeyError) as exc:
        raise UnparseableValue(file, row, column, value, str(exc)) from None


def _finite(value: str) -> float:
    x = float(value)
    if not math.isfinite(x):
        raise ValueError("not finite")
    return x


def load_dataset(source: str | Path | Mapping[str, str | Path], schema: Mapping[str, Any] | None = None) -> Dataset:
    """Load and validate a dataset.

    Parameters
    ----------
    source : path or mapping
        A directory holding the CSV files (and optionally ``schema.json``), or
        a mapping from file kind (``patients``, ``encounters``, ...) to path.
    schema : mapping, optional
        Column mapping and observation window. Defaults to the directory's
        ``schema.json`` or the canonical layout.

    Raises
    ------
    MissingColumn, UnparseableValue, UnknownPatient, DataError
    """
    if isinstance(source, Mapping):
        paths = {k: Path(v) for k, v in source.items()}
        base = None
    else:
        base = Path(source)
        if schema is None and (base / "schema.json").exists():
            schema = json.loads((base / "schema.json").read_text())
        paths = {}
    schema = dict(schema or default_schema())
    files = {**default_schema()["files"], **schema.get("files", {})}
    columns = {**default_schema()["columns"], **schema.get("columns", {})}
    if base is not None:
        paths = {k: base / files[k] for k in FILE_COLUMNS}
    for req in REQUIRED_FILES:
        if req not in paths or not paths[req].exists():
            raise DataError(f"required file for {req!r} not found")

    def rows(kind):
        p = paths.get(kind)
        if p is None or not p.exists():
            return iter(())
        return iter(_Rows(p, kind, columns[kind]))

    patients: list[Patient] = []
    seen: set[str] = set()
    fname = paths["patients"].name
    for line, r in rows("patients"):
        pid = r["patient_id"]
        if not pid:
            raise UnparseableValue(fname, line, "patient_id", pid, "empty id")
        if pid in seen:
            raise UnparseableValue(fname, line, "patient_id", pid, "duplicate patient_id")
        seen.add(pid)
        patients.append(Patient(
            pid,
            _parse(date.fromisoformat, fname, line, "birth_date", r["birth_date"]),
            _parse(Sex, fname, line, "sex", r["sex"]),
            _parse(Ethnicity, fname, line, "ethnicity", r["ethnicity"]),
        ))

    enc_rows = []
    fname = paths["encounters"].name
    for line, r in rows("encounters"):
        if r["patient_id"] not in seen:
            raise UnknownPatient(r["encounter_id"], r["patient_id"])
        enc_rows.append(dict(
            encounter_id=r["encounter_id"],
            patient_id=r["patient_id"],
            date=_parse(date.fromisoformat, fname, line, "date", r["date"]),
            encounter_type=_parse(EncounterType, fname, line, "encounter_type", r["encounter_type"]),
            diagnoses=tuple(c.strip() for c in r["diagnoses"].split(";") if c.strip()),
            labs=[],
            vitals={},
        ))

    start = schema.get("observation_start")
    end = schema.get("observation_end")
    if start is None or end is None:
        dates = [e["date"] for e in enc_rows]
        start = start or (min(dates).isoformat() if dates else date.min.isoformat())
        end = end or (max(dates).isoformat() if dates else date.max.isoformat())
    obs_start, obs_end = date.fromisoformat(start), date.fromisoformat(end)
    for e in enc_rows:
        if not (obs_start <= e["date"] <= obs_end):
            raise DataError(f"encounter {e['encounter_id']!r} dated {e['date']} outside observation window")

    by_key: dict[tuple[str, date], dict] = {}
    for e in enc_rows:
        by_key.setdefault((e["patient_id"], e["date"]), e)

    if "labs" in paths:
        fname = paths["labs"].name
        for line, r in rows("labs"):
            d = _parse(date.fromisoformat, fname, line, "date", r["date"])
            target = by_key.get((r["patient_id"], d))
            if target is None:
                raise UnparseableValue(fname, line, "date", r["date"], "no encounter for this patient on this date")
            lab = _parse(lambda _: LabResult(LabKind(r["kind"]), _finite(r["value"]), d, LabSetting(r["setting"])),
                         fname, line, "value", r["value"])
            target["labs"].append(lab)

    if "vitals" in paths:
        fname = paths["vitals"].name
        for line, r in rows("vitals"):
            d = _parse(date.fromisoformat, fname, line, "date", r["date"])
            target = by_key.get((r["patient_id"], d))
            if target is None:
                raise UnparseableValue(fname, line, "date", r["date"], "no encounter for this patient on this date")
            target["vitals"][r["name"]] = _parse(_finite, fname, line, "value", r["value"])

    dispensings = []
    if "dispensings" in paths:
        fname = paths["dispensings"].name
        for line, r in rows("dispensings"):
            if r["patient_id"] not in seen:
                raise UnparseableValue(fname, line, "patient_id", r["patient_id"], "unknown patient")
            dispensings.append(DispensingRecord(
                r["patient_id"],
                r["drug_class"],
                _parse(date.fromisoformat, fname, line, "fill_date", r["fill_date"]),
                _parse(lambda v: _positive_int(v), fname, line, "days_supply", r["days_supply"]),
                _parse(Route, fname, line, "route", r["route"] or "Oral"),
            ))

    encounters = [Encounter(**{**e, "labs": tuple(e["labs"])}) for e in enc_rows]
    ds = Dataset(patients, encounters, dispensings, obs_start, obs_end)
    ds.validate()
    return ds


def _positive_int(v: str) -> int:
    n = int(v)
    if n < 1:
        raise ValueError("must be >= 1")
    return n


def _fmt(x: float) -> str:
    return repr(float(x))


def write_dataset(dataset: Dataset, directory: str | Path) -> Path:
    """Write ``dataset`` as canonical CSV files plus ``schema.json``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    schema = default_schema(dataset.observation_start, dataset.observation_end)

    def writer(kind):
        fh = open(out / schema["files"][kind], "w", newline="", encoding="utf-8")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FILE_COLUMNS[kind])
        return fh, w

    fh, w = writer("patients")
    with fh:
        for p in dataset.patients:
            w.writerow([p.patient_id, p.birth_date.isoformat(), p.sex.value, p.ethnicity.value])
    fh, w = writer("encounters")
    with fh:
        for e in dataset.encounters:
            w.writerow([e.encounter_id, e.patient_id, e.date.isoformat(), e.encounter_type.value, ";".join(e.diagnoses)])
    fh, w = writer("labs")
    with fh:
        for e in dataset.encounters:
            for lab in e.labs:
                w.writerow([e.patient_id, lab.date.isoformat(), lab.kind.value, _fmt(lab.value), lab.setting.value])
    fh, w = writer("vitals")
    with fh:
        for e in dataset.encounters:
            for name, value in e.vitals.items():
                w.writerow([e.patient_id, e.date.isoformat(), name, _fmt(value)])
    fh, w = writer("dispensings")
    with fh:
        for d in dataset.dispensings:
            w.writerow([d.patient_id, d.drug_class, d.fill_date.isoformat(), d.days_supply, d.route.value])
    (out / "schema.json").write_text(json.dumps(schema, indent=2, sort_keys=True) + "\n")
    return out
