"""Encounter feature extraction and train-only preprocessing.

Preprocessing runs in a fixed order: one-hot encoding of categoricals,
removal of continuous values more than three standard deviations above the
training mean, typed imputation, then z-scoring of continuous columns. All
statistics come from the training rows and are frozen in
:class:`FittedPreprocessor`.
"""
from __future__ import annotations

import enum
import math
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from datetime import timedelta
from typing import Any

import numpy as np
import pandas as pd

from .ehr import Dataset, Encounter, EncounterType, Ethnicity, LabKind, Patient, Sex
from .errors import AllMissingColumn, UnknownColumn
from .labeling import SurvivalInstance, code_matches, normalize_code


class FeatureKind(str, enum.Enum):
    CONTINUOUS = "Continuous"
    BINARY = "Binary"
    COUNT = "Count"
    DAYS_SINCE = "DaysSince"
    CATEGORICAL = "Categorical"


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: FeatureKind
    modifiable: bool = False
    mandatory: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", FeatureKind(self.kind))

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "kind": self.kind.value, "modifiable": self.modifiable, "mandatory": self.mandatory}


def check_unique(specs: Sequence[FeatureSpec]) -> None:
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ValueError(f"duplicate feature names: {dupes}")


# ---------------------------------------------------------------------------
# extraction

AGE_BUCKETS = ((18, 39), (40, 59), (60, 79), (80, 109))

# diagnosis prefixes that define labels or cohort filters; never used as features
EXCLUDED_DX_PREFIXES = ("E08", "E09", "E10", "E11", "E13", "O", "Z33", "Z34", "Z66", "R73")

WINDOW_DAYS = 365
C, B, N, D = FeatureKind.CONTINUOUS, FeatureKind.BINARY, FeatureKind.COUNT, FeatureKind.DAYS_SINCE

BASE_SPECS = (
    FeatureSpec("age", C, mandatory=True),
    FeatureSpec("age_above_65", B),
    FeatureSpec("sex_female", B, mandatory=True),
    FeatureSpec("ethnicity_hispanic", B, mandatory=True),
    FeatureSpec("a1c_last_365", C),
    FeatureSpec("a1c_mean_365", C, mandatory=True),
    FeatureSpec("a1c_max_365", C),
    FeatureSpec("fpg_mean_365", C),
    FeatureSpec("systolic_mean_365", C, modifiable=True, mandatory=True),
    FeatureSpec("diastolic_mean_365", C, modifiable=True, mandatory=True),
    FeatureSpec("bmi_last_365", C, modifiable=True),
    FeatureSpec("ldl_mean_365", C, modifiable=True, mandatory=True),
    FeatureSpec("hdl_mean_365", C, modifiable=True, mandatory=True),
    FeatureSpec("triglycerides_mean_365", C, modifiable=True, mandatory=True),
    FeatureSpec("days_since_ed", D),
    FeatureSpec("days_since_inpatient", D),
    FeatureSpec("ed_count_365", N),
    FeatureSpec("inpatient_count_365", N),
)


def dx_feature(code: str) -> str:
    return f"dx_{code.strip().upper()}_12m"


class EncounterFeatures:
    """Default extractor: demographics, 365-day lab/vital aggregates,
    utilization and 12-month diagnosis flags, as of the end of an encounter.

    ``codes`` fixes the diagnosis vocabulary; by default every code present in
    the dataset is used except the label-defining prefixes.
    """

    def __init__(self, codes: Sequence[str] | None = None):
        self.codes = tuple(codes) if codes is not None else None
        self._vocab_for: tuple[int, tuple[str, ...]] | None = None

    def vocabulary(self, dataset: Dataset) -> tuple[str, ...]:
        if self.codes is not None:
            return self.codes
        if self._vocab_for is None or self._vocab_for[0] != id(dataset):
            found = {c.strip().upper() for e in dataset.encounters for c in e.diagnoses}
            vocab = tuple(sorted(c for c in found if not code_matches(c, EXCLUDED_DX_PREFIXES)))
            self._vocab_for = (id(dataset), vocab)
        return self._vocab_for[1]

    def specs(self, dataset: Dataset) -> list[FeatureSpec]:
        return [*BASE_SPECS, *(FeatureSpec(dx_feature(c), B) for c in self.vocabulary(dataset))]

    def extract(self, dataset: Dataset, patient: Patient, encounter: Encounter) -> dict[str, Any]:
        d = encounter.date
        since = d - timedelta(days=WINDOW_DAYS)
        history = [e for e in dataset.encounters_by_patient[patient.patient_id] if e.date <= d]
        recent = [e for e in history if e.date > since]
        age = patient.age_at(d)
        out: dict[str, Any] = {
            "age": float(age),
            "age_above_65": float(age > 65),
            "sex_female": float(patient.sex is Sex.FEMALE),
            "ethnicity_hispanic": float(patient.ethnicity is Ethnicity.HISPANIC_OR_LATINO),
        }
        a1c = [lab.value for e in recent for lab in e.labs if lab.kind is LabKind.A1C]
        fpg = [lab.value for e in recent for lab in e.labs if lab.kind is LabKind.FPG]
        out["a1c_last_365"] = a1c[-1] if a1c else math.nan
        out["a1c_mean_365"] = float(np.mean(a1c)) if a1c else math.nan
        out["a1c_max_365"] = max(a1c) if a1c else math.nan
        out["fpg_mean_365"] = float(np.mean(fpg)) if fpg else math.nan
        for name in ("systolic", "diastolic", "ldl", "hdl", "triglycerides"):
            vals = [e.vitals[name] for e in recent if name in e.vitals]
            out[f"{name}_mean_365"] = float(np.mean(vals)) if vals else math.nan
        bmi = [e.vitals["bmi"] for e in recent if "bmi" in e.vitals]
        out["bmi_last_365"] = bmi[-1] if bmi else math.nan
        prior = [e for e in history if e.date < d]
        for label, etype in (("ed", EncounterType.EMERGENCY), ("inpatient", EncounterType.INPATIENT)):
            visits = [e.date for e in prior if e.encounter_type is etype]
            out[f"days_since_{label}"] = float((d - visits[-1]).days) if visits else math.nan
            out[f"{label}_count_365"] = float(sum(v > since for v in visits))
        present = {normalize_code(c) for e in recent for c in e.diagnoses}
        for code in self.vocabulary(dataset):
            out[dx_feature(code)] = float(normalize_code(code) in present)
        return out


def instances_frame(instances: Sequence[SurvivalInstance], names: Sequence[str] | None = None) -> pd.DataFrame:
    """Raw feature frame (one row per instance, NaN for missing)."""
    if names is None:
        names = list(instances[0].features) if instances else []
    rows = [[inst.features.get(n, math.nan) for n in names] for inst in instances]
    return pd.DataFrame(rows, columns=list(names), index=[inst.encounter_id for inst in instances])


def age_bucket(age: float) -> str | None:
    if age is None or not math.isfinite(age):
        return None
    for lo, hi in AGE_BUCKETS:
        if age <= hi:
            return f"{lo}-{hi}"
    lo, hi = AGE_BUCKETS[-1]
    return f"{lo}-{hi}"


# ---------------------------------------------------------------------------
# preprocessing

@dataclass
class FeatureMatrix:
    columns: list[FeatureSpec]
    values: np.ndarray
    row_ids: list[str] = field(default_factory=list)
    imputed: np.ndarray | None = None

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def __len__(self) -> int:
        return self.values.shape[0]

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, columns=self.names, index=self.row_ids or None)

    def subset(self, names: Sequence[str]) -> "FeatureMatrix":
        pos = {n: i for i, n in enumerate(self.names)}
        missing = [n for n in names if n not in pos]
        if missing:
            raise UnknownColumn(f"unknown feature columns {missing}")
        idx = [pos[n] for n in names]
        return FeatureMatrix([self.columns[i] for i in idx], self.values[:, idx], list(self.row_ids),
                             None if self.imputed is None else self.imputed[:, idx])

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows)
        ids = [self.row_ids[i] for i in rows] if self.row_ids else []
        return FeatureMatrix(self.columns, self.values[rows], ids, None if self.imputed is None else self.imputed[rows])


@dataclass
class ColumnStats:
    kind: FeatureKind
    outlier_cutoff: float | None = None
    impute_global: float = 0.0
    impute_cells: dict[str, float] = field(default_factory=dict)
    center: float = 0.0
    scale: float = 1.0


@dataclass
class FittedPreprocessor:
    input_specs: list[FeatureSpec]
    output_specs: list[FeatureSpec]
    categories: dict[str, list[str]]
    stats: dict[str, ColumnStats]
    age_column: str = "age"
    sex_column: str = "sex_female"

    @property
    def input_names(self) -> list[str]:
        return [s.name for s in self.input_specs]

    def transform(self, data: pd.DataFrame | Sequence[SurvivalInstance], *, allow_missing: bool = False) -> FeatureMatrix:
        """Apply the frozen statistics.

        With ``allow_missing`` absent input columns are treated as all-missing
        and imputed; the returned matrix records which cells were imputed.
        """
        frame = _as_frame(data, self.input_names)
        extra = [c for c in frame.columns if c not in self.input_names]
        absent = [c for c in self.input_names if c not in frame.columns]
        if extra:
            raise UnknownColumn(f"unexpected feature columns {extra}")
        if absent and not allow_missing:
            raise UnknownColumn(f"missing feature columns {absent}")
        for c in absent:
            frame[c] = np.nan
        frame = frame[self.input_names]
        return self._apply(frame)

    def _apply(self, frame: pd.DataFrame) -> FeatureMatrix:
        n = len(frame)
        raw_cols: dict[str, np.ndarray] = {}
        for spec in self.input_specs:
            col = frame[spec.name]
            if spec.kind is FeatureKind.CATEGORICAL:
                for level in self.categories[spec.name]:
                    vals = np.where(col.isna(), np.nan, (col.astype(str) == level).astype(float))
                    raw_cols[f"{spec.name}={level}"] = vals.astype(float)
            else:
                raw_cols[spec.name] = pd.to_numeric(col, errors="coerce").to_numpy(dtype=float)

        ages = raw_cols.get(self.age_column, np.full(n, np.nan))
        sexes = raw_cols.get(self.sex_column, np.full(n, np.nan))
        cells = [_cell_key(a, s) for a, s in zip(ages, sexes)]

        out = np.empty((n, len(self.output_specs)))
        imputed = np.zeros((n, len(self.output_specs)), dtype=bool)
        for j, spec in enumerate(self.output_specs):
            st = self.stats[spec.name]
            x = raw_cols[spec.name].copy()
            if st.outlier_cutoff is not None:
                x[x > st.outlier_cutoff] = np.nan
            miss = np.isnan(x)
            imputed[:, j] = miss
            if miss.any():
                if st.kind is FeatureKind.CONTINUOUS:
                    x[miss] = [st.impute_cells.get(cells[i], st.impute_global) if cells[i] else st.impute_global
                               for i in np.flatnonzero(miss)]
                else:
                    x[miss] = st.impute_global
            out[:, j] = (x - st.center) / st.scale
        return FeatureMatrix(list(self.output_specs), out, [str(i) for i in frame.index], imputed)

    def to_dict(self) -> dict[str, Any]:
        return {
            "input_specs": [s.to_dict() for s in self.input_specs],
            "output_specs": [s.to_dict() for s in self.output_specs],
            "categories": self.categories,
            "age_column": self.age_column,
            "sex_column": self.sex_column,
            "stats": {k: {**asdict(v), "kind": v.kind.value} for k, v in self.stats.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FittedPreprocessor":
        return cls(
            [FeatureSpec(**s) for s in d["input_specs"]],
            [FeatureSpec(**s) for s in d["output_specs"]],
            {k: list(v) for k, v in d["categories"].items()},
            {k: ColumnStats(**{**v, "kind": FeatureKind(v["kind"])}) for k, v in d["stats"].items()},
            d.get("age_column", "age"),
            d.get("sex_column", "sex_female"),
        )


def _cell_key(age: float, sex: float) -> str | None:
    bucket = age_bucket(age)
    if bucket is None or sex is None or not math.isfinite(sex):
        return None
    return f"{bucket}|{int(sex)}"


def _as_frame(data, names) -> pd.DataFrame:
    if isinstance(data, pd.DataFrame):
        return data.copy()
    data = list(data)
    if not data:
        return pd.DataFrame(columns=list(names), dtype=float)
    return instances_frame(data, list(data[0].features))


def fit_transform(data: pd.DataFrame | Sequence[SurvivalInstance], specs: Sequence[FeatureSpec], *,
                  age_column: str = "age", sex_column: str = "sex_female") -> tuple[FeatureMatrix, FittedPreprocessor]:
    """Fit preprocessing statistics on training rows and transform them.

    Raises
    ------
    AllMissingColumn
        If a column has no observed training value.
    """
    specs = list(specs)
    check_unique(specs)
    frame = _as_frame(data, [s.name for s in specs])
    if len(frame) == 0:
        raise ValueError("cannot fit preprocessing on an empty training set")
    names = [s.name for s in specs]
    extra = [c for c in frame.columns if c not in names]
    absent = [c for c in names if c not in frame.columns]
    if extra or absent:
        raise UnknownColumn(f"feature columns do not match specs (extra={extra}, missing={absent})")
    frame = frame[names]

    categories: dict[str, list[str]] = {}
    output_specs: list[FeatureSpec] = []
    raw_cols: dict[str, np.ndarray] = {}
    for spec in specs:
        col = frame[spec.name]
        if col.isna().all():
            raise AllMissingColumn(spec.name)
        if spec.kind is FeatureKind.CATEGORICAL:
            levels = sorted({str(v) for v in col.dropna()})
            categories[spec.name] = levels
            for level in levels:
                name = f"{spec.name}={level}"
                output_specs.append(FeatureSpec(name, FeatureKind.BINARY, spec.modifiable, spec.mandatory))
                raw_cols[name] = np.where(col.isna(), np.nan, (col.astype(str) == level).astype(float))
        else:
            output_specs.append(spec)
            raw_cols[spec.name] = pd.to_numeric(col, errors="coerce").to_numpy(dtype=float)

    ages = raw_cols.get(age_column, np.full(len(frame), np.nan))
    sexes = raw_cols.get(sex_column, np.full(len(frame), np.nan))
    cells = np.array([_cell_key(a, s) or "" for a, s in zip(ages, sexes)], dtype=object)

    stats: dict[str, ColumnStats] = {}
    for spec in output_specs:
        x = raw_cols[spec.name].copy()
        st = ColumnStats(spec.kind)
        if spec.kind is FeatureKind.CONTINUOUS:
            obs = x[~np.isnan(x)]
            st.outlier_cutoff = float(obs.mean() + 3.0 * obs.std())
            x[x > st.outlier_cutoff] = np.nan
            kept = ~np.isnan(x)
            st.impute_global = float(x[kept].mean())
            for cell in sorted(set(cells[kept]) - {""}):
                st.impute_cells[cell] = float(x[kept & (cells == cell)].mean())
        elif spec.kind is FeatureKind.DAYS_SINCE:
            st.impute_global = float(np.nanmax(x))
        else:
            st.impute_global = 0.0
        stats[spec.name] = st

    pre = FittedPreprocessor(specs, output_specs, categories, stats, age_column, sex_column)
    # z-score statistics are taken after imputation so training columns end at mean 0, SD 1
    unscaled = pre._apply(frame)
    for j, spec in enumerate(output_specs):
        if spec.kind is FeatureKind.CONTINUOUS:
            col = unscaled.values[:, j]
            sd = float(col.std())
            stats[spec.name].center = float(col.mean())
            stats[spec.name].scale = sd if sd > 0 else 1.0
    matrix = pre._apply(frame)
    return matrix, pre
