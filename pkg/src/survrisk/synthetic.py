"""Deterministic synthetic cohorts with a known hazard structure.

Each patient moves through the glycemic chain normal -> pre-diabetes ->
diabetes -> uncontrolled diabetes, and while diabetic can develop any of the
three complications. Every transition time is exponential from the moment the
source state is entered, with log-rate ``log(base_rate) + sum(coef * covariate)``
over patient-level covariates that are constant while the patient sits in the
source state. Encounter-level survival instances therefore follow a Cox model
with exactly the configured coefficients.

The onset of each event is written into the record the way the labeling rules
detect it (a confirming lab panel or a diagnosis code on an onset encounter),
so detected event dates equal the simulated ones whenever the onset falls
inside the patient's follow-up.
"""
from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from datetime import date, timedelta

import numpy as np
import pandas as pd

from .ehr import (
    Dataset, DispensingRecord, Encounter, EncounterType, Ethnicity, LabKind, LabResult, LabSetting, Patient,
    Route, Sex,
)
from .errors import InvalidConfig

DAYS_PER_MONTH = 30.4375

COVARIATES = ("sex_female", "ethnicity_hispanic", "hypertension", "a1c", "bmi", "age")

# A1C (%) and fasting glucose (mg/dL) bands per glycemic state
A1C_BANDS = {"normal": (4.5, 5.6), "prediabetes": (5.7, 6.4), "diabetes": (6.5, 8.9), "uncontrolled": (9.0, 13.0)}
FPG_BANDS = {"normal": (75.0, 99.0), "prediabetes": (100.0, 125.0), "diabetes": (126.0, 220.0),
             "uncontrolled": (180.0, 350.0)}

COMPLICATION_CODES = {
    "DiabeticNephropathy": "E11.21",
    "DiabeticNeuropathy": "E11.42",
    "DiabeticRetinopathy": "E11.319",
}
# background diagnoses: code -> (share of patients carrying it, per-encounter recording probability)
BACKGROUND_CODES = {
    "E78.5": (0.35, 0.5),
    "J06.9": (0.25, 0.2),
    "M54.5": (0.20, 0.3),
    "F32.9": (0.15, 0.4),
    "K21.9": (0.12, 0.4),
    "N39.0": (0.08, 0.3),
    "G47.33": (0.10, 0.5),
    "Q87.1": (0.005, 0.8),
}


@dataclass(frozen=True)
class HazardSpec:
    """Monthly base rate and log-hazard coefficients for one transition."""

    base_rate: float
    coefficients: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.base_rate > 0:
            raise InvalidConfig(f"base_rate must be positive, got {self.base_rate}")
        unknown = set(self.coefficients) - set(COVARIATES)
        if unknown:
            raise InvalidConfig(f"unknown hazard covariates {sorted(unknown)}; expected a subset of {COVARIATES}")


DEFAULT_HAZARDS = {
    "PreDM": HazardSpec(0.02, {"bmi": 0.3}),
    "DM": HazardSpec(0.015, {"hypertension": 0.7, "bmi": 0.4, "a1c": 1.2}),
    "UncontrolledDM": HazardSpec(0.01, {"a1c": 0.8}),
    "DiabeticNephropathy": HazardSpec(0.008, {"a1c": 0.9, "hypertension": 0.6, "age": 0.3}),
    "DiabeticNeuropathy": HazardSpec(0.006, {"a1c": 0.7, "age": 0.2}),
    "DiabeticRetinopathy": HazardSpec(0.005, {"a1c": 0.8}),
}


@dataclass(frozen=True)
class SyntheticConfig:
    n_patients: int
    seed: int
    window_start: date = date(2016, 1, 1)
    window_end: date = date(2020, 6, 30)
    hazards: Mapping[str, HazardSpec] = field(default_factory=lambda: dict(DEFAULT_HAZARDS))
    # glycemic state at entry: normal, pre-diabetes, diabetes
    entry_state_probs: tuple[float, float, float] = (0.15, 0.5, 0.35)
    encounters_per_year: float = 6.0
    mean_followup_months: float = 36.0
    a1c_measure_prob: float = 0.6
    a1c_noise: float = 0.1
    fpg_measure_prob: float = 0.3
    vitals_measure_prob: float = 0.8
    t1dm_fraction: float = 0.01
    hypertension_prob: float = 0.3

    def __post_init__(self):
        if self.n_patients < 1:
            raise InvalidConfig("n_patients must be >= 1")
        if self.window_end <= self.window_start:
            raise InvalidConfig("synthetic window must be non-empty")
        if self.encounters_per_year <= 0 or self.mean_followup_months <= 0:
            raise InvalidConfig("encounter rate and follow-up must be positive")
        probs = np.asarray(self.entry_state_probs, dtype=float)
        if probs.shape != (3,) or (probs < 0).any() or not math.isclose(probs.sum(), 1.0):
            raise InvalidConfig("entry_state_probs must be three non-negative numbers summing to 1")
        from .labeling import EventKind

        for name in self.hazards:
            if name not in EventKind.__members__ or name == "T1DM":
                raise InvalidConfig(f"unknown hazard event kind {name!r}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticConfig":
        d = dict(d)
        if "hazards" in d:
            merged = dict(DEFAULT_HAZARDS)
            for k, v in d["hazards"].items():
                merged[k] = HazardSpec(float(v["base_rate"]), dict(v.get("coefficients", {})))
            d["hazards"] = merged
        for key in ("window_start", "window_end"):
            if isinstance(d.get(key), str):
                d[key] = date.fromisoformat(d[key])
        if "entry_state_probs" in d:
            d["entry_state_probs"] = tuple(d["entry_state_probs"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from None


class _PatientSim:
    def __init__(self, idx: int, cfg: SyntheticConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng([cfg.seed, idx])
        self.pid = f"P{idx + 1:06d}"

    def exp_days(self, event: str, covs: Mapping[str, float]) -> float:
        spec = self.cfg.hazards.get(event)
        if spec is None:
            return math.inf
        log_rate = math.log(spec.base_rate) + sum(c * covs[k] for k, c in spec.coefficients.items())
        return self.rng.exponential(1.0 / math.exp(log_rate)) * DAYS_PER_MONTH

    def run(self):
        cfg, rng = self.cfg, self.rng
        span = (cfg.window_end - cfg.window_start).days
        entry = cfg.window_start + timedelta(days=int(rng.integers(0, max(1, span - 180))))
        age_entry = float(rng.uniform(25, 85))
        birth = entry - timedelta(days=int(age_entry * 365.25))
        sex = Sex.FEMALE if rng.random() < 0.55 else Sex.MALE
        eth = Ethnicity.HISPANIC_OR_LATINO if rng.random() < 0.15 else Ethnicity.NOT_HISPANIC_OR_LATINO
        htn = rng.random() < cfg.hypertension_prob
        bmi_level = float(np.clip(rng.normal(30.0, 5.0), 17.0, 55.0))
        t1dm = rng.random() < cfg.t1dm_fraction
        followup = rng.exponential(cfg.mean_followup_months * DAYS_PER_MONTH)
        exit_day = min(int(followup), (cfg.window_end - entry).days)

        base_covs = {
            "sex_female": float(sex is Sex.FEMALE),
            "ethnicity_hispanic": float(eth is Ethnicity.HISPANIC_OR_LATINO),
            "hypertension": float(htn),
            "bmi": (bmi_level - 30.0) / 5.0,
            "age": (age_entry - 55.0) / 10.0,
        }

        # glycemic chain; each entry (day, state, latent A1C level)
        state = ["normal", "prediabetes", "diabetes"][int(rng.choice(3, p=cfg.entry_state_probs))]
        level = float(rng.uniform(*A1C_BANDS[state]))
        chain = [(0.0, state, level)]
        onsets: dict[str, float] = {}
        if state == "prediabetes":
            onsets["PreDM"] = 0.0
        if state == "diabetes":
            onsets["DM"] = 0.0
        t = 0.0
        nxt = {"normal": ("PreDM", "prediabetes"), "prediabetes": ("DM", "diabetes"),
               "diabetes": ("UncontrolledDM", "uncontrolled")}
        dm_start = 0.0 if state == "diabetes" else None
        dm_level = level if state == "diabetes" else None
        while state in nxt and t <= exit_day:
            event, new_state = nxt[state]
            t += self.exp_days(event, {**base_covs, "a1c": level - 6.0})
            if t > exit_day:
                break
            state = new_state
            lo, hi = A1C_BANDS[state]
            level = float(np.clip(level + rng.uniform(0.8, 2.5), lo, hi)) if state != "uncontrolled" \
                else float(rng.uniform(lo, 11.5))
            chain.append((t, state, level))
            onsets[event] = t
            if state == "diabetes":
                dm_start, dm_level = t, level
        if dm_start is not None:
            for comp in COMPLICATION_CODES:
                tc = dm_start + self.exp_days(comp, {**base_covs, "a1c": dm_level - 6.0})
                if tc <= exit_day:
                    onsets[comp] = tc

        # encounter days: entry, random visits, and onset days
        n_visits = rng.poisson(cfg.encounters_per_year * max(exit_day, 1) / 365.25)
        days = {0} | {int(d) for d in rng.uniform(1, exit_day + 1, size=n_visits)} if exit_day >= 1 else {0}
        onset_days = {name: int(math.floor(v)) for name, v in onsets.items()}
        days |= set(onset_days.values())
        days = sorted(d for d in days if d <= exit_day)

        def state_at(day):
            cur = chain[0]
            for c in chain:
                if int(math.floor(c[0])) <= day:
                    cur = c
            return cur

        bg = {code: rng.random() < share for code, (share, _) in BACKGROUND_CODES.items()}
        pregnant_window = None
        if sex is Sex.FEMALE and age_entry < 42 and rng.random() < 0.05:
            s = int(rng.integers(0, max(exit_day, 1)))
            pregnant_window = (s, s + 270)
        dnr = age_entry > 75 and rng.random() < 0.05

        encounters = []
        for k, day in enumerate(days):
            d = entry + timedelta(days=day)
            onset_here = [n for n, od in onset_days.items() if od == day]
            if onset_here:
                etype = EncounterType.OUTPATIENT
            else:
                u = rng.random()
                etype = EncounterType.EMERGENCY if u < 0.08 else (
                    EncounterType.INPATIENT if u < 0.12 else EncounterType.OUTPATIENT)
            setting = LabSetting.OUTPATIENT if etype is EncounterType.OUTPATIENT else LabSetting.OTHER
            _, st, lvl = state_at(day)
            labs = []
            confirm = any(n in ("DM", "PreDM", "UncontrolledDM") for n in onset_here)
            if confirm or rng.random() < cfg.a1c_measure_prob:
                lo, hi = A1C_BANDS[st]
                a1c = float(np.clip(round(lvl + rng.normal(0.0, cfg.a1c_noise), 1), lo, hi))
                labs.append(LabResult(LabKind.A1C, a1c, d, setting))
            if "DM" in onset_here or rng.random() < cfg.fpg_measure_prob:
                lo, hi = FPG_BANDS[st]
                fpg = float(np.clip(round(rng.normal((lo + hi) / 2, (hi - lo) / 6)), lo, hi))
                labs.append(LabResult(LabKind.FPG, fpg, d, LabSetting.OUTPATIENT if "DM" in onset_here else setting))
            dx = []
            if htn and rng.random() < 0.7:
                dx.append("I10")
            for code, (_, p) in BACKGROUND_CODES.items():
                if bg[code] and rng.random() < p:
                    dx.append(code)
            if st in ("diabetes", "uncontrolled"):
                dx.append("E11.9" if st == "diabetes" else "E11.65")
            for comp, code in COMPLICATION_CODES.items():
                if comp in onset_days and onset_days[comp] <= day:
                    dx.append(code)
            if t1dm:
                dx.append("E10.9")
            if pregnant_window and pregnant_window[0] <= day <= pregnant_window[1]:
                dx.append("Z33.1")
            if dnr and k == len(days) - 1:
                dx.append("Z66")
            vitals = {}
            if rng.random() < cfg.vitals_measure_prob:
                vitals = {
                    "systolic": round(float(rng.normal(122 + 12 * htn, 10)), 1),
                    "diastolic": round(float(rng.normal(76 + 6 * htn, 7)), 1),
                    "bmi": round(bmi_level + float(rng.normal(0, 0.5)), 1),
                    "ldl": round(float(np.clip(rng.normal(110, 25), 30, 300)), 1),
                    "hdl": round(float(np.clip(rng.normal(50, 10), 15, 120)), 1),
                    "triglycerides": round(float(np.clip(rng.normal(150, 40), 40, 500))
                                           * (3.0 if rng.random() < 0.01 else 1.0), 1),
                }
            encounters.append(Encounter(
                f"{self.pid}-E{k + 1:04d}", self.pid, d, etype, tuple(dx), tuple(labs), vitals))

        dispensings = []
        if dm_start is not None:
            adherence = float(rng.beta(5, 2))
            fill = int(math.ceil(dm_start))
            while fill <= exit_day:
                dispensings.append(DispensingRecord(self.pid, "metformin", entry + timedelta(days=fill), 30, Route.ORAL))
                fill += 30 + max(0, int(round(rng.normal(30.0 / adherence - 30.0, 4.0))))
            if "UncontrolledDM" in onsets:
                fill = int(math.ceil(onsets["UncontrolledDM"]))
                while fill <= exit_day:
                    dispensings.append(
                        DispensingRecord(self.pid, "insulin", entry + timedelta(days=fill), 30, Route.INSULIN))
                    fill += int(round(rng.normal(45, 5)))
        return Patient(self.pid, birth, sex, eth), encounters, dispensings


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    """Generate a dataset that is a pure function of ``config`` (seed included)."""
    patients, encounters, dispensings = [], [], []
    for i in range(config.n_patients):
        p, encs, disp = _PatientSim(i, config).run()
        patients.append(p)
        encounters.extend(encs)
        dispensings.extend(disp)
    return Dataset(patients, encounters, dispensings, config.window_start, config.window_end)


def simulate_exponential(n: int, coefficients: Mapping[str, float], seed: int, *, binary: tuple[str, ...] = (),
                         base_rate: float = 0.05, censor_rate: float = 0.02, max_time: float | None = 48.0,
                         hazard_multiplier: float = 1.0) -> pd.DataFrame:
    """Draw right-censored exponential survival data in months.

    Covariates named in ``binary`` are Bernoulli(0.5); the rest are standard
    normal. Event times have rate ``base_rate * hazard_multiplier *
    exp(x . beta)``; censoring is the minimum of an independent exponential
    with ``censor_rate`` and administrative censoring at ``max_time``.
    """
    rng = np.random.default_rng(seed)
    names = list(coefficients)
    cols = {}
    for name in names:
        cols[name] = rng.integers(0, 2, size=n).astype(float) if name in binary else rng.standard_normal(n)
    X = np.column_stack([cols[k] for k in names]) if names else np.zeros((n, 0))
    beta = np.array([coefficients[k] for k in names], dtype=float)
    rate = base_rate * hazard_multiplier * np.exp(X @ beta)
    t_event = rng.exponential(1.0 / rate)
    t_cens = rng.exponential(1.0 / censor_rate, size=n) if censor_rate > 0 else np.full(n, np.inf)
    if max_time is not None:
        t_cens = np.minimum(t_cens, max_time)
    df = pd.DataFrame(cols)
    df["time"] = np.minimum(t_event, t_cens)
    df["event"] = (t_event <= t_cens).astype(int)
    return df


def true_survival(df: pd.DataFrame, coefficients: Mapping[str, float], times, *, base_rate: float = 0.05,
                  hazard_multiplier: float = 1.0) -> np.ndarray:
    """Closed-form S(t|x) for rows drawn by :func:`simulate_exponential`."""
    names = list(coefficients)
    X = df[names].to_numpy(dtype=float) if names else np.zeros((len(df), 0))
    rate = base_rate * hazard_multiplier * np.exp(X @ np.array([coefficients[k] for k in names], dtype=float))
    return np.exp(-np.outer(rate, np.asarray(times, dtype=float)))
