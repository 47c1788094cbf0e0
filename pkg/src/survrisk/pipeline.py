"""Config-driven end-to-end run: label, preprocess, select, fit, evaluate, calibrate."""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import math
import warnings
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from datetime import date
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from . import __version__
from .adherence import adherence_table, write_adherence
from .calibration import calibrate, compare_before_after
from .ehr import Dataset, load_dataset
from .errors import InvalidConfig, NoCoveredInstances, SchemaMismatch
from .evaluation import (
    HISTORY_BUCKETS, HORIZONS, Predictions, a1c_baseline, evaluate, evaluation_grid, history_bucket,
    permutation_importance, stratify,
)
from .features import AGE_BUCKETS, EncounterFeatures, FittedPreprocessor, age_bucket, fit_transform
from .labeling import (
    CohortSpec, DetectionCriteria, SurvivalInstance, build_instances, cohort_summary, detect_events, labels_of,
    split_summary, split_train_test,
)
from .selection import ModelSignature, backward_eliminate, prefilter_imbalanced
from .survival import CoxModel, cross_validate, fit_cox, make_folds
from .synthetic import SyntheticConfig, generate_synthetic

log = logging.getLogger(__name__)

DEFAULTS: dict[str, Any] = {
    "cohort": {},
    "detection": {},
    "split": {"train_fraction": 0.7},
    "preprocessing": {"prefilter_low": 0.02, "prefilter_high": 0.98},
    "selection": {"enabled": True, "stage1_frac": 0.05, "stage1_target": 30, "margin": 0.01, "folds": 5,
                  "importance": "coefficient"},
    "fit": {"ridge_grid": [1e-4, 1e-2, 1.0], "max_iter": 100, "tol": 1e-7},
    "evaluation": {"horizons": list(HORIZONS), "permutation_repeats": 5, "a1c_baseline": True, "plots": False},
    "adherence": {"period_days": 365, "threshold": 0.8, "insulin_adjust": True, "rule": "AllCovered",
                  "gap_days": 90},
}


# ---------------------------------------------------------------------------
# config

def _schema() -> dict[str, Any]:
    return json.loads(resources.files("survrisk").joinpath("data/run_config.schema.json").read_text())


def demo_config_path() -> Path:
    return Path(str(resources.files("survrisk").joinpath("data/demo.json")))


@dataclass
class RunConfig:
    raw: dict[str, Any]
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def task(self) -> str:
        return self.raw["task"]

    def section(self, name: str) -> dict[str, Any]:
        return {**DEFAULTS.get(name, {}), **self.raw.get(name, {})}

    def normalized(self) -> dict[str, Any]:
        """Config with defaults filled in and the output location removed."""
        out = {k: v for k, v in copy.deepcopy(self.raw).items() if k != "output"}
        for name in DEFAULTS:
            out[name] = self.section(name)
        return out

    def hash(self) -> str:
        return hashlib.sha256(canonical_json(self.normalized()).encode()).hexdigest()


def validate_config(raw: Any) -> None:
    """Validate against the bundled JSON schema.

    Raises
    ------
    InvalidConfig
        Naming the offending field.
    """
    validator = jsonschema.Draft202012Validator(_schema(), format_checker=jsonschema.FormatChecker())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise InvalidConfig(f"config field '{where}': {err.message}")


def load_config(path: str | Path, seed: int | None = None) -> RunConfig:
    """Read, validate and wrap a run config; ``path="demo"`` loads the bundled demo."""
    p = demo_config_path() if str(path) == "demo" else Path(path)
    try:
        raw = json.loads(p.read_text())
    except FileNotFoundError:
        raise InvalidConfig(f"config file not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"config is not valid JSON: {exc}") from None
    if seed is not None and isinstance(raw, dict):
        raw["seed"] = seed
    validate_config(raw)
    return RunConfig(raw, p.parent.resolve())


def seed_for(seed: int, stage: str) -> int:
    """Independent per-stage seed derived from the run seed and a stage name."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


# ---------------------------------------------------------------------------
# output helpers

def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, date):
        return obj.isoformat()
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def canonical_json(obj: Any) -> str:
    """Sorted keys, non-finite numbers as null, trailing newline."""
    return json.dumps(_plain(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path: Path, obj: Any) -> None:
    path.write_text(canonical_json(obj))


def _cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if not math.isfinite(v) else repr(v)
    return str(v)


def write_csv(path: Path, rows: Sequence[Mapping[str, Any]], columns: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(_plain(r.get(c))) for c in columns])


# ---------------------------------------------------------------------------
# data

def load_source(source: Mapping[str, Any], base_dir: Path, default_seed: int) -> Dataset:
    if "synthetic" in source:
        syn = dict(source["synthetic"])
        syn.setdefault("seed", default_seed)
        return generate_synthetic(SyntheticConfig.from_dict(syn))
    path = Path(source["path"])
    if not path.is_absolute():
        path = base_dir / path
    schema = None
    if "schema" in source:
        sp = Path(source["schema"])
        schema = json.loads((sp if sp.is_absolute() else base_dir / sp).read_text())
    return load_dataset(path, schema)


def cohort_spec(cfg: RunConfig) -> CohortSpec:
    return CohortSpec.from_dict({"task": cfg.task, **cfg.section("cohort")})


def detection(cfg: RunConfig) -> DetectionCriteria:
    try:
        return DetectionCriteria(**cfg.section("detection"))
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from None


def subgroup_columns(instances: Sequence[SurvivalInstance], tiers: Sequence[str] | None = None
                     ) -> tuple[dict[str, list[Any]], dict[str, list[Any]]]:
    """Grouping values per instance and the full level lists (so empty groups still get rows)."""
    groups = {
        "age": [age_bucket(i.features.get("age", math.nan)) for i in instances],
        "sex": ["Female" if i.features.get("sex_female") == 1 else "Male" for i in instances],
        "ethnicity": ["HispanicOrLatino" if i.features.get("ethnicity_hispanic") == 1 else "NotHispanicOrLatino"
                      for i in instances],
        "history": [history_bucket(i.history_months) for i in instances],
    }
    levels = {
        "age": [f"{lo}-{hi}" for lo, hi in AGE_BUCKETS],
        "sex": ["Female", "Male"],
        "ethnicity": ["HispanicOrLatino", "NotHispanicOrLatino"],
        "history": [name for _, _, name in HISTORY_BUCKETS] + [">60"],
    }
    if tiers is not None:
        groups["risk_tier"] = list(tiers)
        levels["risk_tier"] = ["Low", "Medium", "High"]
    return groups, levels


def choose_ridge(X, time, event, grid: Sequence[float], k: int, seed: int, fit_options: Mapping[str, Any]
                 ) -> tuple[float, list[dict[str, Any]]]:
    """Penalty with the best k-fold C-index; ties go to the earlier grid entry."""
    folds = make_folds(time, event, k, seed)
    scores = []
    for lam in grid:
        res = cross_validate(X, time, event, k, {**fit_options, "ridge": float(lam)}, folds=folds)
        scores.append({"ridge": float(lam), "cv_score": res.mean, "fold_scores": list(res.scores)})
    best = max(range(len(grid)), key=lambda i: (scores[i]["cv_score"], -i))
    return float(grid[best]), scores


# ---------------------------------------------------------------------------
# run

SUBGROUP_COLUMNS = ("group", "level", "n", "events", "c_index_harrell", "c_index_uno", "ibs", "mean_auc",
                    "mean_sensitivity", "mean_specificity")


@dataclass
class RunResult:
    out_dir: Path
    files: list[str]
    model: CoxModel
    preprocessor: FittedPreprocessor
    signature: ModelSignature
    report: dict[str, Any]


def run_pipeline(cfg: RunConfig, out_dir: str | Path) -> RunResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed
    written: list[str] = []

    def emit_json(name: str, obj: Any) -> None:
        write_json(out / name, obj)
        written.append(name)

    def emit_csv(name: str, rows, columns) -> None:
        write_csv(out / name, rows, columns)
        written.append(name)

    dataset = load_source(cfg.raw["data"], cfg.base_dir, seed_for(seed, "data"))
    spec = cohort_spec(cfg)
    events = detect_events(dataset, detection(cfg))
    extractor = EncounterFeatures()
    instances = build_instances(dataset, events, spec, extractor)
    train, test = split_train_test(instances, cfg.section("split")["train_fraction"], seed_for(seed, "split"))
    log.info("%d instances (%d train, %d test)", len(instances), len(train), len(test))
    emit_json("summary.json", {"task": cfg.task, "cohort": cohort_summary(dataset, instances),
                               "split": split_summary(train, test)})

    specs = extractor.specs(dataset)
    X_train, pre = fit_transform(train, specs)
    t_train, e_train = labels_of(train)
    t_test, e_test = labels_of(test)

    pp = cfg.section("preprocessing")
    kept = prefilter_imbalanced(X_train, low=pp["prefilter_low"], high=pp["prefilter_high"])
    dropped = [n for n in X_train.names if n not in set(kept)]
    X_train = X_train.subset(kept)

    sel = cfg.section("selection")
    fit_cfg = cfg.section("fit")
    fit_options = {"max_iter": fit_cfg["max_iter"], "tol": fit_cfg["tol"]}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        if sel["enabled"]:
            signature = backward_eliminate(
                X_train, t_train, e_train, stage1_frac=sel["stage1_frac"], stage1_target=sel["stage1_target"],
                margin=sel["margin"], k=sel["folds"], seed=seed_for(seed, "folds"), fit_options=fit_options,
                importance=sel["importance"])
        else:
            signature = ModelSignature(list(kept), [s.name for s in X_train.columns if s.mandatory], [])
        X_sel = X_train.subset(signature.selected)
        ridge, ridge_scores = choose_ridge(X_sel, t_train, e_train, fit_cfg["ridge_grid"], sel["folds"],
                                           seed_for(seed, "ridge"), fit_options)
        model = fit_cox(X_sel, t_train, e_train, signature.selected, ridge=ridge, **fit_options)
    signature.write(out / "signature.json", out / "signature_curve.csv")
    written += ["signature.json", "signature_curve.csv"]

    ev = cfg.section("evaluation")
    horizons = tuple(float(h) for h in ev["horizons"])
    X_test = pre.transform(test).subset(signature.selected)
    pred = Predictions.from_model(model, X_test, t_test, e_test, horizons, evaluation_grid(t_test, e_test))
    strat = stratify(pred.risk)
    groups, levels = subgroup_columns(test)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        report = evaluate(pred, groups, levels)
    if ev["permutation_repeats"] > 0:
        report.permutation_importance = permutation_importance(model, X_test, t_test, e_test,
                                                               ev["permutation_repeats"], seed_for(seed, "shuffle"))
    if ev["a1c_baseline"]:
        probs = {h: 1.0 - pred.surv_horizons[:, k] for k, h in enumerate(horizons)}
        for recency in (None, 91):
            try:
                res = a1c_baseline(test, dataset, pred.risk, probs, recency, horizons)
                report.a1c_baseline.append(res.to_dict())
            except NoCoveredInstances as exc:
                report.a1c_baseline.append({"recency_days": recency, "error": str(exc)})

    model.metadata = {"task": cfg.task, "ridge": ridge, "converged": bool(model.converged),
                      "tier_cuts": {"low": strat.low_cut, "high": strat.high_cut},
                      "horizons": list(horizons)}
    emit_json("model.json", model.to_dict())
    emit_json("preprocessor.json", pre.to_dict())

    report_dict = {**report.to_dict(), "task": cfg.task, "ridge_search": ridge_scores, "prefilter_dropped": dropped,
                   "n_test": len(test)}
    emit_json("report.json", report_dict)
    emit_csv("report_subgroups.csv", report.subgroups, SUBGROUP_COLUMNS)
    emit_csv("thresholds.csv", [{"horizon": k, "threshold": v} for k, v in report.thresholds.items()],
             ["horizon", "threshold"])
    emit_csv("horizons.csv", report.horizons, ["t", "n_positive", "n_negative", "auc", "sensitivity",
                                               "specificity", "balanced_accuracy", "threshold"])
    emit_csv("risk_tiers.csv", report.stratification, ["tier", "percentiles", "count", "score_min", "score_max"])
    if report.a1c_baseline:
        emit_csv("a1c_baseline.csv", a1c_table(report.a1c_baseline, horizons), a1c_columns(horizons))
    if report.permutation_importance:
        emit_csv("permutation_importance.csv", report.permutation_importance, ["feature", "importance", "std"])

    if ev["plots"]:
        written += write_plots(out, pred, report)

    if "calibration" in cfg.raw:
        comparison = run_calibration(cfg, model, pre, signature.selected, extractor.vocabulary(dataset))
        emit_json("calibration.json", comparison)
        emit_csv("calibration.csv", [comparison], ["coefficient", "c_index", "ibs_before", "ibs_after",
                                                   "median_abs_curve_error_before", "median_abs_curve_error_after"])

    manifest = {"config_hash": cfg.hash(), "seed": seed, "task": cfg.task, "version": __version__,
                "config": cfg.normalized(),
                "files": {name: hashlib.sha256((out / name).read_bytes()).hexdigest() for name in sorted(written)}}
    write_json(out / "manifest.json", manifest)
    written.append("manifest.json")
    return RunResult(out, written, model, pre, signature, report_dict)


def a1c_columns(horizons: Sequence[float]) -> list[str]:
    cols = ["baseline", "recency_days", "coverage", "n_covered", "c_index"]
    return cols + [f"auc_{int(h) if float(h).is_integer() else h}" for h in horizons]


def a1c_table(results: Sequence[Mapping[str, Any]], horizons: Sequence[float]) -> list[dict[str, Any]]:
    """Side-by-side rows for the model and the last-A1C score on each covered sub-cohort."""
    rows = []
    for res in results:
        if "error" in res:
            continue
        for who, c_key, auc_key in (("model", "c_index_model", "auc_model"), ("last_a1c", "c_index_a1c", "auc_a1c")):
            row = {"baseline": who, "recency_days": res["recency_days"] if res["recency_days"] is not None else "any",
                   "coverage": res["coverage_percent"], "n_covered": res["n_covered"], "c_index": res[c_key]}
            for h in horizons:
                key = str(int(h)) if float(h).is_integer() else repr(float(h))
                row[f"auc_{key}"] = res[auc_key].get(key)
            rows.append(row)
    return rows


def target_matrix(cfg: RunConfig, pre: FittedPreprocessor, selected: Sequence[str], vocabulary: Sequence[str],
                  source: Mapping[str, Any]):
    dataset = load_source(source, cfg.base_dir, seed_for(cfg.seed, "calibration-data"))
    events = detect_events(dataset, detection(cfg))
    instances = build_instances(dataset, events, cohort_spec(cfg), EncounterFeatures(codes=vocabulary))
    X = pre.transform(instances).subset(selected)
    t, e = labels_of(instances)
    return X, t, e


def run_calibration(cfg: RunConfig, model: CoxModel, pre: FittedPreprocessor, selected: Sequence[str],
                    vocabulary: Sequence[str]) -> dict[str, Any]:
    cal_cfg = cfg.raw["calibration"]
    X, t, e = target_matrix(cfg, pre, selected, vocabulary, cal_cfg["target"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        cal = calibrate(model, X, t, e, cal_cfg.get("horizon"))
        comparison = compare_before_after(model, cal, X, t, e)
    return {**comparison, "calibrated_model": cal.to_dict()}


# ---------------------------------------------------------------------------
# scoring

def score_instances(model: CoxModel, instances: Sequence[SurvivalInstance], horizons: Sequence[float] = HORIZONS,
                    preprocessor: FittedPreprocessor | None = None, tiers: str = "batch") -> list[dict[str, Any]]:
    """Risk score, event probabilities ``1 - S(t)`` and tier per instance.

    Missing input features are imputed with the frozen preprocessor and listed
    in the ``imputed`` column. Without a preprocessor the instance features
    must already be on the model's scale.

    Raises
    ------
    SchemaMismatch
    """
    from .features import instances_frame

    instances = list(instances)
    if preprocessor is not None:
        present = set(instances[0].features) if instances else set(preprocessor.input_names)
        known = [n for n in preprocessor.input_names if n in present]
        frame = instances_frame(instances, known)
        mat = preprocessor.transform(frame, allow_missing=True)
        missing_cols = [n for n in preprocessor.input_names if n not in present]
        X = mat.subset(model.features)
        imputed = [sorted(set(missing_cols) & set(model.features)) for _ in instances]
    else:
        absent = [n for n in model.features if not instances or n not in instances[0].features]
        if instances and absent:
            raise SchemaMismatch(f"instances lack model features {absent} and no preprocessor was given")
        X = np.array([[float(i.features[n]) for n in model.features] for i in instances]).reshape(-1, len(model.features))
        imputed = [[] for _ in instances]
    risk = model.risk_score(X)
    surv = model.survival(X, horizons) if len(instances) else np.zeros((0, len(horizons)))
    if tiers == "frozen" and "tier_cuts" in model.metadata:
        lo, hi = model.metadata["tier_cuts"]["low"], model.metadata["tier_cuts"]["high"]
        tier_list = ["Low" if (r <= lo and r < hi) else "High" if r > hi else "Medium" for r in risk]
    elif len(instances) >= 4:
        tier_list = stratify(risk).tiers
    else:
        tier_list = ["" for _ in instances]
    rows = []
    for i, inst in enumerate(instances):
        row = {"patient_id": inst.patient_id, "encounter_id": inst.encounter_id, "risk_score": float(risk[i])}
        for k, h in enumerate(horizons):
            row[prob_column(h)] = float(1.0 - surv[i, k])
        row["tier"] = tier_list[i]
        row["imputed"] = ";".join(imputed[i])
        rows.append(row)
    return rows


def prob_column(h: float) -> str:
    return f"p({int(h)})" if float(h).is_integer() else f"p({h})"


def score_columns(horizons: Sequence[float]) -> list[str]:
    return ["patient_id", "encounter_id", "risk_score", *(prob_column(h) for h in horizons), "tier", "imputed"]


# ---------------------------------------------------------------------------
# other verbs

def generate_to(cfg: RunConfig, out_dir: str | Path) -> Path:
    from .ehr import write_dataset

    dataset = load_source(cfg.raw["data"], cfg.base_dir, seed_for(cfg.seed, "data"))
    return write_dataset(dataset, out_dir)


def adherence_to(cfg: RunConfig, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_source(cfg.raw["data"], cfg.base_dir, seed_for(cfg.seed, "data"))
    a = cfg.section("adherence")
    rows = adherence_table(dataset, a["period_days"], a["threshold"], a["insulin_adjust"], a["rule"], a["gap_days"])
    write_adherence(rows, out / "adherence.csv")
    return out / "adherence.csv"


def calibrate_to(cfg: RunConfig, model_dir: str | Path, out_dir: str | Path) -> Path:
    if "calibration" not in cfg.raw:
        raise InvalidConfig("config field 'calibration': required for the calibrate command")
    model_dir = Path(model_dir)
    model = CoxModel.from_dict(json.loads((model_dir / "model.json").read_text()))
    pre = FittedPreprocessor.from_dict(json.loads((model_dir / "preprocessor.json").read_text()))
    vocab = [n[3:-4] for n in pre.input_names if n.startswith("dx_") and n.endswith("_12m")]
    comparison = run_calibration(cfg, model, pre, model.features, vocab)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "calibration.json", comparison)
    write_csv(out / "calibration.csv", [comparison], ["coefficient", "c_index", "ibs_before", "ibs_after",
                                                     "median_abs_curve_error_before", "median_abs_curve_error_after"])
    return out / "calibration.json"


# ---------------------------------------------------------------------------
# plots

def write_plots(out: Path, pred: Predictions, report) -> list[str]:
    """Brier-over-time, KM vs mean predicted survival and AUC-over-horizon charts as SVG."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; skipping plots")
        return []
    from .survival import kaplan_meier

    matplotlib.rcParams["svg.hashsalt"] = "survrisk"
    names = []
    fig, ax = plt.subplots(figsize=(6, 4))
    grid = pred.grid
    ax.plot(grid, [report.brier_at[k] for k in report.brier_at], marker=".")
    ax.axhline(0.25, ls="--", c="grey", lw=0.8)
    ax.set_xlabel("months")
    ax.set_ylabel("Brier score")
    fig.savefig(out / "brier.svg", metadata={"Date": None})
    plt.close(fig)
    names.append("brier.svg")

    fig, ax = plt.subplots(figsize=(6, 4))
    km = kaplan_meier(pred.time, pred.event)
    ax.step(grid, km(grid), where="post", label="Kaplan-Meier")
    ax.plot(grid, pred.surv_grid.mean(axis=0), label="mean predicted")
    ax.set_xlabel("months")
    ax.set_ylabel("survival")
    ax.legend()
    fig.savefig(out / "km_vs_predicted.svg", metadata={"Date": None})
    plt.close(fig)
    names.append("km_vs_predicted.svg")

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([h["t"] for h in report.horizons], [np.nan if h["auc"] is None else h["auc"] for h in report.horizons],
            marker="o")
    ax.set_xlabel("months")
    ax.set_ylabel("AUC")
    fig.savefig(out / "auc.svg", metadata={"Date": None})
    plt.close(fig)
    names.append("auc.svg")
    return names
