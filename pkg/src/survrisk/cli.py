"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
On failure a machine-readable ``error.json`` is written to the output directory
(when one was given) and the message is printed to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, DataError, SurvriskError

log = logging.getLogger("survrisk")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="survrisk", description="Survival risk models on EHR encounters.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required,
                        help="run config JSON (or 'demo' for the bundled demo config)")
        sp.add_argument("--out", required=True, help="output directory (or file for score)")
        sp.add_argument("--seed", type=int, help="override the config seed")

    common(sub.add_parser("generate", help="write a synthetic dataset as CSV files"))
    common(sub.add_parser("run", help="run a prediction task end to end"))
    sc = sub.add_parser("score", help="score instances with a trained model")
    common(sc, config_required=False)
    sc.add_argument("--model", required=True, help="run output directory or model JSON file")
    sc.add_argument("--instances", required=True, help="instance CSV")
    sc.add_argument("--horizons", type=float, nargs="+", help="horizons in months")
    sc.add_argument("--tiers", choices=("batch", "frozen"), default="batch",
                    help="tier cut points from this batch or frozen from training")
    common(sub.add_parser("adherence", help="PDC/MPR adherence table from dispensing records"))
    cal = sub.add_parser("calibrate", help="recalibrate a trained model on the config's target population")
    common(cal)
    cal.add_argument("--model", required=True, help="run output directory holding model.json and preprocessor.json")
    sub.add_parser("verify-fixtures", help="check the bundled hand-computed fixtures")
    return p


def _verify() -> int:
    from .verify import verify_fixtures

    results = verify_fixtures()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}")
        for m in r.mismatches:
            print(f"    {m}")
    return 0 if all(r.passed for r in results) else 1


def _score(args) -> Path:
    from .evaluation import HORIZONS
    from .features import FittedPreprocessor
    from .labeling import read_instances
    from .pipeline import score_columns, score_instances, write_csv
    from .survival import CoxModel

    model_path = Path(args.model)
    pre = None
    if model_path.is_dir():
        pre_path = model_path / "preprocessor.json"
        if pre_path.exists():
            pre = FittedPreprocessor.from_dict(json.loads(pre_path.read_text()))
        model_path = model_path / "model.json"
    try:
        model = CoxModel.from_dict(json.loads(model_path.read_text()))
    except FileNotFoundError:
        raise ConfigError(f"model file not found: {model_path}") from None
    horizons = args.horizons or model.metadata.get("horizons") or list(HORIZONS)
    try:
        instances, _ = read_instances(args.instances)
    except FileNotFoundError:
        raise DataError(f"instance file not found: {args.instances}") from None
    rows = score_instances(model, instances, horizons, pre, args.tiers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, rows, score_columns(horizons))
    return out


def _dispatch(args) -> Path:
    from . import pipeline

    if args.command == "score":
        return _score(args)
    cfg = pipeline.load_config(args.config, args.seed)
    if args.command == "generate":
        return pipeline.generate_to(cfg, args.out)
    if args.command == "run":
        return pipeline.run_pipeline(cfg, args.out).out_dir
    if args.command == "adherence":
        return pipeline.adherence_to(cfg, args.out)
    return pipeline.calibrate_to(cfg, args.model, args.out)


def _error_record(exc: BaseException, code: int) -> dict:
    return {"error": type(exc).__name__, "message": str(exc), "exit_code": code}


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "verify-fixtures":
        return _verify()
    try:
        print(_dispatch(args))
        return 0
    except SurvriskError as exc:
        record = _error_record(exc, exc.exit_code)
    except (FileNotFoundError, NotADirectoryError) as exc:
        record = _error_record(exc, DataError.exit_code)
    code = record["exit_code"]
    print(f"survrisk: error: {record['error']}: {record['message']}", file=sys.stderr)
    out = Path(args.out)
    target = out.parent if args.command == "score" else out
    try:
        target.mkdir(parents=True, exist_ok=True)
        (target / "error.json").write_text(json.dumps(record, sort_keys=True, indent=2) + "\n")
    except OSError:
        pass
    return code


if __name__ == "__main__":
    sys.exit(main())
