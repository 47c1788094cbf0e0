"""Day-by-day coverage walk.

Each fill starts the day after the previous supply ends when they overlap.
Insulin supply is scaled by 45/30, rounded half up. PDC is covered days over
period days. MPR is supplied days over period days. Multi-class rules count a
day as covered when any class (AnyCovered) or every class (AllCovered) covers
it, or they average the per-class PDCs (MeanOfClassMeans).
"""
import csv
import json
from collections import defaultdict
from fractions import Fraction
from pathlib import Path

HERE = Path(__file__).parent


def supply(days, route):
    if route == "Insulin":
        x = Fraction(days * 45, 30)
        return int(x + Fraction(1, 2))
    return days


def walk(fills, n):
    covered = [False] * n
    free = 0
    for day, ds, route in sorted(fills):
        start = max(day, free)
        for d in range(start, start + supply(ds, route)):
            if d < n:
                covered[d] = True
        free = start + supply(ds, route)
    return covered


def main():
    periods = json.loads((HERE / "input" / "periods.json").read_text())["period_days"]
    scen = defaultdict(lambda: defaultdict(list))
    for r in csv.DictReader(open(HERE / "input" / "fills.csv")):
        scen[r["scenario"]][r["drug_class"]].append((int(r["fill_day"]), int(r["days_supply"]), r["route"]))
    out = {}
    for name, classes in scen.items():
        n = periods[name]
        cov = {c: walk(f, n) for c, f in classes.items()}
        res = {
            "per_class_pdc": {c: sum(v) / n for c, v in cov.items()},
            "per_class_mpr": {c: sum(ds for _, ds, _ in f) / n for c, f in classes.items()},
            "per_class_covered_days": {c: sum(v) for c, v in cov.items()},
        }
        if len(classes) > 1:
            res["AnyCovered"] = sum(any(v[d] for v in cov.values()) for d in range(n)) / n
            res["AllCovered"] = sum(all(v[d] for v in cov.values()) for d in range(n)) / n
            res["MeanOfClassMeans"] = sum(res["per_class_pdc"].values()) / len(cov)
        out[name] = res
    (HERE / "expected").mkdir(exist_ok=True)
    (HERE / "expected" / "adherence.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
