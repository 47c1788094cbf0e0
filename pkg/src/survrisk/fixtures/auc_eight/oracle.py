"""Horizon AUC as a Mann-Whitney pair count.

Cases have an event by t, controls are still at risk after t, and instances
censored before t are left out. Ties count 1/2.
"""
import csv
import json
from pathlib import Path

HERE = Path(__file__).parent


def main():
    rows = [(float(r["time"]), int(r["event"]), float(r["prob"]))
            for r in csv.DictReader(open(HERE / "input" / "labels.csv"))]
    t = json.loads((HERE / "input" / "horizon.json").read_text())["t"]
    cases = [p for y, e, p in rows if y <= t and e == 1]
    controls = [p for y, _, p in rows if y > t]
    score = 0.0
    for a in cases:
        for b in controls:
            score += 1.0 if a > b else 0.5 if a == b else 0.0
    out = {"t": t, "n_cases": len(cases), "n_controls": len(controls), "auc": score / (len(cases) * len(controls))}
    (HERE / "expected").mkdir(exist_ok=True)
    (HERE / "expected" / "auc.json").write_text(json.dumps(out, indent=2) + "\n")


if __name__ == "__main__":
    main()
