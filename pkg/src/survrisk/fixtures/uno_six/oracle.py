"""Uno's IPCW C-index by hand.

G is the Kaplan-Meier estimate of the censoring distribution (censored rows
count as events). Each comparable pair led by event i gets weight
1 / G(time_i-)^2, where G(t-) uses censorings strictly before t.
"""
import csv
import json
from pathlib import Path

HERE = Path(__file__).parent


def g_left(rows, t):
    s = 1.0
    for u in sorted({u for u, _, _ in rows if u < t}):
        n = sum(1 for v, _, _ in rows if v >= u)
        c = sum(1 for v, e, _ in rows if v == u and e == 0)
        s *= 1.0 - c / n
    return s


def main():
    rows = [(float(r["time"]), int(r["event"]), float(r["score"]))
            for r in csv.DictReader(open(HERE / "input" / "labels.csv"))]
    num = den = 0.0
    weights = {}
    for ti, ei, si in rows:
        if ei != 1:
            continue
        w = 1.0 / g_left(rows, ti) ** 2
        weights[str(ti)] = w
        for tj, _, sj in rows:
            if ti < tj:
                den += w
                num += w * (1.0 if si > sj else 0.5 if si == sj else 0.0)
    out = {"weights": weights, "numerator": num, "denominator": den, "c_index": num / den}
    (HERE / "expected").mkdir(exist_ok=True)
    (HERE / "expected" / "uno.json").write_text(json.dumps(out, indent=2) + "\n")


if __name__ == "__main__":
    main()
