"""Harrell C-index by exhaustive pair enumeration.

Pair (i, j) is comparable when time_i < time_j and event_i = 1. It counts 1 when
score_i > score_j and 1/2 on a score tie.
"""
import csv
import json
from pathlib import Path

HERE = Path(__file__).parent


def main():
    rows = [(float(r["time"]), int(r["event"]), float(r["score"]))
            for r in csv.DictReader(open(HERE / "input" / "labels.csv"))]
    conc = ties = pairs = 0
    for ti, ei, si in rows:
        for tj, _, sj in rows:
            if ei == 1 and ti < tj:
                pairs += 1
                if si > sj:
                    conc += 1
                elif si == sj:
                    ties += 1
    out = {"concordant": conc, "tied": ties, "comparable": pairs, "c_index": (conc + 0.5 * ties) / pairs}
    (HERE / "expected").mkdir(exist_ok=True)
    (HERE / "expected" / "c_index.json").write_text(json.dumps(out, indent=2) + "\n")


if __name__ == "__main__":
    main()
