"""Product-limit estimate by hand: at each distinct event time multiply by 1 - d/n."""
import csv
import json
from pathlib import Path

HERE = Path(__file__).parent


def main():
    rows = [(float(r["time"]), int(r["event"])) for r in csv.DictReader(open(HERE / "input" / "labels.csv"))]
    times = sorted({t for t, _ in rows})
    s = 1.0
    out = []
    for t in times:
        n = sum(1 for u, _ in rows if u >= t)
        d = sum(e for u, e in rows if u == t)
        s *= 1.0 - d / n
        out.append({"time": t, "survival": s})
    (HERE / "expected").mkdir(exist_ok=True)
    (HERE / "expected" / "km.json").write_text(json.dumps(out, indent=2) + "\n")


if __name__ == "__main__":
    main()
