"""Graf IPCW Brier score by hand at each grid time, then the trapezoid IBS.

Event by t: S^2 / G(y-). Still at risk after t: (1 - S)^2 / G(t). Censored
by t: weight 0.
"""
import csv
import json
from pathlib import Path

HERE = Path(__file__).parent


def g(rows, t, strict):
    s = 1.0
    for u in sorted({r[0] for r in rows if (r[0] < t if strict else r[0] <= t)}):
        n = sum(1 for r in rows if r[0] >= u)
        c = sum(1 for r in rows if r[0] == u and r[1] == 0)
        s *= 1.0 - c / n
    return s


def main():
    raw = list(csv.DictReader(open(HERE / "input" / "labels.csv")))
    grid = json.loads((HERE / "input" / "grid.json").read_text())["grid"]
    rows = [(float(r["time"]), int(r["event"]), [float(r[f"s_{k + 1}"]) for k in range(len(grid))]) for r in raw]
    scores = []
    for k, t in enumerate(grid):
        total = 0.0
        for y, e, s in rows:
            if y <= t and e == 1:
                total += s[k] ** 2 / g(rows, y, strict=True)
            elif y > t:
                total += (1.0 - s[k]) ** 2 / g(rows, t, strict=False)
        scores.append(total / len(rows))
    area = sum((grid[k + 1] - grid[k]) * (scores[k] + scores[k + 1]) / 2 for k in range(len(grid) - 1))
    out = {"grid": grid, "brier": scores, "ibs": area / (grid[-1] - grid[0])}
    (HERE / "expected").mkdir(exist_ok=True)
    (HERE / "expected" / "brier.json").write_text(json.dumps(out, indent=2) + "\n")


if __name__ == "__main__":
    main()
