"""Hand computation of the encounter label table for the three-patient timeline.

Months are whole 30.4375-day months truncated toward zero. Patients without an
event are censored at their last encounter. Rows with an event and y <= 0 are
marked unused. Standard library only.
"""
import csv
import datetime as dt
from pathlib import Path

HERE = Path(__file__).parent


def months(a, b):
    return int((b - a).days / 30.4375)


def main():
    encs = list(csv.DictReader(open(HERE / "input" / "encounters.csv")))
    events = {r["patient_id"]: dt.date.fromisoformat(r["first_date"])
              for r in csv.DictReader(open(HERE / "input" / "events.csv"))}
    last = {}
    for e in encs:
        d = dt.date.fromisoformat(e["date"])
        last[e["patient_id"]] = max(last.get(e["patient_id"], d), d)
    rows = []
    for e in encs:
        d = dt.date.fromisoformat(e["date"])
        pid = e["patient_id"]
        if pid in events:
            y = months(d, events[pid])
            rows.append([e["encounter_id"], 1, y, "N.A.", y, "Not used (y <= 0)" if y <= 0 else ""])
        else:
            y = months(d, last[pid])
            rows.append([e["encounter_id"], 0, "N.A.", y, y, ""])
    (HERE / "expected").mkdir(exist_ok=True)
    with open(HERE / "expected" / "label_table.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["encounter_id", "event_indicator", "time_to_event", "censored_time", "observed_time", "remarks"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
