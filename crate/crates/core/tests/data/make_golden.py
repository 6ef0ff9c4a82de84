"""Desk calculation for the aggregation golden test.

Writes golden_records.csv (20-s lane records for one U/C/D triplet) and
golden_features.csv (the 27 window statistics), computed with exact
fractions and decimal square roots, independently of the Rust code.
"""
import csv
import random
from decimal import Decimal, getcontext
from fractions import Fraction

getcontext().prec = 40
rng = random.Random(7)
END = 1525176000  # 2018-05-01 12:00:00 UTC
START = END - 300
DETS = ["U001", "C001", "D001"]

records = []
for d in DETS:
    for slot in range(15):
        if d == "D001" and slot == 6:
            continue  # one missing slot: 14 values downstream
        t = START + 20 * slot
        for lane in (1, 2, 3):
            flow = rng.randint(0, 12)
            if d == "C001" and slot == 3:
                flow = 0  # all lanes empty: unweighted speed fallback
            speed = round(rng.uniform(20, 100), 2)
            occ = round(rng.uniform(0, 40), 2)
            records.append((d, t, lane, flow, speed, occ))

with open("golden_records.csv", "w", newline="") as f:
    w = csv.writer(f, lineterminator="\n")
    w.writerow(["detector_id", "timestamp", "lane", "flow", "speed", "occupancy"])
    w.writerows(records)


def frac(x):
    return Fraction(str(x))


def stats(xs):
    n = len(xs)
    mean = sum(xs) / n
    var = sum((x - mean) ** 2 for x in xs) / (n - 1)
    std = Decimal(var.numerator) / Decimal(var.denominator)
    std = std.sqrt()
    m = Decimal(mean.numerator) / Decimal(mean.denominator)
    return [m, std, std / m]


names, values = [], []
for seg, d in zip("UCD", DETS):
    slots = {}
    for r in records:
        if r[0] == d:
            slots.setdefault(r[1], []).append(r)
    flow, speed, occ = [], [], []
    for t in sorted(slots):
        lanes = slots[t]
        q = sum(frac(r[3]) for r in lanes)
        flow.append(q / len(lanes))
        occ.append(sum(frac(r[5]) for r in lanes) / len(lanes))
        if q > 0:
            speed.append(sum(frac(r[3]) * frac(r[4]) for r in lanes) / q)
        else:
            speed.append(sum(frac(r[4]) for r in lanes) / len(lanes))
    for m, series in (("Flow", flow), ("Speed", speed), ("Occupancy", occ)):
        for s, v in zip(("Mean", "Std", "CV"), stats(series)):
            names.append(f"{s}_{m}_{seg}")
            values.append(v)

with open("golden_features.csv", "w", newline="") as f:
    w = csv.writer(f, lineterminator="\n")
    w.writerow(["feature", "value"])
    for n, v in zip(names, values):
        w.writerow([n, f"{v:.25f}"])
