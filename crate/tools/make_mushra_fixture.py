#!/usr/bin/env python3
"""Builds the sd-25000 naturalness score fixture.

45 panels judged by 15 raters each (675 rating sets) over four systems.
The scores are synthetic, chosen so that medians are 77/68/67/66 and
average within-set ranks print as 1.97/2.56/2.73/2.75.
"""

import csv
import random
import sys

SYSTEMS = ["recording", "sd-25000", "mx7-8500", "mx7-5000"]
PANELS = 45
RATERS_PER_PANEL = 15
RATER_POOL = 70
MEDIANS = [77, 68, 67, 66]
# Rank sums over 675 sets; one set ties recording with sd-25000 and the
# two mixed models with each other, contributing 1.5/1.5/3.5/3.5.
RANK_SUMS = [1328.5, 1725.5, 1842.5, 1853.5]
OFFSETS = [9.0, 1.0, -1.0, -2.0]


def midranks_desc(values):
    order = sorted(range(len(values)), key=lambda i: -values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        for k in order[i : j + 1]:
            ranks[k] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def median(xs):
    s = sorted(xs)
    n = len(s)
    return s[n // 2] if n % 2 else (s[n // 2 - 1] + s[n // 2]) / 2


def main(out_path, seed=25000):
    rng = random.Random(seed)
    n_sets = PANELS * RATERS_PER_PANEL
    tie_set = n_sets - 1

    # Rankings: rankings[s][k] is the rank of system k in set s.
    rankings = []
    for _ in range(n_sets - 1):
        keys = [OFFSETS[k] + rng.gauss(0, 6) for k in range(4)]
        rankings.append(midranks_desc(keys))
    target = [RANK_SUMS[k] - (1.5 if k < 2 else 3.5) for k in range(4)]

    def sums():
        return [sum(r[k] for r in rankings) for k in range(4)]

    # Adjacent swaps move one unit of rank between two systems.
    cur = sums()
    while cur != target:
        s = rng.randrange(len(rankings))
        r = rankings[s]
        a, b = rng.sample(range(4), 2)
        if abs(r[a] - r[b]) != 1:
            continue
        # Swapping moves r[b]-r[a] onto a and the opposite onto b.
        delta = r[b] - r[a]
        before = abs(cur[a] - target[a]) + abs(cur[b] - target[b])
        after = abs(cur[a] + delta - target[a]) + abs(cur[b] - delta - target[b])
        if after < before:
            r[a], r[b] = r[b], r[a]
            cur[a] += delta
            cur[b] -= delta

    # Scores consistent with each ranking: a panel-level base plus spread.
    scores = []
    for r in rankings:
        base = rng.uniform(55, 88)
        vals = sorted((base + rng.gauss(0, 9) for _ in range(4)), reverse=True)
        ints = []
        for v in vals:
            v = int(round(min(100, max(0, v))))
            if ints and v >= ints[-1]:
                v = ints[-1] - 1
            ints.append(v)
        if ints[-1] < 0:
            ints = [x - ints[-1] for x in ints]
        scores.append([ints[int(r[k]) - 1] for k in range(4)])
    scores.append([80, 80, 64, 64])
    rankings.append(midranks_desc(scores[-1]))

    # Shift single scores by one while keeping every within-set order,
    # until each system's median hits its target.
    def med(k):
        return median([row[k] for row in scores])

    meds = [med(k) for k in range(4)]
    guard = 0
    while meds != MEDIANS:
        guard += 1
        if guard > 5_000_000:
            raise SystemExit("median search did not converge")
        k = rng.randrange(4)
        if meds[k] == MEDIANS[k]:
            continue
        step = 1 if meds[k] < MEDIANS[k] else -1
        s = rng.randrange(n_sets - 1)
        row = scores[s]
        new = row[k] + step
        if not 0 <= new <= 100:
            continue
        others = [row[j] for j in range(4) if j != k]
        if new in others:
            continue
        old_rank = midranks_desc(row)
        row[k] = new
        if midranks_desc(row) != old_rank:
            row[k] -= step
            continue
        meds[k] = med(k)

    assert [sum(midranks_desc(row)[k] for row in scores) for k in range(4)] == RANK_SUMS
    assert [med(k) for k in range(4)] == MEDIANS

    pool = [f"r{i:03d}" for i in range(1, RATER_POOL + 1)]
    with open(out_path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["panel_id", "rater_id", "slot", "system", "score"])
        idx = 0
        for p in range(PANELS):
            panel = f"p{p + 1:04d}"
            slots = list(range(4))
            rng.shuffle(slots)
            for rater in sorted(rng.sample(pool, RATERS_PER_PANEL)):
                row = scores[idx]
                idx += 1
                for k in sorted(range(4), key=lambda k: slots[k]):
                    w.writerow([panel, rater, slots[k], SYSTEMS[k], row[k]])


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "fixtures/mushra/sd25000_naturalness.csv")
