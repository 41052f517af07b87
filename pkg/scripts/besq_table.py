"""Verdict table for BESQ dimension changes d0 -> d1, reflecting at 0."""

import itertools
import time

from driftgauge.presets import example2
from driftgauge.verdict import martingale_verdict

DIMS = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0]


def main():
    t0 = time.perf_counter()
    rows = {}
    for d0, d1 in itertools.product(DIMS, DIMS):
        if d0 != d1:
            p = example2(d0, d1)
            rows[d0, d1] = martingale_verdict(p.spec, p.com).verdict
    short = {"TrueMartingale": "T", "StrictLocalMartingale": "S", "Inconclusive": "?"}
    print("d0 \\ d1 " + " ".join(f"{d:>4g}" for d in DIMS))
    for d0 in DIMS:
        cells = [short[rows[d0, d1]] if d0 != d1 else "-" for d1 in DIMS]
        print(f"{d0:>7g} " + " ".join(f"{c:>4}" for c in cells))
    print(f"T = true martingale, S = strict local martingale; {time.perf_counter() - t0:.2f}s")


if __name__ == "__main__":
    main()
