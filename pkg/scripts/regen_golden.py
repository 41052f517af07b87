"""Rewrite tests/golden/*.json from the current analyzer.

Run after an intended change in analysis output, then review the diff.
"""

import pathlib
import sys

from driftgauge.cli import main

GOLDEN = pathlib.Path(__file__).resolve().parent.parent / "tests" / "golden"
PRESETS = [
    "example1-bm-to-bes3",
    "example2-besq:3:1",
    "example2-besq:1:3",
    "example2-besq:1:2",
    "example2-besq:0.5:2.5",
    "heston-cir:1:0.04:0.4",
    "heston-cir:1:0.04:0.4:0.05",
    "heston-cir:2:0.09:0.3:0.05",
]


def golden_path(preset: str) -> pathlib.Path:
    return GOLDEN / (preset.replace(":", "_") + ".json")


def regen() -> None:
    GOLDEN.mkdir(parents=True, exist_ok=True)
    for p in PRESETS:
        code = main(["analyze", "--preset", p, "--out", str(golden_path(p))])
        print(f"{p}: exit {code}")


if __name__ == "__main__":
    regen()
    sys.exit(0)
