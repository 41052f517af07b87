import math

import pytest

from driftgauge.model import ChangeOfMeasure, DiffusionSpec, SdeForm


def besq(delta0: float, delta1: float | None = None, x0: float = 1.0):
    spec = DiffusionSpec(0.0, math.inf, "reflecting", "open", SdeForm("2*sqrt(x)", repr(float(delta0))), x0)
    if delta1 is None:
        return spec, ChangeOfMeasure.identity()
    return spec, ChangeOfMeasure(c=f"({delta1!r} - {delta0!r})/(2*sqrt(x))")


@pytest.fixture
def besq_pair():
    return besq
