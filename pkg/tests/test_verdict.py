import itertools
import math
import time

import pytest

from driftgauge import expr as ex
from driftgauge.model import ChangeOfMeasure, DiffusionSpec, SdeForm
from driftgauge.presets import example1, example2, heston_cir
from driftgauge.quad import QuadConfig
from driftgauge.verdict import (NO, STRICT_LOCAL, TRUE_MARTINGALE, UNKNOWN, VERDICT_INCONCLUSIVE, YES,
                                EndpointTrace, accessibility, martingale_verdict, verdict_from_traces)

from conftest import besq

DIMS = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0]
PAIRS = [(d0, d1) for d0, d1 in itertools.product(DIMS, DIMS) if d0 != d1]


def trace(report, which):
    return next(t for t in report.traces if t.endpoint == which)


@pytest.mark.parametrize("d0,d1", PAIRS, ids=[f"{a:g}->{b:g}" for a, b in PAIRS])
def test_besq_dimension_change(d0, d1):
    spec, com = besq(d0, d1)
    rep = martingale_verdict(spec, com)
    assert rep.verdict == (STRICT_LOCAL if d1 < 2 else TRUE_MARTINGALE)


def test_besq_table_is_fast():
    t0 = time.perf_counter()
    for d0, d1 in PAIRS:
        martingale_verdict(*besq(d0, d1))
    assert time.perf_counter() - t0 < 10.0


def test_accessibility_examples():
    cfg = QuadConfig()
    assert accessibility(besq(1)[0], "lower", cfg)[0] == YES
    assert accessibility(besq(3)[0], "lower", cfg)[0] == NO
    line = DiffusionSpec(-math.inf, math.inf, "open", "open", SdeForm("1", "0"), 0.0)
    assert accessibility(line, "lower", cfg)[0] == NO


def test_bm_to_bes3_trace():
    rep = martingale_verdict(*_preset(example1(2.0)))
    assert rep.verdict == TRUE_MARTINGALE
    lo, hi = trace(rep, "lower"), trace(rep, "upper")
    assert lo.step1_finite == NO and lo.s_tilde_value == "-inf"
    assert hi.step1_finite == YES and hi.step2_reached == NO
    # s~ = -x0^2/x, measured from x0: s~(inf) - s~(x0) = x0
    assert hi.s_tilde_value == pytest.approx(2.0, rel=1e-9)
    assert hi.integrals["reach"].cls == "Divergent"


def test_besq_three_to_one_trace():
    rep = martingale_verdict(*besq(3, 1))
    lo = trace(rep, "lower")
    assert (lo.step1_finite, lo.step2_reached, lo.step3_explodes) == (YES, YES, YES)
    assert lo.criterion_used == "reflecting_explode"
    assert lo.integrals["reach"].cls == "Finite"
    assert lo.integrals["explode"].cls == "Divergent"
    assert lo.p_accessible == NO
    # original BESQ(3) never reaches 0, the new measure's BESQ(1) does
    hi = trace(rep, "upper")
    assert hi.step1_finite == NO


def test_log_scale_case_fails_first_check_at_both_ends():
    rep = martingale_verdict(*besq(1, 2))
    assert rep.verdict == TRUE_MARTINGALE
    assert [t.step1_finite for t in rep.traces] == [NO, NO]
    assert [t.s_tilde_value for t in rep.traces] == ["-inf", "inf"]


def test_besq_three_at_infinity_not_reached():
    hi = trace(martingale_verdict(*besq(1, 3)), "upper")
    assert hi.step1_finite == YES and hi.step2_reached == NO


def test_heston_linear_drift_no_explosion():
    p = heston_cir(1.0, 0.04, 0.4, "x")
    rep = martingale_verdict(p.spec, p.com)
    lo = trace(rep, "lower")
    assert lo.step2_reached == YES and lo.step3_explodes == NO
    assert lo.integrals["explode"].cls == "Finite"
    assert rep.verdict == TRUE_MARTINGALE


def test_absorbing_endpoint_with_interval_phi():
    # BM on (0, 2), absorbed at both ends, phi = x(2 - x): Z multiplies by a
    # harmonic-free factor and the criterion uses the absorbing form
    spec = DiffusionSpec(0.0, 2.0, "absorbing", "absorbing", SdeForm("1", "0"), 1.0)
    rep = martingale_verdict(spec, ChangeOfMeasure(phi="x*(2 - x)"))
    for t in rep.traces:
        assert t.criterion_used == "absorbing_explode"
        assert t.p_accessible == YES
    assert rep.verdict == TRUE_MARTINGALE


PRESETS = [example1(), example1(3.0), example2(3, 1), example2(1, 3), example2(1, 2),
           heston_cir(1.0, 0.04, 0.4), heston_cir(2.0, 0.09, 0.3, "0.05")]


def _preset(p):
    return p.spec, p.com


@pytest.mark.parametrize("p", PRESETS, ids=[p.name for p in PRESETS])
def test_identity_change_is_true_martingale(p):
    rep = martingale_verdict(p.spec, ChangeOfMeasure.identity())
    assert rep.verdict == TRUE_MARTINGALE


@pytest.mark.parametrize("phi", ["x^(-0.5)", "x^0.75", "x^(-0.25)*exp(-x)"])
@pytest.mark.parametrize("k", [1e-3, 0.5, 7.0, 1e4])
def test_scaling_invariance(phi, k):
    spec = besq(3, x0=2.0)[0]
    base = ex.parse(phi)
    ref = martingale_verdict(spec, ChangeOfMeasure(phi=base)).to_dict()
    scaled = martingale_verdict(spec, ChangeOfMeasure(phi=ex.Mul(ex.Const(k), base))).to_dict()
    assert scaled == ref


@pytest.mark.parametrize("p", PRESETS, ids=[p.name for p in PRESETS])
def test_verdict_rederived_from_emitted_traces(p):
    rep = martingale_verdict(p.spec, p.com)
    assert verdict_from_traces(rep.to_dict()["traces"]) == rep.verdict
    assert verdict_from_traces(rep.traces) == rep.verdict


def _t(*steps):
    return EndpointTrace("lower", 0.0, "open", 0.0, *steps, criterion_used="x")


def test_aggregation_rules():
    fire = _t(YES, YES, YES)
    fail = _t(NO, None, None)
    unk = _t(YES, UNKNOWN, None)
    assert verdict_from_traces([fire, unk]) == STRICT_LOCAL
    assert verdict_from_traces([fail, _t(YES, YES, NO)]) == TRUE_MARTINGALE
    assert verdict_from_traces([fail, unk]) == VERDICT_INCONCLUSIVE
    assert verdict_from_traces([_t(UNKNOWN, None, None), fail]) == VERDICT_INCONCLUSIVE


def test_report_carries_assumption_and_config():
    d = martingale_verdict(*besq(3, 1)).to_dict()
    assert d["assumptions"] and "assumed" in d["assumptions"][0]
    assert d["config_echo"]["quad"]["tol"] == QuadConfig().tol
    assert set(d) >= {"verdict", "traces", "assumptions", "config_echo", "version"}
