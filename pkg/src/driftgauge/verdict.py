"""True-martingale test for ``Z_t = phi(X_t) exp(-int (G phi/phi)(X_u) du)``.

For each endpoint of the state interval, under the transformed diffusion
(scale density ``s~'``, speed density ``m~'``):

1. is ``s~`` finite at the endpoint?
2. is the endpoint reached in finite time,
   ``int |s~(x) - s~(e)| m~'(x) dx < inf`` near it?
3. does the additive functional ``int h~(X_u) du`` blow up on arrival?
   Reflecting endpoints use ``int h~ m~' dx = inf`` (cross-checked against
   ``int phi'^2 / s' dx``); absorbing endpoints use
   ``int |s~ - s~(e)| h~ m~' dx = inf``.

``Z`` fails to be a martingale exactly when some endpoint answers yes to
all three.  Every answer is tri-state because the integrals are classified
numerically.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import expr as ex
from . import __version__
from .model import BoundaryBehavior, ChangeOfMeasure, DiffusionSpec, TransformedSpec, transform
from .quad import (
    DIVERGENT, FINITE, FROM_ABOVE, FROM_BELOW, INCONCLUSIVE,
    DyadicAnalysis, IntegralVerdict, QuadConfig, analyze_chart, endpoint_limit, make_chart,
)

YES, NO, UNKNOWN = "yes", "no", "inconclusive"

TRUE_MARTINGALE = "TrueMartingale"
STRICT_LOCAL = "StrictLocalMartingale"
VERDICT_INCONCLUSIVE = "Inconclusive"

REFLECTING_EXPLODE = "reflecting_explode"
ABSORBING_EXPLODE = "absorbing_explode"
NOT_APPLICABLE = "not_applicable"

ASSUMPTIONS = ["dphi/dm has a continuous density (assumed, not checked)"]


def _tri(v: IntegralVerdict, finite_means: str) -> str:
    if v.cls == FINITE:
        return finite_means
    if v.cls == DIVERGENT:
        return NO if finite_means == YES else YES
    return UNKNOWN


def _ext(v: float | None):
    """JSON-safe extended real."""
    if v is None:
        return UNKNOWN
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


@dataclass
class EndpointTrace:
    endpoint: str                 # "lower" | "upper"
    location: float | str
    boundary: str
    s_tilde_value: float | str
    step1_finite: str
    step2_reached: str | None
    step3_explodes: str | None
    criterion_used: str
    integrals: dict = field(default_factory=dict)
    p_accessible: str = UNKNOWN
    notes: list = field(default_factory=list)

    def fires(self) -> bool:
        return self.step1_finite == YES and self.step2_reached == YES and self.step3_explodes == YES

    def fails_definitively(self) -> bool:
        for step in (self.step1_finite, self.step2_reached, self.step3_explodes):
            if step == NO:
                return True
            if step != YES:
                return False
        return False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["integrals"] = {k: v.to_dict() for k, v in self.integrals.items()}
        return d


def verdict_from_traces(traces) -> str:
    """Aggregate per-endpoint answers; accepts traces or their dicts."""
    steps = []
    for t in traces:
        if isinstance(t, dict):
            steps.append((t["step1_finite"], t["step2_reached"], t["step3_explodes"]))
        else:
            steps.append((t.step1_finite, t.step2_reached, t.step3_explodes))
    if any(s == (YES, YES, YES) for s in steps):
        return STRICT_LOCAL

    def fails(s):
        for step in s:
            if step == NO:
                return True
            if step != YES:
                return False
        return False

    if all(fails(s) for s in steps):
        return TRUE_MARTINGALE
    return VERDICT_INCONCLUSIVE


@dataclass
class MartingaleReport:
    verdict: str
    traces: list
    normalized_phi_note: str
    phi: str
    assumptions: list = field(default_factory=lambda: list(ASSUMPTIONS))
    config_echo: dict = field(default_factory=dict)
    version: str = __version__

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "traces": [t.to_dict() for t in self.traces],
            "normalized_phi_note": self.normalized_phi_note,
            "phi": self.phi,
            "assumptions": list(self.assumptions),
            "config_echo": dict(self.config_echo),
            "version": self.version,
        }


# --------------------------------------------------------------------------
# per-endpoint machinery


@dataclass
class _Side:
    which: str
    location: float
    side: str
    window: float
    origin: float

    def chart(self):
        start = self.origin if math.isinf(self.location) else None
        return make_chart(self.location, self.side, self.window, start)


def _side(spec: DiffusionSpec, which: str, cfg: QuadConfig) -> _Side:
    w = cfg.window_for(spec.a, spec.b)
    if which == "lower":
        return _Side("lower", spec.a, FROM_ABOVE, w, spec.x0)
    return _Side("upper", spec.b, FROM_BELOW, w, spec.x0)


def _fn(e: ex.Expr) -> Callable:
    return lambda x: ex.evaluate(e, x)


def _classify(f: Callable, sd: _Side, cfg: QuadConfig) -> DyadicAnalysis:
    chart = sd.chart()
    return analyze_chart(chart.pullback(f), chart, cfg)


def accessibility(spec: DiffusionSpec, which: str, cfg: QuadConfig | None = None) -> tuple[str, IntegralVerdict]:
    """Whether the original scale is finite at the endpoint."""
    cfg = cfg or QuadConfig()
    sd = _side(spec, which, cfg)
    an = _classify(_fn(spec.s_prime), sd, cfg)
    return _tri(an.verdict, YES), an.verdict


def _closed_primitive(st: ex.Expr, sd: _Side):
    """``|s~(x) - s~(e)|`` in closed form when s~' is a sum of powers."""
    ps = ex.as_power_sum(st)
    if ps is None or -1.0 in ps:
        return None
    e = sd.location
    if e == 0.0 and all(p + 1 > 0 for p in ps):
        pass
    elif math.isinf(e) and e > 0 and all(p + 1 < 0 for p in ps):
        pass
    else:
        return None
    prim = ex.from_power_sum({p + 1: c / (p + 1) for p, c in ps.items()})
    # s~' > 0, so the primitive difference is |F(x) - F(e)| with F(e) = 0
    return lambda x: np.abs(ex.evaluate(prim, x))


def _distance_in_t(tr: TransformedSpec, sd: _Side, step1: DyadicAnalysis) -> Callable:
    """``D(t) = |s~(x(t)) - s~(e)|`` on the endpoint chart."""
    chart = step1.chart
    closed = _closed_primitive(tr.s_tilde_prime, sd)
    if closed is not None:
        return lambda t: closed(chart.x(t))
    prim = step1.primitive()
    return lambda t: np.abs(prim(t))


def reaches_endpoint(tr: TransformedSpec, sd: _Side, step1: DyadicAnalysis, cfg: QuadConfig):
    chart = step1.chart
    dist = _distance_in_t(tr, sd, step1)
    mt = _fn(tr.m_tilde_prime)

    def g(t):
        return dist(t) * np.asarray(mt(chart.x(t))) * chart.jacobian(t)

    an = analyze_chart(g, chart, cfg)
    return _tri(an.verdict, YES), an.verdict, dist


def explosion_test(tr: TransformedSpec, sd: _Side, behavior: BoundaryBehavior,
                   step1: DyadicAnalysis, dist: Callable, cfg: QuadConfig):
    """Returns ``(answer, criterion, integrals, notes)``."""
    chart = step1.chart
    if behavior is BoundaryBehavior.REFLECTING:
        main = _classify(_fn(tr.explode_integrand()), sd, cfg).verdict
        alt = _classify(_fn(tr.explode_integrand_alt()), sd, cfg).verdict
        ints = {"explode": main, "explode_alt": alt}
        a, b = _tri(main, NO), _tri(alt, NO)
        if a == b:
            return a, REFLECTING_EXPLODE, ints, []
        if UNKNOWN in (a, b):
            known = a if b == UNKNOWN else b
            return known, REFLECTING_EXPLODE, ints, ["one explosion form inconclusive; used the other"]
        return UNKNOWN, REFLECTING_EXPLODE, ints, ["explosion forms disagree"]
    hm = _fn(tr.explode_integrand())
    if behavior is BoundaryBehavior.ABSORBING:
        def g(t):
            return dist(t) * np.asarray(hm(chart.x(t))) * chart.jacobian(t)

        v = analyze_chart(g, chart, cfg).verdict
        return _tri(v, NO), ABSORBING_EXPLODE, {"explode_absorbing": v}, []
    # open endpoint reached by the transformed diffusion: equivalence is lost
    v = _classify(hm, sd, cfg).verdict
    return YES, NOT_APPLICABLE, {"explode_diagnostic": v}, [
        "endpoint is open but reached under the new measure"]


def density_vanishes_at(tr: TransformedSpec, which: str, cfg: QuadConfig | None = None) -> str:
    """Whether the density process is killed when the original diffusion hits the endpoint.

    That happens when the endpoint is reached under the original measure and
    ``int h~(X_u) du`` diverges up to the hitting time, which by the usual
    zero-one law is the divergence of ``int |s - s(e)| h~ m'`` near the end.
    """
    cfg = cfg or QuadConfig()
    spec = tr.base
    if math.isinf(spec.location(which)) or (ex.is_constant(tr.h_tilde) and float(ex.evaluate(tr.h_tilde, 0.0)) == 0):
        return NO
    sd = _side(spec, which, cfg)
    step1 = _classify(_fn(spec.s_prime), sd, cfg)
    acc = _tri(step1.verdict, YES)
    if acc != YES:
        return acc
    plain = transform(spec, ChangeOfMeasure.identity())
    reached, _, dist = reaches_endpoint(plain, sd, step1, cfg)
    if reached != YES:
        return reached
    chart = step1.chart
    hm = _fn(ex.tidy(tr.h_tilde * spec.m_prime))

    def g(t):
        return dist(t) * np.asarray(hm(chart.x(t))) * chart.jacobian(t)

    return _tri(analyze_chart(g, chart, cfg).verdict, NO)


def transformed_reaches(tr: TransformedSpec, which: str, cfg: QuadConfig | None = None) -> str:
    """Whether the diffusion under the new measure reaches a finite endpoint."""
    cfg = cfg or QuadConfig()
    if math.isinf(tr.base.location(which)):
        return NO
    sd = _side(tr.base, which, cfg)
    step1 = _classify(_fn(tr.s_tilde_prime), sd, cfg)
    acc = _tri(step1.verdict, YES)
    if acc != YES:
        return acc
    return reaches_endpoint(tr, sd, step1, cfg)[0]


def analyze_endpoint(spec: DiffusionSpec, tr: TransformedSpec, which: str, cfg: QuadConfig) -> EndpointTrace:
    sd = _side(spec, which, cfg)
    behavior = spec.boundary(which)
    criterion = {
        BoundaryBehavior.REFLECTING: REFLECTING_EXPLODE,
        BoundaryBehavior.ABSORBING: ABSORBING_EXPLODE,
    }.get(behavior, NOT_APPLICABLE)
    acc, acc_v = accessibility(spec, which, cfg)
    trace = EndpointTrace(which, _ext(sd.location), behavior.value, UNKNOWN,
                          UNKNOWN, None, None, criterion, {"p_scale": acc_v}, acc)

    step1 = _classify(_fn(tr.s_tilde_prime), sd, cfg)
    limit, _ = endpoint_limit(_fn(tr.s_tilde_prime), sd.location, sd.side, sd.origin, cfg, sd.window)
    trace.integrals["s_tilde"] = step1.verdict
    trace.s_tilde_value = _ext(limit)
    trace.step1_finite = _tri(step1.verdict, YES)
    if trace.step1_finite != YES:
        return trace

    trace.step2_reached, reach_v, dist = reaches_endpoint(tr, sd, step1, cfg)
    trace.integrals["reach"] = reach_v
    if trace.step2_reached != YES:
        return trace

    ans, crit, ints, notes = explosion_test(tr, sd, behavior, step1, dist, cfg)
    trace.step3_explodes = ans
    trace.criterion_used = crit
    trace.integrals.update(ints)
    trace.notes.extend(notes)
    return trace


def martingale_verdict(spec: DiffusionSpec, com: ChangeOfMeasure, cfg: QuadConfig | None = None) -> MartingaleReport:
    cfg = cfg or QuadConfig()
    tr = transform(spec, com)
    traces = [analyze_endpoint(spec, tr, w, cfg) for w in ("lower", "upper")]
    return MartingaleReport(
        verdict=verdict_from_traces(traces),
        traces=traces,
        normalized_phi_note=tr.note,
        phi=str(tr.phi),
        config_echo={"quad": asdict(cfg)},
    )
