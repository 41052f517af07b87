"""Adaptive Gauss-Kronrod quadrature and improper-integral classification.

The classifier splits a window next to a singular endpoint into dyadic
pieces ``[w 2^-(k+1), w 2^-k]`` (in a local coordinate ``t`` that vanishes
at the endpoint), integrates every piece, and reads the verdict off the
sequence of piece integrals:

* geometric decay with ratio <= ``ratio_cutoff`` and a resolved tail
  (tail extrapolated by Wynn's epsilon algorithm or a ratio envelope)
  gives ``Finite``;
* a local power ``<= -1 - exponent_margin``, non-decreasing pieces, or a
  partial sum above ``divergence_cap`` gives ``Divergent``;
* slowly (algebraically) decaying pieces are accelerated with Levin's
  u-transform; everything near the critical power ``-1`` that cannot be
  resolved is reported as ``Inconclusive``.

Infinite endpoints are mapped to ``t -> 0+`` by ``x = start - 1/w + 1/t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np

from .expr import DomainError

FINITE = "Finite"
DIVERGENT = "Divergent"
INCONCLUSIVE = "Inconclusive"

FROM_ABOVE = "from_above"
FROM_BELOW = "from_below"

# Kronrod 15-point nodes/weights on [-1, 1] (QUADPACK qk15); every other
# node is a 7-point Gauss node.
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])  # 15 nodes, ascending
KRONROD = np.concatenate([_WGK[:-1], _WGK[::-1]])
GAUSS = np.zeros(15)
GAUSS[1:7:2] = _WG[:3]
GAUSS[7] = _WG[3]
GAUSS[9:15:2] = _WG[2::-1]

_EPS = np.finfo(float).eps


class NoConvergence(ArithmeticError):
    pass


@dataclass(frozen=True)
class QuadConfig:
    tol: float = 1e-8
    window: float | None = None  # None: min(1, (b - a)/10)
    max_levels: int = 60
    exponent_margin: float = 0.05
    divergence_cap: float = 1e12
    ratio_cutoff: float = 0.98

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.window is not None and not self.window > 0:
            raise ValueError("window must be positive")
        if self.max_levels < 8:
            raise ValueError("max_levels must be at least 8")

    def window_for(self, a: float, b: float) -> float:
        if self.window is not None:
            return float(self.window)
        return min(1.0, (b - a) / 10.0)


# --------------------------------------------------------------------------
# proper integrals


def _gk15(f: Callable, lo: np.ndarray, hi: np.ndarray):
    """Kronrod value, error estimate and node values on many intervals."""
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    pts = mid[:, None] + half[:, None] * NODES[None, :]
    vals = np.asarray(f(pts.ravel()), dtype=float).reshape(pts.shape)
    k = half * (vals @ KRONROD)
    g = half * (vals @ GAUSS)
    # QUADPACK error heuristic
    mean = (vals @ KRONROD) * 0.5
    resasc = np.abs(half) * (np.abs(vals - mean[:, None]) @ KRONROD)
    resabs = np.abs(half) * (np.abs(vals) @ KRONROD)
    err = np.abs(k - g)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(resasc > 0, np.minimum(1.0, (200.0 * err / resasc) ** 1.5), 1.0)
    err = np.where(resasc > 0, resasc * scale, err)
    err = np.maximum(err, 50 * _EPS * resabs)
    return k, err, vals


def _adaptive(f, c: float, d: float, rtol: float, atol: float, limit: int = 4000):
    lo = np.array([c], dtype=float)
    hi = np.array([d], dtype=float)
    val, err, _ = _gk15(f, lo, hi)
    done_val = 0.0
    done_err = 0.0
    while True:
        total = done_val + val.sum()
        total_err = done_err + err.sum()
        if total_err <= max(atol, rtol * abs(total)):
            return total, total_err
        if lo.size + 1 > limit:
            raise NoConvergence(
                f"no convergence on [{c}, {d}] after {limit} pieces "
                f"(value {total:.6g}, error {total_err:.3g})"
            )
        # bisect pieces carrying more than their share of the error budget
        budget = max(atol, rtol * abs(total)) / max(lo.size, 1)
        split = err > budget
        if not split.any():
            split = err >= err.max()
        width = hi - lo
        # pieces too small to split are retired with their error
        tiny = split & (width <= 4 * _EPS * np.maximum(np.abs(lo), np.abs(hi)))
        if tiny.any():
            done_val += val[tiny].sum()
            done_err += err[tiny].sum()
            keep = ~tiny
            lo, hi, val, err, split = lo[keep], hi[keep], val[keep], err[keep], split[keep]
            if lo.size == 0:
                return done_val, done_err
            if not split.any():
                continue
        mid = 0.5 * (lo[split] + hi[split])
        new_lo = np.concatenate([lo[split], mid])
        new_hi = np.concatenate([mid, hi[split]])
        nv, ne, _ = _gk15(f, new_lo, new_hi)
        lo = np.concatenate([lo[~split], new_lo])
        hi = np.concatenate([hi[~split], new_hi])
        val = np.concatenate([val[~split], nv])
        err = np.concatenate([err[~split], ne])


def integrate(f: Callable, c: float, d: float, cfg: QuadConfig | None = None):
    """Integrate ``f`` over ``[c, d]``; returns ``(value, error_estimate)``.

    ``f`` must accept numpy arrays.  The error estimate is driven below
    ``tol * (1 + |value|)``; otherwise :class:`NoConvergence` is raised.
    """
    cfg = cfg or QuadConfig()
    if not c < d:
        raise ValueError("integrate needs c < d")
    return _adaptive(f, float(c), float(d), cfg.tol, cfg.tol)


def integrate_between(f: Callable, c: float, d: float, tol: float = 1e-12) -> float:
    """Signed integral from ``c`` to ``d`` (either order)."""
    if c == d:
        return 0.0
    if c < d:
        return _adaptive(f, c, d, tol, tol * 1e-3)[0]
    return -_adaptive(f, d, c, tol, tol * 1e-3)[0]


# --------------------------------------------------------------------------
# endpoint charts


@dataclass(frozen=True)
class Chart:
    """Local coordinate ``t in (0, window]`` with ``t -> 0`` at the endpoint."""

    endpoint: float
    side: str
    window: float
    start: float = 0.0  # window edge for infinite endpoints

    def __post_init__(self):
        if self.side not in (FROM_ABOVE, FROM_BELOW):
            raise ValueError(f"side must be {FROM_ABOVE!r} or {FROM_BELOW!r}")
        if math.isinf(self.endpoint):
            if (self.endpoint > 0) != (self.side == FROM_BELOW):
                raise ValueError("+inf is approached from below, -inf from above")

    @property
    def infinite(self) -> bool:
        return math.isinf(self.endpoint)

    def x(self, t):
        t = np.asarray(t, dtype=float)
        w = self.window
        if self.infinite:
            if self.endpoint > 0:
                return self.start - 1.0 / w + 1.0 / t
            return self.start + 1.0 / w - 1.0 / t
        if self.side == FROM_ABOVE:
            return self.endpoint + t
        return self.endpoint - t

    def jacobian(self, t):
        t = np.asarray(t, dtype=float)
        if self.infinite:
            return 1.0 / (t * t)
        return np.ones_like(t)

    def far_edge(self) -> float:
        """The x coordinate of ``t = window``."""
        return float(self.x(self.window))

    def pullback(self, f: Callable) -> Callable:
        """``g(t) = f(x(t)) |dx/dt|``, so that int f dx = int g dt."""
        def g(t):
            return np.asarray(f(self.x(t)), dtype=float) * self.jacobian(t)
        return g


def make_chart(endpoint: float, side: str, window: float, start: float | None = None) -> Chart:
    if math.isinf(endpoint):
        if start is None:
            raise ValueError("an infinite endpoint needs a finite window start")
        return Chart(float(endpoint), side, float(window), float(start))
    return Chart(float(endpoint), side, float(window), 0.0)


def usable_levels(chart: Chart, max_levels: int) -> int:
    """Levels whose points are still distinguishable from a finite endpoint."""
    if chart.infinite or chart.endpoint == 0.0:
        return max_levels
    # keep t >= 2^-36 |a| so that x - a retains about 6 significant digits
    limit = int(math.floor(math.log2(chart.window / (abs(chart.endpoint) * 2.0 ** -36))))
    return max(8, min(max_levels, limit))


# --------------------------------------------------------------------------
# verdicts


@dataclass
class IntegralVerdict:
    cls: str
    value: float | None = None
    error_estimate: float = math.inf
    exponent_estimate: float | None = None
    levels_used: int = 0
    diagnostics: list = field(default_factory=list)
    reason: str = ""

    @property
    def finite(self) -> bool:
        return self.cls == FINITE

    @property
    def divergent(self) -> bool:
        return self.cls == DIVERGENT

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class"] = d.pop("cls")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "IntegralVerdict":
        d = dict(d)
        return cls(cls=d.pop("class"), **d)


@dataclass
class DyadicAnalysis:
    """Per-level data behind a verdict; supports tail primitives."""

    chart: Chart
    t: np.ndarray           # level edges t_0 > t_1 > ... > t_L
    pieces: np.ndarray      # integral over [t_{k+1}, t_k], sign-normalised
    sign: float
    verdict: IntegralVerdict
    tail: float | None      # estimated integral over (0, t_L]
    tail_power: float | None
    g: Callable

    def tails(self) -> np.ndarray:
        """``T_k = integral over (0, t_k]`` for k = 0..L (sign-normalised)."""
        if self.tail is None:
            raise ValueError("tail not resolved")
        L = self.pieces.size
        out = np.empty(L + 1)
        out[L] = self.tail
        for k in range(L - 1, -1, -1):
            out[k] = out[k + 1] + self.pieces[k]
        return out

    def primitive(self) -> Callable:
        """``D(t) = integral of g over (0, t]`` (true sign) for t in the window."""
        T = self.tails()
        t_edges = self.t
        L = self.pieces.size
        g = self.g
        s = self.sign
        beta = self.tail_power

        def D(t):
            t = np.asarray(t, dtype=float)
            flat = t.ravel()
            out = np.empty_like(flat)
            with np.errstate(divide="ignore"):
                k = np.floor(np.log2(t_edges[0] / flat)).astype(int)
            k = np.clip(k, 0, None)
            deep = k >= L
            if deep.any():
                tt = flat[deep]
                p = beta if beta is not None else 1.0
                out[deep] = T[L] * (tt / t_edges[L]) ** p
            sh = ~deep
            if sh.any():
                kk = k[sh]
                lo = t_edges[kk + 1]
                hi = flat[sh]
                # guard against floor() landing one level off at the edges
                fix = hi < lo
                kk = np.where(fix, kk + 1, kk)
                lo = t_edges[np.minimum(kk + 1, L)]
                part, _, _ = _gk15(lambda u: s * np.asarray(g(u)), lo, hi)
                out[sh] = T[np.minimum(kk + 1, L)] + part
            return (s * out).reshape(t.shape)

        return D


def _wynn(seq: np.ndarray):
    """Wynn epsilon extrapolation; returns (value, error estimate)."""
    s = np.asarray(seq, dtype=float)
    n = s.size
    best_val = s[-1]
    best_err = abs(s[-1] - s[-2]) + abs(s[-1] - s[-3]) if n >= 3 else math.inf
    prev = np.zeros(n + 1)
    cur = s.copy()
    col = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        while cur.size > 1:
            diff = np.diff(cur)
            if np.any(diff == 0) or not np.all(np.isfinite(diff)):
                break
            nxt = prev[1:cur.size] + 1.0 / diff
            prev, cur = cur, nxt
            col += 1
            if col % 2 == 0 and cur.size >= 3 and np.all(np.isfinite(cur[-3:])):
                err = abs(cur[-1] - cur[-2]) + abs(cur[-1] - cur[-3])
                if err < best_err:
                    best_val, best_err = cur[-1], err
    return float(best_val), float(best_err + 5 * _EPS * abs(best_val))


def _levin_u(terms: np.ndarray):
    """Levin u-transform of the series ``sum terms``; (value, error estimate)."""
    a = np.asarray(terms, dtype=float)
    s = np.cumsum(a)
    n_all = a.size
    ests = []
    beta = 1.0
    for order in range(2, min(16, n_all - 1)):
        n0 = n_all - order - 1
        num = 0.0
        den = 0.0
        for j in range(order + 1):
            n = n0 + j
            omega = (n + beta) * a[n]
            if omega == 0:
                return float(s[-1]), math.inf
            c = (-1) ** j * math.comb(order, j) * ((n + beta) / (n0 + order + beta)) ** (order - 1)
            num += c * s[n] / omega
            den += c / omega
        ests.append(num / den)
    if len(ests) < 3:
        return float(s[-1]), math.inf
    ests = np.array(ests)
    diffs = np.abs(np.diff(ests))
    i = int(np.argmin(diffs[1:])) + 2
    err = diffs[i - 1] + diffs[i - 2]
    return float(ests[i]), float(err + 10 * _EPS * abs(ests[i]))


_FIT_LEVELS = 16
_RUN = 8
_ALG_MARGIN = 0.5


def analyze_chart(g: Callable, chart: Chart, cfg: QuadConfig, levels: int | None = None) -> DyadicAnalysis:
    """Classify ``integral_0^w g(t) dt`` at ``t = 0+``."""
    L = int(levels if levels is not None else usable_levels(chart, cfg.max_levels))
    w = chart.window
    t = w * 2.0 ** -np.arange(L + 1)

    def result(cls, value=None, err=math.inf, reason="", pieces=None, sign=1.0,
               tail=None, tail_power=None, expo=None, used=L):
        partial = [] if pieces is None else np.cumsum(sign * pieces).tolist()
        v = IntegralVerdict(cls, value, err, expo, used, partial, reason)
        pcs = np.zeros(L) if pieces is None else pieces
        return DyadicAnalysis(chart, t, pcs, sign, v, tail, tail_power, g)

    lo, hi = t[1:], t[:-1]
    try:
        vals_piece, errs, nodes = _gk15(g, lo, hi)
        edge_vals = np.asarray(g(t), dtype=float)
    except DomainError as exc:
        if exc.kind == "overflow":
            return result(DIVERGENT, reason=f"integrand overflows near the endpoint ({exc})")
        raise

    # refine pieces that the single rule did not resolve
    piece_rtol = min(cfg.tol, 1e-8) * 1e-3
    for k in np.flatnonzero(errs > piece_rtol * np.abs(vals_piece) + 1e-300):
        try:
            vals_piece[k], errs[k] = _adaptive(g, lo[k], hi[k], piece_rtol, 1e-300, limit=400)
        except NoConvergence:
            pass
        except DomainError as exc:
            if exc.kind == "overflow":
                return result(DIVERGENT, reason=f"integrand overflows near the endpoint ({exc})")
            raise

    allv = np.concatenate([nodes.ravel(), edge_vals])
    scale = np.max(np.abs(allv)) if allv.size else 0.0
    significant = np.abs(allv) > 1e-13 * scale
    pos = np.any((allv > 0) & significant)
    neg = np.any((allv < 0) & significant)
    if pos and neg:
        return result(INCONCLUSIVE, reason="integrand changes sign in the window")
    sign = -1.0 if neg else 1.0
    pieces = sign * vals_piece
    qerr = float(errs.sum())
    partial = np.cumsum(pieces)

    ev = np.abs(edge_vals[1:])
    deep = ev[-_FIT_LEVELS:]
    tt = t[1:][-_FIT_LEVELS:]
    nz = deep > 0
    expo = None
    if nz.sum() >= 3:
        expo = float(np.polyfit(np.log(tt[nz]), np.log(deep[nz]), 1)[0])

    def res(cls, value=None, err=math.inf, reason="", tail=None, tail_power=None):
        return result(cls, value, err, reason, pieces, sign, tail, tail_power, expo)

    if np.all(pieces[-_RUN:] == 0.0):
        return res(FINITE, sign * float(partial[-1]), qerr, "integrand vanishes near the endpoint",
                   tail=0.0, tail_power=1.0)
    if not np.all(np.isfinite(partial)) or np.max(partial) > cfg.divergence_cap:
        return res(DIVERGENT, reason="partial sums exceed the divergence cap")
    if expo is not None and expo <= -1.0 - cfg.exponent_margin:
        return res(DIVERGENT, reason=f"local power {expo:.4g} <= -1 - margin")
    last = pieces[-_RUN:]
    if np.all(np.diff(last) >= -1e-12 * np.abs(last[1:])):
        return res(DIVERGENT, reason="piece integrals non-decreasing over the last levels")

    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = pieces[1:] / pieces[:-1]
    tail_ratios = ratios[-_RUN:]
    tol = cfg.tol
    if np.all(np.isfinite(tail_ratios)) and np.all(tail_ratios >= 0) and tail_ratios.max() <= cfg.ratio_cutoff:
        qmin, qmax = float(tail_ratios.min()), float(tail_ratios.max())
        lastp = pieces[-1]
        t_lo = lastp * qmin / (1 - qmin)
        t_hi = lastp * qmax / (1 - qmax)
        env_tail = 0.5 * (t_lo + t_hi)
        env_val = partial[-1] + env_tail
        env_err = 0.5 * (t_hi - t_lo) + qerr
        n_w = min(partial.size, 40)
        eps_val, eps_err = _wynn(partial[-n_w:])
        eps_err += qerr
        q_last = float(tail_ratios[-1])
        power = -math.log2(q_last) if q_last > 0 else 1.0
        if env_err <= eps_err:
            value, err, tail = env_val, env_err, env_tail
        else:
            value, err = eps_val, eps_err
            tail = max(eps_val - partial[-1], 0.0)
        if err <= tol * (1 + abs(value)):
            return res(FINITE, sign * float(value), float(err),
                       f"geometric decay, ratio {qmax:.4g}", tail=float(tail), tail_power=power)
        geometric_miss = (float(value), float(err), qmax)
    else:
        geometric_miss = None

    # algebraic decay of the piece integrals: I_k ~ C k^-r
    if np.all(pieces[-_RUN:] > 0) and np.all(tail_ratios < 1.0):
        half = max(8, L // 2)
        kk = np.arange(L)[-half:] + 1.0
        pp = pieces[-half:]
        if np.all(pp > 0):
            r = -float(np.polyfit(np.log(kk), np.log(pp), 1)[0])
            if r >= 1.0 + _ALG_MARGIN:
                val, err = _levin_u(pieces)
                err += qerr
                if err <= tol * (1 + abs(val)):
                    return res(FINITE, sign * val, err,
                               f"algebraic decay of level integrals, k^-{r:.3g}",
                               tail=max(val - partial[-1], 0.0), tail_power=None)
                return res(INCONCLUSIVE, sign * val, err,
                           f"algebraic decay k^-{r:.3g}, tail unresolved")
            if r <= 1.0 - _ALG_MARGIN:
                return res(DIVERGENT, reason=f"level integrals decay like k^-{r:.3g}")
            return res(INCONCLUSIVE, reason=f"level integrals decay like k^-{r:.3g} (critical)")
    if geometric_miss is not None:
        value, err, qmax = geometric_miss
        return res(INCONCLUSIVE, sign * value, err,
                   f"geometric decay (ratio {qmax:.4g}) but tail unresolved to tolerance")
    return res(INCONCLUSIVE, reason="no decay pattern recognised (near-critical)")


def analyze_improper(f: Callable, endpoint: float, side: str, cfg: QuadConfig | None = None,
                     window: float | None = None, start: float | None = None) -> DyadicAnalysis:
    cfg = cfg or QuadConfig()
    w = float(window if window is not None else (cfg.window if cfg.window is not None else 1.0))
    chart = make_chart(endpoint, side, w, start)
    return analyze_chart(chart.pullback(f), chart, cfg)


def classify_improper(f: Callable, endpoint: float, side: str, cfg: QuadConfig | None = None,
                      window: float | None = None, start: float | None = None) -> IntegralVerdict:
    """Classify the integral of ``f`` over the window adjacent to ``endpoint``.

    For a finite endpoint the window is ``[endpoint, endpoint + w]`` (side
    ``from_above``) or ``[endpoint - w, endpoint]``; for an infinite one it
    is ``[start, inf)`` or ``(-inf, start]``.  The returned value, when
    finite, is the integral over that window.
    """
    return analyze_improper(f, endpoint, side, cfg, window, start).verdict


def endpoint_limit(g: Callable, endpoint: float, side: str, origin: float,
                   cfg: QuadConfig | None = None, window: float | None = None):
    """Limit of ``G(x) = int_origin^x g`` as x tends to ``endpoint``.

    ``g`` is a positive density (a scale density).  Returns
    ``(limit, verdict)``: the limit is finite, ``+-inf`` for a divergent
    integral, or None when the classification was inconclusive.
    """
    cfg = cfg or QuadConfig()
    w = float(window if window is not None else (cfg.window if cfg.window is not None else 1.0))
    start = origin if math.isinf(endpoint) else None
    an = analyze_improper(g, endpoint, side, cfg, w, start)
    v = an.verdict
    direction = 1.0 if side == FROM_BELOW else -1.0
    if v.cls == DIVERGENT:
        return direction * math.inf, v
    if v.cls != FINITE:
        return None, v
    edge = an.chart.far_edge()
    if math.isinf(endpoint):
        return direction * v.value, v
    # window runs from the endpoint to `edge`; add the proper part to origin
    if side == FROM_ABOVE:
        # G(a) = -int_a^origin g = -(W + int_edge^origin g)
        return -(v.value + integrate_between(g, edge, origin)), v
    return v.value + integrate_between(g, origin, edge), v
