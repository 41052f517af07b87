"""Monte-Carlo checks of martingale verdicts.

Everything is simulated under the original measure.  Paths are produced in
fixed-size blocks; block ``i`` draws from a Philox stream keyed by
``(seed, i)``, and block results are concatenated in block order, so the
output does not depend on how many worker threads ran the blocks.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

from . import expr as ex
from .expr import Expr
from .model import BoundaryBehavior, ChangeOfMeasure, DiffusionSpec, effective_phi, transform
from .quad import QuadConfig
from .verdict import NO, YES, density_vanishes_at, transformed_reaches

EXACT_BESQ = "ExactBesq"
EXACT_CIR = "ExactCir"
EULER = "EulerReflected"
SCHEMES = (EXACT_BESQ, EXACT_CIR, EULER)

BLOCK = 8192
OVERFLOW_Z = 1e12
ZERO_TOL = 1e-10
THREADS_ENV = "DRIFTGAUGE_THREADS"


@dataclass(frozen=True)
class McConfig:
    paths: int = 10_000
    horizon: float = 1.0
    steps_per_unit_time: int = 1024
    seed: int = 0
    scheme: str | None = None  # None: exact sampler when the model has one

    def __post_init__(self):
        if not (isinstance(self.paths, int) and self.paths >= 1):
            raise ValueError("paths must be a positive integer")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not (isinstance(self.steps_per_unit_time, int) and self.steps_per_unit_time >= 1):
            raise ValueError("steps_per_unit_time must be a positive integer")
        if not (isinstance(self.seed, int) and 0 <= self.seed < 2 ** 64):
            raise ValueError("seed must be an integer in [0, 2^64)")
        if self.scheme is not None and self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")

    @property
    def n_steps(self) -> int:
        return max(1, int(math.ceil(self.horizon * self.steps_per_unit_time - 1e-9)))

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps


@dataclass
class McEstimate:
    mean: float
    stderr: float
    paths: int
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_samples(cls, x: np.ndarray, extras: dict | None = None) -> "McEstimate":
        x = np.asarray(x, dtype=float)
        se = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.inf
        return cls(float(np.mean(x)), se, int(x.size), dict(extras or {}))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PathRecord:
    times: np.ndarray
    x_values: np.ndarray
    z_values: np.ndarray
    running_integral: np.ndarray
    hit_zero_time: float | None


# --------------------------------------------------------------------------
# infrastructure


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError(f"{THREADS_ENV} must be >= 0")
    return n if n > 0 else (os.cpu_count() or 1)


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def run_blocks(fn: Callable, paths: int, seed: int) -> list:
    """``fn(rng, n, first_path_index)`` per block, results in block order."""
    sizes = [BLOCK] * (paths // BLOCK)
    if paths % BLOCK:
        sizes.append(paths % BLOCK)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int)
    jobs = [(block_rng(seed, i), n, int(s)) for i, (n, s) in enumerate(zip(sizes, starts))]
    workers = min(worker_count(), len(jobs))
    if workers <= 1:
        return [fn(*j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda j: fn(*j), jobs))


# --------------------------------------------------------------------------
# transitions


def sample_besq_step(delta: float, x, dt: float, rng: np.random.Generator) -> np.ndarray:
    """Exact BESQ(delta) transition over ``dt``: ``dt * chi2'(delta, x/dt)``."""
    if not delta > 0 or not dt > 0:
        raise ValueError("need delta > 0 and dt > 0")
    x = np.asarray(x, dtype=float)
    return dt * rng.noncentral_chisquare(delta, np.maximum(x, 0.0) / dt)


def cir_step_scale(kappa: float, sigma2: float, dt: float) -> float:
    if kappa == 0.0:
        return sigma2 * dt / 4.0
    return sigma2 * (-math.expm1(-kappa * dt)) / (4.0 * kappa)


def sample_cir_step(kappa: float, theta: float, sigma: float, v, dt: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Exact CIR transition ``dv = kappa (theta - v) dt + sigma sqrt(v) dW``."""
    return _cir_draw(kappa, 4 * kappa * theta / sigma ** 2, sigma ** 2, v, dt, rng)


def _cir_draw(kappa, delta, sigma2, v, dt, rng):
    c = cir_step_scale(kappa, sigma2, dt)
    lam = np.maximum(v, 0.0) * math.exp(-kappa * dt) / c
    return c * rng.noncentral_chisquare(delta, lam)


def besq_no_hit_probability(delta: float, x, y, z_scale: float) -> np.ndarray:
    """P(no visit to 0 | endpoints) for a squared-Bessel bridge, delta < 2.

    ``z = sqrt(x y) / z_scale``; the ratio of the killed to the reflected
    transition density is ``I_{1-delta/2}(z) / I_{delta/2-1}(z)``.
    """
    nu = 1.0 - delta / 2.0
    z = np.sqrt(np.maximum(x, 0.0) * np.maximum(y, 0.0)) / z_scale
    # the ratio is 1 - O(exp(-2z)); only small z needs special functions
    p = np.ones_like(z)
    near = z < 20.0
    if near.any():
        zn = z[near]
        if nu == 0.5:
            p[near] = np.tanh(zn)
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                r = special.ive(nu, zn) / special.ive(-nu, zn)
            p[near] = np.where(zn > 0, np.nan_to_num(r, nan=0.0), 0.0)
    return np.clip(p, 0.0, 1.0)


@dataclass(frozen=True)
class Plan:
    """How to step a model, decided once per simulation."""

    scheme: str
    spec: DiffusionSpec
    kappa: float = 0.0
    delta: float = 0.0
    sigma2: float = 0.0

    @property
    def exact(self) -> bool:
        return self.scheme in (EXACT_BESQ, EXACT_CIR)


def detect_exact(spec: DiffusionSpec) -> Plan | None:
    """Square-root diffusions on (0, inf) get exact transitions."""
    if spec.a != 0.0 or not math.isinf(spec.b):
        return None
    s2 = ex.as_power_sum(spec.sigma2)
    b = ex.as_power_sum(spec.beta)
    if s2 is None or b is None or set(s2) != {1.0} or not set(b) <= {0.0, 1.0}:
        return None
    sig2 = s2[1.0]
    b0, b1 = b.get(0.0, 0.0), b.get(1.0, 0.0)
    if not (sig2 > 0 and b0 > 0):
        return None
    delta = 4 * b0 / sig2
    if sig2 == 4.0 and b1 == 0.0:
        return Plan(EXACT_BESQ, spec, 0.0, delta, 4.0)
    return Plan(EXACT_CIR, spec, -b1, delta, sig2)


def make_plan(spec: DiffusionSpec, scheme: str | None) -> Plan:
    exact = detect_exact(spec)
    if scheme is None:
        return exact or Plan(EULER, spec)
    if scheme == EULER:
        return Plan(EULER, spec)
    if exact is None:
        raise ValueError(f"scheme {scheme} needs a square-root diffusion on (0, inf)")
    if scheme == EXACT_BESQ and exact.scheme != EXACT_BESQ:
        raise ValueError("ExactBesq needs sigma^2 = 4x and a constant drift")
    return Plan(scheme, spec, exact.kappa, exact.delta, exact.sigma2)


def _clip_interior(spec: DiffusionSpec, x: np.ndarray) -> np.ndarray:
    lo = np.nextafter(spec.a, math.inf) if math.isfinite(spec.a) else -math.inf
    hi = np.nextafter(spec.b, -math.inf) if math.isfinite(spec.b) else math.inf
    return np.clip(x, lo, hi)


def _phi_zero_at(phi: Expr, e: float) -> bool:
    if not math.isfinite(e):
        return False
    try:
        return abs(float(ex.evaluate(phi, e))) < 1e-300
    except ex.DomainError:
        return False


def _phi_near(phi: Expr, spec: DiffusionSpec, which: str) -> float:
    """Bound on phi next to a finite endpoint; inf when phi still grows there."""
    e = spec.location(which)
    sign = 1 if which == "lower" else -1
    vals = []
    for d in (1e-6, 1e-12):
        try:
            vals.append(float(ex.evaluate(phi, e + sign * d * max(1.0, abs(e)))))
        except ex.DomainError:
            return math.inf
    if not all(map(math.isfinite, vals)) or vals[1] > vals[0] * (1 + 1e-9):
        return math.inf
    return max(vals)


class Stepper:
    """One time step for a block of paths; reports endpoint visits."""

    def __init__(self, plan: Plan, dt: float):
        self.plan = plan
        self.dt = dt
        spec = plan.spec
        self.spec = spec
        if plan.exact:
            self.c = cir_step_scale(plan.kappa, plan.sigma2, dt)
            self.decay = math.exp(-plan.kappa * dt)
            self.hits_zero = plan.delta < 2.0
        else:
            self.sig2 = spec.sigma2
            self.beta = spec.beta

    def step(self, x: np.ndarray, rng: np.random.Generator, watch: Sequence[str]):
        """Advance ``x``; returns ``(y, hit_lower, hit_upper, violations)``.

        ``watch`` names endpoints ("lower"/"upper") whose visits during the
        step must be detected.  Uniforms for the detection are always drawn
        so that the stream layout does not depend on the path states.
        """
        n = x.size
        if self.plan.exact:
            y = self.c * rng.noncentral_chisquare(self.plan.delta, np.maximum(x, 0.0) * self.decay / self.c)
            hit_lo = np.zeros(n, bool)
            if "lower" in watch:
                u = rng.random(n)
                if self.hits_zero:
                    z_scale = self.c * math.exp(self.plan.kappa * self.dt / 2)
                    p = besq_no_hit_probability(self.plan.delta, x, y, z_scale)
                    hit_lo = u >= p
            return y, hit_lo, np.zeros(n, bool), 0
        return self._euler(x, rng, watch)

    def _euler(self, x, rng, watch):
        spec, dt = self.spec, self.dt
        n = x.size
        xc = _clip_interior(spec, x)
        s2 = np.maximum(np.asarray(ex.evaluate(self.sig2, xc), dtype=float) * np.ones(n), 0.0)
        mu = np.asarray(ex.evaluate(self.beta, xc), dtype=float) * np.ones(n)
        y = x + mu * dt + np.sqrt(s2 * dt) * rng.standard_normal(n)
        hits = []
        violations = 0
        for which, e, sgn in (("lower", spec.a, 1.0), ("upper", spec.b, -1.0)):
            u = rng.random(n) if which in watch else None
            hit = np.zeros(n, bool)
            if math.isfinite(e):
                beh = spec.boundary(which)
                crossed = sgn * (y - e) <= 0
                if u is not None:
                    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                        pr = np.exp(-2.0 * (sgn * (x - e)) * (sgn * (y - e)) / np.maximum(s2 * dt, 1e-300))
                    hit = crossed | (u < pr)
                else:
                    hit = crossed
                if beh is not BoundaryBehavior.ABSORBING:
                    if beh is BoundaryBehavior.OPEN:
                        violations += int(crossed.sum())
                    y = np.where(crossed, 2 * e - y, y)
                else:
                    y = np.where(hit, e, y)
            hits.append(hit)
        return y, hits[0], hits[1], violations


# --------------------------------------------------------------------------
# density process


@dataclass
class ZModel:
    plan: Plan
    phi: Expr
    drift_ratio: Expr          # G phi / phi
    kill_ends: tuple           # endpoints where Z drops to 0 on arrival
    note: str
    # phi near each kill endpoint reached through a divergent integral:
    # just before arrival Z can spike up to this size inside one grid step
    spike_bounds: dict = field(default_factory=dict)
    # (a, b) when the drift ratio is k/x on an exact BESQ plan: the step
    # factor E[exp(-k int dt/X) | endpoints, no visit to 0] is I_a(z)/I_b(z)
    bessel_orders: tuple | None = None

    @property
    def has_integral(self) -> bool:
        return not (ex.is_constant(self.drift_ratio) and float(ex.evaluate(self.drift_ratio, 0.0)) == 0.0)


def build_zmodel(spec: DiffusionSpec, com: ChangeOfMeasure, scheme: str | None = None) -> ZModel:
    phi, note = effective_phi(spec, com)
    ratio = ex.tidy(spec.generator(phi) / phi, drop_below=1e-14)
    kill, notes, spikes = [], [note], {}
    tr = transform(spec, com)
    for w in ("lower", "upper"):
        if _phi_zero_at(phi, spec.location(w)):
            kill.append(w)
        else:
            # phi may stay positive while the time integral diverges on arrival
            ans = density_vanishes_at(tr, w, QuadConfig())
            if ans == YES:
                kill.append(w)
                spikes[w] = _phi_near(phi, spec, w)
            elif ans != NO:
                notes.append(f"could not decide whether Z vanishes at the {w} endpoint; not killed")
        # under the new measure Z blows up on the way to an endpoint it
        # reaches, so the original paths cross every level just before the kill
        if w in kill and transformed_reaches(tr, w, QuadConfig()) != NO:
            spikes[w] = math.inf
    plan = make_plan(spec, scheme)
    return ZModel(plan, phi, ratio, tuple(kill), "; ".join(notes), spikes,
                  _bessel_orders(plan, ratio, "lower" in kill))


def _bessel_orders(plan: Plan, ratio: Expr, lower_killed: bool) -> tuple | None:
    if plan.scheme != EXACT_BESQ:
        return None
    ps = ex.as_power_sum(ratio)
    if ps is None or set(ps) != {-1.0}:
        return None
    nu = plan.delta / 2.0 - 1.0
    a2 = nu * nu + 2.0 * ps[-1.0]
    # the conditioning is on no visit to 0, so visits must kill Z
    if a2 < 0 or (plan.delta < 2.0 and not lower_killed):
        return None
    return math.sqrt(a2), abs(nu)


def bessel_bridge_log_factor(a: float, b: float, x, y, dt: float) -> np.ndarray:
    """``log(I_a(z) / I_b(z))`` with ``z = sqrt(x y) / dt``, small ``z`` by series."""
    z = np.sqrt(np.maximum(x, 0.0) * np.maximum(y, 0.0)) / dt
    out = np.empty_like(z)
    small = z < 1e-8
    zs = np.maximum(z[small], 1e-300)
    out[small] = (a - b) * np.log(zs / 2) + special.gammaln(b + 1) - special.gammaln(a + 1)
    zl = z[~small]
    out[~small] = np.log(special.ive(a, zl)) - np.log(special.ive(b, zl))
    return out


@dataclass
class BlockResult:
    z_final: np.ndarray
    z_stop: np.ndarray     # (levels, n)
    stopped: np.ndarray    # (levels, n)
    hit: np.ndarray
    violations: int
    records: list


def _eval_on(e: Expr, spec: DiffusionSpec, x: np.ndarray) -> np.ndarray:
    return np.asarray(ex.evaluate(e, _clip_interior(spec, x)), dtype=float) * np.ones(x.size)


def _simulate_block(zm: ZModel, cfg: McConfig, levels: np.ndarray, record_upto: int,
                    rng: np.random.Generator, n: int, first: int) -> BlockResult:
    spec = zm.plan.spec
    dt, steps = cfg.dt, cfg.n_steps
    stepper = Stepper(zm.plan, dt)
    absorbing = [w for w in ("lower", "upper")
                 if math.isfinite(spec.location(w)) and spec.boundary(w) is BoundaryBehavior.ABSORBING]
    watch = tuple(sorted(set(zm.kill_ends) | set(absorbing)))
    x = np.full(n, spec.x0)
    integral = np.zeros(n)
    frozen = np.zeros(n, bool)      # Z pinned at 0 after reaching a kill endpoint
    absorbed_at = np.full(n, np.nan)
    hit_step = np.full(n, -1)
    g_prev = _eval_on(zm.drift_ratio, spec, x) if zm.has_integral else None
    z = _eval_on(zm.phi, spec, x)
    L = levels.size
    z_stop = np.zeros((L, n))
    stopped = np.zeros((L, n), bool)
    violations = 0
    n_rec = max(0, min(n, record_upto - first))
    rec_x = [x[:n_rec].copy()] if n_rec else None
    rec_z = [z[:n_rec].copy()] if n_rec else None
    rec_a = [integral[:n_rec].copy()] if n_rec else None

    for k in range(steps):
        x_old = x
        y, hit_lo, hit_hi, viol = stepper.step(x, rng, watch)
        violations += viol
        hits = {"lower": hit_lo, "upper": hit_hi}
        for w in absorbing:
            new = hits[w] & np.isnan(absorbed_at)
            absorbed_at[new] = spec.location(w)
        for w in zm.kill_ends:
            e = spec.location(w)
            new = (hits[w] | (np.abs(y - e) <= ZERO_TOL)) & ~frozen
            hit_step = np.where(new & (hit_step < 0), k + 1, hit_step)
            frozen |= new
        x = np.where(np.isnan(absorbed_at), y, absorbed_at)
        live = ~frozen
        if zm.bessel_orders is not None:
            if live.any():
                integral[live] -= bessel_bridge_log_factor(*zm.bessel_orders, x_old[live], x[live], dt)
        elif zm.has_integral:
            g_new = np.zeros(n)
            if live.any():
                g_new[live] = _eval_on(zm.drift_ratio, spec, x[live])
            integral = np.where(live, integral + 0.5 * dt * (g_prev + g_new), integral)
            g_prev = g_new
        z = np.zeros(n)
        if live.any():
            with np.errstate(over="ignore"):
                z[live] = _eval_on(zm.phi, spec, x[live]) * np.exp(-integral[live])
        for j in range(L):
            new = ~stopped[j] & (z > levels[j])
            z_stop[j, new] = z[new]
            stopped[j] |= new
        if n_rec:
            rec_x.append(x[:n_rec].copy())
            rec_z.append(z[:n_rec].copy())
            rec_a.append(integral[:n_rec].copy())

    for j in range(L):
        z_stop[j, ~stopped[j]] = z[~stopped[j]]
    records = []
    if n_rec:
        times = np.arange(steps + 1) * dt
        X, Zs, A = np.array(rec_x), np.array(rec_z), np.array(rec_a)
        for i in range(n_rec):
            hs = hit_step[i]
            records.append(PathRecord(times, X[:, i], Zs[:, i], A[:, i], None if hs < 0 else float(hs * dt)))
    return BlockResult(z, z_stop, stopped, hit_step >= 0, violations, records)


@dataclass
class StoppedLevel:
    n: float
    stopped_mean: McEstimate      # E[Z_{T ^ T_n}]
    escape: McEstimate            # E[Z_{T_n} 1{T_n <= T}] = new-measure P(T_n <= T)
    # False when Z can cross n in a sub-grid spike before being killed, so
    # the grid misses the crossing and E[Z_{T ^ T_n}] is biased low
    resolved: bool = True

    def to_dict(self) -> dict:
        return {"n": self.n, "stopped_mean": self.stopped_mean.to_dict(), "escape": self.escape.to_dict(),
                "resolved": self.resolved}


@dataclass
class ZRun:
    estimate: McEstimate
    levels: list
    records: list
    scheme: str


def run_z(spec: DiffusionSpec, com: ChangeOfMeasure, cfg: McConfig,
          n_levels: Sequence[float] = (), record_paths: int = 0) -> ZRun:
    """One simulation pass feeding both ``E[Z_T]`` and the stopped checks."""
    zm = build_zmodel(spec, com, cfg.scheme)
    levels = np.asarray(sorted(float(v) for v in n_levels), dtype=float)
    blocks = run_blocks(lambda rng, n, first: _simulate_block(zm, cfg, levels, record_paths, rng, n, first),
                        cfg.paths, cfg.seed)
    zT = np.concatenate([b.z_final for b in blocks])
    hit = np.concatenate([b.hit for b in blocks])
    extras = {
        "scheme": zm.plan.scheme,
        "steps": cfg.n_steps,
        "hit_zero_fraction": float(hit.mean()),
        "overflow_paths": int((zT > OVERFLOW_Z).sum()),
        "boundary_violations": int(sum(b.violations for b in blocks)),
        "drift_ratio": str(zm.drift_ratio),
        "kill_ends": list(zm.kill_ends),
        "spike_bounds": {w: float(v) for w, v in zm.spike_bounds.items()},
    }
    est = McEstimate.from_samples(zT, extras)
    out_levels = []
    for j, lv in enumerate(levels):
        zs = np.concatenate([b.z_stop[j] for b in blocks])
        st = np.concatenate([b.stopped[j] for b in blocks])
        out_levels.append(StoppedLevel(
            float(lv),
            McEstimate.from_samples(zs, {"stopped_fraction": float(st.mean())}),
            McEstimate.from_samples(np.where(st, zs, 0.0)),
            all(bound < lv for bound in zm.spike_bounds.values()),
        ))
    records = [r for b in blocks for r in b.records]
    return ZRun(est, out_levels, records, zm.plan.scheme)


def simulate_z(spec: DiffusionSpec, com: ChangeOfMeasure, cfg: McConfig) -> McEstimate:
    return run_z(spec, com, cfg).estimate


def stopped_z_check(spec: DiffusionSpec, com: ChangeOfMeasure, n_levels: Sequence[float],
                    cfg: McConfig) -> list:
    return run_z(spec, com, cfg, n_levels).levels


# --------------------------------------------------------------------------
# time-change construction of BESQ(delta), delta < 2


@dataclass
class TimeChangeSample:
    times: np.ndarray
    v: np.ndarray          # (paths, len(times))
    min_v: np.ndarray      # minimum of v over [0, max(times)] on the Brownian grid


def simulate_besq_timechange(delta: float, x0: float, T: float, cfg: McConfig,
                             times: Sequence[float] | None = None) -> TimeChangeSample:
    """BESQ(delta) from a Brownian motion run with the clock of its speed measure.

    ``Lambda_u = int_0^u |B|^(2(delta-1)/(2-delta)) / (2-delta)^2``; the
    process ``|B(Lambda^-1(t))|^(2/(2-delta))`` is BESQ(delta) started at x0.
    Used as a distributional cross-check of the exact sampler.
    """
    if not 0 < delta < 2:
        raise ValueError("the time-change construction needs 0 < delta < 2")
    if not x0 > 0:
        raise ValueError("x0 must be positive")
    out_t = np.asarray([T] if times is None else sorted(times), dtype=float)
    du = 1.0 / cfg.steps_per_unit_time
    power = 2 * (delta - 1) / (2 - delta)
    norm = (2 - delta) ** 2
    b0 = x0 ** ((2 - delta) / 2)
    vexp = 2 / (2 - delta)
    t_max = float(out_t[-1])
    max_steps = int(200 * max(t_max, 1.0) * cfg.steps_per_unit_time) + 1000

    def block(rng, n, first):
        b = np.full(n, b0)
        lam = np.zeros(n)
        v = np.full((n, out_t.size), np.nan)
        nxt = np.zeros(n, int)
        vmin = np.full(n, x0)
        coarse = 0.0
        for _ in range(max_steps):
            active = nxt < out_t.size
            if not active.any():
                break
            ab = np.abs(b)
            with np.errstate(divide="ignore"):
                rate = np.where(ab > 0, ab ** power, 0.0 if power > 0 else np.inf) if power != 0 else np.ones(n)
            inc = rate * du / norm
            coarse = max(coarse, float(np.max(np.where(active, inc, 0.0))))
            lam = lam + inc
            b = b + math.sqrt(du) * rng.standard_normal(n)
            ab = np.abs(b)
            vnow = ab ** vexp
            vmin = np.where(active, np.minimum(vmin, vnow), vmin)
            # assign every output time the clock has passed
            while True:
                cand = active & (nxt < out_t.size)
                idx = np.minimum(nxt, out_t.size - 1)
                ready = cand & (lam >= out_t[idx])
                if not ready.any():
                    break
                rows = np.flatnonzero(ready)
                v[rows, nxt[rows]] = vnow[rows]
                nxt[rows] += 1
        else:
            raise RuntimeError("time change did not reach the horizon; grid too coarse or horizon too long")
        return v, vmin, coarse

    res = run_blocks(block, cfg.paths, cfg.seed)
    coarse = max(r[2] for r in res)
    if coarse > 0.05 * t_max:
        warnings.warn(f"clock increments up to {coarse:.3g} per Brownian step; refine the grid", RuntimeWarning)
    return TimeChangeSample(out_t, np.concatenate([r[0] for r in res]), np.concatenate([r[1] for r in res]))


def sample_besq_exact(delta: float, x0: float, T: float, cfg: McConfig) -> np.ndarray:
    """``v_T`` samples from the exact transition, path-blocked like everything else."""
    return np.concatenate(run_blocks(lambda rng, n, f: sample_besq_step(delta, np.full(n, x0), T, rng),
                                     cfg.paths, cfg.seed))


# --------------------------------------------------------------------------
# arbitrage mechanics under a non-Feller variance


@dataclass
class FlvrLevel:
    eps: float
    quadratic_variation: McEstimate   # E <G>_T
    min_gain: McEstimate              # E min_t G_t
    final_gain: McEstimate            # E G_T
    occupation: McEstimate            # E L_eps(T)
    stopped_gain: McEstimate          # E G_{T ^ theta_n}
    stop_probability: float           # P(theta_n <= T)
    steps_per_band_visit: float

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "quadratic_variation": self.quadratic_variation.to_dict(),
            "min_gain": self.min_gain.to_dict(),
            "final_gain": self.final_gain.to_dict(),
            "occupation": self.occupation.to_dict(),
            "stopped_gain": self.stopped_gain.to_dict(),
            "stop_probability": self.stop_probability,
            "steps_per_band_visit": self.steps_per_band_visit,
        }


@dataclass
class FlvrResult:
    levels: list
    slope: float
    params: dict

    def to_dict(self) -> dict:
        return {"levels": [lv.to_dict() for lv in self.levels], "slope": self.slope, "params": dict(self.params)}


def flvr_demo(delta: float, mu: float, T: float, eps: Sequence[float], cfg: McConfig,
              v0: float = 1.0) -> FlvrResult:
    """Gains of holding the asset only while the variance is tiny.

    The variance is BESQ(delta) sampled exactly on the step grid; the
    position is ``(2e)^-1 1{Y <= e} Y^(2(1-delta)/(2-delta)) (2-delta)^2``
    in the natural-scale coordinate ``Y = v^(1 - delta/2)``.  Stock noise is
    an independent Brownian motion.  All ``eps`` levels share the paths.
    """
    if not 0 < delta < 2:
        raise ValueError("need 0 < delta < 2")
    if not mu > 0:
        raise ValueError("need mu > 0")
    eps = np.asarray(eps, dtype=float)
    if eps.size == 0 or np.any(eps <= 0):
        raise ValueError("eps levels must be positive")
    steps = max(1, int(math.ceil(T * cfg.steps_per_unit_time - 1e-9)))
    dt = T / steps
    q = 2 * (1 - delta) / (2 - delta)
    yexp = (2 - delta) / 2
    scale = (2 - delta) ** 2 / (2 * eps)[:, None]
    stop_at = 1.0 / (-np.log2(eps))[:, None]
    L = eps.size

    def block(rng, n, first):
        v = np.full(n, float(v0))
        M = np.zeros((L, n))
        occ = np.zeros((L, n))
        qv = np.zeros((L, n))
        gmin = np.zeros((L, n))
        g_stop = np.zeros((L, n))
        stopped = np.zeros((L, n), bool)
        in_prev = np.zeros((L, n), bool)
        band_steps = np.zeros(L)
        entries = np.zeros(L)
        for _ in range(steps):
            y = np.maximum(v, 1e-300) ** yexp
            inside = y[None, :] <= eps[:, None]
            pos = np.where(inside, scale * y[None, :] ** q, 0.0)
            xi = rng.standard_normal(n)
            M += pos * np.sqrt(v * dt)[None, :] * xi[None, :]
            occ += pos * dt
            qv += pos * pos * v[None, :] * dt
            G = M + mu * occ
            np.minimum(gmin, G, out=gmin)
            new = ~stopped & (np.abs(M) > stop_at)
            g_stop[new] = G[new]
            stopped |= new
            band_steps += inside.sum(axis=1)
            entries += (inside & ~in_prev).sum(axis=1)
            in_prev = inside
            v = sample_besq_step(delta, v, dt, rng)
        G = M + mu * occ
        g_stop = np.where(stopped, g_stop, G)
        return qv, gmin, G, occ, g_stop, stopped, band_steps, entries

    res = run_blocks(block, cfg.paths, cfg.seed)
    cat = [np.concatenate([r[i] for r in res], axis=1) for i in range(6)]
    band_steps = sum(r[6] for r in res)
    entries = sum(r[7] for r in res)
    levels = []
    for j in range(L):
        per_visit = float(band_steps[j] / entries[j]) if entries[j] else math.inf
        levels.append(FlvrLevel(
            float(eps[j]),
            McEstimate.from_samples(cat[0][j]),
            McEstimate.from_samples(cat[1][j]),
            McEstimate.from_samples(cat[2][j]),
            McEstimate.from_samples(cat[3][j]),
            McEstimate.from_samples(cat[4][j]),
            float(cat[5][j].mean()),
            per_visit,
        ))
        if per_visit < 2.0:
            warnings.warn(f"eps={eps[j]:g}: band resolved by {per_visit:.2g} steps per visit; "
                          "increase steps_per_unit_time", RuntimeWarning)
    qv = np.array([lv.quadratic_variation.mean for lv in levels])
    slope = float(np.polyfit(np.log(eps), np.log(qv), 1)[0]) if L >= 2 and np.all(qv > 0) else math.nan
    params = {"delta": delta, "mu": mu, "horizon": T, "v0": v0,
              "steps_per_unit_time": cfg.steps_per_unit_time, "paths": cfg.paths, "seed": cfg.seed}
    return FlvrResult(levels, slope, params)
