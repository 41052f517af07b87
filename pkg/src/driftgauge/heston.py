"""Equivalent local martingale measures for a generalised Heston model.

    dS = mu(v) S dt + sqrt(v) S (rho dW + rho' dW'),   rho' = sqrt(1 - rho^2)
    dv = kappa (theta - v) dt + sigma sqrt(v) dW

with zero interest rate.  The variance has effective dimension
``delta = 4 kappa theta / sigma^2``:

* ``delta >= 2`` (Feller condition ``2 kappa theta >= sigma^2``): an
  equivalent local martingale measure exists;
* ``delta < 2`` and ``mu(0) != 0``: none exists;
* ``delta < 2`` and ``mu(0) == 0``: one exists when
  ``int_0+ mu(x)^2 x^(delta/2 - 2) dx`` converges; otherwise this test is
  silent and the report says ``Undetermined``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from . import __version__
from . import expr as ex
from .expr import DomainError, Expr
from .model import ChangeOfMeasure, DiffusionSpec, SdeForm, ValidationError
from .quad import FINITE, DIVERGENT, FROM_ABOVE, IntegralVerdict, QuadConfig, classify_improper

ELMM_EXISTS = "ELMMExists"
NO_ELMM = "NoELMM"
UNDETERMINED = "Undetermined"
INCONCLUSIVE = "Inconclusive"

MU_ZERO_THRESHOLD = 1e-12


@dataclass(frozen=True)
class HestonParams:
    kappa: float
    theta: float
    sigma: float
    rho: float = 0.0
    mu: Expr = field(default_factory=lambda: ex.parse("0"))
    v0: float | None = None  # None: start at theta
    s0: float = 1.0

    def __post_init__(self):
        if isinstance(self.mu, str):
            object.__setattr__(self, "mu", ex.parse(self.mu))
        for name in ("kappa", "theta", "sigma"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
                raise ValidationError(f"{name} must be a positive number", "/" + name)
        if not -1.0 < self.rho < 1.0:
            raise ValidationError("rho must lie in (-1, 1)", "/rho")
        if self.v0 is not None and self.v0 < 0:
            raise ValidationError("v0 must be nonnegative", "/v0")
        if not self.s0 > 0:
            raise ValidationError("s0 must be positive", "/s0")

    @property
    def rho_prime(self) -> float:
        return math.sqrt(1.0 - self.rho * self.rho)

    @property
    def start(self) -> float:
        return self.theta if self.v0 is None else float(self.v0)


def effective_dimension(p: HestonParams) -> float:
    return 4.0 * p.kappa * p.theta / (p.sigma * p.sigma)


def feller(p: HestonParams) -> bool:
    return 2.0 * p.kappa * p.theta >= p.sigma * p.sigma


@dataclass
class ElmmReport:
    delta: float
    feller: bool
    verdict: str
    mu_at_zero: float
    mu_zero_threshold: float
    condition_integral: IntegralVerdict | None = None
    full_integral: IntegralVerdict | None = None
    params: dict = field(default_factory=dict)
    config_echo: dict = field(default_factory=dict)
    version: str = __version__

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "feller": self.feller,
            "elmm_verdict": self.verdict,
            "mu_at_zero": self.mu_at_zero,
            "mu_zero_threshold": self.mu_zero_threshold,
            "condition_integral": None if self.condition_integral is None else self.condition_integral.to_dict(),
            "full_integral": None if self.full_integral is None else self.full_integral.to_dict(),
            "params": dict(self.params),
            "config_echo": dict(self.config_echo),
            "version": self.version,
        }


def mu_at_zero(mu: Expr) -> float:
    folded = ex.simplify(mu)
    if ex.is_constant(folded):
        return float(ex.evaluate(folded, 0.0))
    return float(ex.evaluate(mu, 0.0))


def _window(cfg: QuadConfig) -> float:
    return cfg.window if cfg.window is not None else 1.0


def condition_integrand(p: HestonParams) -> Expr:
    """``mu(x)^2 x^(delta/2 - 2)``."""
    k = effective_dimension(p) / 2.0 - 2.0
    return ex.simplify(p.mu * p.mu * ex.Pow(ex.X, ex.Const(k)))


def full_integrand(p: HestonParams) -> Expr:
    """The explosion integrand of the variance measure change, constants kept."""
    k = effective_dimension(p) / 2.0 - 2.0
    scale = 1.0 / (p.rho_prime ** 2 * p.sigma ** 2)
    decay = ex.Call("exp", ex.Const(-2.0 * p.kappa / p.sigma ** 2) * ex.X)
    return ex.simplify(ex.Const(scale) * p.mu * p.mu * ex.Pow(ex.X, ex.Const(k)) * decay)


def elmm_verdict(p: HestonParams, cfg: QuadConfig | None = None,
                 threshold: float = MU_ZERO_THRESHOLD) -> ElmmReport:
    cfg = cfg or QuadConfig()
    delta = effective_dimension(p)
    try:
        m0 = mu_at_zero(p.mu)
    except DomainError as err:
        raise ValidationError(f"mu must be evaluable at 0: {err}", "/mu") from err
    rep = ElmmReport(delta, feller(p), INCONCLUSIVE, m0, threshold,
                     params=_params_echo(p), config_echo={"quad": asdict(cfg)})
    if rep.feller:
        rep.verdict = ELMM_EXISTS
        return rep
    if abs(m0) >= threshold:
        rep.verdict = NO_ELMM
        return rep
    w = _window(cfg)
    f = condition_integrand(p)
    rep.condition_integral = classify_improper(lambda x: ex.evaluate(f, x), 0.0, FROM_ABOVE, cfg, w)
    g = full_integrand(p)
    rep.full_integral = classify_improper(lambda x: ex.evaluate(g, x), 0.0, FROM_ABOVE, cfg, w)
    cls = rep.condition_integral.cls
    rep.verdict = {FINITE: ELMM_EXISTS, DIVERGENT: UNDETERMINED}.get(cls, INCONCLUSIVE)
    return rep


def _params_echo(p: HestonParams) -> dict:
    return {"kappa": p.kappa, "theta": p.theta, "sigma": p.sigma, "rho": p.rho,
            "mu": str(p.mu), "v0": p.start, "s0": p.s0}


def cir_spec(p: HestonParams) -> DiffusionSpec:
    """The variance process, reflecting at 0."""
    sigma = ex.Const(p.sigma) * ex.Call("sqrt", ex.X)
    beta = ex.Const(p.kappa) * (ex.Const(p.theta) - ex.X)
    x0 = p.start
    if not x0 > 0:
        raise ValidationError("v0 must be positive for the variance measure change", "/v0")
    return DiffusionSpec(0.0, math.inf, "reflecting", "open", SdeForm(sigma, beta), x0)


def heston_measure_change(p: HestonParams) -> tuple[DiffusionSpec, ChangeOfMeasure]:
    """CIR variance spec and the drift change ``c(v) = -mu(v) / (rho' sqrt(v))``.

    The change removes the stock's drift; the verdict engine then decides
    whether the resulting density is a true martingale.
    """
    c = ex.simplify(-p.mu / (ex.Const(p.rho_prime) * ex.Call("sqrt", ex.X)))
    return cir_spec(p), ChangeOfMeasure(c=c)
