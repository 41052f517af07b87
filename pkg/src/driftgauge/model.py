"""Diffusion models and Girsanov-type changes of measure.

A diffusion on an interval ``(a, b)`` is given either by SDE coefficients
``dX = beta(X) dt + sigma(X) dW`` or directly by its scale and speed
densities.  A change of measure is the positive function ``phi`` defining
``Z_t = phi(X_t) exp(-int_0^t (G phi / phi)(X_u) du)``, or the drift change
``c`` with ``log phi = int_{x0}^x c / sigma``.  Under the new measure the
diffusion has scale density ``s'/phi^2`` and speed density ``phi^2 m'``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Union

import numpy as np

from . import expr as ex
from .expr import Const, DomainError, Expr, X


class ValidationError(ValueError):
    """Invalid model input; ``path`` is a JSON pointer into the model file."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.message = message
        self.path = path


class BoundaryBehavior(str, Enum):
    OPEN = "open"
    REFLECTING = "reflecting"
    ABSORBING = "absorbing"


def _as_expr(e) -> Expr:
    if isinstance(e, Expr):
        return e
    if isinstance(e, str):
        return ex.parse(e)
    if isinstance(e, (int, float)):
        return Const(float(e))
    raise TypeError(f"cannot use {e!r} as an expression")


@dataclass(frozen=True)
class SdeForm:
    sigma: Expr
    beta: Expr

    def __post_init__(self):
        object.__setattr__(self, "sigma", _as_expr(self.sigma))
        object.__setattr__(self, "beta", _as_expr(self.beta))


@dataclass(frozen=True)
class ScaleSpeedForm:
    s_prime: Expr
    m_prime: Expr

    def __post_init__(self):
        object.__setattr__(self, "s_prime", _as_expr(self.s_prime))
        object.__setattr__(self, "m_prime", _as_expr(self.m_prime))


Form = Union[SdeForm, ScaleSpeedForm]

GRID_POINTS = 24


def interior_grid(a: float, b: float, x0: float, n: int = GRID_POINTS) -> np.ndarray:
    """Sample points of ``(a, b)`` clustering towards finite endpoints.

    Infinite sides are sampled out to ``8 max(1, |x0|)`` from x0 only, so
    that exponentially growing densities stay representable.
    """
    pts = [x0]
    reach = 8.0 * max(1.0, abs(x0))
    for j in range(1, n + 1):
        far = (9.0 ** (j / n) - 1.0) / 8.0 * reach
        if math.isinf(a):
            pts.append(x0 - far)
        else:
            pts.append(a + (x0 - a) * 2.0 ** (-j / 1.5))
        if math.isinf(b):
            pts.append(x0 + far)
        else:
            pts.append(b - (b - x0) * 2.0 ** (-j / 1.5))
    g = np.unique(np.array(pts))
    return g[(g > a) & (g < b)]


def _positive_on(e: Expr, grid: np.ndarray, name: str, path: str):
    try:
        v = np.asarray(ex.evaluate(e, grid), dtype=float)
    except DomainError as err:
        raise ValidationError(f"{name} not evaluable on the interior: {err}", path) from err
    bad = v <= 0
    if bad.any():
        x = float(grid[np.argmax(bad)])
        raise ValidationError(f"{name} must be positive on the interior; {name}({x:g}) = {v[bad][0]:g}", path)


@dataclass(frozen=True)
class DiffusionSpec:
    a: float
    b: float
    boundary_a: BoundaryBehavior
    boundary_b: BoundaryBehavior
    form: Form
    x0: float

    def __post_init__(self):
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "x0", float(self.x0))
        object.__setattr__(self, "boundary_a", BoundaryBehavior(self.boundary_a))
        object.__setattr__(self, "boundary_b", BoundaryBehavior(self.boundary_b))
        if not self.a < self.b:
            raise ValidationError("need a < b", "/interval")
        if not self.a < self.x0 < self.b:
            raise ValidationError("x0 must lie strictly inside the interval", self._form_path("x0"))
        for end, beh, key in ((self.a, self.boundary_a, "boundary_a"), (self.b, self.boundary_b, "boundary_b")):
            if math.isinf(end) and beh is not BoundaryBehavior.OPEN:
                raise ValidationError("an infinite endpoint must be open", "/interval/" + key)
        grid = self.grid()
        if isinstance(self.form, SdeForm):
            _positive_on(self.form.sigma, grid, "sigma", "/sde/sigma")
            try:
                ex.evaluate(self.form.beta, grid)
            except DomainError as err:
                raise ValidationError(f"beta not evaluable on the interior: {err}", "/sde/beta") from err
        elif isinstance(self.form, ScaleSpeedForm):
            _positive_on(self.form.s_prime, grid, "s_prime", "/scalespeed/s_prime")
            _positive_on(self.form.m_prime, grid, "m_prime", "/scalespeed/m_prime")
        else:
            raise ValidationError("form must be SdeForm or ScaleSpeedForm")

    def _form_path(self, key: str) -> str:
        return ("/sde/" if isinstance(self.form, SdeForm) else "/scalespeed/") + key

    @property
    def interval(self) -> tuple[float, float]:
        return (self.a, self.b)

    def grid(self, n: int = GRID_POINTS) -> np.ndarray:
        return interior_grid(self.a, self.b, self.x0, n)

    def boundary(self, which: str) -> BoundaryBehavior:
        return self.boundary_a if which == "lower" else self.boundary_b

    def location(self, which: str) -> float:
        return self.a if which == "lower" else self.b

    @cached_property
    def s_prime(self) -> Expr:
        return scale_density(self)

    @cached_property
    def m_prime(self) -> Expr:
        return speed_density(self)

    @cached_property
    def sigma2(self) -> Expr:
        """Squared diffusion coefficient."""
        if isinstance(self.form, SdeForm):
            return ex.tidy(self.form.sigma * self.form.sigma)
        return ex.tidy(1 / (self.form.s_prime * self.form.m_prime))

    @cached_property
    def beta(self) -> Expr:
        if isinstance(self.form, SdeForm):
            return self.form.beta
        sp, mp = self.form.s_prime, self.form.m_prime
        return ex.tidy(-sp.derivative() / (2 * sp * sp * mp))

    def generator(self, f: Expr) -> Expr:
        """The generator applied to ``f``, symbolically."""
        d1 = f.derivative()
        d2 = d1.derivative()
        if isinstance(self.form, SdeForm):
            return ex.tidy(0.5 * self.sigma2 * d2 + self.form.beta * d1)
        sp, mp = self.form.s_prime, self.form.m_prime
        return ex.tidy((d2 / sp - d1 * sp.derivative() / (sp * sp)) / (2 * mp))


def scale_density(spec: DiffusionSpec) -> Expr:
    """``s'(x) = exp(-2 int_{x0}^x beta/sigma^2)``, normalised to s'(x0) = 1."""
    if isinstance(spec.form, ScaleSpeedForm):
        return spec.form.s_prime
    integrand = ex.tidy(spec.form.beta / (spec.form.sigma * spec.form.sigma))
    return ex.tidy(ex.exp_of_integral(integrand, -2.0, spec.x0))


def speed_density(spec: DiffusionSpec) -> Expr:
    """``m'(x) = 1 / (sigma(x)^2 s'(x))``."""
    if isinstance(spec.form, ScaleSpeedForm):
        return spec.form.m_prime
    return ex.tidy(1 / (spec.sigma2 * spec.s_prime))


@dataclass(frozen=True)
class ChangeOfMeasure:
    phi: Expr | None = None
    c: Expr | None = None

    def __post_init__(self):
        if (self.phi is None) == (self.c is None):
            raise ValidationError("give exactly one of phi and c")
        if self.phi is not None:
            object.__setattr__(self, "phi", _as_expr(self.phi))
        if self.c is not None:
            object.__setattr__(self, "c", _as_expr(self.c))

    @classmethod
    def identity(cls) -> "ChangeOfMeasure":
        return cls(phi=Const(1.0))


def phi_from_c(spec: DiffusionSpec, c: Expr) -> Expr:
    """``phi = exp(int_{x0}^x c/sigma)``; requires SDE coefficients."""
    if not isinstance(spec.form, SdeForm):
        raise ValidationError("a drift change c needs an SDE-form model", "/c")
    return ex.tidy(ex.exp_of_integral(ex.tidy(_as_expr(c) / spec.form.sigma), 1.0, spec.x0))


def effective_phi(spec: DiffusionSpec, com: ChangeOfMeasure) -> tuple[Expr, str]:
    """The normalised ``phi`` (``phi(x0) = 1``) and a note on what was done."""
    if com.c is not None:
        return phi_from_c(spec, com.c), "phi built from c with phi(x0) = 1"
    grid = spec.grid()
    _positive_on(com.phi, grid, "phi", "/phi")
    # stripping constant factors first keeps k*phi and phi on the same tree
    phi = ex.strip_constant_factor(com.phi)
    v = float(ex.evaluate(phi, spec.x0))
    if not v > 0:
        raise ValidationError("phi must be positive at x0", "/phi")
    if v == 1.0:
        return phi, "phi equal to 1 at x0, used as given up to constant factors"
    return ex.tidy(phi / v), "phi divided by its value at x0"


@dataclass(frozen=True)
class TransformedSpec:
    base: DiffusionSpec
    phi: Expr
    s_tilde_prime: Expr
    m_tilde_prime: Expr
    h_tilde: Expr
    note: str = ""
    extra: dict = field(default_factory=dict, compare=False)

    @cached_property
    def dphi(self) -> Expr:
        return self.phi.derivative()

    def explode_integrand(self) -> Expr:
        """``h~ m~'`` (the reflecting explosion integrand)."""
        return ex.simplify(self.h_tilde * self.m_tilde_prime)

    def explode_integrand_alt(self) -> Expr:
        """``phi'^2 / s'``, equal to ``h~ m~'``."""
        return ex.simplify(self.dphi * self.dphi / self.base.s_prime)

    def as_spec(self) -> DiffusionSpec:
        b = self.base
        return DiffusionSpec(b.a, b.b, b.boundary_a, b.boundary_b,
                             ScaleSpeedForm(self.s_tilde_prime, self.m_tilde_prime), b.x0)


def h_tilde(spec: DiffusionSpec, com: ChangeOfMeasure) -> Expr:
    """``phi'^2 / (phi^2 m' s')``; equals ``c^2`` in SDE form."""
    return transform(spec, com).h_tilde


def transform(spec: DiffusionSpec, com: ChangeOfMeasure) -> TransformedSpec:
    phi, note = effective_phi(spec, com)
    sp, mp = spec.s_prime, spec.m_prime
    st = ex.tidy(sp / (phi * phi))
    mt = ex.tidy(phi * phi * mp)
    dphi = phi.derivative()
    h = ex.tidy(dphi * dphi / (phi * phi * mp * sp))
    return TransformedSpec(spec, phi, st, mt, h, note)
