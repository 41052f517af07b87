"""Built-in models, addressable by name from the command line.

* ``example1-bm-to-bes3``: Brownian motion on [0, inf) absorbed at 0 with
  drift change ``1/x`` (``phi = x/x0``), turning it into BES(3).
* ``example2-besq:D0:D1``: BESQ(D0) reflecting at 0 with the drift change
  ``(D1 - D0)/(2 sqrt x)`` that makes it BESQ(D1).
* ``heston-cir:KAPPA:THETA:SIGMA[:MU[:RHO]]``: the variance of the Heston
  model and the change that removes the stock drift ``MU`` (default ``x``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .heston import HestonParams, heston_measure_change
from .model import ChangeOfMeasure, DiffusionSpec, SdeForm, ValidationError


@dataclass(frozen=True)
class Preset:
    name: str
    spec: DiffusionSpec
    com: ChangeOfMeasure


def example1(x0: float = 1.0) -> Preset:
    spec = DiffusionSpec(0.0, math.inf, "absorbing", "open", SdeForm("1", "0"), x0)
    return Preset("example1-bm-to-bes3", spec, ChangeOfMeasure(c="1/x"))


def _num(s: str) -> str:
    return repr(float(s))


def example2(d0: float, d1: float, x0: float = 1.0) -> Preset:
    if not (d0 > 0 and d1 > 0):
        raise ValidationError("BESQ dimensions must be positive", "/preset")
    spec = DiffusionSpec(0.0, math.inf, "reflecting", "open", SdeForm("2*sqrt(x)", _num(d0)), x0)
    com = ChangeOfMeasure(c=f"({_num(d1)} - {_num(d0)})/(2*sqrt(x))")
    return Preset(f"example2-besq:{d0:g}:{d1:g}", spec, com)


def heston_cir(kappa: float, theta: float, sigma: float, mu: str = "x", rho: float = 0.0) -> Preset:
    p = HestonParams(kappa, theta, sigma, rho=rho, mu=mu)
    spec, com = heston_measure_change(p)
    return Preset(f"heston-cir:{kappa:g}:{theta:g}:{sigma:g}:{mu}:{rho:g}", spec, com)


PRESET_FORMS = ("example1-bm-to-bes3", "example2-besq:D0:D1", "heston-cir:KAPPA:THETA:SIGMA[:MU[:RHO]]")


def resolve(name: str) -> Preset:
    parts = name.split(":")
    head, args = parts[0], parts[1:]
    try:
        if head == "example1-bm-to-bes3" and not args:
            return example1()
        if head == "example2-besq" and len(args) == 2:
            return example2(float(args[0]), float(args[1]))
        if head == "heston-cir" and 3 <= len(args) <= 5:
            k, t, s = (float(a) for a in args[:3])
            mu = args[3] if len(args) > 3 else "x"
            rho = float(args[4]) if len(args) > 4 else 0.0
            return heston_cir(k, t, s, mu, rho)
    except ValueError as err:
        if isinstance(err, ValidationError):
            raise
        raise ValidationError(f"bad preset arguments in {name!r}: {err}", "/preset") from err
    raise ValidationError(f"unknown preset {name!r}; expected one of {', '.join(PRESET_FORMS)}", "/preset")
