"""Command-line interface: ``driftgauge {analyze,heston,verify,flvr,quad,recheck}``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings
from dataclasses import asdict, fields

from . import __version__
from . import expr as ex
from .heston import ELMM_EXISTS, INCONCLUSIVE as H_INCONCLUSIVE, NO_ELMM, UNDETERMINED, HestonParams, elmm_verdict
from .mc import McConfig, flvr_demo, run_z
from .model import ChangeOfMeasure, DiffusionSpec, ScaleSpeedForm, SdeForm, ValidationError
from .presets import resolve
from .quad import DIVERGENT, FINITE, FROM_ABOVE, INCONCLUSIVE, FROM_BELOW, QuadConfig, classify_improper
from .verdict import STRICT_LOCAL, TRUE_MARTINGALE, VERDICT_INCONCLUSIVE, martingale_verdict, verdict_from_traces

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_STRICT = 3
EXIT_INCONCLUSIVE = 4
EXIT_UNDETERMINED = 5
EXIT_CONTRADICTION = 6

ANALYZE_EXIT = {TRUE_MARTINGALE: EXIT_OK, STRICT_LOCAL: EXIT_STRICT, VERDICT_INCONCLUSIVE: EXIT_INCONCLUSIVE}
HESTON_EXIT = {ELMM_EXISTS: EXIT_OK, NO_ELMM: EXIT_STRICT, UNDETERMINED: EXIT_UNDETERMINED,
               H_INCONCLUSIVE: EXIT_INCONCLUSIVE}

QUAD_EXIT = {FINITE: EXIT_OK, DIVERGENT: EXIT_STRICT, INCONCLUSIVE: EXIT_INCONCLUSIVE}

CONSISTENT = "consistent"
CONTRADICTS = "contradicts"
UNVERIFIABLE = "unverifiable"
VERIFY_EXIT = {CONSISTENT: EXIT_OK, CONTRADICTS: EXIT_CONTRADICTION, UNVERIFIABLE: EXIT_INCONCLUSIVE}

TRUE_SIGMAS = 4.0
STRICT_SIGMAS = 5.0


class CliError(Exception):
    def __init__(self, message: str, path: str = "", kind: str = "validation"):
        super().__init__(message)
        self.message = message
        self.path = path
        self.kind = kind


# --------------------------------------------------------------------------
# model files


_TOP_KEYS = {"interval", "sde", "scalespeed", "phi", "c", "quad", "mc"}
_INTERVAL_KEYS = {"a", "b", "boundary_a", "boundary_b"}
_QUAD_KEYS = {f.name for f in fields(QuadConfig)}
_MC_KEYS = {f.name for f in fields(McConfig)}


def _check_keys(obj, allowed: set, path: str, required: set = frozenset()):
    if not isinstance(obj, dict):
        raise CliError("expected an object", path or "/")
    for k in obj:
        if k not in allowed:
            raise CliError(f"unknown key {k!r}", f"{path}/{_escape(k)}")
    for k in sorted(required):
        if k not in obj:
            raise CliError(f"missing key {k!r}", f"{path}/{_escape(k)}")


def _escape(key: str) -> str:
    return str(key).replace("~", "~0").replace("/", "~1")


def _ext_real(v, path: str) -> float:
    if isinstance(v, bool):
        raise CliError("expected a number", path)
    if isinstance(v, (int, float)):
        return float(v)
    if v in ("inf", "+inf"):
        return math.inf
    if v == "-inf":
        return -math.inf
    raise CliError('expected a number, "inf" or "-inf"', path)


def _real(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise CliError("expected a number", path)
    return float(v)


def _expr(v, path: str) -> ex.Expr:
    if not isinstance(v, str):
        raise CliError("expected an expression string", path)
    try:
        return ex.parse(v)
    except ex.ParseError as err:
        raise CliError(str(err), path, "parse") from err


def _section(obj: dict, key: str, cls, keys: set, path: str):
    if key not in obj:
        return None
    sec = obj[key]
    _check_keys(sec, keys, path)
    try:
        return cls(**sec)
    except (TypeError, ValueError) as err:
        raise CliError(str(err), path) from err


def load_model(doc: dict):
    """Validate a model document; returns ``(spec, com, quad_cfg, mc_cfg)``."""
    _check_keys(doc, _TOP_KEYS, "", {"interval"})
    iv = doc["interval"]
    _check_keys(iv, _INTERVAL_KEYS, "/interval", _INTERVAL_KEYS)
    a = _ext_real(iv["a"], "/interval/a")
    b = _ext_real(iv["b"], "/interval/b")
    for k in ("boundary_a", "boundary_b"):
        if iv[k] not in ("open", "reflecting", "absorbing"):
            raise CliError('expected "open", "reflecting" or "absorbing"', f"/interval/{k}")
    if ("sde" in doc) == ("scalespeed" in doc):
        raise CliError('give exactly one of "sde" and "scalespeed"', "/sde" if "sde" in doc else "")
    if "sde" in doc:
        sec = doc["sde"]
        _check_keys(sec, {"sigma", "beta", "x0"}, "/sde", {"sigma", "beta", "x0"})
        form = SdeForm(_expr(sec["sigma"], "/sde/sigma"), _expr(sec["beta"], "/sde/beta"))
        x0 = _real(sec["x0"], "/sde/x0")
    else:
        sec = doc["scalespeed"]
        _check_keys(sec, {"s_prime", "m_prime", "x0"}, "/scalespeed", {"s_prime", "m_prime", "x0"})
        form = ScaleSpeedForm(_expr(sec["s_prime"], "/scalespeed/s_prime"),
                              _expr(sec["m_prime"], "/scalespeed/m_prime"))
        x0 = _real(sec["x0"], "/scalespeed/x0")
    if ("phi" in doc) == ("c" in doc):
        raise CliError('give exactly one of "phi" and "c"', "")
    if "c" in doc and "sde" not in doc:
        raise CliError("a drift change c needs an sde model", "/c")
    com = ChangeOfMeasure(phi=_expr(doc["phi"], "/phi")) if "phi" in doc else ChangeOfMeasure(c=_expr(doc["c"], "/c"))
    try:
        spec = DiffusionSpec(a, b, iv["boundary_a"], iv["boundary_b"], form, x0)
    except ValidationError as err:
        raise CliError(err.message, err.path) from err
    quad = _section(doc, "quad", QuadConfig, _QUAD_KEYS, "/quad")
    mc = _section(doc, "mc", McConfig, _MC_KEYS, "/mc")
    return spec, com, quad, mc


def model_document(spec: DiffusionSpec, com: ChangeOfMeasure) -> dict:
    """The model-file form of a spec (used to echo presets)."""
    def num(v):
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")

    doc = {"interval": {"a": num(spec.a), "b": num(spec.b),
                        "boundary_a": spec.boundary_a.value, "boundary_b": spec.boundary_b.value}}
    if isinstance(spec.form, SdeForm):
        doc["sde"] = {"sigma": str(spec.form.sigma), "beta": str(spec.form.beta), "x0": spec.x0}
    else:
        doc["scalespeed"] = {"s_prime": str(spec.form.s_prime), "m_prime": str(spec.form.m_prime), "x0": spec.x0}
    if com.phi is not None:
        doc["phi"] = str(com.phi)
    else:
        doc["c"] = str(com.c)
    return doc


def _source(args):
    if bool(args.config) == bool(args.preset):
        raise CliError("give exactly one of --config and --preset", "", "usage")
    if args.preset:
        try:
            p = resolve(args.preset)
        except ValidationError as err:
            raise CliError(err.message, err.path) from err
        return p.spec, p.com, None, None, {"preset": args.preset}
    try:
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as err:
        raise CliError(f"cannot read {args.config}: {err.strerror}", "", "io") from err
    except json.JSONDecodeError as err:
        raise CliError(f"invalid JSON: {err.msg} at line {err.lineno} column {err.colno}", "", "parse") from err
    spec, com, quad, mc = load_model(doc)
    return spec, com, quad, mc, {"config": doc}


# --------------------------------------------------------------------------
# output


def jsonable(obj):
    """Replace non-finite floats by strings so output is strict JSON."""
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if hasattr(obj, "item") and callable(obj.item):
        return jsonable(obj.item())
    return obj


def dump(report: dict, out: str | None):
    text = json.dumps(jsonable(report), indent=2, ensure_ascii=False, allow_nan=False) + "\n"
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------
# commands


def analysis_report(spec, com, quad, source) -> dict:
    rep = martingale_verdict(spec, com, quad or QuadConfig())
    d = rep.to_dict()
    d["model"] = model_document(spec, com)
    d["config_echo"].update(source if "preset" in source else {})
    return d


def cmd_analyze(args) -> int:
    spec, com, quad, _, source = _source(args)
    if args.tol is not None:
        quad = QuadConfig(**{**asdict(quad or QuadConfig()), "tol": args.tol})
    rep = {"command": "analyze", **analysis_report(spec, com, quad, source)}
    dump(rep, args.out)
    return ANALYZE_EXIT[rep["verdict"]]


def cmd_heston(args) -> int:
    try:
        p = HestonParams(args.kappa, args.theta, args.sigma, rho=args.rho, mu=_expr(args.mu, "/mu"), v0=args.v0)
        rep = elmm_verdict(p, QuadConfig(tol=args.tol) if args.tol else QuadConfig())
    except ValidationError as err:
        raise CliError(err.message, err.path) from err
    d = {"command": "heston", "verdict": rep.verdict, **rep.to_dict()}
    dump(d, args.out)
    return HESTON_EXIT[rep.verdict]


def consistency(verdict: str, mean: float, stderr: float) -> tuple[str, str]:
    if verdict == TRUE_MARTINGALE:
        ok = abs(mean - 1.0) <= TRUE_SIGMAS * stderr
        return (CONSISTENT if ok else CONTRADICTS), f"|mean - 1| <= {TRUE_SIGMAS:g} stderr"
    if verdict == STRICT_LOCAL:
        ok = mean < 1.0 - STRICT_SIGMAS * stderr
        return (CONSISTENT if ok else CONTRADICTS), f"mean < 1 - {STRICT_SIGMAS:g} stderr"
    return UNVERIFIABLE, "analytic verdict inconclusive"


def cmd_verify(args) -> int:
    spec, com, quad, mc, source = _source(args)
    base = asdict(mc or McConfig())
    for key, val in (("paths", args.paths), ("horizon", args.horizon), ("seed", args.seed),
                     ("steps_per_unit_time", args.steps), ("scheme", args.scheme)):
        if val is not None:
            base[key] = val
    try:
        cfg = McConfig(**base)
    except ValueError as err:
        raise CliError(str(err), "/mc") from err
    analysis = analysis_report(spec, com, quad, source)
    levels = [float(v) for v in args.levels.split(",")] if args.levels else []
    run = run_z(spec, com, cfg, levels, record_paths=args.dump_limit if args.dump_paths else 0)
    est = run.estimate
    status, rule = consistency(analysis["verdict"], est.mean, est.stderr)
    stopped = []
    for lv in run.levels:
        d = lv.to_dict()
        sm = lv.stopped_mean
        d["identity_holds"] = abs(sm.mean - 1.0) <= TRUE_SIGMAS * sm.stderr if lv.resolved else None
        stopped.append(d)
    rep = {
        "command": "verify",
        "verdict": analysis["verdict"],
        "estimate": est.mean,
        "stderr": est.stderr,
        "paths": est.paths,
        "seed": cfg.seed,
        "extras": est.extras,
        "stopped_levels": stopped,
        "verify_status": status,
        "verify_rule": rule,
        "mc_config": asdict(cfg),
        "analysis": analysis,
        "version": __version__,
    }
    if args.dump_paths:
        with open(args.dump_paths, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "t", "x", "z"])
            for i, r in enumerate(run.records):
                for t, x, z in zip(r.times, r.x_values, r.z_values):
                    w.writerow([i, repr(float(t)), repr(float(x)), repr(float(z))])
    dump(rep, args.out)
    return VERIFY_EXIT[status]


def cmd_flvr(args) -> int:
    if not 0 < args.delta < 2:
        raise CliError("need 0 < delta < 2", "/delta")
    if not args.mu > 0:
        raise CliError("need mu > 0", "/mu")
    if args.eps_levels < 2:
        raise CliError("need at least 2 eps levels", "/eps_levels")
    try:
        cfg = McConfig(paths=args.paths, horizon=args.horizon, steps_per_unit_time=args.steps, seed=args.seed)
    except ValueError as err:
        raise CliError(str(err), "/mc") from err
    eps = [2.0 ** -(3 + k) for k in range(args.eps_levels)]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = flvr_demo(args.delta, args.mu, args.horizon, eps, cfg, v0=args.v0)
    rep = {"command": "flvr", **res.to_dict(),
           "warnings": [str(w.message) for w in caught], "version": __version__}
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["eps", "mean_qv", "se_qv", "mean_min_gain", "se_min_gain", "mean_final_gain",
                        "se_final_gain", "mean_occupation", "mean_stopped_gain", "stop_probability"])
            for lv in res.levels:
                w.writerow([lv.eps, lv.quadratic_variation.mean, lv.quadratic_variation.stderr,
                            lv.min_gain.mean, lv.min_gain.stderr, lv.final_gain.mean, lv.final_gain.stderr,
                            lv.occupation.mean, lv.stopped_gain.mean, lv.stop_probability])
    dump(rep, args.out)
    return EXIT_OK


def cmd_quad(args) -> int:
    f = _expr(args.f, "/f")
    endpoint = _ext_real(args.endpoint if args.endpoint in ("inf", "-inf", "+inf") else float(args.endpoint),
                         "/endpoint")
    side = FROM_ABOVE if args.side == "above" else FROM_BELOW
    kw = {k: v for k, v in (("tol", args.tol), ("window", args.window), ("max_levels", args.max_levels)) if v is not None}
    try:
        cfg = QuadConfig(**kw)
    except ValueError as err:
        raise CliError(str(err), "/quad") from err
    start = args.start
    if math.isinf(endpoint) and start is None:
        start = 1.0
    v = classify_improper(lambda x: ex.evaluate(f, x), endpoint, side, cfg, start=start)
    dump({"command": "quad", "f": str(f), "endpoint": endpoint, "side": side, **v.to_dict(),
          "config_echo": asdict(cfg), "version": __version__}, args.out)
    return QUAD_EXIT[v.cls]


def cmd_recheck(args) -> int:
    """Re-derive an analysis verdict from the traces stored in a report."""
    try:
        with open(args.report, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise CliError(f"cannot read report: {err}", "", "io") from err
    inner = doc.get("analysis", doc)
    if "traces" not in inner or "verdict" not in inner:
        raise CliError("not an analysis report", "/traces")
    derived = verdict_from_traces(inner["traces"])
    out = {"command": "recheck", "stored_verdict": inner["verdict"], "derived_verdict": derived,
           "agrees": derived == inner["verdict"], "version": __version__}
    dump(out, args.out)
    return ANALYZE_EXIT[derived] if derived == inner["verdict"] else EXIT_ERROR


# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message, "", "usage")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="driftgauge", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def source(sp):
        sp.add_argument("--config", help="model JSON file")
        sp.add_argument("--preset", help="built-in model name")
        sp.add_argument("--out", help="report file (default stdout)")

    a = sub.add_parser("analyze", help="decide whether the density process is a true martingale")
    source(a)
    a.add_argument("--tol", type=float)
    a.set_defaults(func=cmd_analyze)

    h = sub.add_parser("heston", help="ELMM existence for the generalised Heston model")
    h.add_argument("--kappa", type=float, required=True)
    h.add_argument("--theta", type=float, required=True)
    h.add_argument("--sigma", type=float, required=True)
    h.add_argument("--rho", type=float, default=0.0)
    h.add_argument("--mu", default="0", help="drift of the stock as a function of the variance")
    h.add_argument("--v0", type=float)
    h.add_argument("--tol", type=float)
    h.add_argument("--out")
    h.set_defaults(func=cmd_heston)

    v = sub.add_parser("verify", help="Monte-Carlo check of the analytic verdict")
    source(v)
    v.add_argument("--paths", type=int)
    v.add_argument("--horizon", type=float)
    v.add_argument("--seed", type=int)
    v.add_argument("--steps", type=int, help="steps per unit time")
    v.add_argument("--scheme", choices=["ExactBesq", "ExactCir", "EulerReflected"])
    v.add_argument("--levels", default="2,4,8,16", help="comma-separated stopping levels n")
    v.add_argument("--dump-paths", help="CSV file for per-path data")
    v.add_argument("--dump-limit", type=int, default=100, help="paths written by --dump-paths")
    v.set_defaults(func=cmd_verify)

    f = sub.add_parser("flvr", help="arbitrage mechanics when the variance hits zero")
    f.add_argument("--delta", type=float, required=True)
    f.add_argument("--mu", type=float, required=True)
    f.add_argument("--horizon", type=float, default=1.0)
    f.add_argument("--eps-levels", type=int, default=5)
    f.add_argument("--paths", type=int, default=20_000)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--steps", type=int, default=16384, help="steps per unit time")
    f.add_argument("--v0", type=float, default=1.0)
    f.add_argument("--csv")
    f.add_argument("--out")
    f.set_defaults(func=cmd_flvr)

    q = sub.add_parser("quad", help="classify an improper integral at an endpoint")
    q.add_argument("--f", required=True)
    q.add_argument("--endpoint", required=True)
    q.add_argument("--side", choices=["above", "below"], required=True)
    q.add_argument("--tol", type=float)
    q.add_argument("--window", type=float)
    q.add_argument("--max-levels", type=int)
    q.add_argument("--start", type=float, help="window start for infinite endpoints")
    q.add_argument("--out")
    q.set_defaults(func=cmd_quad)

    r = sub.add_parser("recheck", help="re-derive a verdict from a stored report")
    r.add_argument("--report", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_recheck)
    return p


def _fail(err: CliError) -> int:
    payload = {"error": {"kind": err.kind, "message": err.message, "path": err.path}}
    sys.stderr.write(json.dumps(payload) + "\n")
    return EXIT_ERROR


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as err:
        return _fail(err)
    except SystemExit as exc:  # --help, --version
        return int(exc.code or 0) and EXIT_ERROR
    try:
        return args.func(args)
    except CliError as err:
        return _fail(err)
    except ValidationError as err:
        return _fail(CliError(err.message, err.path))
    except ex.ParseError as err:
        return _fail(CliError(str(err), "", "parse"))
    except ex.DomainError as err:
        return _fail(CliError(str(err), "", "domain"))
    except ValueError as err:
        return _fail(CliError(str(err), "", "usage"))


if __name__ == "__main__":
    sys.exit(main())
