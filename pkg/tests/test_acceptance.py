"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v -s`` or ``python tests/test_acceptance.py``.
"""

import functools
import itertools
import json
import math
import os
import subprocess
import sys
import time
import warnings

import numpy as np
from scipy import stats

from driftgauge.heston import ELMM_EXISTS, NO_ELMM, UNDETERMINED, HestonParams, elmm_verdict, heston_measure_change
from driftgauge.mc import McConfig, flvr_demo, run_z, sample_besq_exact, simulate_besq_timechange
from driftgauge.model import ChangeOfMeasure, DiffusionSpec, SdeForm
from driftgauge.presets import resolve
from driftgauge.quad import DIVERGENT, FINITE, FROM_ABOVE, classify_improper
from driftgauge.verdict import STRICT_LOCAL, TRUE_MARTINGALE, martingale_verdict

N_MC = 100_000
SEED = 20240611
LEVELS = [2.0, 4.0, 8.0, 16.0]
# the command-line preset families; heston-cir with its default drift mu(v) = v
PRESETS = ["example1-bm-to-bes3", "example2-besq:3:1", "example2-besq:1:3", "example2-besq:1:2",
           "example2-besq:0.5:2.5", "heston-cir:1:0.04:0.4"]


def report(number: int, ok: bool, detail: str):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
    sys.__stdout__.write("\n" + line + "\n")
    sys.__stdout__.flush()
    assert ok, line


@functools.cache
def preset_run(name: str):
    p = resolve(name)
    t0 = time.perf_counter()
    run = run_z(p.spec, p.com, McConfig(paths=N_MC, seed=SEED), LEVELS)
    return run, time.perf_counter() - t0


def bes3_closed_form(x0: float, t: float) -> float:
    return (2 * stats.norm.cdf(x0 / math.sqrt(t)) - 1) / x0


def test_criterion_1_besq_table():
    dims = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0]
    t0 = time.perf_counter()
    wrong, inconclusive = [], 0
    for d0, d1 in itertools.product(dims, dims):
        if d0 == d1:
            continue
        spec = DiffusionSpec(0.0, math.inf, "reflecting", "open", SdeForm("2*sqrt(x)", repr(d0)), 1.0)
        v = martingale_verdict(spec, ChangeOfMeasure(c=f"({d1!r} - {d0!r})/(2*sqrt(x))")).verdict
        inconclusive += v not in (TRUE_MARTINGALE, STRICT_LOCAL)
        if v != (STRICT_LOCAL if d1 < 2 else TRUE_MARTINGALE):
            wrong.append((d0, d1, v))
    dt = time.perf_counter() - t0
    report(1, not wrong and inconclusive == 0 and dt < 10,
           f"42 pairs, {len(wrong)} wrong, {inconclusive} inconclusive, {dt:.2f}s")


def test_criterion_2_strict_local_mean():
    # validate the closed form for E[1/|BES3|] by brute force before trusting it
    rng = np.random.default_rng(SEED)
    w = rng.standard_normal((1_000_000, 3))
    w[:, 0] += 1.0
    r_inv = 1.0 / np.linalg.norm(w, axis=1)
    oracle = bes3_closed_form(1.0, 1.0)
    brute_ok = abs(r_inv.mean() - oracle) <= 4 * r_inv.std() / 1e3
    run, dt = preset_run("example2-besq:3:1")
    est = run.estimate
    ok = brute_ok and abs(est.mean - oracle) <= 0.01 and dt < 60
    report(2, ok, f"mean {est.mean:.5f} vs oracle {oracle:.5f} (brute force {r_inv.mean():.5f}), "
                  f"stderr {est.stderr:.5f}, {dt:.1f}s")


def test_criterion_3_true_martingale_means():
    parts, ok = [], True
    for name in ("example1-bm-to-bes3", "example2-besq:1:3"):
        run, dt = preset_run(name)
        e = run.estimate
        z = (e.mean - 1) / e.stderr
        ok &= abs(z) <= 4 and dt < 60
        parts.append(f"{name}: {e.mean:.5f} ({z:+.2f} se, {dt:.1f}s)")
    report(3, ok, "; ".join(parts))


def test_criterion_4_stopped_identity():
    worst, worst_at, unresolved = 0.0, "", 0
    for name in PRESETS:
        run, _ = preset_run(name)
        for lv in run.levels:
            unresolved += not lv.resolved
            z = abs(lv.stopped_mean.mean - 1) / lv.stopped_mean.stderr
            if not math.isfinite(z):
                z = math.inf
            if z > worst:
                worst, worst_at = z, f"{name} n={lv.n:g}"
    report(4, worst <= 4 and unresolved == 0,
           f"{len(PRESETS)} presets x n in {{2,4,8,16}}, worst {worst:.2f} se at {worst_at}, "
           f"{unresolved} unresolved levels")


def test_criterion_5_heston_trichotomy():
    t0 = time.perf_counter()
    low, high = (1.0, 0.04, 0.4), (2.0, 0.09, 0.3)
    got = {mu: elmm_verdict(HestonParams(*low, mu=mu)).verdict for mu in ("0.05", "0.05*x", "x^0.1")}
    ok = got == {"0.05": NO_ELMM, "0.05*x": ELMM_EXISTS, "x^0.1": UNDETERMINED}
    ok &= all(elmm_verdict(HestonParams(*high, mu=mu)).verdict == ELMM_EXISTS
              for mu in ("0.05", "0.05*x", "x^0.1", "0", "x^2"))
    grid = {0.5: (1.0, 0.02, 0.4), 1.0: (1.0, 0.04, 0.4), 1.5: (1.0, 0.06, 0.4)}
    disagree = 0
    for kts, alpha in itertools.product(grid.values(), (0.3, 0.5, 1.0, 2.0)):
        p = HestonParams(*kts, mu=f"x^{alpha}")
        a = elmm_verdict(p).verdict == ELMM_EXISTS
        b = martingale_verdict(*heston_measure_change(p)).verdict == TRUE_MARTINGALE
        disagree += a != b
    dt = time.perf_counter() - t0
    report(5, ok and disagree == 0 and dt < 10, f"dimension-one verdicts {got}, {disagree}/12 cross-engine "
                                                f"disagreements, {dt:.2f}s")


def test_criterion_6_power_law_suite():
    t0 = time.perf_counter()
    bad = []
    for p in (-2, -1.5, -1.2, -1.05, -0.95, -0.8, -0.5, 0, 1):
        v = classify_improper(lambda x, p=p: x ** p, 0.0, FROM_ABOVE, window=1.0)
        if p <= -1.05:
            good = v.cls == DIVERGENT
        else:
            good = v.cls == FINITE and abs(v.value - 1 / (p + 1)) <= 1e-6 / (p + 1)
        if not good:
            bad.append((p, v.cls, v.value))
    dt = time.perf_counter() - t0
    report(6, not bad and dt < 5, f"9 exponents, misclassified {bad}, {dt:.3f}s")


def test_criterion_7_time_change():
    t0 = time.perf_counter()
    tc = simulate_besq_timechange(1.0, 1.0, 1.0, McConfig(paths=10_000, seed=SEED))
    v = tc.v[:, -1]
    exact = sample_besq_exact(1.0, 1.0, 1.0, McConfig(paths=10_000, seed=SEED + 1))
    se = v.std() / math.sqrt(v.size)
    ks = stats.ks_2samp(v, exact)
    dt = time.perf_counter() - t0
    ok = abs(v.mean() - 2) <= 5 * se and ks.pvalue > 0.01 and dt < 120
    report(7, ok, f"mean {v.mean():.4f} ({(v.mean() - 2) / se:+.2f} se), KS p={ks.pvalue:.3f}, {dt:.1f}s")


def test_criterion_8_flvr_scaling():
    t0 = time.perf_counter()
    eps = [2.0 ** -k for k in range(3, 8)]
    with warnings.catch_warnings():
        warnings.simplefilter("error")  # an under-resolved band fails the criterion
        res = flvr_demo(1.0, 1.0, 1.0, eps, McConfig(paths=20_000, steps_per_unit_time=16384, seed=SEED))
    dt = time.perf_counter() - t0
    final = [lv.final_gain.mean for lv in res.levels]
    mins = [lv.min_gain.mean for lv in res.levels]
    monotone = all(a < b <= 0 for a, b in zip(mins, mins[1:]))
    ok = abs(res.slope - 1) <= 0.2 and all(g > 0 for g in final) and monotone and dt < 300
    report(8, ok, f"slope {res.slope:.3f}, E[G_T] {[round(g, 4) for g in final]}, "
                  f"E[min G] {[f'{m:.2e}' for m in mins]}, {dt:.1f}s")


def _cli(args, threads):
    env = dict(os.environ, DRIFTGAUGE_THREADS=str(threads))
    r = subprocess.run([sys.executable, "-m", "driftgauge", *args], capture_output=True, env=env, check=False)
    return r.returncode, r.stdout


def test_criterion_9_determinism():
    commands = [
        ["verify", "--preset", "example2-besq:3:1", "--paths", "20000", "--seed", "42"],
        ["verify", "--preset", "heston-cir:1:0.04:0.4", "--paths", "20000", "--seed", "42", "--steps", "256"],
        ["flvr", "--delta", "1", "--mu", "1", "--eps-levels", "3", "--paths", "20000", "--seed", "42",
         "--steps", "1024"],
    ]
    same = []
    for cmd in commands:
        outs = [_cli(cmd, t) for t in (1, 4, 0)]
        same.append(all(o == outs[0] for o in outs) and outs[0][1] and json.loads(outs[0][1]))
    report(9, all(same), f"{sum(map(bool, same))}/{len(commands)} commands byte-identical across "
                         "DRIFTGAUGE_THREADS in {1, 4, 0}")


if __name__ == "__main__":
    import pytest

    sys.exit(pytest.main([__file__, "-q", "-s"]))
