import math

import numpy as np
import pytest
from scipy import special, stats

from driftgauge import mc
from driftgauge.mc import (BLOCK, McConfig, bessel_bridge_log_factor, besq_no_hit_probability, build_zmodel, block_rng, flvr_demo, run_z,
                           sample_besq_exact, sample_besq_step, sample_cir_step, simulate_besq_timechange,
                           simulate_z)
from driftgauge.model import ChangeOfMeasure
from driftgauge.presets import example1, example2, heston_cir

N = 100_000


def _var_stderr(x):
    n = x.size
    c = x - x.mean()
    m2, m4 = np.mean(c ** 2), np.mean(c ** 4)
    return math.sqrt(max(m4 - m2 ** 2, 0.0) / n)


@pytest.mark.parametrize("delta", [0.5, 1.0, 2.0, 3.0])
def test_besq_moments(delta):
    x0, t = 1.0, 1.0
    x = sample_besq_step(delta, np.full(N, x0), t, block_rng(7, 0))
    assert abs(x.mean() - (x0 + delta * t)) <= 4 * x.std() / math.sqrt(N)
    assert abs(x.var() - (4 * x0 * t + 2 * delta * t * t)) <= 4 * _var_stderr(x)


@pytest.mark.parametrize("delta", [1, 2, 3])
def test_besq_matches_squared_gaussian_radius(delta):
    # integer dimensions: |sqrt(x0) e1 + W_t|^2 built from plain normals
    rng = np.random.default_rng(11)
    w = rng.standard_normal((N, delta))
    w[:, 0] += 1.0
    oracle = (w ** 2).sum(axis=1)
    x = sample_besq_step(float(delta), np.ones(N), 1.0, block_rng(3, 1))
    assert stats.ks_2samp(x, oracle).pvalue > 0.01


def test_besq_from_zero_is_positive():
    x = sample_besq_step(3.0, np.zeros(10_000), 0.7, block_rng(1, 0))
    assert np.all(x > 0)


def test_cir_mean():
    k, th, sg, v0, t = 1.5, 0.04, 0.4, 0.1, 0.5
    v = sample_cir_step(k, th, sg, np.full(N, v0), t, block_rng(5, 0))
    mean = v0 * math.exp(-k * t) + th * (1 - math.exp(-k * t))
    assert abs(v.mean() - mean) <= 4 * v.std() / math.sqrt(N)


def test_bridge_no_hit_dimension_one_is_reflection_formula():
    # BESQ(1) is B^2; reflecting B about 0 gives tanh(sqrt(x y)/dt)
    x = np.array([0.0, 1e-4, 0.01, 0.3, 2.0, 50.0])
    y = np.array([0.5, 2e-4, 0.02, 0.1, 3.0, 40.0])
    dt = 0.01
    a, b = np.sqrt(x), np.sqrt(y)
    plus = np.exp(-(a - b) ** 2 / (2 * dt))
    minus = np.exp(-(a + b) ** 2 / (2 * dt))
    oracle = (plus - minus) / (plus + minus)
    assert np.allclose(besq_no_hit_probability(1.0, x, y, dt), oracle, rtol=1e-12, atol=1e-300)


@pytest.mark.parametrize("delta", [0.25, 0.5, 1.5])
def test_bridge_no_hit_bessel_ratio(delta):
    nu = 1 - delta / 2
    z = np.array([1e-3, 0.1, 1.0, 5.0, 15.0])
    oracle = special.iv(nu, z) / special.iv(-nu, z)
    got = besq_no_hit_probability(delta, z, z, 1.0)
    assert np.allclose(got, oracle, rtol=1e-10)
    assert np.all((got >= 0) & (got <= 1))
    assert besq_no_hit_probability(delta, np.array([40.0]), np.array([40.0]), 1.0)[0] == 1.0


def test_run_is_independent_of_worker_count(monkeypatch):
    p = example2(3, 1)
    cfg = McConfig(paths=3 * BLOCK - 5, steps_per_unit_time=64, seed=42)
    out = []
    for threads in ("1", "3", "0"):
        monkeypatch.setenv(mc.THREADS_ENV, threads)
        r = run_z(p.spec, p.com, cfg, [2.0, 4.0])
        out.append((r.estimate.mean, r.estimate.stderr, [lv.stopped_mean.mean for lv in r.levels]))
    assert out[0] == out[1] == out[2]


def test_bad_thread_setting(monkeypatch):
    monkeypatch.setenv(mc.THREADS_ENV, "many")
    with pytest.raises(ValueError):
        mc.worker_count()


def test_strict_local_mean_matches_closed_form():
    p = example2(3, 1)
    est = simulate_z(p.spec, p.com, McConfig(paths=40_000, steps_per_unit_time=64, seed=3))
    oracle = 2 * stats.norm.cdf(1.0) - 1
    assert abs(est.mean - oracle) <= 4 * est.stderr
    assert est.extras["scheme"] == "ExactBesq"
    assert est.extras["drift_ratio"] == "0"


def test_absorbed_paths_are_frozen_at_zero():
    p = example1()
    r = run_z(p.spec, p.com, McConfig(paths=2_000, steps_per_unit_time=256, seed=5), record_paths=200)
    assert r.scheme == "EulerReflected"
    hit = [rec for rec in r.records if rec.hit_zero_time is not None]
    assert hit
    for rec in hit:
        after = rec.times >= rec.hit_zero_time
        assert np.all(rec.z_values[after] == 0.0)
    assert 0 < r.estimate.extras["hit_zero_fraction"] < 1


def test_identity_change_never_escapes():
    p = example2(3, 1)
    r = run_z(p.spec, ChangeOfMeasure.identity(), McConfig(paths=5_000, steps_per_unit_time=64, seed=1),
              [2.0, 4.0, 8.0])
    assert r.estimate.mean == 1.0 and r.estimate.stderr == 0.0
    assert all(lv.escape.mean == 0.0 for lv in r.levels)


@pytest.mark.parametrize("preset", [example2(3, 1), example2(1, 3), example2(1, 2), example2(0.5, 2.5),
                                    heston_cir(1.0, 0.04, 0.4)],
                         ids=lambda p: p.name)
def test_stopped_identity_small(preset):
    r = run_z(preset.spec, preset.com, McConfig(paths=20_000, seed=9),
              [2.0, 4.0, 8.0, 16.0])
    for lv in r.levels:
        assert lv.resolved
        assert abs(lv.stopped_mean.mean - 1.0) <= 4 * lv.stopped_mean.stderr, lv.n


def test_escape_probability_bounded_away_from_zero():
    p = example2(3, 1)
    r = run_z(p.spec, p.com, McConfig(paths=20_000, seed=2), [2.0, 4.0, 8.0, 16.0])
    esc = [lv.escape.mean for lv in r.levels]
    # tends to 1 - E[Z_1] = 0.317, not to 0
    assert min(esc) > 0.25
    assert esc == sorted(esc, reverse=True)


def test_time_change_matches_exact_sampler():
    cfg = McConfig(paths=5_000, steps_per_unit_time=1024, seed=4)
    tc = simulate_besq_timechange(1.0, 1.0, 1.0, cfg)
    v = tc.v[:, -1]
    assert abs(v.mean() - 2.0) <= 5 * v.std() / math.sqrt(v.size)
    assert np.mean(tc.min_v < 1e-3) > 0
    exact = sample_besq_exact(1.0, 1.0, 1.0, McConfig(paths=5_000, seed=99))
    assert stats.ks_2samp(v, exact).pvalue > 0.01


def test_time_change_rejects_feller_dimensions():
    with pytest.raises(ValueError):
        simulate_besq_timechange(2.0, 1.0, 1.0, McConfig(paths=10))


def test_flvr_small_run():
    cfg = McConfig(paths=4_000, steps_per_unit_time=2048, seed=8)
    mu = 1.3
    res = flvr_demo(1.0, mu, 1.0, [2.0 ** -3, 2.0 ** -4, 2.0 ** -5], cfg)
    qv = [lv.quadratic_variation.mean for lv in res.levels]
    assert qv == sorted(qv, reverse=True)
    assert 0.7 < res.slope < 1.3
    for lv in res.levels:
        assert lv.min_gain.mean <= 0
        # the gain is mu * occupation plus a mean-zero martingale part
        assert abs(lv.final_gain.mean - mu * lv.occupation.mean) <= 4 * lv.final_gain.stderr


def test_config_validation():
    with pytest.raises(ValueError):
        McConfig(paths=0)
    with pytest.raises(ValueError):
        McConfig(scheme="Milstein")


def test_killed_density_matches_hitting_time_oracle():
    # constant stock drift at dimension one: the density dies when v hits 0.
    # Under the new measure v is CIR with kappa*theta reduced by 0.05*sigma,
    # so E[Z_1] = P~(no hit by 1), a Gamma tail after the CIR/BESQ time change
    p = heston_cir(1.0, 0.04, 0.4, "0.05")
    r = run_z(p.spec, p.com, McConfig(paths=20_000, seed=6), [2.0, 16.0])
    kappa, sigma, v0 = 1.0, 0.4, 0.04
    delta_new = 4 * (0.04 - 0.05 * sigma) / sigma ** 2
    clock = sigma ** 2 * math.expm1(kappa) / (4 * kappa)
    oracle = 1 - stats.gamma(1 - delta_new / 2).sf(v0 / (2 * clock))
    assert abs(r.estimate.mean - oracle) <= 4 * r.estimate.stderr
    assert r.estimate.extras["kill_ends"] == ["lower"]
    # phi blows up at 0, so crossings of n happen below the grid
    assert r.estimate.extras["spike_bounds"]["lower"] == math.inf
    assert not any(lv.resolved for lv in r.levels)


def test_hitting_time_oracle_reproduces_bes3_closed_form():
    # the same Gamma-tail formula for BESQ(1) from 1 gives 2 Phi(1) - 1
    assert 1 - stats.gamma(0.5).sf(0.5) == pytest.approx(2 * stats.norm.cdf(1.0) - 1, rel=1e-12)


def test_bessel_bridge_factor_matches_fine_grid_integral():
    # E[exp(-k int_0^1 ds/X)] for BESQ(3) from 1: fine trapezoid sums
    # against one exact step weighted by I_a(z)/I_b(z)
    delta, k, n, steps = 3.0, 0.5, 20_000, 4000
    nu = delta / 2 - 1
    a, b = math.sqrt(nu * nu + 2 * k), abs(nu)
    rng = block_rng(11, 0)
    x, area, g = np.ones(n), np.zeros(n), np.ones(n)
    for _ in range(steps):
        y = sample_besq_step(delta, x, 1.0 / steps, rng)
        area += 0.5 / steps * (g + 1 / y)
        x, g = y, 1 / y
    fine = np.exp(-k * area)
    y = sample_besq_step(delta, np.ones(n), 1.0, block_rng(11, 1))
    one = np.exp(bessel_bridge_log_factor(a, b, np.ones(n), y, 1.0))
    se = math.hypot(fine.std(), one.std()) / math.sqrt(n)
    assert abs(fine.mean() - one.mean()) <= 4 * se


def test_bessel_bridge_factor_small_z_series():
    z = np.array([1e-9, 2e-8])
    got = bessel_bridge_log_factor(0.25, 0.75, z * z, np.ones(2), 1.0)
    want = np.log(special.iv(0.25, z) / special.iv(0.75, z))
    assert got == pytest.approx(want, rel=1e-6)


def test_bessel_orders_follow_target_dimension():
    for d0, d1 in [(0.5, 2.5), (1, 2), (1.5, 4), (0.5, 1.5)]:
        p = example2(d0, d1)
        assert build_zmodel(p.spec, p.com).bessel_orders == pytest.approx((abs(d1 / 2 - 1), abs(d0 / 2 - 1)))
    # phi = sqrt(x) from dimension one: the drift ratio vanishes
    p = example2(1, 3)
    assert build_zmodel(p.spec, p.com).bessel_orders is None


def test_strict_local_kill_is_flagged_unresolved():
    # BESQ(1.5) reaches 0 under the new measure, where Z blows up
    p = example2(0.5, 1.5)
    r = run_z(p.spec, p.com, McConfig(paths=4000, seed=3), [2.0, 16.0])
    assert r.estimate.extras["spike_bounds"] == {"lower": math.inf}
    assert not any(lv.resolved for lv in r.levels)
    assert all(math.isfinite(lv.stopped_mean.mean) for lv in r.levels)
