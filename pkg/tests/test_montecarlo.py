import json

import numpy as np
import pytest
from scipy import stats

from bdris_isac.beamforming import design_radar, max_radar_snr, optimal_configuration, zf_sinr
from bdris_isac.channels import ChannelSet, crandn
from bdris_isac.config import derive_gains
from bdris_isac.errors import InvalidParameterError
from bdris_isac.montecarlo import (EmpiricalCdf, _draw, batch_metrics, binomial_se, cdf_rows, ks_distance,
                                   simulate_metrics, validate)
from bdris_isac.statistics import radar_snr_cdf


def test_empirical_cdf_is_right_continuous():
    e = EmpiricalCdf([3.0, 1.0, 2.0, 2.0])
    assert e.count == 4 and list(e.samples) == [1.0, 2.0, 2.0, 3.0]
    assert e(2.0) == 0.75 and e.left(2.0) == 0.25 and e(0.5) == 0.0 and e(3.0) == 1.0


def test_ks_of_own_step_function_is_zero(rng):
    e = EmpiricalCdf(rng.random(500))
    assert ks_distance(e, e) == 0.0


def test_ks_exponential(rng):
    x = rng.exponential(size=100_000)
    # 99% critical value 1.628 / sqrt(n) ~ 0.0051
    assert ks_distance(EmpiricalCdf(x), stats.expon.cdf) < 0.006
    # analytic sup-gap between Exp(1) and Exp(2) CDFs is 0.25
    assert ks_distance(EmpiricalCdf(x), stats.expon(scale=0.5).cdf) > 0.2


def test_ks_catches_gap_on_left_side_of_jump():
    # all mass at 1; a CDF that is 0.5 just below 1 differs from the empirical 0 there
    e = EmpiricalCdf(np.ones(200))
    assert ks_distance(e, lambda x: np.where(x < 1, 0.5, 1.0)) == pytest.approx(0.5)


def test_ks_needs_enough_samples():
    with pytest.raises(InvalidParameterError):
        ks_distance(EmpiricalCdf(np.arange(99.0)), stats.norm.cdf)


def test_binomial_se():
    assert binomial_se(0.2, 100) == pytest.approx(0.04)
    assert binomial_se(0.0, 10) == 0.0


def test_ks_shrinks_with_sample_size():
    decreasing = 0
    for r in range(20):
        rng = np.random.default_rng(100 + r)
        d = [ks_distance(EmpiricalCdf(rng.exponential(size=n)), stats.expon.cdf) for n in (10 ** 3, 10 ** 4, 10 ** 5)]
        decreasing += d[0] > d[1] > d[2]
    assert decreasing >= 18


def test_batch_matches_per_trial_evaluators(umi_calibrated):
    cfg, geom = umi_calibrated
    g = derive_gains(cfg.with_(N=16), geom)
    draws = [_draw(9, i, 0, 4, 16, 3) for i in range(20)]
    G, hc, hr = (np.stack(a) for a in zip(*draws))
    radar, comm, ok = batch_metrics(G, hc, hr, g)
    assert ok.all()
    for t in range(20):
        ch = ChannelSet(G=G[t], h_ck=hc[t], h_rt=hr[t])
        d, eff, _ = optimal_configuration(ch)
        assert radar[t] == pytest.approx(max_radar_snr(ch.h_rt, d, g.gbar_rt, 4), rel=1e-9)
        for k in range(3):
            assert comm[t, k] == pytest.approx(zf_sinr(eff, g, k), rel=1e-9)


def test_batch_flags_degenerate_draw(umi_calibrated, rng):
    cfg, geom = umi_calibrated
    g = derive_gains(cfg.with_(N=8), geom)
    a = crandn(rng, 8, 1)
    G = np.stack([np.hstack([a, a, crandn(rng, 8, 2)]), crandn(rng, 8, 4)])
    _, _, ok = batch_metrics(G, crandn(rng, 2, 3, 8), crandn(rng, 2, 8), g)
    assert list(ok) == [False, True]


def test_single_trial_reproducible(umi_calibrated):
    cfg, geom = umi_calibrated
    a = simulate_metrics(cfg, geom, 1, seed=4)
    b = simulate_metrics(cfg, geom, 1, seed=4)
    assert a.radar.tobytes() == b.radar.tobytes() and a.comm.tobytes() == b.comm.tobytes()
    with pytest.raises(InvalidParameterError):
        simulate_metrics(cfg, geom, 0, seed=4)


def test_stream_splitting_and_workers(umi_calibrated):
    cfg, geom = umi_calibrated
    full = simulate_metrics(cfg.with_(N=16), geom, 5000, seed=8, workers=1)
    par = simulate_metrics(cfg.with_(N=16), geom, 5000, seed=8, workers=3)
    lo = simulate_metrics(cfg.with_(N=16), geom, 2500, seed=8)
    hi = simulate_metrics(cfg.with_(N=16), geom, 2500, seed=8, start=2500)
    assert full.radar.tobytes() == par.radar.tobytes()
    assert np.concatenate([lo.radar, hi.radar]).tobytes() == full.radar.tobytes()
    assert np.concatenate([lo.comm, hi.comm]).tobytes() == full.comm.tobytes()
    assert full.resampled == 0


def test_erlang_mean(umi_calibrated, calibrated_samples):
    cfg, geom = umi_calibrated
    g = derive_gains(cfg, geom)
    x = np.sqrt(4 * calibrated_samples.radar / g.gbar_rt)
    assert x.mean() == pytest.approx(4 * 64, rel=0.03)


def test_validate_report(umi_calibrated, calibrated_samples):
    cfg, geom = umi_calibrated
    rep = validate(cfg, geom, calibrated_samples.trials, calibrated_samples.seed, samples=calibrated_samples)
    assert rep.trials == 100_000 and rep.seed == 2024
    assert rep.ks_radar < 0.02 and max(rep.ks_comm) < 0.03
    assert rep.op_r_se == pytest.approx(binomial_se(rep.op_r, rep.trials))
    doc = json.loads(rep.to_json())
    assert set(doc) >= {"op_r", "op_c", "ks_radar", "ks_comm", "op_r_se", "op_c_se"}


def test_cdf_rows(umi_calibrated, calibrated_samples):
    cfg, geom = umi_calibrated
    g = derive_gains(cfg, geom)
    rows = cdf_rows(calibrated_samples.radar, lambda x: radar_snr_cdf(x, 4, 64, g.gbar_rt), [1e2, 1e4, 1e6])
    assert len(rows) == 3 and all(len(r) == 3 for r in rows)
    assert rows[0][1] <= rows[1][1] <= rows[2][1]
