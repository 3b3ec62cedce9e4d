import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from bdris_isac.errors import InfeasibleError, InvalidParameterError, NonFiniteIntegrandError
from bdris_isac.snis import (SamplerSettings, SnisProblem, conditional_cdf, joint_density, kernel_delta,
                             mc_integrate, non_inversion_sample, sigmoid_kernel, snis_solve)
from bdris_isac.statistics import ParameterMapping


def linear(b=1.0):
    return lambda X: X[:, 0] / b


# -- kernel and integration ------------------------------------------------------

def test_kernel_normalization():
    val, err = integrate.quad(sigmoid_kernel, -np.inf, np.inf, epsabs=1e-13)
    assert abs(val - 1.0) < 1e-8
    assert sigmoid_kernel(0.0) == pytest.approx(1 / math.pi, rel=1e-15)
    assert integrate.quad(lambda x: kernel_delta(x, 1e-2), -1, 1, points=[0])[0] == pytest.approx(1.0, abs=1e-8)


@given(st.floats(-1e6, 1e6))
def test_kernel_symmetric_and_finite(u):
    assert sigmoid_kernel(u) == sigmoid_kernel(-u)
    assert np.isfinite(sigmoid_kernel(u)) and sigmoid_kernel(u) >= 0


def test_kernel_rejects_bad_width():
    with pytest.raises(InvalidParameterError):
        kernel_delta(0.0, 0.0)


def test_mc_integrate(rng):
    assert mc_integrate(lambda U: np.full(len(U), 2.5), 3, 1000, rng) == 2.5
    assert mc_integrate(lambda U: U[:, 0] * U[:, 1], 2, 10 ** 6, rng) == pytest.approx(0.25, abs=1e-3)
    assert mc_integrate(lambda U: kernel_delta(U[:, 0] - 0.5, 1e-2), 1, 10 ** 6, rng) == pytest.approx(1.0, abs=0.02)


def test_mc_integrate_is_seeded():
    f = lambda U: np.sin(U).sum(1)
    assert mc_integrate(f, 2, 5000, np.random.default_rng(1)) == mc_integrate(f, 2, 5000, np.random.default_rng(1))


def test_mc_integrate_reports_bad_point(rng):
    with pytest.raises(NonFiniteIntegrandError) as exc:
        mc_integrate(lambda U: np.where(U[:, 0] > 0.5, np.nan, 1.0), 1, 1000, rng)
    assert exc.value.point[0] > 0.5
    with pytest.raises(InvalidParameterError):
        mc_integrate(lambda U: U[:, 0], 0, 1000, rng)


# -- problem and settings validation -------------------------------------------------

def test_validation():
    for bounds, target in [((1.0, 0.0), 0.5), ((1.0,), 0.0), ((1.0,), 1.0), ((float("inf"),), 0.5)]:
        with pytest.raises(InvalidParameterError):
            SnisProblem(linear(), bounds, target)
    for kw in [dict(sigma_err=0.0), dict(n_mc=999), dict(n_trap=1)]:
        with pytest.raises(InvalidParameterError):
            SamplerSettings(**kw)
    p = SnisProblem(linear(), (2.0, 3.0), 0.5)
    assert p.names == ("x1", "x2") and p.volume(2) == 6.0
    assert SamplerSettings().eps(p) == pytest.approx(1e-6 / 6)
    assert SamplerSettings(anneal=True).sigmas() == pytest.approx([1e-2, 1e-3, 1e-4])


# -- joint density ---------------------------------------------------------------------

def test_joint_density_uniform_root(rng):
    # empty prefix: the box volume is 1 and the smoothed delta integrates to 1 over u
    b = 2.0
    p = SnisProblem(linear(b), (b,), 0.5)
    d = joint_density([], 0.5, p, SamplerSettings(sigma_err=1e-2, n_mc=10 ** 6), rng)
    assert d == pytest.approx(1.0, rel=0.02)


def test_joint_density_constant_objective_vanishes(rng):
    p = SnisProblem(lambda X: np.full(len(X), 0.9), (1.0,), 0.1)
    assert joint_density([], 0.1, p, SamplerSettings(n_mc=10 ** 4), rng) < 1e-100


def test_joint_density_ignored_coordinate(rng):
    sigma, b1, b2 = 1e-3, 2.0, 3.0
    p = SnisProblem(lambda X: X[:, 0] / b1, (b1, b2), 0.25)
    d = joint_density([0.5], 0.25, p, SamplerSettings(sigma_err=sigma, n_mc=10 ** 4), rng)
    # sigma^-1 K(0) / (b1 b2) * b2
    assert d == pytest.approx(1 / (math.pi * sigma) / (b1 * b2) * b2, rel=1e-12)


def test_joint_density_full_prefix(rng):
    p = SnisProblem(lambda X: X.mean(1), (1.0, 1.0), 0.5)
    d = joint_density([0.5, 0.5], 0.5, p, SamplerSettings(sigma_err=1e-2, n_mc=10 ** 4), rng)
    assert d == pytest.approx(float(kernel_delta(0.0, 1e-2)), rel=1e-12)
    with pytest.raises(InvalidParameterError):
        joint_density([1.5], 0.5, p, SamplerSettings(n_mc=10 ** 4), rng)


# -- conditional CDF -------------------------------------------------------------------

@pytest.mark.parametrize("method", ["scaled", "indicator"])
def test_conditional_cdf_uniform_root(method, rng):
    b, sigma = 2.0, 1e-2
    p = SnisProblem(linear(b), (b,), 0.5)
    s = SamplerSettings(sigma_err=sigma, n_mc=10 ** 6)
    assert conditional_cdf(0.0, [], 0.5, p, s, rng, method=method) == 0.0
    assert conditional_cdf(b, [], 0.5, p, s, rng, method=method) == pytest.approx(1.0, abs=0.03)
    lo, hi = conditional_cdf(np.array([b / 2 - 5 * sigma * b, b / 2 + 5 * sigma * b]), [], 0.5, p, s, rng,
                             method=method)
    assert lo < 0.03 and hi > 0.95


def test_conditional_cdf_infeasible_prefix(rng):
    p = SnisProblem(lambda X: np.full(len(X), 0.9), (1.0,), 0.1)
    with pytest.raises(InfeasibleError):
        conditional_cdf(0.5, [], 0.1, p, SamplerSettings(n_mc=10 ** 4), rng)
    with pytest.raises(ValueError):
        conditional_cdf(0.5, [], 0.9, p, SamplerSettings(sigma_err=1e-2, n_mc=10 ** 4), rng, method="other")


def _isotonic(y):
    """Pool-adjacent-violators fit of a nondecreasing sequence."""
    blocks = []
    for v in y:
        blocks.append([v, 1])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            v2, n2 = blocks.pop()
            v1, n1 = blocks.pop()
            blocks.append([(v1 * n1 + v2 * n2) / (n1 + n2), n1 + n2])
    return np.concatenate([[v] * n for v, n in blocks])


def test_scaled_conditional_cdf_monotone_up_to_noise():
    p = SnisProblem(lambda X: X.mean(1), (1.0, 1.0), 0.5)
    s = SamplerSettings(sigma_err=1e-2, n_mc=20_000)
    grid = np.linspace(0, 1, 100)
    runs = np.array([conditional_cdf(grid, [], 0.5, p, s, np.random.default_rng(i), density=1.0,
                                     method="scaled") for i in range(10)])
    se = runs.std(axis=0, ddof=1)
    G = runs[0]
    violation = np.abs(G - _isotonic(G))
    assert np.all(violation <= 3 * se + 1e-12)


def test_indicator_conditional_cdf_is_monotone(rng):
    p = SnisProblem(lambda X: X.mean(1), (1.0, 1.0), 0.5)
    G = conditional_cdf(np.linspace(0, 1, 100), [], 0.5, p, SamplerSettings(sigma_err=1e-3, n_mc=10 ** 4), rng)
    assert np.all(np.diff(G) >= 0)


# -- non-inversion sampling --------------------------------------------------------------

def test_non_inversion_uniform():
    b, n = 4.0, 100
    assert non_inversion_sample(lambda x: x / b, b, 0.3, n) == pytest.approx(0.3 * b, abs=b / (n - 1))
    assert non_inversion_sample(lambda x: x / b, b, 0.0, n) == 0.0


def test_non_inversion_truncated_exponential():
    b, n = 10.0, 100
    G = lambda x: 1 - np.exp(-x)
    assert non_inversion_sample(G, b, 0.5, n) == pytest.approx(math.log(2), abs=b / (n - 1))


def test_non_inversion_errors():
    with pytest.raises(InfeasibleError):
        non_inversion_sample(lambda x: 0 * x, 1.0, 0.0)
    with pytest.raises(InvalidParameterError):
        non_inversion_sample(lambda x: x, 1.0, 1.5)
    with pytest.raises(InvalidParameterError):
        non_inversion_sample(np.zeros(5), 1.0, 0.0, n_trap=100)


@pytest.mark.parametrize("name", ["uniform", "truncated-exponential"])
def test_non_inversion_matches_inverse_transform(name):
    b = 3.0
    if name == "uniform":
        G, Ginv = (lambda x: x / b), (lambda v: v * b)
    else:
        Z = 1 - math.exp(-b)
        G, Ginv = (lambda x: (1 - np.exp(-x)) / Z), (lambda v: -np.log(1 - v * Z))
    V = np.random.default_rng(0).random(1000)
    ours = np.array([non_inversion_sample(G, b, v, 100) for v in V])
    # same uniforms through both samplers, so the gap is the sampler's own error
    assert stats.ks_2samp(ours, Ginv(V)).statistic < 0.06
    assert stats.kstest(ours, G).statistic < 0.06


# -- the full loop -----------------------------------------------------------------------

def test_solve_linear_root():
    p = SnisProblem(lambda X: X[:, 0], (1.0,), 0.4)
    s = SamplerSettings(n_mc=10 ** 5)
    for seed in range(5):
        sol = snis_solve(p, s, np.random.default_rng(seed))
        assert sol.feasible and sol.x_hat[0] == pytest.approx(0.4, abs=max(5 * s.sigma_err, 1 / 99))
        assert 0 <= sol.x_hat[0] <= 1


def test_solve_planar_root():
    p = SnisProblem(lambda X: X.mean(1), (1.0, 1.0), 0.5)
    sols = [snis_solve(p, SamplerSettings(n_mc=10 ** 5), np.random.default_rng(s)) for s in range(10)]
    assert all(s.feasible and abs(s.achieved - 0.5) <= 0.02 for s in sols)
    assert np.std([s.x_hat[0] for s in sols]) > 0.1    # spread along the solution line


def test_solve_infeasible():
    p = SnisProblem(lambda X: np.full(len(X), 0.9), (1.0, 1.0), 0.1)
    sol = snis_solve(p, SamplerSettings(n_mc=10 ** 4), np.random.default_rng(0))
    assert not sol.feasible and sol.failed_at == 0 and sol.x_hat.size == 0
    assert math.isnan(sol.achieved)


def test_solve_is_deterministic_and_recorded():
    p = SnisProblem(lambda X: X.mean(1), (1.0, 2.0), 0.5)
    s = SamplerSettings(n_mc=10 ** 4, anneal=True)
    a = snis_solve(p, s, np.random.default_rng(3))
    b = snis_solve(p, s, np.random.default_rng(3))
    assert np.array_equal(a.x_hat, b.x_hat)
    rec = json.loads(a.to_json(p, s, seed=3))
    assert rec["seed"] == 3 and rec["feasible"] and len(rec["steps"]) == 2
    assert rec["settings"]["n_mc"] == 10 ** 4 and rec["problem"]["bounds"] == [1.0, 2.0]
    assert all(st["G_b"] == pytest.approx(1.0) for st in rec["steps"])


def test_shrinking_sigma_does_not_hurt():
    p = SnisProblem(lambda X: X.mean(1), (1.0, 1.0), 0.5)
    med = []
    for sigma in (1e-2, 1e-3, 1e-4):
        s = SamplerSettings(sigma_err=sigma, n_mc=10 ** 5)
        med.append(np.median([abs(snis_solve(p, s, np.random.default_rng(i)).achieved - 0.5) for i in range(30)]))
    assert med[0] >= med[1] >= med[2]


def test_isac_root_property(umi_calibrated):
    cfg, geom = umi_calibrated
    m = ParameterMapping(("p_r_dbm", "n_elements"), (20.0, 80.0), cfg, geom)
    p = SnisProblem.from_mapping(m, 1e-2)
    s = SamplerSettings(n_mc=10 ** 4, anneal=True)
    errs = []
    for seed in range(100):
        sol = snis_solve(p, s, np.random.default_rng(seed))
        if sol.feasible:
            assert np.all(sol.x_hat >= 0) and np.all(sol.x_hat <= np.array(p.bounds))
            errs.append(abs(math.log10(sol.achieved / 1e-2)))
    assert len(errs) >= 50
    assert np.mean(np.array(errs) <= 0.25) >= 0.9
