import itertools
import json
import math

import numpy as np
import pytest
from numpy.polynomial import chebyshev
from scipy import integrate

from bpinn.diagnostics import (
    DiagnosticsReport,
    GaussianSummary,
    RateInfeasibleError,
    RateInputs,
    bvm_target,
    chebyshev_derivative_at_one,
    diagnose,
    erm_fit,
    gaussian_w2_sq,
    hellinger_sq,
    holder_derivative_bound,
    kl_divergence,
    rate_report,
    rmse_theta,
    sigma_star,
    tvd_sandwich,
    w2_empirical_1d,
)
from bpinn.pde import generate_data, heat_spec

SIGMA_ANALYTIC = math.pi * (1 - math.exp(-1)) / 2


def quad_tvd(a, b):
    f = lambda x: abs(a.pdf(x) - b.pdf(x))
    lo = min(a.mean - 12 * a.sd, b.mean - 12 * b.sd)
    hi = max(a.mean + 12 * a.sd, b.mean + 12 * b.sd)
    # split at the means so the kinks are resolved
    pts = sorted({a.mean, b.mean})
    val, err = integrate.quad(f, lo, hi, points=pts, limit=500, epsabs=1e-10, epsrel=1e-10)
    assert err < 1e-6
    return 0.5 * val


class TestBvmTarget:
    def test_n_1000(self):
        spec = heat_spec()
        assert sigma_star(spec, 1000) == pytest.approx(SIGMA_ANALYTIC + 1e-3, abs=1e-12)
        t = bvm_target(spec, 1000)
        assert t.mean == 0.5
        assert t.sd == pytest.approx(0.03172, abs=2e-5)

    def test_sd_halves_when_n_quadruples(self):
        spec = heat_spec()
        big = [bvm_target(spec, n).sd for n in (10**6, 4 * 10**6)]
        assert big[0] / big[1] == pytest.approx(2.0, rel=1e-6)
        assert big[0] == pytest.approx(math.sqrt(1 / (SIGMA_ANALYTIC * 1e6)), rel=1e-5)

    def test_monte_carlo_matches_analytic(self):
        spec = heat_spec()
        assert sigma_star(spec, 1000, analytic=False, N=100_000) == pytest.approx(sigma_star(spec, 1000), abs=0.01)


class TestW2:
    def test_identical(self):
        x = np.random.default_rng(0).normal(size=50)
        assert w2_empirical_1d(x, x[::-1]) == 0.0

    def test_unit_shift(self):
        assert w2_empirical_1d([0.0, 1.0], [2.0, 1.0]) == 1.0

    def test_gaussian_comparator(self):
        x = np.random.default_rng(1).normal(size=100_000)
        assert w2_empirical_1d(x, GaussianSummary(1.0, 1.0)) == pytest.approx(1.0, abs=0.02)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            w2_empirical_1d([0, 1, 2], [0, 1])
        with pytest.raises(ValueError):
            w2_empirical_1d([0.0], [0.0])

    @pytest.mark.parametrize("seed", range(5))
    def test_sorted_coupling_is_optimal(self, seed):
        # brute force over every assignment of 6 points
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=6), rng.normal(size=6) * 2 + 1
        brute = min(np.mean((a - b[list(p)]) ** 2) for p in itertools.permutations(range(6)))
        assert w2_empirical_1d(a, b) == pytest.approx(brute, rel=1e-12)

    def test_monotone_coupling_exact(self):
        rng = np.random.default_rng(7)
        a, b = np.sort(rng.random(40)), np.sort(rng.random(40))
        assert w2_empirical_1d(a, b) == sum((x - y) ** 2 for x, y in zip(a, b)) / 40


class TestGaussianDistances:
    def test_w2_examples(self):
        g = GaussianSummary
        assert gaussian_w2_sq(g(0, 1), g(0, 1)) == 0
        assert gaussian_w2_sq(g(0, 1), g(1, 1)) == 1
        assert gaussian_w2_sq(g(0, 1), g(0, 2)) == 1

    def test_w2_symmetric(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            a = GaussianSummary(rng.normal(), rng.uniform(0.1, 3))
            b = GaussianSummary(rng.normal(), rng.uniform(0.1, 3))
            assert gaussian_w2_sq(a, b) == gaussian_w2_sq(b, a) > 0

    def test_sd_must_be_positive(self):
        with pytest.raises(ValueError):
            GaussianSummary(0.0, 0.0)

    def test_kl_against_quadrature(self):
        a, b = GaussianSummary(0.2, 0.7), GaussianSummary(-0.4, 1.3)
        ref, _ = integrate.quad(lambda x: a.pdf(x) * math.log(a.pdf(x) / b.pdf(x)), -12, 12)
        assert kl_divergence(a, b) == pytest.approx(ref, rel=1e-8)

    def test_hellinger_against_quadrature(self):
        a, b = GaussianSummary(0.2, 0.7), GaussianSummary(-0.4, 1.3)
        bc, _ = integrate.quad(lambda x: math.sqrt(a.pdf(x) * b.pdf(x)), -15, 15)
        assert hellinger_sq(a, b) == pytest.approx(1 - bc, rel=1e-8)


class TestTvdSandwich:
    def test_identical(self):
        assert tvd_sandwich(GaussianSummary(1, 2), GaussianSummary(1, 2)) == (0.0, 0.0)

    def test_unit_shift(self):
        a, b = GaussianSummary(0, 1), GaussianSummary(1, 1)
        tv = quad_tvd(a, b)
        assert tv == pytest.approx(0.3829, abs=1e-4)
        lo, hi = tvd_sandwich(a, b)
        assert lo <= tv <= hi

    def test_ordered_for_many_pairs(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            a = GaussianSummary(rng.normal(scale=3), rng.uniform(0.01, 5))
            b = GaussianSummary(rng.normal(scale=3), rng.uniform(0.01, 5))
            lo, hi = tvd_sandwich(a, b)
            assert 0 <= lo <= hi <= 1

    def test_brackets_quadrature(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            a = GaussianSummary(rng.normal(), rng.uniform(0.05, 2))
            b = GaussianSummary(rng.normal(), rng.uniform(0.05, 2))
            lo, hi = tvd_sandwich(a, b)
            tv = quad_tvd(a, b)
            assert lo - 1e-6 <= tv <= hi + 1e-6


class TestRmseAndReport:
    def test_rmse_examples(self):
        assert rmse_theta([0.5] * 4, 0.5) == 0
        assert rmse_theta([0.4, 0.6], 0.5) == pytest.approx(0.1)
        x = np.random.default_rng(5).normal(0.5, 0.03, 100_000)
        assert rmse_theta(x, 0.5) == pytest.approx(0.03, rel=0.02)

    def test_diagnose(self):
        x = np.random.default_rng(6).normal(0.52, 0.03, 2000)
        rep = diagnose(x, GaussianSummary(0.5, 0.03), 0.5)
        assert rep.posterior.mean == pytest.approx(x.mean())
        assert rep.posterior.sd == pytest.approx(x.std())
        assert rep.tvd_lower <= rep.tvd_upper
        assert rep.w2_vs_target == pytest.approx(0.02**2, abs=1e-4)
        row = rep.to_row(10, 0.025, 1000, "pinn")
        assert list(row)[:5] == ["noise_level", "sigma", "n", "mode", "rmse"]
        assert json.loads(rep.to_json())["target"] == {"mean": 0.5, "sd": 0.03}

    def test_constant_samples_do_not_crash(self):
        rep = diagnose([0.5, 0.5, 0.5], GaussianSummary(0.5, 0.03), 0.5)
        assert rep.rmse == 0 and rep.tvd_upper == 1.0

    def test_report_invariant(self):
        g = GaussianSummary(0, 1)
        with pytest.raises(ValueError):
            DiagnosticsReport(0, 0, 0, 0, 0, 0.5, 0.2, g, g)


class TestRates:
    def test_inequality_tight_at_s0(self):
        for n, sigma, beta in [(10**4, 0.1, 2.0), (500, 0.5, 1.5), (10**6, 0.01, 3.0)]:
            inp = RateInputs(beta=beta, tau=0, n=n, q=10**4, sigma=sigma)
            s0 = rate_report(inp).s0
            assert inp.balanced(s0)
            assert s0 == 2 or not inp.balanced(s0 - 1)

    def test_example_values(self):
        rep = rate_report(RateInputs(beta=2, tau=0, n=10**4, q=10**4, sigma=0.1))
        assert rep.theta_rate == pytest.approx(10 ** (-8 / 3), rel=1e-12)
        assert rep.theta_rate == pytest.approx(2.15e-3, rel=0.01)
        assert rep.kappa == 1.0
        assert rep.eps0 == pytest.approx(1 / rep.s0)

    def test_boundary_tau_equals_beta(self):
        rep = rate_report(RateInputs(beta=2, tau=2, n=10**4, q=10**4, sigma=0.1))
        assert rep.kappa == 0 and rep.theta_rate == 1.0

    def test_s0_nondecreasing_in_n(self):
        s = [rate_report(RateInputs(beta=2, tau=1, n=n, q=10**5, sigma=0.2)).s0 for n in (10**2, 10**3, 10**4)]
        assert s == sorted(s)

    def test_radius(self):
        inp = RateInputs(beta=2, tau=0, n=10**4, q=10**4, sigma=0.1, b=1.0)
        rep = rate_report(inp)
        assert rep.r == pytest.approx(2 * 1.1 * math.sqrt(rep.s0 * math.log(6 * 100) / 10**4))

    def test_infeasible(self):
        with pytest.raises(RateInfeasibleError):
            rate_report(RateInputs(beta=0.1, tau=0, n=10**8, q=10, sigma=1e-4))

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            RateInputs(beta=1, tau=2, n=10, q=10, sigma=0.1)


class TestHolder:
    def test_tau_zero_returns_eps(self):
        assert holder_derivative_bound(1.0, 0.01, 2.0, 0) == (0.01, 0.0)

    @pytest.mark.parametrize("d, k", [(2, 1), (3, 2), (5, 3), (4, 4), (3, 0)])
    def test_chebyshev_product_formula(self, d, k):
        ref = chebyshev.chebval(1.0, chebyshev.chebder([0] * d + [1], k))
        assert chebyshev_derivative_at_one(d, k) == pytest.approx(ref)
        assert chebyshev_derivative_at_one(2, 1) == 4

    def test_sqrt_eps_scaling(self):
        eps = np.logspace(-6, -1, 6)
        b = [holder_derivative_bound(2.0, e, 2.0, 1)[0] for e in eps]
        slope = np.polyfit(np.log(eps), np.log(b), 1)[0]
        assert slope == pytest.approx(0.5, abs=1e-12)

    def test_integer_beta_uses_strict_floor(self):
        # β = 2 gives ⌊β⌋ = 1, so C = 2 · T'_1(1) = 2
        bound, _ = holder_derivative_bound(1.0, 1.0, 2.0, 1)
        assert bound == pytest.approx(2.0)

    def test_tau_not_below_beta(self):
        with pytest.raises(ValueError):
            holder_derivative_bound(1.0, 0.1, 2.0, 2)


@pytest.fixture(scope="module")
def spec():
    return heat_spec()


class TestErm:
    def test_noiseless_recovery(self, spec):
        for seed in range(50):
            n = int(np.random.default_rng(seed).integers(5, 200))
            res = erm_fit(spec, generate_data(spec, n, 0.0, seed), mc_points=1000, seed=seed)
            assert res.theta_hat == pytest.approx(0.5, abs=1e-6)
            assert not res.flagged

    def test_degenerate_box(self, spec):
        res = erm_fit(spec, generate_data(spec, 20, 0.1, 0), theta_box=(0.5, 0.5))
        assert res.theta_hat == 0.5 and res.l2_error == 0

    def test_noise_gives_nonzero_error(self, spec):
        res = erm_fit(spec, generate_data(spec, 100, 0.1, 3), mc_points=10_000)
        assert 0 < res.l2_error < 0.1

    def test_requires_analytic_solution(self, spec):
        with pytest.raises(ValueError):
            erm_fit(heat_spec(length=2.0), generate_data(spec, 5, 0.0, 0))
