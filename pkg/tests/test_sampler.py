import itertools
import json
import math

import numpy as np
import pytest

from bpinn.net import NetworkArch, NetworkState
from bpinn.pde import generate_data, heat_spec, sample_collocation
from bpinn.prior import PriorConfig, log_prior_w
from bpinn.residual import ConditioningError, ResidualSummary
from bpinn.sampler import (
    ChainConfig,
    ChainDivergenceError,
    ChainOutput,
    ThetaConditional,
    posterior_summary,
    run_chain,
    sgld_update,
    step_lambda,
    step_theta,
    step_w_sgld,
)


def batch_means_se(x, batches=50):
    x = np.asarray(x, dtype=float)
    m = len(x) // batches
    bm = x[: m * batches].reshape(batches, m).mean(axis=1)
    return bm.std(ddof=1) / math.sqrt(batches)


class TestChainConfig:
    def test_sample_count(self):
        assert ChainConfig(iterations=1000, burn_in=200, thin=20).n_samples == 40

    @pytest.mark.parametrize(
        "kw",
        [
            dict(thin=0),
            dict(iterations=100, burn_in=100),
            dict(step_size=0.0),
            dict(mode="other"),
            dict(warmup="sgd"),
            dict(preconditioner="adam"),
            dict(minibatch_fraction=0.0),
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ChainConfig(**kw)

    def test_default_step_sizes(self):
        assert ChainConfig().resolved_step(100) == 1e-2
        assert ChainConfig(preconditioner="identity").resolved_step(5000) == pytest.approx(1e-5)
        assert ChainConfig(preconditioner="identity").resolved_step(500) == pytest.approx(1e-4)

    def test_cyclical_schedule(self):
        c = ChainConfig(step_size=0.1, sgld_cyclical=True, cycle_length=4)
        steps = [c.step_at(k, 100) for k in range(8)]
        assert steps[0] == steps[4] == pytest.approx(0.1)
        assert steps[2] == pytest.approx(0.05)
        assert all(s > 0 for s in steps)


class TestThetaStep:
    def test_example_moments(self):
        s = ResidualSummary.from_moments([1.0], [[2.0]], strength=100)
        rng = np.random.default_rng(0)
        draws = np.array([step_theta(s, None, rng)[0] for _ in range(20_000)])
        sd = math.sqrt(1 / 200)
        assert abs(draws.mean() - 0.5) < 3 * sd / math.sqrt(len(draws))
        assert draws.std() == pytest.approx(sd, rel=0.03)

    def test_strong_strength_collapses(self):
        s = ResidualSummary.from_moments([1.0], [[2.0]], strength=1e14)
        draws = [step_theta(s, None, np.random.default_rng(i))[0] for i in range(20)]
        np.testing.assert_allclose(draws, 0.5, atol=1e-6)

    def test_zero_phi_zero_mean(self):
        s = ResidualSummary.from_moments([0.0, 0.0], np.diag([1.0, 3.0]), strength=10)
        np.testing.assert_array_equal(ThetaConditional.from_summary(s).mean, 0.0)

    def test_bad_covariance(self):
        c = ThetaConditional(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))
        with pytest.raises(ConditioningError):
            c.sample(np.random.default_rng(0))


class TestSgld:
    arch = NetworkArch((2, 4, 1))  # q = 17

    def test_pure_diffusion(self):
        rng = np.random.default_rng(1)
        q = self.arch.q
        state = NetworkState.dense(self.arch, np.zeros(q))
        inc = np.array([step_w_sgld(state, np.zeros(q), 1e-4, rng).weights for _ in range(2000)])
        assert inc.std() == pytest.approx(0.01, rel=0.03)

    def test_inactive_refreshed_from_spike(self):
        rng = np.random.default_rng(2)
        mask = np.zeros(self.arch.q, bool)
        state = NetworkState(np.full(self.arch.q, 5.0), mask, self.arch)
        draws = np.array([step_w_sgld(state, np.ones(self.arch.q), 0.1, rng, spike_precision=100).weights
                          for _ in range(3000)])
        assert abs(draws.mean()) < 0.01
        assert draws.std() == pytest.approx(0.1, rel=0.05)

    def test_empty_mask_gets_no_drift(self):
        w = np.arange(self.arch.q, dtype=float)
        out = sgld_update(w, np.zeros(self.arch.q, bool), np.full(self.arch.q, 1e3), 1.0, np.random.default_rng(0))
        assert np.abs(out).max() < 1.0  # spike draws only

    def test_non_finite_gradient(self):
        state = NetworkState.dense(self.arch, np.zeros(self.arch.q))
        g = np.zeros(self.arch.q)
        g[3] = np.nan
        with pytest.raises(ChainDivergenceError) as info:
            step_w_sgld(state, g, 0.1, np.random.default_rng(0), iteration=17)
        assert info.value.iteration == 17

    def test_gaussian_stationary_variance(self):
        # log p = -w²/2 per coordinate; 17 independent coordinates pooled
        rng = np.random.default_rng(3)
        mask = np.ones(self.arch.q, bool)
        w = np.zeros(self.arch.q)
        acc = np.zeros(self.arch.q)
        acc2 = np.zeros(self.arch.q)
        burn, steps = 5_000, 200_000
        for i in range(burn + steps):
            w = sgld_update(w, mask, -w, 1e-2, rng)
            if i >= burn:
                acc += w
                acc2 += w * w
        var = acc2.sum() / (steps * self.arch.q) - (acc.sum() / (steps * self.arch.q)) ** 2
        # ULA on N(0,1) is stationary at variance 1/(1 - h/4)
        assert var == pytest.approx(1 / (1 - 1e-2 / 4), abs=0.05)


class TestLambdaStep:
    arch = NetworkArch((2, 1))  # q = 3, π = 0.1

    def _proposal_density_target(self, state):
        cfg = PriorConfig(q=3)
        return sum(
            -0.5 * w * w - 0.5 * math.log(2 * math.pi) if m
            else 0.5 * math.log(cfg.spike_precision / (2 * math.pi)) - 0.5 * cfg.spike_precision * w * w
            for w, m in zip(state.weights, state.mask)
        )

    def test_matched_target_always_accepts(self):
        cfg = PriorConfig(q=3)
        state = NetworkState(np.zeros(3), np.array([True, False, True]), self.arch)
        res = step_lambda(state, self._proposal_density_target, 200, np.random.default_rng(0), cfg)
        assert res.accepted == res.proposed == 200

    def test_requires_a_flip(self):
        with pytest.raises(ValueError):
            step_lambda(NetworkState.dense(self.arch, np.zeros(3)), lambda s: 0.0, 0, np.random.default_rng(0),
                        PriorConfig(q=3))

    def test_occupation_matches_enumeration(self):
        cfg = PriorConfig(q=3)
        bonus = {0: 0.0, 1: 1.5, 2: 2.0, 3: -1.0}

        def target(s):
            return log_prior_w(s, cfg) + bonus[int(s.mask.sum())] + 0.7 * float(s.mask[0])

        pi = cfg.inclusion_prob
        states = list(itertools.product([False, True], repeat=3))
        logp = np.array([sum(m) * math.log(pi) + (3 - sum(m)) * math.log1p(-pi) + bonus[sum(m)] + 0.7 * m[0]
                         for m in states])
        exact = np.exp(logp - logp.max())
        exact /= exact.sum()

        rng = np.random.default_rng(4)
        state = NetworkState(np.zeros(3), np.zeros(3, bool), self.arch)
        cur = target(state)
        visits = np.empty(100_000, dtype=int)
        acc = 0
        for i in range(len(visits)):
            res = step_lambda(state, target, 1, rng, cfg, cur)
            state, cur = res.state, res.log_target
            acc += res.accepted
            visits[i] = int(state.mask[0]) * 4 + int(state.mask[1]) * 2 + int(state.mask[2])
        assert 0 < acc / len(visits) < 1
        for k, m in enumerate(states):
            ind = visits == k
            se = batch_means_se(ind.astype(float))
            assert abs(ind.mean() - exact[k]) < 3 * se + 1e-3, (m, ind.mean(), exact[k])


@pytest.fixture(scope="module")
def small_problem():
    spec = heat_spec()
    data = generate_data(spec, 500, 0.025, seed=1)
    colloc = sample_collocation(spec, N=300, B=32, seed=2)
    arch = NetworkArch.mlp(depth=3, width=6)
    return spec, data, colloc, arch


class TestRunChain:
    def test_smoke_trace_finite(self, small_problem):
        spec, data, colloc, arch = small_problem
        cfg = ChainConfig(iterations=2000, burn_in=1000, thin=10, seed=5)
        out = run_chain(spec, data, colloc, PriorConfig(q=arch.q), cfg, arch)
        assert out.K == 100 == cfg.n_samples
        assert np.all(np.isfinite(out.log_target_trace))
        assert np.all(np.isfinite(out.theta_samples))
        assert 0 <= out.acceptance_rates["lambda"] <= 1
        assert np.all((out.active_counts >= 0) & (out.active_counts <= arch.q))
        assert out.meta["lambda"] == 500

    @pytest.mark.parametrize("mode", ["pinn", "non_pinn"])
    def test_deterministic(self, small_problem, mode):
        spec, data, colloc, arch = small_problem
        cfg = ChainConfig(iterations=300, burn_in=100, thin=5, seed=9, mode=mode, minibatch_fraction=0.5)
        a = run_chain(spec, data, colloc, PriorConfig(q=arch.q), cfg, arch)
        b = run_chain(spec, data, colloc, PriorConfig(q=arch.q), cfg, arch)
        np.testing.assert_array_equal(a.theta_samples, b.theta_samples)
        np.testing.assert_array_equal(a.log_target_trace, b.log_target_trace)
        np.testing.assert_array_equal(a.active_counts, b.active_counts)

    def test_different_seeds_differ(self, small_problem):
        spec, data, colloc, arch = small_problem
        runs = [run_chain(spec, data, colloc, PriorConfig(q=arch.q),
                          ChainConfig(iterations=200, burn_in=100, thin=10, seed=s), arch) for s in (1, 2)]
        assert not np.array_equal(runs[0].theta_samples, runs[1].theta_samples)

    def test_divergence_keeps_partial_trace(self, small_problem):
        spec, data, colloc, arch = small_problem
        cfg = ChainConfig(iterations=400, burn_in=10, thin=1, seed=0, warmup="sgld", preconditioner="identity",
                          step_size=50.0, lambda_flips_per_iter=0)
        with pytest.raises(ChainDivergenceError) as info:
            with np.errstate(all="ignore"):
                run_chain(spec, data, colloc, PriorConfig(q=arch.q), cfg, arch)
        err = info.value
        assert err.partial is not None
        assert err.partial.diverged_at == err.iteration
        assert err.partial.K <= err.iteration

    def test_q_mismatch(self, small_problem):
        spec, data, colloc, arch = small_problem
        with pytest.raises(ValueError):
            run_chain(spec, data, colloc, PriorConfig(q=3), ChainConfig(iterations=2, burn_in=1), arch)


class TestOutput:
    def _output(self, theta):
        theta = np.asarray(theta, float).reshape(-1, 1)
        K = len(theta)
        return ChainOutput(theta, np.arange(K), -np.arange(K, dtype=float), {"lambda": 0.5}, np.arange(K) * 10)

    def test_constant_samples(self):
        mu, sd = posterior_summary(self._output([0.3] * 5))
        assert mu[0] == pytest.approx(0.3) and sd[0] == 0.0

    def test_two_point(self):
        mu, sd = posterior_summary(self._output([0.0, 1.0]))
        assert mu[0] == 0.5 and sd[0] == 0.5

    def test_needs_two(self):
        with pytest.raises(ValueError):
            posterior_summary(self._output([1.0]))

    def test_clt(self):
        x = np.random.default_rng(0).normal(0.5, 0.01, 100_000)
        mu, _ = posterior_summary(self._output(x))
        assert abs(mu[0] - 0.5) < 3 * 0.01 / math.sqrt(len(x))

    def test_csv_and_json(self, tmp_path):
        out = self._output([0.1, 0.2, 0.3])
        out.to_csv(tmp_path / "t.csv")
        back = ChainOutput.from_csv(tmp_path / "t.csv")
        np.testing.assert_array_equal(back.theta_samples, out.theta_samples)
        np.testing.assert_array_equal(back.iterations, out.iterations)
        assert (tmp_path / "t.csv").read_text().splitlines()[0] == "iteration,theta,active_count,log_target"
        out.to_json(tmp_path / "s.json")
        js = json.loads((tmp_path / "s.json").read_text())
        assert js["mu_theta"] == pytest.approx([0.2])
        assert js["acceptance_rates"] == {"lambda": 0.5}
