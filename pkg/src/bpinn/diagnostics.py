"""Posterior diagnostics and rate calculators.

Distances between one-dimensional Gaussians are closed-form.  The empirical
Wasserstein distance uses the sorted (monotone) coupling, which is the exact
optimal transport plan on the line.  All Wasserstein values here are
*squared* distances.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize, stats

from .pde import CollocationSet, DataSet, PdeSpec, sample_collocation
from .prior import PriorConfig
from .residual import residual_summary

__all__ = [
    "GaussianSummary",
    "DiagnosticsReport",
    "RateInputs",
    "RateReport",
    "RateInfeasibleError",
    "ErmResult",
    "sigma_star",
    "bvm_target",
    "w2_empirical_1d",
    "gaussian_w2_sq",
    "hellinger_sq",
    "kl_divergence",
    "tvd_sandwich",
    "rmse_theta",
    "diagnose",
    "rate_report",
    "chebyshev_derivative_at_one",
    "holder_derivative_bound",
    "erm_fit",
]


@dataclass(frozen=True)
class GaussianSummary:
    mean: float
    sd: float

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError(f"sd must be > 0, got {self.sd}")

    def pdf(self, x):
        return stats.norm.pdf(x, self.mean, self.sd)


# --------------------------------------------------------------------------
# Gaussian comparator
# --------------------------------------------------------------------------


def sigma_star(spec: PdeSpec, n: int, analytic: bool = True, N: int = 100_000, seed: int = 0, rho: float = 1.0) -> float:
    """``Σ*`` for ``λ = n``: the residual Gram at the true solution plus ``ρ/n``.

    The closed form covers the heat problem on ``(0, T) x (0, π)``, where
    ``∫∫ (u_xx)² = (π/2)(1 - e^{-2θT})/(2θ)``.  Otherwise ``Σ*`` is a
    Monte-Carlo estimate over ``N`` uniform interior points.
    """
    if spec.d != 1:
        raise ValueError("only scalar θ is supported")
    if analytic:
        if spec.name != "heat" or spec.analytic_solution is None:
            raise ValueError("closed-form Σ* is only available for the heat problem")
        th = float(spec.true_theta[0])
        (t0, t1), _ = spec.bounds
        T = t1 - t0
        time_part = T if th == 0 else (1.0 - math.exp(-2.0 * th * T)) / (2.0 * th)
        return 0.5 * math.pi * time_part + rho / n
    if spec.analytic_solution is None:
        raise ValueError(f"problem {spec.name!r} has no analytic solution")
    colloc = sample_collocation(spec, N=N, B=1, seed=seed)
    cfg = PriorConfig(q=1, theta_prior_precision=rho, pinn_strength=float(n))
    summ = residual_summary(spec.analytic_solution(spec.true_theta), spec, colloc, cfg)
    return float(summ.sigma[0, 0])


def bvm_target(spec: PdeSpec, n: int, analytic: bool = True, **kwargs) -> GaussianSummary:
    """Asymptotic ``θ`` posterior ``N(θ*, Σ*⁻¹/n)`` under ``λ = n``."""
    s = sigma_star(spec, n, analytic=analytic, **kwargs)
    return GaussianSummary(float(spec.true_theta[0]), math.sqrt(1.0 / (n * s)))


# --------------------------------------------------------------------------
# distances
# --------------------------------------------------------------------------


def w2_empirical_1d(samples_a, samples_b) -> float:
    """Squared 2-Wasserstein distance between two equal-size samples.

    ``samples_b`` may be a :class:`GaussianSummary`; it is then replaced by
    its quantiles at ``(i - 1/2)/K``.
    """
    a = np.sort(np.asarray(samples_a, dtype=float).ravel())
    K = a.size
    if K < 2:
        raise ValueError("need at least 2 samples")
    if isinstance(samples_b, GaussianSummary):
        b = stats.norm.ppf((np.arange(1, K + 1) - 0.5) / K, samples_b.mean, samples_b.sd)
    else:
        b = np.sort(np.asarray(samples_b, dtype=float).ravel())
        if b.size != K:
            raise ValueError(f"sample sizes differ: {K} vs {b.size}")
    return float(np.mean((a - b) ** 2))


def gaussian_w2_sq(a: GaussianSummary, b: GaussianSummary) -> float:
    return (a.mean - b.mean) ** 2 + (a.sd - b.sd) ** 2


def hellinger_sq(a: GaussianSummary, b: GaussianSummary) -> float:
    s = a.sd**2 + b.sd**2
    h = 1.0 - math.sqrt(2.0 * a.sd * b.sd / s) * math.exp(-((a.mean - b.mean) ** 2) / (4.0 * s))
    return max(h, 0.0)


def kl_divergence(a: GaussianSummary, b: GaussianSummary) -> float:
    """``KL(a ‖ b)``; ``inf`` when ``b`` is numerically degenerate."""
    with np.errstate(divide="ignore", over="ignore"):
        kl = np.log(b.sd / a.sd) + (a.sd**2 + (a.mean - b.mean) ** 2) / (2.0 * b.sd**2) - 0.5
    return max(float(kl), 0.0)


def tvd_sandwich(a: GaussianSummary, b: GaussianSummary) -> tuple[float, float]:
    """Bounds ``H² ≤ TV ≤ min(1, sqrt(KL(a‖b)/2), sqrt(KL(b‖a)/2))``."""
    lower = hellinger_sq(a, b)
    upper = min(1.0, math.sqrt(kl_divergence(a, b) / 2.0), math.sqrt(kl_divergence(b, a) / 2.0))
    return lower, upper


def rmse_theta(samples, theta_star: float) -> float:
    s = np.asarray(samples, dtype=float).ravel()
    if s.size < 1:
        raise ValueError("need at least one sample")
    return float(np.sqrt(np.mean((s - theta_star) ** 2)))


@dataclass(frozen=True)
class DiagnosticsReport:
    rmse: float
    w2_vs_target: float
    hellinger_sq: float
    kl_fwd: float
    kl_rev: float
    tvd_lower: float
    tvd_upper: float
    posterior: GaussianSummary
    target: GaussianSummary

    def __post_init__(self):
        if not 0 <= self.tvd_lower <= self.tvd_upper <= 1:
            raise ValueError(f"invalid TVD bounds ({self.tvd_lower}, {self.tvd_upper})")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_row(self, noise_level, sigma, n, mode) -> dict:
        return {
            "noise_level": noise_level,
            "sigma": sigma,
            "n": n,
            "mode": mode,
            "rmse": self.rmse,
            "w2_sq": self.w2_vs_target,
            "tvd_lower": self.tvd_lower,
            "tvd_upper": self.tvd_upper,
            "mu_theta": self.posterior.mean,
            "sd_theta": self.posterior.sd,
        }


def diagnose(samples, target: GaussianSummary, theta_star: float) -> DiagnosticsReport:
    """Compare ``θ`` draws with the Gaussian ``target``.

    The TVD and KL figures use the normal approximation ``N(mean, sd²)`` of
    the draws (population sd); the Wasserstein figure uses the draws directly.
    """
    s = np.asarray(samples, dtype=float).ravel()
    mu = float(s.mean())
    sd = float(np.sqrt(np.mean((s - mu) ** 2)))
    post = GaussianSummary(mu, max(sd, np.finfo(float).tiny))
    lo, hi = tvd_sandwich(post, target)
    return DiagnosticsReport(
        rmse=rmse_theta(s, theta_star),
        w2_vs_target=w2_empirical_1d(s, target),
        hellinger_sq=hellinger_sq(post, target),
        kl_fwd=kl_divergence(post, target),
        kl_rev=kl_divergence(target, post),
        tvd_lower=lo,
        tvd_upper=hi,
        posterior=post,
        target=target,
    )


# --------------------------------------------------------------------------
# rates
# --------------------------------------------------------------------------


class RateInfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class RateInputs:
    """Inputs of the sparsity-level and radius calculators.

    ``V1=None`` means ``V1 = s0``; ``V2=None`` means ``V2 = 6 b``.
    """

    beta: float
    tau: int
    n: int
    q: int
    sigma: float
    m: int = 2
    sparsity_exponent: float = 1.0
    c_approx: float = 1.0
    b: float = 1.0
    V1: float | None = None
    V2: float | None = None

    def __post_init__(self):
        if not (self.beta > 0 and self.sigma > 0 and self.c_approx > 0 and self.b > 0):
            raise ValueError("beta, sigma, c_approx and b must be > 0")
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be >= 1")
        if self.q < 2:
            raise ValueError("q must be >= 2 so that log q > 0")
        if not 0 <= self.tau <= self.beta:
            raise ValueError("need 0 <= tau <= beta")
        if self.sparsity_exponent < 1:
            raise ValueError("sparsity_exponent must be >= 1")

    def approx_error(self, s) -> float:
        """``ε(s) = c s^{-β/m}``."""
        return self.c_approx * float(s) ** (-self.beta / self.m)

    def estimation_error(self, s) -> float:
        return self.sigma * math.sqrt(self.sparsity_exponent * s * math.log(self.q) / self.n)

    def balanced(self, s) -> bool:
        return self.approx_error(s) <= self.estimation_error(s)


@dataclass(frozen=True)
class RateReport:
    s0: int
    eps0: float
    r: float
    kappa: float
    theta_rate: float
    theta_rate_exponent: float


def rate_report(inputs: RateInputs) -> RateReport:
    """``s0`` balances approximation and estimation error; the rest follow from it."""
    lo, hi = 2, inputs.q
    if not inputs.balanced(hi):
        raise RateInfeasibleError(
            f"no s in [2, q={inputs.q}] with c s^(-β/m) <= σ sqrt(u s log q / n)"
        )
    # the predicate is monotone in s, so bisect for the first feasible value
    while lo < hi:
        mid = (lo + hi) // 2
        if inputs.balanced(mid):
            hi = mid
        else:
            lo = mid + 1
    s0 = lo
    V1 = float(s0) if inputs.V1 is None else inputs.V1
    V2 = 6.0 * inputs.b if inputs.V2 is None else inputs.V2
    log_term = math.log(V2 * math.sqrt(inputs.n))
    if log_term <= 0:
        raise RateInfeasibleError("V2 sqrt(n) must exceed 1")
    r = 2.0 * (inputs.b + inputs.sigma) * math.sqrt(V1 * log_term / inputs.n)
    expo = -2.0 * (inputs.beta - inputs.tau) / (inputs.m + 2.0 * inputs.beta)
    return RateReport(
        s0=s0,
        eps0=inputs.approx_error(s0),
        r=r,
        kappa=1.0 - inputs.tau / inputs.beta,
        theta_rate=float(inputs.n) ** expo,
        theta_rate_exponent=expo,
    )


def chebyshev_derivative_at_one(d: int, k: int) -> float:
    """``T_d^{(k)}(1) = Π_{j<k} (d² - j²)/(2j + 1)``."""
    out = 1.0
    for j in range(k):
        out *= (d * d - j * j) / (2 * j + 1)
    return out


def _floor_strict(beta: float) -> int:
    """Largest integer strictly below ``beta``."""
    return math.ceil(beta) - 1


def holder_derivative_bound(M: float, eps: float, beta: float, tau: int) -> tuple[float, float]:
    """Bound on the ``τ``-th derivative of a ``β``-Hölder function that is ``ε``-small.

    Returns ``(C M^{τ/β} ε^{(β-τ)/β}, ᾱ)`` where ``C = (β/τ) T_{⌊β⌋}^{(τ)}(1)``
    for ``τ ≥ 1`` (``C = 1`` at ``τ = 0``) and
    ``ᾱ = (τ ε ⌊β⌋! / (2 M (β - τ)))^{1/β}``.
    """
    if not (M > 0 and eps > 0):
        raise ValueError("M and eps must be > 0")
    if tau < 0 or tau >= beta:
        raise ValueError(f"need 0 <= tau < beta, got tau={tau}, beta={beta}")
    fb = _floor_strict(beta)
    C = 1.0 if tau == 0 else (beta / tau) * chebyshev_derivative_at_one(fb, tau)
    bound = C * M ** (tau / beta) * eps ** ((beta - tau) / beta)
    alpha_bar = (tau * eps * math.factorial(fb) / (2.0 * M * (beta - tau))) ** (1.0 / beta)
    return bound, alpha_bar


# --------------------------------------------------------------------------
# ERM baseline
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ErmResult:
    theta_hat: float
    l2_error: float
    loss: float
    flagged: bool = False


def erm_fit(
    spec: PdeSpec,
    data: DataSet,
    theta_box: tuple[float, float] = (0.01, 2.0),
    tol: float = 1e-8,
    mc_points: int = 100_000,
    seed: int = 0,
    starts: int = 4,
) -> ErmResult:
    """Least-squares fit of ``u_θ`` to the data over ``θ`` in ``theta_box``.

    A bounded Brent search runs over the full box and over ``starts`` equal
    sub-intervals.  If a sub-interval finds a strictly lower loss the loss is
    not unimodal; that result is returned with ``flagged=True``.
    ``l2_error`` is ``|u_θ̂ - u_θ*|`` in ``L²(Ω)`` by Monte Carlo.
    """
    if spec.analytic_solution is None:
        raise ValueError(f"problem {spec.name!r} has no analytic solution")
    lo, hi = map(float, theta_box)
    if lo > hi:
        raise ValueError("theta_box must have lo <= hi")

    def loss(th):
        r = data.observations - spec.analytic_solution(np.array([th])).value(data.sensors)
        return float(np.mean(r * r))

    def search(a, b):
        if b - a <= tol:
            return 0.5 * (a + b)
        res = optimize.minimize_scalar(loss, bounds=(a, b), method="bounded", options={"xatol": tol})
        return float(res.x)

    best = search(lo, hi)
    flagged = False
    if hi - lo > tol and starts > 1:
        edges = np.linspace(lo, hi, starts + 1)
        local = [search(a, b) for a, b in zip(edges[:-1], edges[1:])]
        cand = min(local, key=loss)
        if loss(cand) < loss(best) - 1e-12 * max(1.0, loss(best)):
            best, flagged = cand, True

    pts = sample_collocation(spec, N=mc_points, B=1, seed=seed).interior
    diff = spec.analytic_solution(np.array([best])).value(pts) - spec.analytic_solution(spec.true_theta).value(pts)
    l2 = math.sqrt(spec.volume * float(np.mean(diff * diff)))
    return ErmResult(best, l2, loss(best), flagged)
