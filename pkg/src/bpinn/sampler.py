"""Metropolis-within-Gibbs sampler over ``(Λ, W, θ)``.

One iteration runs three blocks:

1. ``Λ``: random-scan single-coordinate flips, Metropolis-Hastings on the
   target with ``θ`` integrated out.  The flipped weight is redrawn from the
   prior component it moves into.
2. ``θ``: an exact draw from its Gaussian conditional given ``W``.
3. ``W``: one Langevin step on the active coordinates given ``θ``; inactive
   coordinates are refreshed from the spike.

During burn-in the ``W`` block can instead take noise-free Adam steps, which
moves the chain into the bulk of the posterior far faster than small-step
Langevin dynamics.  In ``non_pinn`` mode the ``W`` target carries no PDE term
and ``θ`` is only drawn, per recorded sample, from the residual regression.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from .net import NetworkArch, NetworkState, NumericalOverflowError, init_state
from .pde import CollocationSet, DataSet, PdeSpec
from .prior import PriorConfig
from .residual import (
    ConditioningError,
    ResidualSummary,
    gauss_newton_diagonal,
    joint_log_target_grad,
    marginal_w_log_target,
    residual_summary,
)

__all__ = [
    "ChainConfig",
    "ChainOutput",
    "ChainDivergenceError",
    "ThetaConditional",
    "LambdaStep",
    "MODES",
    "step_theta",
    "sgld_update",
    "step_w_sgld",
    "step_lambda",
    "run_chain",
    "posterior_summary",
]

MODES = ("pinn", "non_pinn")
_WARMUPS = ("adam", "sgld")
_PRECONDITIONERS = ("gauss_newton", "identity")


@dataclass(frozen=True)
class ChainConfig:
    """Run length, step sizes and block options of one chain.

    ``step_size=None`` resolves per data set: ``1e-2`` with the Gauss-Newton
    preconditioner, ``1e-5 * 5000 / n`` without one.
    """

    iterations: int = 250_000
    burn_in: int = 50_000
    thin: int = 20
    step_size: float | None = None
    sgld_cyclical: bool = False
    cycle_length: int = 1000
    lambda_flips_per_iter: int = 1
    seed: int = 0
    mode: str = "pinn"
    warmup: str = "adam"
    warmup_lr: float = 1e-2
    preconditioner: str = "gauss_newton"
    minibatch_fraction: float = 1.0

    def __post_init__(self):
        errs = self.violations()
        if errs:
            raise ValueError("; ".join(errs))

    def violations(self) -> list[str]:
        errs = []
        if self.iterations < 1:
            errs.append("iterations must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            errs.append("burn_in must satisfy 0 <= burn_in < iterations")
        if self.thin < 1:
            errs.append("thin must be >= 1")
        if self.step_size is not None and not self.step_size > 0:
            errs.append("step_size must be > 0")
        if self.cycle_length < 1:
            errs.append("cycle_length must be >= 1")
        if self.lambda_flips_per_iter < 0:
            errs.append("lambda_flips_per_iter must be >= 0")
        if self.mode not in MODES:
            errs.append(f"mode must be one of {MODES}")
        if self.warmup not in _WARMUPS:
            errs.append(f"warmup must be one of {_WARMUPS}")
        if not self.warmup_lr > 0:
            errs.append("warmup_lr must be > 0")
        if self.preconditioner not in _PRECONDITIONERS:
            errs.append(f"preconditioner must be one of {_PRECONDITIONERS}")
        if not 0 < self.minibatch_fraction <= 1:
            errs.append("minibatch_fraction must be in (0, 1]")
        return errs

    @property
    def n_samples(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def resolved_step(self, n: int) -> float:
        if self.step_size is not None:
            return float(self.step_size)
        if self.preconditioner == "gauss_newton":
            return 1e-2
        return 1e-5 * 5000.0 / n

    def step_at(self, k: int, n: int) -> float:
        """Step size at sampling iteration ``k`` (cosine cycles when cyclical)."""
        h = self.resolved_step(n)
        if not self.sgld_cyclical:
            return h
        phase = (k % self.cycle_length) / self.cycle_length
        return 0.5 * h * (math.cos(math.pi * phase) + 1.0)


@dataclass(frozen=True)
class ThetaConditional:
    """``N(Σ⁻¹Φ, Σ⁻¹/λ)`` from a residual summary."""

    mean: np.ndarray
    covariance: np.ndarray

    @classmethod
    def from_summary(cls, summary: ResidualSummary) -> "ThetaConditional":
        return cls(summary.theta_hat, summary.theta_cov)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        cov = 0.5 * (self.covariance + self.covariance.T)
        try:
            chol = linalg.cholesky(cov, lower=True)
        except linalg.LinAlgError as exc:
            raise ConditioningError("θ covariance is not positive definite") from exc
        return self.mean + chol @ rng.standard_normal(len(self.mean))


@dataclass
class ChainOutput:
    theta_samples: np.ndarray
    active_counts: np.ndarray
    log_target_trace: np.ndarray
    acceptance_rates: dict[str, float]
    iterations: np.ndarray
    diverged_at: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.theta_samples.shape[0]

    def to_csv(self, path) -> None:
        d = self.theta_samples.shape[1]
        names = ["theta"] if d == 1 else [f"theta_{i + 1}" for i in range(d)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", *names, "active_count", "log_target"])
            for it, th, a, lt in zip(self.iterations, self.theta_samples, self.active_counts, self.log_target_trace):
                w.writerow([int(it), *(repr(float(v)) for v in th), int(a), repr(float(lt))])

    @classmethod
    def from_csv(cls, path) -> "ChainOutput":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        names = [k for k in (rows[0].keys() if rows else ["theta"]) if k.startswith("theta")]
        return cls(
            theta_samples=np.array([[float(r[k]) for k in names] for r in rows]).reshape(len(rows), len(names)),
            active_counts=np.array([int(r["active_count"]) for r in rows], dtype=int),
            log_target_trace=np.array([float(r["log_target"]) for r in rows]),
            acceptance_rates={},
            iterations=np.array([int(r["iteration"]) for r in rows], dtype=int),
        )

    def summary_dict(self) -> dict:
        out = {"K": self.K, "acceptance_rates": self.acceptance_rates, "diverged_at": self.diverged_at}
        if self.K >= 2:
            mu, sd = posterior_summary(self)
            out.update(mu_theta=mu.tolist(), sd_theta=sd.tolist())
        out.update(self.meta)
        return out

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


class ChainDivergenceError(FloatingPointError):
    """Non-finite state or gradient; ``partial`` holds the samples recorded so far."""

    def __init__(self, iteration: int, message: str = "", partial: ChainOutput | None = None):
        super().__init__(f"chain diverged at iteration {iteration}" + (f": {message}" if message else ""))
        self.iteration = iteration
        self.partial = partial


# --------------------------------------------------------------------------
# blocks
# --------------------------------------------------------------------------


def step_theta(summary: ResidualSummary, config: PriorConfig | None, rng: np.random.Generator) -> np.ndarray:
    """Exact draw of ``θ | W`` from ``N(Σ⁻¹Φ, Σ⁻¹/(λ α1))``.

    ``config`` is accepted for symmetry with the other blocks; the strength
    is already baked into ``summary``.
    """
    return ThetaConditional.from_summary(summary).sample(rng)


def sgld_update(weights, mask, grad, h, rng, preconditioner=None, spike_precision=100.0, iteration=None):
    """Array-level Langevin step; see :func:`step_w_sgld`."""
    if not h > 0:
        raise ValueError("step size must be > 0")
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad[mask])):
        raise ChainDivergenceError(-1 if iteration is None else iteration, "non-finite gradient")
    m = 1.0 if preconditioner is None else preconditioner[mask]
    xi = rng.standard_normal(weights.shape[0])
    out = np.empty_like(weights)
    out[mask] = weights[mask] + 0.5 * h * m * grad[mask] + np.sqrt(h * m) * xi[mask]
    out[~mask] = xi[~mask] / math.sqrt(spike_precision)
    if not np.all(np.isfinite(out)):
        raise ChainDivergenceError(-1 if iteration is None else iteration, "non-finite weights")
    return out


def step_w_sgld(
    state: NetworkState,
    grad: np.ndarray,
    h: float,
    rng: np.random.Generator,
    preconditioner: np.ndarray | None = None,
    spike_precision: float = 100.0,
    iteration: int | None = None,
) -> NetworkState:
    """One Langevin step ``W += (h/2) M ∇log p + sqrt(h M) ξ`` on active coordinates.

    ``M`` is a fixed positive diagonal (identity when ``preconditioner`` is
    None).  Inactive coordinates are redrawn from the spike ``N(0, 1/ρ0)``,
    which is their exact conditional given ``Λ``.
    """
    w = sgld_update(state.weights, state.mask, grad, h, rng, preconditioner, spike_precision, iteration)
    return state.replace(weights=w)


@dataclass(frozen=True)
class LambdaStep:
    state: NetworkState
    accepted: int
    proposed: int
    log_target: float


def _component_logpdf(w: float, active: bool, spike_precision: float) -> float:
    prec = 1.0 if active else spike_precision
    return 0.5 * math.log(prec / (2.0 * math.pi)) - 0.5 * prec * w * w


def step_lambda(
    state: NetworkState,
    log_target: Callable[[NetworkState], float],
    flips: int,
    rng: np.random.Generator,
    config: PriorConfig,
    current: float | None = None,
) -> LambdaStep:
    """``flips`` random-scan MH moves ``Λ_j ← 1 - Λ_j``.

    ``log_target`` must include the spike-and-slab prior of ``(Λ, W)``.  The
    proposal redraws ``W_j`` from the prior component matching the proposed
    ``Λ_j``, and the Hastings ratio accounts for that exactly.
    """
    if flips < 1:
        raise ValueError("flips must be >= 1")
    rho0 = config.spike_precision
    q = state.arch.q
    cur = log_target(state) if current is None else current
    accepted = 0
    for _ in range(flips):
        j = int(rng.integers(q))
        new_active = not state.mask[j]
        w_new = rng.standard_normal() / (1.0 if new_active else math.sqrt(rho0))
        weights = state.weights.copy()
        mask = state.mask.copy()
        w_old = weights[j]
        weights[j] = w_new
        mask[j] = new_active
        proposal = state.replace(weights=weights, mask=mask)
        try:
            prop = log_target(proposal)
        except (NumericalOverflowError, ConditioningError):
            prop = -math.inf
        log_ratio = (
            prop
            - cur
            + _component_logpdf(w_old, not new_active, rho0)
            - _component_logpdf(w_new, new_active, rho0)
        )
        if math.log(rng.random()) < log_ratio:
            state, cur = proposal, prop
            accepted += 1
    return LambdaStep(state, accepted, flips, cur)


# --------------------------------------------------------------------------
# chain driver
# --------------------------------------------------------------------------


def _minibatch(data: DataSet, colloc: CollocationSet, fraction: float, rng):
    """Random subsets; ``noise_sd`` is rescaled so the data sum stays unbiased."""
    if fraction >= 1.0:
        return data, colloc
    m = max(1, math.ceil(fraction * data.n))
    idx = rng.choice(data.n, size=m, replace=False)
    sub_data = DataSet(data.sensors[idx], data.observations[idx], data.noise_sd * math.sqrt(m / data.n))
    k = max(1, math.ceil(fraction * colloc.N))
    jdx = rng.choice(colloc.N, size=k, replace=False)
    return sub_data, CollocationSet(colloc.interior[jdx], colloc.boundary)


def _partial_output(rec, d, flips, acc, meta, diverged_at=None) -> ChainOutput:
    K = len(rec["theta"])
    return ChainOutput(
        theta_samples=np.array(rec["theta"], dtype=float).reshape(K, d),
        active_counts=np.array(rec["active"], dtype=int),
        log_target_trace=np.array(rec["logp"], dtype=float),
        acceptance_rates={"lambda": acc / flips if flips else float("nan"), "theta": 1.0, "w": 1.0},
        iterations=np.array(rec["it"], dtype=int),
        diverged_at=diverged_at,
        meta=meta,
    )


def run_chain(
    spec: PdeSpec,
    data: DataSet,
    colloc: CollocationSet,
    prior: PriorConfig,
    chain: ChainConfig,
    arch: NetworkArch,
    initial_state: NetworkState | None = None,
) -> ChainOutput:
    """Run one chain and return the thinned post-burn-in samples.

    ``prior.pinn_strength=None`` resolves to ``λ = n``.  The recorded ``θ``
    is a fresh conditional draw given the current ``W``; in ``non_pinn`` mode
    that draw uses ``λ = n``.  Raises :class:`ChainDivergenceError` carrying
    the partial output if the state stops being finite.
    """
    if prior.q != arch.q:
        raise ValueError(f"prior.q = {prior.q} does not match arch.q = {arch.q}")
    if prior.pinn_strength is None:
        prior = prior.with_lambda(data.n)
    mode = chain.mode
    theta_cfg = prior if mode == "pinn" else prior.with_lambda(data.n)
    rng = np.random.default_rng(chain.seed)
    state = init_state(arch, rng) if initial_state is None else initial_state

    # (state, summary) pairs seen by ``target`` since the last θ step, so the
    # θ draw can reuse the summary of whichever state the Λ step kept
    seen: list = []

    def target(s, summary=None):
        if mode == "pinn":
            if summary is None:
                summary = residual_summary(s, spec, colloc, prior)
            seen.append((s, summary))
        return marginal_w_log_target(s, spec, colloc, data, prior, mode, summary)

    beta1, beta2 = 0.9, 0.999
    m1 = np.zeros(arch.q)
    m2 = np.zeros(arch.q)
    precond = None
    rec = {"theta": [], "active": [], "logp": [], "it": []}
    flips_total = acc_total = 0
    current = None
    meta = {"mode": mode, "step_size": chain.resolved_step(data.n), "lambda": prior.lam}
    it = 0
    try:
        for it in range(chain.iterations):
            if chain.lambda_flips_per_iter:
                ls = step_lambda(state, target, chain.lambda_flips_per_iter, rng, prior, current)
                state, current = ls.state, ls.log_target
                flips_total += ls.proposed
                acc_total += ls.accepted
            theta = None
            if mode == "pinn":
                summary = next((sm for st, sm in seen if st is state), None)
                if summary is None:
                    summary = residual_summary(state, spec, colloc, prior)
                theta = step_theta(summary, prior, rng)
            seen.clear()
            bd, bc = _minibatch(data, colloc, chain.minibatch_fraction, rng)
            _, grad = joint_log_target_grad(state, theta, spec, bc, bd, prior, mode)
            if it < chain.burn_in and chain.warmup == "adam":
                if not np.all(np.isfinite(grad)):
                    raise ChainDivergenceError(it, "non-finite gradient")
                m1 = beta1 * m1 + (1 - beta1) * grad
                m2 = beta2 * m2 + (1 - beta2) * grad * grad
                mh = m1 / (1 - beta1 ** (it + 1))
                vh = m2 / (1 - beta2 ** (it + 1))
                lr = chain.warmup_lr * 0.5 * (1.0 + math.cos(math.pi * it / chain.burn_in)) + 1e-2 * chain.warmup_lr
                state = state.replace(weights=state.weights + lr * mh / (np.sqrt(vh) + 1e-8))
            else:
                k = max(0, it - chain.burn_in)
                if chain.preconditioner == "gauss_newton" and (precond is None or it == chain.burn_in):
                    precond = 1.0 / gauss_newton_diagonal(state, theta, spec, colloc, data, prior, mode)
                state = step_w_sgld(state, grad, chain.step_at(k, data.n), rng, precond, prior.spike_precision, it)
            current = None

            if it >= chain.burn_in and (it - chain.burn_in + 1) % chain.thin == 0:
                summary = residual_summary(state, spec, colloc, theta_cfg)
                rec["theta"].append(step_theta(summary, theta_cfg, rng))
                current = target(state, summary if mode == "pinn" else None)
                if not math.isfinite(current):
                    raise ChainDivergenceError(it, "non-finite log target")
                rec["logp"].append(current)
                rec["active"].append(state.active_count)
                rec["it"].append(it + 1)
    except ChainDivergenceError as exc:
        exc.iteration = it if exc.iteration < 0 else exc.iteration
        exc.partial = _partial_output(rec, spec.d, flips_total, acc_total, meta, exc.iteration)
        raise
    except (NumericalOverflowError, ConditioningError, FloatingPointError) as exc:
        raise ChainDivergenceError(
            it, str(exc), _partial_output(rec, spec.d, flips_total, acc_total, meta, it)
        ) from exc
    return _partial_output(rec, spec.d, flips_total, acc_total, meta)


def posterior_summary(output: ChainOutput) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and population standard deviation (``1/K``) of the ``θ`` draws."""
    if output.K < 2:
        raise ValueError("posterior_summary needs at least 2 samples")
    th = output.theta_samples
    mu = th.mean(axis=0)
    sd = np.sqrt(np.mean((th - mu) ** 2, axis=0))
    return mu, sd
