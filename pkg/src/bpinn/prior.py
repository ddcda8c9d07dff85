"""Spike-and-slab prior on network weights and the PINN prior energy."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .net import NetworkArch, NetworkState
from .pde import CollocationSet, PdeSpec

__all__ = ["PriorConfig", "sample_prior", "log_prior_w", "pinn_energy", "boundary_misfit"]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of the joint prior.

    ``pinn_strength`` is ``λ``; ``None`` means "use the sample size", which
    is resolved per experiment cell with :meth:`with_lambda`.
    """

    q: int
    sparsity_exponent: float = 1.0
    spike_precision: float = 100.0
    theta_prior_precision: float = 1.0
    pinn_strength: float | None = None
    alpha_residual: float = 1.0
    alpha_boundary: float = 1.0

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("q must be >= 1")
        if self.sparsity_exponent < 1:
            raise ValueError("sparsity_exponent must be >= 1")
        if not self.spike_precision > 1:
            raise ValueError("spike_precision must be > 1")
        if not self.theta_prior_precision > 0:
            raise ValueError("theta_prior_precision must be > 0")
        if self.pinn_strength is not None and self.pinn_strength < 0:
            raise ValueError("pinn_strength must be >= 0")
        if self.alpha_residual < 0 or self.alpha_boundary < 0:
            raise ValueError("boundary weights must be >= 0")

    @property
    def inclusion_prob(self) -> float:
        return 1.0 / (1.0 + float(self.q) ** (self.sparsity_exponent + 1.0))

    @property
    def lam(self) -> float:
        if self.pinn_strength is None:
            raise ValueError("pinn_strength is unresolved; call with_lambda(n) first")
        return float(self.pinn_strength)

    def with_lambda(self, lam: float) -> "PriorConfig":
        return replace(self, pinn_strength=float(lam))

    @property
    def log_odds_inclusion(self) -> float:
        """``log(π_q / (1 - π_q))`` computed without cancellation."""
        return -math.log(float(self.q) ** (self.sparsity_exponent + 1.0))


def sample_prior(config: PriorConfig, arch: NetworkArch, seed: int | np.random.Generator) -> NetworkState:
    if config.q != arch.q:
        raise ValueError(f"config.q = {config.q} does not match arch.q = {arch.q}")
    rng = np.random.default_rng(seed)
    mask = rng.random(arch.q) < config.inclusion_prob
    z = rng.standard_normal(arch.q)
    w = np.where(mask, z, z / math.sqrt(config.spike_precision))
    return NetworkState(w, mask, arch)


def log_prior_w(state: NetworkState, config: PriorConfig) -> float:
    """Log density of ``(Λ, W)`` under the spike-and-slab prior, all constants kept."""
    pi = config.inclusion_prob
    rho0 = config.spike_precision
    m = state.mask
    w2 = state.weights**2
    k = int(m.sum())
    out = k * math.log(pi) + (m.size - k) * math.log1p(-pi)
    out += -0.5 * k * _LOG_2PI - 0.5 * float(w2[m].sum())
    out += 0.5 * (m.size - k) * (math.log(rho0) - _LOG_2PI) - 0.5 * rho0 * float(w2[~m].sum())
    return out


def boundary_misfit(field, spec: PdeSpec, colloc: CollocationSet) -> float:
    """``Σ_segments (1/B) Σ_k (u(s_k) - target(s_k))²``."""
    total = 0.0
    for seg in spec.boundary_segments:
        pts = colloc.boundary.get(seg.name)
        if pts is None or len(pts) == 0:
            continue
        r = field.value(pts) - seg.target(pts)
        total += float(np.mean(r * r))
    return total


def pinn_energy(field, theta, spec: PdeSpec, colloc: CollocationSet, config: PriorConfig) -> float:
    """``(λ/2)[α1 |residual|² + α2 |boundary|²] + (ρ/2)|θ|²``.

    The interior ``L²`` norm is the Monte-Carlo mean scaled by the domain
    volume; boundary terms are plain means over their ``B`` points.
    """
    if colloc.N == 0:
        raise ValueError("empty collocation set")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    ridge = 0.5 * config.theta_prior_precision * float(theta @ theta)
    lam = config.lam
    if lam == 0:
        return ridge
    res = spec.residual(field.jet(colloc.interior), theta, colloc.interior)
    interior = spec.volume * float(np.mean(res * res))
    bnd = boundary_misfit(field, spec, colloc) if config.alpha_boundary else 0.0
    return 0.5 * lam * (config.alpha_residual * interior + config.alpha_boundary * bnd) + ridge
