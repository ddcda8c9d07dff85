"""Monte-Carlo residual statistics and the (collapsed) posterior energies.

For a field ``u`` write ``f̄ = f - H0 u``.  With inner products estimated by
volume-scaled Monte-Carlo means over the interior collocation points,

    Φ = <f̄, H1 u>,   Σ = <H1 u, H1 u> + ρ/(λ α1) I,
    J(u) = |f̄|² - Φᵀ Σ⁻¹ Φ,

and ``θ | W`` is Gaussian with mean ``Σ⁻¹Φ`` and covariance ``Σ⁻¹/(λ α1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .net import Jet2, JetTerm, NetworkState, per_point_gradient_sq, value_and_gradient
from .pde import CollocationSet, DataSet, PdeSpec
from .prior import PriorConfig, boundary_misfit, log_prior_w

__all__ = [
    "ConditioningError",
    "ResidualSummary",
    "residual_summary",
    "data_misfit",
    "marginal_w_log_target",
    "joint_log_target_grad",
    "energy_terms",
    "gauss_newton_diagonal",
    "residual_strength",
]


class ConditioningError(np.linalg.LinAlgError):
    """``Σ_W`` is not numerically positive definite."""


@dataclass(frozen=True)
class ResidualSummary:
    phi: np.ndarray
    sigma: np.ndarray
    fbar_sq: float
    j_value: float
    strength: float
    _chol: np.ndarray

    @classmethod
    def from_moments(cls, phi, sigma, strength: float, fbar_sq: float = 0.0) -> "ResidualSummary":
        """Build a summary from given ``Φ`` and ``Σ`` (``Σ`` already includes the ridge)."""
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        try:
            chol = linalg.cholesky(sigma, lower=True)
        except linalg.LinAlgError as exc:
            raise ConditioningError(f"Σ_W is not positive definite: {sigma!r}") from exc
        z = linalg.solve_triangular(chol, phi, lower=True)
        return cls(phi, sigma, float(fbar_sq), float(fbar_sq) - float(z @ z), float(strength), chol)

    @property
    def theta_hat(self) -> np.ndarray:
        """``Σ⁻¹ Φ``."""
        return linalg.cho_solve((self._chol, True), self.phi)

    @property
    def logdet_sigma(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self._chol))))

    @property
    def theta_cov(self) -> np.ndarray:
        """``Σ⁻¹ / (λ α1)``."""
        return linalg.cho_solve((self._chol, True), np.eye(len(self.phi))) / self.strength


def _summarize(h1u: np.ndarray, fbar: np.ndarray, volume: float, ridge: float, strength: float) -> ResidualSummary:
    n_pts, d = h1u.shape
    phi = volume * (h1u.T @ fbar) / n_pts
    sigma = volume * (h1u.T @ h1u) / n_pts + ridge * np.eye(d)
    fbar_sq = volume * float(fbar @ fbar) / n_pts
    if not (np.all(np.isfinite(sigma)) and np.all(np.isfinite(phi))):
        raise ConditioningError(f"Σ_W is not finite: {sigma!r}")
    return ResidualSummary.from_moments(phi, sigma, strength, fbar_sq)


def residual_strength(config: PriorConfig) -> float:
    """Effective precision multiplier ``λ α1`` of the residual term."""
    return config.lam * config.alpha_residual


def residual_summary(field, spec: PdeSpec, colloc: CollocationSet, config: PriorConfig, jet: Jet2 | None = None) -> ResidualSummary:
    """``(Φ_W, Σ_W, |f̄_W|², J(u_W))`` from the interior collocation points.

    ``jet`` may be passed when the interior jets are already available.
    """
    strength = residual_strength(config)
    if strength <= 0:
        raise ConditioningError("λ α1 must be positive to form Σ_W")
    if colloc.N < spec.d:
        raise ConditioningError(f"need N >= d collocation points, got N = {colloc.N}")
    pts = colloc.interior
    if jet is None:
        jet = field.jet(pts)
    h1u = spec.apply_h1(jet)
    fbar = spec.forcing(pts) - spec.apply_h0(jet)
    ridge = config.theta_prior_precision / strength
    return _summarize(h1u, fbar, spec.volume, ridge, strength)


def data_misfit(field, data: DataSet) -> float:
    """``Σ (Y_i - u(s_i))² / (2σ²)``."""
    if not data.noise_sd > 0:
        raise ValueError("data misfit needs a positive noise_sd")
    r = data.observations - field.value(data.sensors)
    return float(r @ r) / (2.0 * data.noise_sd**2)


def marginal_w_log_target(
    state: NetworkState,
    spec: PdeSpec,
    colloc: CollocationSet,
    data: DataSet,
    config: PriorConfig,
    mode: str = "pinn",
    summary: ResidualSummary | None = None,
) -> float:
    """Log density of ``(Λ, W)`` with ``θ`` integrated out, up to a constant.

    In ``non_pinn`` mode (or with ``λ = 0``) the residual block is skipped and
    the target is prior plus data likelihood only.
    """
    out = log_prior_w(state, config) - data_misfit(state, data)
    if mode == "non_pinn" or config.lam == 0:
        return out
    if summary is None:
        summary = residual_summary(state, spec, colloc, config)
    lam = config.lam
    out -= 0.5 * summary.logdet_sigma
    out -= 0.5 * residual_strength(config) * summary.j_value
    if config.alpha_boundary:
        out -= 0.5 * lam * config.alpha_boundary * boundary_misfit(state, spec, colloc)
    return out


def _interior_term(spec, colloc, theta, scale, gauss_newton=False):
    """``scale * mean(residual²)`` over the interior points as a jet term.

    With ``gauss_newton`` the adjoint is the per-point residual Jacobian
    seed ``∂r/∂jet · sqrt(2 scale / N)`` instead (see ``per_point_gradient_sq``).
    """
    pts = colloc.interior
    coef = spec.h0 + np.atleast_1d(theta) @ spec.h1
    f = spec.forcing(pts)
    n_pts = pts.shape[0]

    if gauss_newton:
        c = coef * math.sqrt(2.0 * scale / n_pts)
        return JetTerm(pts, lambda jet: (0.0, Jet2(np.full_like(jet.value, c[0]), c[1], c[2], c[3])),
                       order=2 if np.any(coef[1:] != 0) else 0)

    def fn(jet):
        r = f - np.tensordot(coef, jet.as_array(), axes=(0, 0))
        dr = -2.0 * scale * r / n_pts
        return scale * float(r @ r) / n_pts, Jet2(coef[0] * dr, coef[1] * dr, coef[2] * dr, coef[3] * dr)

    return JetTerm(pts, fn, order=2 if np.any(coef[1:] != 0) else 0)


def _value_term(points, target, scale, gauss_newton=False):
    """``scale * Σ (u - target)²`` as a value-only term."""
    target = np.asarray(target, dtype=float)
    if gauss_newton:
        seed = math.sqrt(2.0 * scale)
        return JetTerm(points, lambda jet: (0.0, Jet2(np.full_like(jet.value, seed), 0.0, 0.0, 0.0)), order=0)

    def fn(jet):
        r = jet.value - target
        return scale * float(r @ r), Jet2(2.0 * scale * r, 0.0, 0.0, 0.0)

    return JetTerm(points, fn, order=0)


def energy_terms(spec, colloc, data, config, theta=None, mode="pinn", gauss_newton=False) -> list[JetTerm]:
    """Jet terms of the negative log target in ``W`` (prior excluded).

    ``gauss_newton=True`` returns seed terms whose squared per-point
    gradients sum to the Gauss-Newton diagonal of the same energy.
    """
    gn = gauss_newton
    terms = [_value_term(data.sensors, data.observations, 0.5 / data.noise_sd**2, gn)]
    if mode == "non_pinn" or config.lam == 0:
        return terms
    lam = config.lam
    terms.append(_interior_term(spec, colloc, theta, 0.5 * lam * config.alpha_residual * spec.volume, gn))
    if config.alpha_boundary:
        for seg in spec.boundary_segments:
            pts = colloc.boundary.get(seg.name)
            if pts is None or len(pts) == 0:
                continue
            terms.append(_value_term(pts, seg.target(pts), 0.5 * lam * config.alpha_boundary / len(pts), gn))
    return terms


def joint_log_target_grad(
    state: NetworkState,
    theta,
    spec: PdeSpec,
    colloc: CollocationSet,
    data: DataSet,
    config: PriorConfig,
    mode: str = "pinn",
) -> tuple[float, np.ndarray]:
    """Value and ``W``-gradient of ``log π(W | θ, Λ, D)`` up to a constant.

    Only the slab part of the prior enters; the gradient is zero on inactive
    coordinates.  Evaluated at ``θ = Σ_W⁻¹ Φ_W`` this is also the gradient of
    the collapsed target without its ``log det Σ_W`` term.
    """
    energy, grad = value_and_gradient(state, energy_terms(spec, colloc, data, config, theta, mode))
    w = state.weights * state.mask
    return -energy - 0.5 * float(w @ w), -grad - w


def gauss_newton_diagonal(state, theta, spec, colloc, data, config, mode="pinn") -> np.ndarray:
    """Diagonal Gauss-Newton curvature of the negative joint log target.

    The unit slab precision is added on every coordinate, so the result is
    strictly positive even where the mask is off.
    """
    terms = energy_terms(spec, colloc, data, config, theta, mode, gauss_newton=True)
    return per_point_gradient_sq(state, terms) + 1.0
