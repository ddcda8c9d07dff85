"""Bayesian physics-informed networks for parameter-linear PDE inverse problems."""

from .diagnostics import GaussianSummary, bvm_target, diagnose, erm_fit, rate_report, tvd_sandwich, w2_empirical_1d
from .net import NetworkArch, NetworkState, forward_jet, init_state, value_and_gradient
from .pde import CollocationSet, DataSet, PdeSpec, generate_data, heat_spec, sample_collocation
from .prior import PriorConfig, log_prior_w, pinn_energy, sample_prior
from .residual import marginal_w_log_target, residual_summary
from .sampler import ChainConfig, ChainOutput, posterior_summary, run_chain

__version__ = "0.1.0"
