"""Drift identification for stochastic differential equations.

Simulate trajectory ensembles of ``dx = f(x) dt + dw`` with Euler-Maruyama,
fit ``f`` by minimizing the Girsanov trajectory loss over a basis space or a
neural network, and score the fit against the truth and the data.
"""
from .basis import (BasisSet1D, Domain, TensorBasis, build_domain, eval_basis_1d, eval_tensor,
                    make_basis_1d, make_tensor_basis, uniform_knots)
from .dynamics import (CovarianceModel, DiagonalConstant, DiagonalFunction, Ensemble, FullConstant,
                       FullFunction, PointsInit, ScalarConstant, TimeGrid, Trajectory, UniformInit,
                       covariance_factor, em_step, quadratic_variation_sigma, simulate_ensemble)
from .estimator import (BasisDrift, NormalSystem, OptimizerConfig, assemble_diagonal_system,
                        assemble_quadratic, empirical_loss, fit_basis_drift, fit_general,
                        loss_gradient_coefficients, solve_system)
from .metrics import (MetricReport, l2_rho_error, occupation_sample, replay_trajectories, trajectory_error,
                      wasserstein_snapshot)
from .mlp import MlpDrift, fit_mlp, mlp_loss_gradient

__version__ = "0.1.0"
