"""Quantify how far a density is from its Laplace approximation.

The package fits a MAP point and Laplace approximation, then estimates the
reverse KL divergence with sampling diagnostics (KL-variance, LSI,
varELBO), Taylor closed forms, rigorous radial bounds and reference values
from direct sampling or a NUTS chain.
"""
from .bounds import (CurvatureBound, binary_kl, coverage_bounds, delta3_upper_logistic,
                     pinsker_tv_bound, psi_min_second, radial_kl_bound)
from .diagnostics import (KlEstimate, estimate_klvar, estimate_lsi, estimate_var_elbo,
                          klvar_plus_lsi, sample_deltas, varelbo_plus_lsi)
from .experiments import (ExperimentConfig, ResultRow, demo_mixture, load_config, read_rows,
                          run_sweep)
from .geometry import (RngStream, SphericalPoint, chi_moment, compose, decompose, sample_chi,
                       sample_sphere, sample_std_normal)
from .laplace import (ConvergenceError, LaplaceApprox, NotPositiveDefiniteError,
                      StandardizedTarget, build_laplace, find_map, fit_laplace, standardize)
from .plotting import EmptySelectionError, plot_file, plot_results
from .reference import (BACKEND, Chain, ChainError, autocorr_gate, kl_direct, kl_quadrature_1d,
                        kl_via_chain, nuts_sample, prop1_path_check)
from .targets import (LogisticDataset, TargetDensity, gaussian_target, generate_logistic_data,
                      logistic_target, mixture_target_1d, quartic_target_1d,
                      radial_quartic_target)
from .taylor import SymTensor3, SymTensor4, compute_tensors, taylor_klvar, taylor_lsi

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
