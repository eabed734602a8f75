"""Likelihood inference for max-stable distributions with absolutely continuous spectral vectors."""

__version__ = "0.1.0"

from .combinatorics import (ComponentSet, Partition, bell_number, enumerate_nonempty_subsets,
                            enumerate_partitions)
from .spatial import MaternParams, SiteSet, correlation_matrix, whittle_matern
from .gaussian import GaussianSpec, QmcSettings, conditional_gaussian, mvn_cdf, mvn_orthant_moment
from .spectral import (ArchimedeanClusterSpec, ClusteredArchimedean, GaussianSpectral, LogNormalSpectral,
                       ThetaVector, build_clustered_archimedean, build_gaussian_spectral,
                       build_lognormal_spectral, lambda_kernel, logistic_model, psi_derivatives,
                       sample_spectral)
from .mu import (MuStrategy, SharedMcSample, default_strategy, grad_mu, log_mu_batch, mu, p_b_weights,
                 v_b_star, v_star)
from .likelihoods import (BlockMaximaRecord, ExceedanceRecord, LikelihoodKind, evaluate, loglik_censored,
                          loglik_full, loglik_maxima_occurrence, loglik_pairwise, loglik_partition, score)
from .estimation import (FitReport, OptimizerOptions, covariance_censored, covariance_full,
                         covariance_occurrence, fit, fit_smle, nelder_mead)
from .data import (HillFit, block_maxima_with_occurrence, censor_sample, cluster_components, hill_transform,
                   kendall_tau_matrix, rank_pareto_transform)
from .simulate import SimConfig, sample_max_stable, sample_mda
